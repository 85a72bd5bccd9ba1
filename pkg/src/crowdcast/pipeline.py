"""From raw trajectories to prediction scenes: split, slice, assemble, classify."""

import math
from dataclasses import dataclass

import numpy as np

from .dataio import RawDataset
from .errors import TooFewTrajectories
from .geometry import density_of_points

SEGMENT_LENGTH = 21
STRIDE = 12
OBS_LEN = 9
PRED_LEN = SEGMENT_LENGTH - OBS_LEN

DENSITY_CLASSES = ("lowD", "mediumD", "highD", "veryHD")
DATASETS = ("allD",) + DENSITY_CLASSES


@dataclass(eq=False)
class Segment:
    agent_id: int
    start_frame: int
    positions: np.ndarray  # (21, 2)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.shape != (SEGMENT_LENGTH, 2):
            raise ValueError(f"segment needs {SEGMENT_LENGTH} positions, got {self.positions.shape}")

    @property
    def observed(self):
        return self.positions[:OBS_LEN]

    @property
    def future(self):
        return self.positions[OBS_LEN:]

    @property
    def frames(self):
        return np.arange(self.start_frame, self.start_frame + SEGMENT_LENGTH)


@dataclass(eq=False)
class ContextAgent:
    """Neighbor seen during part of the observed window only."""

    agent_id: int
    offset: int  # first observed step (0..8) at which the agent is present
    xy: np.ndarray  # positions at observed steps offset .. offset + len - 1

    def __eq__(self, other):
        if not isinstance(other, ContextAgent):
            return NotImplemented
        return (self.agent_id == other.agent_id and self.offset == other.offset
                and np.array_equal(self.xy, other.xy))


@dataclass(eq=False)
class Scene:
    scene_id: int
    primary_id: int
    start_frame: int
    agent_ids: tuple
    xy: np.ndarray  # (n, 21, 2), agents fully present over the window
    context: tuple = ()
    avg_density: float = float("nan")
    density_class: str = ""

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64)
        self.agent_ids = tuple(int(a) for a in self.agent_ids)
        if self.xy.ndim != 3 or self.xy.shape[1:] != (SEGMENT_LENGTH, 2):
            raise ValueError(f"scene xy must be (n, {SEGMENT_LENGTH}, 2), got {self.xy.shape}")
        if len(self.agent_ids) != len(self.xy):
            raise ValueError("agent_ids and xy disagree in length")
        if len(set(self.agent_ids)) != len(self.agent_ids):
            raise ValueError("duplicate agent ids in scene")
        if self.primary_id not in self.agent_ids:
            raise ValueError("primary agent must be fully present")

    @property
    def n_agents(self):
        return len(self.agent_ids)

    @property
    def observed(self):
        return self.xy[:, :OBS_LEN]

    @property
    def future(self):
        return self.xy[:, OBS_LEN:]

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        same_density = (self.avg_density == other.avg_density
                        or (math.isnan(self.avg_density) and math.isnan(other.avg_density)))
        return (self.scene_id == other.scene_id and self.primary_id == other.primary_id
                and self.start_frame == other.start_frame and self.agent_ids == other.agent_ids
                and np.array_equal(self.xy, other.xy) and self.context == other.context
                and same_density and self.density_class == other.density_class)


def segment_count(T, length=SEGMENT_LENGTH, stride=STRIDE):
    return (T - length) // stride + 1 if T >= length else 0


def slice_trajectory(raw, length=SEGMENT_LENGTH, stride=STRIDE):
    """Overlapping windows of ``length`` steps starting every ``stride`` steps."""
    if length != SEGMENT_LENGTH:
        raise ValueError(f"segments are fixed at {SEGMENT_LENGTH} steps")
    return [
        Segment(raw.agent_id, raw.start_frame + k * stride, raw.positions[k * stride:k * stride + length])
        for k in range(segment_count(raw.length, length, stride))
    ]


def classify_density(d):
    if d < 0:
        raise ValueError(f"density must be non-negative, got {d}")
    if d < 0.7:
        return "lowD"
    if d < 1.2:
        return "mediumD"
    if d < 1.6:
        return "highD"
    return "veryHD"


def frame_densities(raw):
    """Snapshot density of every frame of ``raw`` (everyone present counts)."""
    cache = getattr(raw, "_density_cache", None)
    if cache is None:
        cache = {f: density_of_points(pos) for f, (_, pos) in raw.frame_positions().items()}
        raw._density_cache = cache
    return cache


def average_density(seg, raw):
    dens = frame_densities(raw)
    return float(np.mean([dens[f] for f in range(seg.start_frame, seg.start_frame + SEGMENT_LENGTH)]))


def assemble_scene(seg, raw, scene_id=0):
    """Collect every agent co-present with ``seg`` into a Scene.

    Agents covering all 21 steps are predicted; agents covering only part of
    the observed steps become context for social pooling.
    """
    s, e = seg.start_frame, seg.start_frame + SEGMENT_LENGTH - 1
    obs_end = s + OBS_LEN - 1
    full_ids, full_xy, context = [], [], []
    for t in raw.trajectories:
        if t.start_frame <= s and t.end_frame >= e:
            full_ids.append(t.agent_id)
            full_xy.append(t.positions[s - t.start_frame:s - t.start_frame + SEGMENT_LENGTH])
        elif t.start_frame <= obs_end and t.end_frame >= s:
            lo = max(s, t.start_frame)
            hi = min(obs_end, t.end_frame)
            context.append(ContextAgent(t.agent_id, lo - s,
                                        t.positions[lo - t.start_frame:hi - t.start_frame + 1].copy()))
    avg = average_density(seg, raw)
    return Scene(scene_id, seg.agent_id, s, tuple(full_ids), np.array(full_xy), tuple(context),
                 avg, classify_density(avg))


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15
    order: str = "chronological"  # or "random"

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        if self.order not in ("chronological", "random"):
            raise ValueError(f"unknown split order {self.order!r}")

    @property
    def fractions(self):
        return (self.train, self.val, self.test)


def largest_remainder(n, fractions):
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    leftover = n - sum(counts)
    # ties go to the earlier bucket
    order = sorted(range(len(quotas)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[:leftover]:
        counts[k] += 1
    return counts


def split_dataset(raw, spec=SplitSpec(), seed=0):
    """Partition raw trajectories into train/val/test before any slicing.

    Chronological order (by start frame, then id) is cut into contiguous
    blocks; ``seed`` only matters for ``order="random"``.
    """
    if len(raw) < 3:
        raise TooFewTrajectories(f"need at least 3 trajectories to split, got {len(raw)}")
    trajs = sorted(raw.trajectories, key=lambda t: (t.start_frame, t.agent_id))
    if spec.order == "random":
        perm = np.random.default_rng(seed).permutation(len(trajs))
        trajs = [trajs[k] for k in perm]
    counts = largest_remainder(len(trajs), spec.fractions)
    out, start = [], 0
    for c in counts:
        block = sorted(trajs[start:start + c], key=lambda t: t.agent_id)
        out.append(RawDataset(block))
        start += c
    return tuple(out)


def build_scenes(raw, first_scene_id=0):
    """Slice every trajectory and assemble scenes ordered by (agent_id, start)."""
    scenes = []
    for t in sorted(raw.trajectories, key=lambda t: t.agent_id):
        for seg in slice_trajectory(t):
            scenes.append(assemble_scene(seg, raw, first_scene_id + len(scenes)))
    return scenes


def prepare_datasets(raw, spec=SplitSpec(), seed=0):
    """allD splits plus the four density-homogeneous subsets.

    Returns ``{dataset: {split: [Scene]}}``. Scene ids are unique across splits.
    """
    splits = dict(zip(("train", "val", "test"), split_dataset(raw, spec, seed)))
    all_d, next_id = {}, 0
    for name, part in splits.items():
        all_d[name] = build_scenes(part, next_id) if len(part) else []
        next_id += len(all_d[name])
    out = {"allD": all_d}
    for cls in DENSITY_CLASSES:
        out[cls] = {name: [s for s in scenes if s.density_class == cls] for name, scenes in all_d.items()}
    return out
