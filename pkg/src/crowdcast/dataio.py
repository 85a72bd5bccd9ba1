"""Raw trajectory files and prepared scene files.

Raw format: whitespace-separated ``frame agent_id x y`` rows at 3 frames per
second, coordinates in meters, ``#`` starts a comment line.

Scene format: JSON lines. The first line is a header
``{"format": "crowdcast-scenes", "schema_version": 1}``; each further line holds
one scene.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyFile, ParseError, SchemaError

FRAME_RATE = 3
SCHEMA_VERSION = 1
SCENE_FORMAT = "crowdcast-scenes"


@dataclass(eq=False)
class RawTrajectory:
    agent_id: int
    start_frame: int
    positions: np.ndarray  # (T, 2), one row per consecutive frame

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if len(self.positions) == 0:
            raise ValueError(f"trajectory {self.agent_id} has no positions")
        if not np.isfinite(self.positions).all():
            raise ValueError(f"trajectory {self.agent_id} has non-finite positions")

    @property
    def length(self):
        return len(self.positions)

    @property
    def end_frame(self):
        """Last frame (inclusive)."""
        return self.start_frame + len(self.positions) - 1

    @property
    def frames(self):
        return np.arange(self.start_frame, self.end_frame + 1)

    def __eq__(self, other):
        if not isinstance(other, RawTrajectory):
            return NotImplemented
        return (self.agent_id == other.agent_id and self.start_frame == other.start_frame
                and np.array_equal(self.positions, other.positions))


@dataclass(eq=False)
class RawDataset:
    trajectories: list
    frame_rate: int = FRAME_RATE
    _frame_cache: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.frame_rate != FRAME_RATE:
            raise ValueError(f"frame_rate must be {FRAME_RATE}")
        ids = [t.agent_id for t in self.trajectories]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique within a dataset")

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __eq__(self, other):
        if not isinstance(other, RawDataset):
            return NotImplemented
        return self.frame_rate == other.frame_rate and self.trajectories == other.trajectories

    def by_id(self):
        return {t.agent_id: t for t in self.trajectories}

    def frame_positions(self):
        """Map frame -> (agent ids, (n, 2) positions) of everyone present."""
        if self._frame_cache is None:
            buckets = {}
            for t in self.trajectories:
                for k, f in enumerate(range(t.start_frame, t.end_frame + 1)):
                    buckets.setdefault(f, []).append((t.agent_id, t.positions[k]))
            self._frame_cache = {
                f: (np.array([a for a, _ in rows], dtype=np.int64), np.array([p for _, p in rows]))
                for f, rows in buckets.items()
            }
        return self._frame_cache


def parse_raw_file(path):
    """Read a raw trajectory file into a RawDataset.

    Rows are grouped by agent and sorted by frame. A missing frame splits an
    agent into several trajectories; pieces after the first get fresh ids
    above the largest id in the file.
    """
    path = Path(path)
    rows = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields 'frame agent_id x y', got {len(parts)}", lineno, path)
            try:
                frame, agent = int(parts[0]), int(parts[1])
                x, y = float(parts[2]), float(parts[3])
            except ValueError:
                raise ParseError(f"malformed row {text!r}", lineno, path) from None
            if frame < 0:
                raise ParseError(f"negative frame {frame}", lineno, path)
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ParseError("non-finite coordinate", lineno, path)
            track = rows.setdefault(agent, {})
            if frame in track:
                raise ParseError(f"duplicate observation of agent {agent} at frame {frame}", lineno, path)
            track[frame] = (x, y)
    if not rows:
        raise EmptyFile(f"{path}: no trajectory rows")

    next_id = max(rows) + 1
    trajectories = []
    for agent in sorted(rows):
        track = rows[agent]
        frames = sorted(track)
        pieces = [[frames[0]]]
        for f in frames[1:]:
            if f == pieces[-1][-1] + 1:
                pieces[-1].append(f)
            else:
                pieces.append([f])
        for k, piece in enumerate(pieces):
            agent_id = agent if k == 0 else next_id
            if k:
                next_id += 1
            trajectories.append(RawTrajectory(agent_id, piece[0], [track[f] for f in piece]))
    trajectories.sort(key=lambda t: t.agent_id)
    return RawDataset(trajectories)


def write_raw_file(dataset, path):
    """Write rows sorted by (frame, agent_id); floats use shortest round-trip repr."""
    rows = []
    for t in dataset.trajectories:
        for k, (x, y) in enumerate(t.positions):
            rows.append((t.start_frame + k, t.agent_id, float(x), float(y)))
    rows.sort(key=lambda r: (r[0], r[1]))
    path = Path(path)
    with path.open("w") as fh:
        fh.write("# frame agent_id x y\n")
        for f, a, x, y in rows:
            fh.write(f"{f} {a} {x!r} {y!r}\n")
    return path


# -- prepared scenes -----------------------------------------------------------

def _xy_list(arr):
    return [[float(x), float(y)] for x, y in arr]


def scene_to_record(scene):
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "density_class": scene.density_class,
        "avg_density": scene.avg_density,
        "start_frame": scene.start_frame,
        "agents": [{"id": int(a), "xy": _xy_list(xy)} for a, xy in zip(scene.agent_ids, scene.xy)],
        "primary_id": scene.primary_id,
        "context_agents": [
            {"id": c.agent_id, "offset": c.offset, "xy": _xy_list(c.xy)} for c in scene.context
        ],
    }


def scene_from_record(rec, lineno=None, path=None):
    from .pipeline import ContextAgent, Scene

    if rec.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {rec.get('schema_version')!r}", lineno, path)
    try:
        agents = rec["agents"]
        xy = np.array([a["xy"] for a in agents], dtype=np.float64).reshape(len(agents), -1, 2)
        context = tuple(
            ContextAgent(int(c["id"]), int(c["offset"]), np.array(c["xy"], dtype=np.float64).reshape(-1, 2))
            for c in rec.get("context_agents", [])
        )
        return Scene(
            scene_id=int(rec["scene_id"]),
            primary_id=int(rec["primary_id"]),
            start_frame=int(rec["start_frame"]),
            agent_ids=tuple(int(a["id"]) for a in agents),
            xy=xy,
            context=context,
            avg_density=float(rec["avg_density"]),
            density_class=str(rec["density_class"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad scene record: {exc}", lineno, path) from None


def write_scenes(scenes, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(json.dumps({"format": SCENE_FORMAT, "schema_version": SCHEMA_VERSION}) + "\n")
        for scene in scenes:
            fh.write(json.dumps(scene_to_record(scene), separators=(",", ":")) + "\n")
    return path


def read_scenes(path):
    path = Path(path)
    scenes = []
    with path.open() as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError:
            raise SchemaError("missing or malformed header", 1, path) from None
        if header.get("format") != SCENE_FORMAT or header.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"unsupported header {header!r}", 1, path)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", lineno, path) from None
            scenes.append(scene_from_record(rec, lineno, path))
    return scenes


# -- synthetic crowds -----------------------------------------------------------
# The generator lives in ``synth``; these names are offered here as well since
# synthetic data is the stand-in for real recordings.

def synthesize_crowd(cfg):
    from .synth import synthesize_crowd as _run
    return _run(cfg)


def __getattr__(name):
    if name == "SynthConfig":
        from .synth import SynthConfig
        return SynthConfig
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
