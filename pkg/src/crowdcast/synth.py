"""Synthetic crowds: agents cross a rectangular arena under circular repulsion.

New agents enter at the entry edge(s) as a Poisson stream sized so the head
count settles near the middle of the requested density band; the rate is
scaled by target/current count so jams do not keep filling the arena.
"""

from dataclasses import dataclass

import numpy as np

from .dataio import RawDataset, RawTrajectory
from .errors import ConfigError

PATTERNS = ("unidirectional", "bidirectional", "crossing")
SUBSTEPS = 3
FRAME_DT = 1.0 / 3.0


@dataclass(frozen=True)
class SynthConfig:
    pattern: str = "unidirectional"
    density_band: tuple = (0.2, 0.7)  # ped/m^2, [low, high)
    width: float = 9.0
    height: float = 6.5
    duration: int = 300  # frames
    noise: float = 0.02  # m, Gaussian jitter on recorded positions and waypoints
    seed: int = 0
    speed: float = 0.6  # m/s, mean desired walking speed

    def __post_init__(self):
        object.__setattr__(self, "density_band", tuple(float(v) for v in self.density_band))
        if self.pattern not in PATTERNS:
            raise ConfigError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        lo, hi = self.density_band
        if not 0.1 <= lo < hi <= 3.0:
            raise ConfigError(f"density band must satisfy 0.1 <= low < high <= 3.0, got {self.density_band}")
        if min(self.width, self.height, self.duration, self.speed) <= 0 or self.noise < 0:
            raise ConfigError("arena, duration, speed must be positive and noise non-negative")

    @property
    def target_density(self):
        return 0.5 * sum(self.density_band)


# repulsion and relaxation constants (m/s^2, m, s)
REPULSE_A = 2.0
REPULSE_B = 0.2
BODY = 0.2
RELAX = 0.5
WALL_A = 2.0
COUNT_FACTOR = 0.75  # head count per arena area relative to the hull-density target


def _check_feasible(cfg):
    area = cfg.width * cfg.height
    lo, hi = cfg.density_band
    if hi * area < 3:
        raise ConfigError(f"arena of {area:.1f} m^2 cannot host a hull at {hi} ped/m^2")
    if min(cfg.width, cfg.height) < 2.0:
        raise ConfigError("arena sides must be at least 2 m")
    if cfg.duration < 21:
        raise ConfigError("duration shorter than one 21-step window")


class _Crowd:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        self.pos = np.zeros((0, 2))
        self.vel = np.zeros((0, 2))
        self.goal = np.zeros((0, 2))  # unit heading axis
        self.waypoint = np.zeros((0, 2))
        self.v0 = np.zeros(0)
        self.ids = np.zeros(0, dtype=np.int64)
        self.next_id = 0

    def _entry(self):
        """Random entry point and heading for the configured pattern."""
        cfg, rng = self.cfg, self.rng
        W, Hh = cfg.width, cfg.height
        if cfg.pattern == "unidirectional":
            side = 0
        elif cfg.pattern == "bidirectional":
            side = int(rng.integers(2))
        else:
            side = 0 if rng.random() < 0.5 else 2
        depth = rng.uniform(0.05, 0.6)
        if side == 0:
            p, e = (depth, rng.uniform(0.3, Hh - 0.3)), (1.0, 0.0)
        elif side == 1:
            p, e = (W - depth, rng.uniform(0.3, Hh - 0.3)), (-1.0, 0.0)
        else:
            p, e = (rng.uniform(0.3, W - 0.3), depth), (0.0, 1.0)
        return np.array(p), np.array(e)

    def _pick_waypoint(self, p, e):
        cfg, rng = self.cfg, self.rng
        if e[0] != 0:
            x = cfg.width if e[0] > 0 else 0.0
            y = np.clip(p[1] + rng.normal(0.0, 1.0), 0.3, cfg.height - 0.3)
        else:
            y = cfg.height
            x = np.clip(p[0] + rng.normal(0.0, 1.0), 0.3, cfg.width - 0.3)
        return np.array([x, y])

    def add(self, p, e):
        self.pos = np.vstack([self.pos, p])
        v0 = float(np.clip(self.rng.normal(self.cfg.speed, 0.1), 0.3, 1.0))
        self.vel = np.vstack([self.vel, e * v0])
        self.goal = np.vstack([self.goal, e])
        self.waypoint = np.vstack([self.waypoint, self._pick_waypoint(p, e)])
        self.v0 = np.append(self.v0, v0)
        self.ids = np.append(self.ids, self.next_id)
        self.next_id += 1

    def free(self, p, clearance=0.45):
        if len(self.pos) == 0:
            return True
        return bool(np.min(np.hypot(*(self.pos - p).T)) > clearance)

    def step(self, dt):
        cfg = self.cfg
        n = len(self.pos)
        if n == 0:
            return
        jitter = self.rng.normal(0.0, cfg.noise, size=(n, 2))
        to_wp = self.waypoint + jitter - self.pos
        dist = np.maximum(np.hypot(to_wp[:, 0], to_wp[:, 1]), 1e-9)
        desired = to_wp / dist[:, None] * self.v0[:, None]
        acc = (desired - self.vel) / RELAX
        if n > 1:
            diff = self.pos[:, None, :] - self.pos[None, :, :]
            d = np.hypot(diff[..., 0], diff[..., 1])
            np.fill_diagonal(d, np.inf)
            mag = REPULSE_A * np.exp((2 * BODY - d) / REPULSE_B)
            mag[d > 2.0] = 0.0
            acc += (mag[..., None] * diff / np.maximum(d, 1e-9)[..., None]).sum(axis=1)
        # lateral walls
        x, y = self.pos[:, 0], self.pos[:, 1]
        lateral_y = self.goal[:, 0] != 0
        acc[:, 1] += np.where(lateral_y, WALL_A * (np.exp(-y / 0.15) - np.exp(-(cfg.height - y) / 0.15)), 0.0)
        acc[:, 0] += np.where(~lateral_y, WALL_A * (np.exp(-x / 0.15) - np.exp(-(cfg.width - x) / 0.15)), 0.0)
        self.vel += acc * dt
        speed = np.hypot(self.vel[:, 0], self.vel[:, 1])
        vmax = 1.3 * self.v0
        over = speed > vmax
        self.vel[over] *= (vmax[over] / speed[over])[:, None]
        self.pos = self.pos + self.vel * dt
        self.pos[:, 0] = np.clip(self.pos[:, 0], 0.0, cfg.width)
        self.pos[:, 1] = np.clip(self.pos[:, 1], 0.0, cfg.height)

    def exited(self):
        cfg = self.cfg
        g, p = self.goal, self.pos
        return (((g[:, 0] > 0) & (p[:, 0] >= cfg.width - 0.05))
                | ((g[:, 0] < 0) & (p[:, 0] <= 0.05))
                | ((g[:, 1] > 0) & (p[:, 1] >= cfg.height - 0.05)))

    def remove(self, mask):
        keep = ~mask
        for name in ("pos", "vel", "goal", "waypoint", "v0", "ids"):
            setattr(self, name, getattr(self, name)[keep])


def synthesize_crowd(cfg):
    """Simulate ``cfg.duration`` frames and return the recorded RawDataset."""
    _check_feasible(cfg)
    rng = np.random.default_rng(cfg.seed)
    crowd = _Crowd(cfg, rng)
    target = cfg.target_density
    area = cfg.width * cfg.height

    # seed the arena at roughly the target occupancy
    for _ in range(int(target * area * COUNT_FACTOR)):
        for _attempt in range(20):
            p = np.array([rng.uniform(0.3, cfg.width - 0.3), rng.uniform(0.3, cfg.height - 0.3)])
            if crowd.free(p, 0.5):
                _, e = crowd._entry()
                crowd.add(p, e)
                break

    span = cfg.width if cfg.pattern != "crossing" else 0.5 * (cfg.width + cfg.height)
    target_count = target * area * COUNT_FACTOR
    inflow = target_count / (span / cfg.speed) * FRAME_DT  # expected admissions per frame

    tracks = {}
    for frame in range(cfg.duration):
        for _ in range(SUBSTEPS):
            crowd.step(FRAME_DT / SUBSTEPS)
        gone = crowd.exited()
        crowd.remove(gone)
        # Poisson inflow sized for the target head count, nudged by the current one
        n_now = len(crowd.pos)
        ratio = np.clip(target_count / max(n_now, 1.0), 0.25, 3.0)
        for _ in range(rng.poisson(inflow * ratio)):
            for _attempt in range(10):
                p, e = crowd._entry()
                if crowd.free(p):
                    crowd.add(p, e)
                    break
        rec = crowd.pos + rng.normal(0.0, cfg.noise, size=crowd.pos.shape)
        rec[:, 0] = np.clip(rec[:, 0], 0.0, cfg.width)
        rec[:, 1] = np.clip(rec[:, 1], 0.0, cfg.height)
        for agent, p in zip(crowd.ids.tolist(), rec):
            tracks.setdefault(agent, [frame, []])[1].append(p)

    trajectories = [RawTrajectory(a, start, np.array(pts)) for a, (start, pts) in sorted(tracks.items())]
    return RawDataset(trajectories)


def concat_datasets(datasets, frame_gap=100):
    """Place datasets one after another in time with fresh agent ids.

    Each dataset's frames are shifted past the previous one's last frame plus
    ``frame_gap`` so sessions never share a frame.
    """
    out, next_id, next_frame = [], 0, 0
    for ds in datasets:
        if not len(ds):
            continue
        first = min(t.start_frame for t in ds)
        last = max(t.end_frame for t in ds)
        shift = next_frame - first
        for t in sorted(ds.trajectories, key=lambda t: t.agent_id):
            out.append(RawTrajectory(next_id, t.start_frame + shift, t.positions))
            next_id += 1
        next_frame = last + shift + frame_gap + 1
    return RawDataset(out)


def synthesize_mixture(configs, frame_gap=100):
    """Heterogeneous dataset built from several sessions, in the given order."""
    return concat_datasets([synthesize_crowd(c) for c in configs], frame_gap)


# (density band, pattern, width, height): one session per density class.
# Bands are controller targets; the small arenas read denser through the hull
# measure, so the bands sit below the class they are meant to land in.
MIXTURE_SESSIONS = (
    ((1.2, 2.0), "crossing", 6.0, 4.5),       # veryHD
    ((0.7, 1.0), "bidirectional", 6.0, 4.5),  # highD
    ((0.1, 0.3), "bidirectional", 10.0, 7.0),  # lowD
    ((0.3, 0.7), "crossing", 6.0, 4.5),       # mediumD
)


def heterogeneous_configs(cycles=5, duration=90, seed=0, noise=0.02):
    """Session configs cycling through all density classes ``cycles`` times.

    Repeating the cycle keeps every chronological split block mixed.
    """
    out = []
    for c in range(cycles):
        for k, (band, pattern, w, h) in enumerate(MIXTURE_SESSIONS):
            out.append(SynthConfig(pattern=pattern, density_band=band, width=w, height=h, duration=duration,
                                   noise=noise, seed=seed * 1000 + c * len(MIXTURE_SESSIONS) + k))
    return out
