"""Training losses: ADE, the dynamic occupied-space (DOS) loss and its fixed-radius (SOS) variant.

The DOS threshold comes from the ground-truth future of each scene: pairs
closer than ``overlap_threshold`` at a step give a per-step radius (half their
mean distance), and the mean of those radii over the prediction window sets
``tau = 2 * R_bar``. Predicted pairs closer than ``tau`` are penalized by
``1 - d / tau`` from each pedestrian's side.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import ShapeMismatch
from .geometry import DEFAULT_RADIUS

LOSS_MODES = ("ade", "dos", "sos")


@dataclass(frozen=True)
class LossConfig:
    mode: str = "dos"
    weight: float = 0.0  # collision weight lambda
    fixed_radius: float = DEFAULT_RADIUS
    overlap_threshold: float = 2 * DEFAULT_RADIUS

    def __post_init__(self):
        if self.mode not in LOSS_MODES:
            raise ValueError(f"loss mode must be one of {LOSS_MODES}, got {self.mode!r}")
        if self.weight < 0:
            raise ValueError("collision weight must be >= 0")
        if self.fixed_radius <= 0 or self.overlap_threshold <= 0:
            raise ValueError("radii must be positive")


@dataclass(frozen=True)
class RadiusEstimate:
    per_step: tuple  # R^t for each future step, None where no pair overlaps
    mean: float
    source: str  # "estimated" | "fallback"

    @property
    def tau(self):
        return 2.0 * self.mean


def colliding_pairs(positions, threshold=2 * DEFAULT_RADIUS):
    """Index pairs (i, j), i < j, whose distance is strictly below ``threshold``."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        return []
    i, j = np.triu_indices(len(pts), k=1)
    d = np.hypot(pts[i, 0] - pts[j, 0], pts[i, 1] - pts[j, 1])
    hit = d < threshold
    return list(zip(i[hit].tolist(), j[hit].tolist()))


def radius_at_step(positions, threshold=2 * DEFAULT_RADIUS):
    """Half the mean distance over overlapping pairs, or None if there are none."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    pairs = colliding_pairs(pts, threshold)
    if not pairs:
        return None
    i, j = np.array(pairs).T
    d = np.hypot(pts[i, 0] - pts[j, 0], pts[i, 1] - pts[j, 1])
    return float(d.sum() / (2 * len(pairs)))


def window_average_radius(future, fixed_radius=DEFAULT_RADIUS, threshold=2 * DEFAULT_RADIUS):
    """R_bar over the prediction window of a (n, steps, 2) ground-truth array.

    Steps without any overlapping pair are left out of the mean; a window
    with no overlap at all falls back to ``fixed_radius``.
    """
    future = np.asarray(future, dtype=np.float64)
    per_step = tuple(radius_at_step(future[:, t], threshold) for t in range(future.shape[1]))
    present = [r for r in per_step if r is not None]
    if not present:
        return RadiusEstimate(per_step, float(fixed_radius), "fallback")
    return RadiusEstimate(per_step, float(np.mean(present)), "estimated")


def scene_radius(scene, cfg=LossConfig()):
    """Cached window_average_radius of a scene's ground-truth future."""
    key = (cfg.fixed_radius, cfg.overlap_threshold)
    cache = scene.__dict__.setdefault("_radius_cache", {})
    if key not in cache:
        cache[key] = window_average_radius(scene.future, cfg.fixed_radius, cfg.overlap_threshold)
    return cache[key]


def scene_tau(scene, cfg):
    if cfg.mode == "dos":
        return scene_radius(scene, cfg).tau
    return 2.0 * cfg.fixed_radius


def _pair_penalties(pred, i, j, tau):
    """Per-pair penalty sums over steps; ``tau`` is one value per pair."""
    a = ad.gather_rows(pred, i)
    b = ad.gather_rows(pred, j)
    d = ad.sqrt_eps(ad.sum(ad.square(a - b), axis=-1))  # (P, steps)
    tau = np.asarray(tau, dtype=np.float64)[:, None]
    active = (d.value < tau).astype(np.float64)
    terms = (1.0 - d * (1.0 / tau)) * active
    return ad.sum(terms, axis=-1)


def _candidate_pairs(values, groups, taus):
    """Same-group pairs i < j that come within their group's tau at some step."""
    out_i, out_j, out_tau = [], [], []
    groups = np.asarray(groups)
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        if len(idx) < 2:
            continue
        a, b = np.triu_indices(len(idx), k=1)
        diff = values[idx[a]] - values[idx[b]]
        dmin = np.sqrt((diff * diff).sum(axis=-1)).min(axis=-1)
        keep = dmin < taus[g]
        out_i.append(idx[a[keep]])
        out_j.append(idx[b[keep]])
        out_tau.append(np.full(keep.sum(), taus[g]))
    if not out_i:
        empty = np.zeros(0, dtype=np.intp)
        return empty, empty, np.zeros(0)
    return np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_tau)


def collision_penalty(pred, tau):
    """Directed collision penalty of one scene's (n, steps, 2) predictions.

    Each unordered pair closer than ``tau`` contributes ``1 - d / tau`` twice,
    once for each pedestrian.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    pred = ad.as_tensor(pred)
    n = pred.shape[0]
    i, j, taus = _candidate_pairs(pred.value, np.zeros(n, dtype=np.intp), np.array([tau]))
    if len(i) == 0:
        return ad.Tensor(0.0) if not pred.tracked else ad.mul(ad.sum(pred), 0.0)
    return ad.mul(ad.sum(_pair_penalties(pred, i, j, taus)), 2.0)


def ade_loss(pred, truth):
    """Mean (sqrt_eps-smoothed) Euclidean error over agents and steps."""
    pred = ad.as_tensor(pred)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"ade_loss: prediction {pred.shape} vs truth {truth.shape}")
    return ad.mean(ad.sqrt_eps(ad.sum(ad.square(pred - truth), axis=-1)))


def composite_loss(cfg, scene, pred):
    """ADE, or ADE + lambda * CP with the mode's threshold, for a single scene."""
    ade = ade_loss(pred, scene.future)
    if cfg.mode == "ade":
        return ade
    return ad.add(ade, ad.mul(collision_penalty(pred, scene_tau(scene, cfg)), cfg.weight))


def batch_loss(cfg, batch, pred):
    """Mean over the batch's scenes of the per-scene composite loss.

    ``pred`` is the stacked (n_full, steps, 2) rollout of a SceneBatch.
    """
    pred = ad.as_tensor(pred)
    nf = batch.n_full
    if pred.shape != batch.future.shape:
        raise ShapeMismatch(f"batch_loss: prediction {pred.shape} vs truth {batch.future.shape}")
    n_scenes = len(batch)
    group = batch.group[:nf]
    err = ad.sqrt_eps(ad.sum(ad.square(pred - batch.future), axis=-1))  # (nf, steps)
    per_agent = ad.mean(err, axis=-1)
    avg = sp.csr_matrix((1.0 / batch.sizes[group], (group, np.arange(nf))), shape=(n_scenes, nf))
    per_scene = ad.sparse_matmul(avg, per_agent)
    if cfg.mode != "ade":
        taus = np.array([scene_tau(s, cfg) for s in batch.scenes])
        i, j, pair_tau = _candidate_pairs(pred.value, group, taus)
        if len(i):
            pen = _pair_penalties(pred, i, j, pair_tau)
            owner = sp.csr_matrix((np.full(len(i), 2.0), (group[i], np.arange(len(i)))),
                                  shape=(n_scenes, len(i)))
            per_scene = ad.add(per_scene, ad.mul(ad.sparse_matmul(owner, pen), cfg.weight))
    return ad.mean(per_scene)
