"""Evaluation metrics: ADE, FDE and the predicted-vs-predicted collision rate."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySet, ShapeMismatch
from .geometry import DEFAULT_RADIUS

EVAL_RADIUS = DEFAULT_RADIUS

CSV_FIELDS = ("dataset", "split", "density_class", "model", "loss_mode", "lambda", "seed",
              "ade_m", "fde_m", "cr_pct", "n_scenes", "n_trajectories")


def _stack(arrays):
    if isinstance(arrays, np.ndarray):
        return np.asarray(arrays, dtype=np.float64)
    return np.concatenate([np.asarray(a, dtype=np.float64) for a in arrays])


def _errors(predictions, truth):
    p, g = _stack(predictions), _stack(truth)
    if p.shape != g.shape or p.ndim != 3 or p.shape[-1] != 2:
        raise ShapeMismatch(f"predictions {p.shape} and ground truth {g.shape} must match as (M, steps, 2)")
    return np.sqrt(((p - g) ** 2).sum(axis=-1))


def ade_metric(predictions, truth):
    """Mean Euclidean error over all predicted trajectories and steps.

    Both arguments are (M, steps, 2) arrays or lists of per-scene arrays.
    """
    err = _errors(predictions, truth)
    if err.size == 0:
        raise EmptySet("no trajectories")
    return float(err.mean())


def fde_metric(predictions, truth):
    err = _errors(predictions, truth)
    if err.size == 0:
        raise EmptySet("no trajectories")
    return float(err[:, -1].mean())


def colliding_agents(pred, radius=EVAL_RADIUS):
    """Boolean per agent: closer than 2 * radius to someone at some step."""
    pred = np.asarray(pred, dtype=np.float64)
    n = len(pred)
    if n < 2:
        return np.zeros(n, dtype=bool)
    diff = pred[:, None, :, :] - pred[None, :, :, :]
    d = np.sqrt((diff ** 2).sum(axis=-1))  # (n, n, steps)
    hit = d < 2.0 * radius
    hit[np.arange(n), np.arange(n)] = False
    return hit.any(axis=(1, 2))


def col_scene(pred, radius=EVAL_RADIUS):
    """Fraction of a scene's agents with at least one collision."""
    pred = np.asarray(pred, dtype=np.float64)
    if len(pred) == 0:
        raise EmptySet("scene without agents")
    return float(colliding_agents(pred, radius).mean())


def collision_rate(scene_predictions, radius=EVAL_RADIUS):
    """Percent: mean of col_scene over the scenes, times 100."""
    scene_predictions = list(scene_predictions)
    if not scene_predictions:
        raise EmptySet("no scenes")
    return 100.0 * float(np.mean([col_scene(p, radius) for p in scene_predictions]))


@dataclass
class MetricsRow:
    density_class: str
    ade: float
    fde: float
    cr: float
    n_scenes: int
    n_trajectories: int


@dataclass
class MetricsReport:
    ade: float
    fde: float
    cr: float
    n_scenes: int
    n_trajectories: int
    by_class: dict = field(default_factory=dict)  # density class -> MetricsRow

    @property
    def M(self):
        return self.n_trajectories

    def rows(self):
        """One row per density class present, in density order."""
        return [self.by_class[k] for k in sorted(self.by_class, key=_class_order)]

    def overall(self):
        return MetricsRow("all", self.ade, self.fde, self.cr, self.n_scenes, self.n_trajectories)

    def summary(self):
        return f"ADE {self.ade:.3f} m  FDE {self.fde:.3f} m  CR {self.cr:.1f} %  ({self.n_scenes} scenes)"


def _class_order(name):
    order = ("lowD", "mediumD", "highD", "veryHD")
    return order.index(name) if name in order else len(order)


def _row(label, preds, truths):
    return MetricsRow(label, ade_metric(preds, truths), fde_metric(preds, truths),
                      collision_rate(preds), len(preds), int(sum(len(p) for p in preds)))


def metrics_report(scenes, predictions, radius=EVAL_RADIUS):
    """Aggregate metrics over scenes (sorted by scene_id) plus a per-class breakdown."""
    if radius != EVAL_RADIUS:
        raise ValueError(f"evaluation radius is fixed at {EVAL_RADIUS} m")
    pairs = sorted(zip(scenes, predictions), key=lambda sp: sp[0].scene_id)
    if not pairs:
        raise EmptySet("no scenes to evaluate")
    preds = [np.asarray(p) for _, p in pairs]
    truths = [s.future for s, _ in pairs]
    overall = _row("all", preds, truths)
    by_class = {}
    for cls in sorted({s.density_class for s, _ in pairs}, key=_class_order):
        sel = [k for k, (s, _) in enumerate(pairs) if s.density_class == cls]
        by_class[cls] = _row(cls, [preds[k] for k in sel], [truths[k] for k in sel])
    return MetricsReport(overall.ade, overall.fde, overall.cr, overall.n_scenes, overall.n_trajectories, by_class)


def report_csv_rows(report, overall=False, **labels):
    """CSV dicts for a report; ``labels`` fill dataset/split/model/loss_mode/lambda/seed.

    With ``overall`` a single aggregate row (density_class "all") is emitted
    instead of the per-class rows.
    """
    out = []
    for row in ([report.overall()] if overall else report.rows()):
        rec = {k: labels.get(k, "") for k in CSV_FIELDS}
        rec.update(density_class=row.density_class, ade_m=repr(row.ade), fde_m=repr(row.fde),
                   cr_pct=repr(row.cr), n_scenes=row.n_scenes, n_trajectories=row.n_trajectories)
        out.append(rec)
    return out


def write_metrics_csv(rows, path=None):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
