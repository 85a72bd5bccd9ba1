"""Adam training loop with validation early stopping, checkpoints and evaluation."""

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, EmptyDataset, NonFiniteValue, ShapeMismatch, TrainingDiverged
from .loss import LossConfig, batch_loss
from .metrics import EVAL_RADIUS, collision_rate, metrics_report
from .model import (SceneBatch, TrajectoryModel, decode_array, encode_array,
                    model_from_record, model_to_record)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "crowdcast-checkpoint"
CHECKPOINT_VERSION = 1
HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_ade", "val_cr")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 15
    patience: int = 5
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = None

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("lr, batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid Adam constants")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)

    def copy(self):
        return OptimizerState({k: a.copy() for k, a in self.m.items()},
                              {k: a.copy() for k, a in self.v.items()}, self.step)


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns (new params, new state); inputs untouched."""
    t = state.step + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeMismatch(f"adam_step: {k} has param {p.shape}, grad {g.shape}, moment {state.m[k].shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        new_p[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_p, OptimizerState(new_m, new_v, t)


def make_batches(n, batch_size, rng=None):
    """Index batches over a (optionally shuffled) permutation; last batch kept."""
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[k:k + batch_size] for k in range(0, n, batch_size)]


def loss_and_grads(model, batch, loss_cfg):
    with ad.Tape() as tape:
        tracked = {k: tape.variable(v) for k, v in model.params.items()}
        pred = model.forward(batch, tracked)
        loss = batch_loss(loss_cfg, batch, pred)
    grads = ad.backward(loss)
    return float(loss.value), {k: grads.get(t.id, np.zeros_like(t.value)) for k, t in tracked.items()}


def _clip(grads, max_norm):
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def train_epoch(model, scenes, cfg, state=None, epoch=0, on_step=None):
    """One pass over ``scenes`` in seeded-shuffled batches; updates model in place.

    Returns the scene-weighted mean training loss. ``state`` (OptimizerState)
    is updated in place as well; a fresh one is used when omitted.
    ``on_step(batch_index, params)`` runs after every optimizer step.
    """
    scenes = list(scenes)
    if not scenes:
        raise EmptyDataset("training set is empty")
    if state is None:
        state = OptimizerState.zeros_like(model.params)
    rng = np.random.default_rng([cfg.seed, epoch])
    total = 0.0
    for b, idx in enumerate(make_batches(len(scenes), cfg.batch_size, rng)):
        batch = SceneBatch([scenes[k] for k in idx])
        try:
            value, grads = loss_and_grads(model, batch, cfg.loss)
        except NonFiniteValue as exc:
            raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from exc
        if not np.isfinite(value):
            raise TrainingDiverged(f"epoch {epoch} batch {b}: loss {value}")
        if cfg.clip_norm is not None:
            grads = _clip(grads, cfg.clip_norm)
        new_params, new_state = adam_step(model.params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        model.params = new_params
        state.m, state.v, state.step = new_state.m, new_state.v, new_state.step
        if on_step is not None:
            on_step(b, model.params)
        total += value * len(idx)
    return total / len(scenes)


def validate(model, batches, loss_cfg):
    """(mean composite loss, ADE, CR %) over pre-built validation batches."""
    total, n, preds, truths = 0.0, 0, [], []
    for batch in batches:
        pred = model.forward(batch)
        total += float(batch_loss(loss_cfg, batch, pred).value) * len(batch)
        n += len(batch)
        preds.extend(batch.split(pred.value))
        truths.extend(s.future for s in batch.scenes)
    err = np.concatenate([np.sqrt(((p - g) ** 2).sum(-1)).ravel() for p, g in zip(preds, truths)])
    return total / n, float(err.mean()), collision_rate(preds)


@dataclass(eq=False)
class Checkpoint:
    model: TrajectoryModel
    optimizer: OptimizerState
    epoch: int
    best_val_loss: float
    config_hash: str
    loss: LossConfig = None  # objective the weights were trained under

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.model == other.model and self.epoch == other.epoch and self.loss == other.loss
                and self.best_val_loss == other.best_val_loss and self.config_hash == other.config_hash
                and self.optimizer.step == other.optimizer.step
                and all(np.array_equal(self.optimizer.m[k], other.optimizer.m[k]) for k in self.optimizer.m)
                and all(np.array_equal(self.optimizer.v[k], other.optimizer.v[k]) for k in self.optimizer.v))


def config_hash(model_cfg, train_cfg):
    blob = json.dumps({"model": asdict(model_cfg), "train": asdict(train_cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def fit(model, train_scenes, val_scenes, cfg=TrainConfig()):
    """Train with early stopping on validation composite loss.

    Returns (best Checkpoint, history) where history is a list of dicts with
    keys epoch, train_loss, val_loss, val_ade, val_cr. ``model`` ends up
    holding the best-epoch parameters.
    """
    train_scenes, val_scenes = list(train_scenes), list(val_scenes)
    if not train_scenes or not val_scenes:
        raise EmptyDataset("fit needs non-empty training and validation sets")
    val_batches = [SceneBatch([val_scenes[k] for k in idx])
                   for idx in make_batches(len(val_scenes), cfg.batch_size)]
    state = OptimizerState.zeros_like(model.params)
    chash = config_hash(model.config, cfg)
    history, best, since_best = [], None, 0
    for epoch in range(1, cfg.max_epochs + 1):
        train_loss = train_epoch(model, train_scenes, cfg, state, epoch)
        val_loss, val_ade, val_cr = validate(model, val_batches, cfg.loss)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                        "val_ade": val_ade, "val_cr": val_cr})
        log.info("epoch %d  train %.5f  val %.5f  ade %.4f  cr %.1f", epoch, train_loss, val_loss, val_ade, val_cr)
        if best is None or val_loss < best.best_val_loss:
            best = Checkpoint(model.copy(), state.copy(), epoch, val_loss, chash, cfg.loss)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.params = {k: v.copy() for k, v in best.model.params.items()}
    return best, history


def early_stop_epochs(val_losses, patience):
    """(epochs run, best epoch) that fit's stopping rule yields for a loss sequence."""
    best, best_epoch, since = None, 0, 0
    for epoch, v in enumerate(val_losses, start=1):
        if best is None or v < best:
            best, best_epoch, since = v, epoch, 0
        else:
            since += 1
            if since >= patience:
                return epoch, best_epoch
    return len(val_losses), best_epoch


def evaluate(model, scenes, radius=EVAL_RADIUS):
    scenes = list(scenes)
    if not scenes:
        raise EmptyDataset("test set is empty")
    return metrics_report(scenes, model.predict(scenes), radius)


# -- files ------------------------------------------------------------------

def save_checkpoint(ckpt, path):
    rec = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model_to_record(ckpt.model),
        "optimizer": {
            "step": ckpt.optimizer.step,
            "m": {k: encode_array(v) for k, v in sorted(ckpt.optimizer.m.items())},
            "v": {k: encode_array(v) for k, v in sorted(ckpt.optimizer.v.items())},
        },
        "epoch": ckpt.epoch,
        "best_val_loss": ckpt.best_val_loss,
        "config_hash": ckpt.config_hash,
        "loss": None if ckpt.loss is None else asdict(ckpt.loss),
    }
    path = Path(path)
    path.write_text(json.dumps(rec, sort_keys=True))
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        rec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc.msg})") from None
    if rec.get("format") != CHECKPOINT_FORMAT or rec.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint container")
    opt = rec["optimizer"]
    state = OptimizerState({k: decode_array(v) for k, v in opt["m"].items()},
                           {k: decode_array(v) for k, v in opt["v"].items()}, int(opt["step"]))
    try:
        loss = None if rec.get("loss") is None else LossConfig(**rec["loss"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad loss record ({exc})") from None
    return Checkpoint(model_from_record(rec["model"]), state, int(rec["epoch"]),
                      float(rec["best_val_loss"]), rec["config_hash"], loss)


def history_csv(history, path=None):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in HISTORY_FIELDS})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def with_loss(cfg, **changes):
    """TrainConfig copy with LossConfig fields replaced."""
    return replace(cfg, loss=replace(cfg.loss, **changes))

