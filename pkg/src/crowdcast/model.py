"""Vanilla and Social LSTM predictors with grid pooling and autoregressive rollout.

All full agents of every scene in a batch are stacked along one axis so a
single pass over the 20 recurrent steps serves the whole batch. Pooling only
connects agents of the same scene.
"""

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import CheckpointError, EmptyScene, ShapeMismatch
from .pipeline import OBS_LEN, PRED_LEN

MODEL_KINDS = ("vanilla", "social")
CHECKPOINT_FORMAT = "crowdcast-model"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SocialPoolingConfig:
    side: float = 4.0  # neighborhood edge length, meters
    grid: int = 8
    compressed: int = 16

    def __post_init__(self):
        if self.side <= 0 or self.grid < 1 or self.compressed < 1:
            raise ValueError("pooling side, grid and compressed width must be positive")

    @property
    def width(self):
        return self.grid * self.grid * self.compressed


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "social"
    embed_dim: int = 32
    hidden_dim: int = 64
    pooling: SocialPoolingConfig = field(default_factory=SocialPoolingConfig)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ValueError("embed_dim and hidden_dim must be positive")
        if isinstance(self.pooling, dict):
            object.__setattr__(self, "pooling", SocialPoolingConfig(**self.pooling))

    @property
    def pooled_width(self):
        return self.pooling.width if self.kind == "social" else 0

    def to_dict(self):
        return asdict(self)


def init_params(config):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; forget-gate bias 1."""
    rng = np.random.default_rng(config.seed)
    E, H, P = config.embed_dim, config.hidden_dim, config.pooled_width

    def uniform(fan_in, shape):
        k = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-k, k, size=shape)

    params = {
        "embed_w": uniform(2, (2, E)),
        "embed_b": np.zeros(E),
        "gate_w": uniform(E + P + H, (E + P + H, 4 * H)),
        "gate_b": np.zeros(4 * H),
        "head_w": uniform(H, (H, 2)),
        "head_b": np.zeros(2),
    }
    params["gate_b"][H:2 * H] = 1.0
    if config.kind == "social":
        params["compress_w"] = uniform(H, (H, config.pooling.compressed))
    return params


def param_shapes(config):
    return {k: v.shape for k, v in init_params(config).items()}


def lstm_cell_step(params, embedded, pooled, state):
    """One LSTM update. ``pooled`` may be None (vanilla). Returns (h, c)."""
    h, c = state
    H = h.shape[-1]
    parts = [embedded, h] if pooled is None else [embedded, pooled, h]
    x = ad.concat(parts, axis=-1)
    if x.shape[-1] != params["gate_w"].shape[0]:
        raise ShapeMismatch(f"gate input width {x.shape[-1]} != {params['gate_w'].shape[0]}")
    z = ad.add(ad.matmul(x, params["gate_w"]), params["gate_b"])
    i = ad.sigmoid(z[..., :H])
    f = ad.sigmoid(z[..., H:2 * H])
    g = ad.tanh(z[..., 2 * H:3 * H])
    o = ad.sigmoid(z[..., 3 * H:])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def neighbor_pairs(groups):
    """Ordered index pairs (a, b), a != b, of rows sharing a group."""
    groups = np.asarray(groups)
    order = np.argsort(groups, kind="stable")
    cuts = np.flatnonzero(np.diff(groups[order])) + 1
    a_parts, b_parts = [], []
    for idx in np.split(order, cuts):
        n = len(idx)
        if n < 2:
            continue
        a, b = np.nonzero(~np.eye(n, dtype=bool))
        a_parts.append(idx[a])
        b_parts.append(idx[b])
    if not a_parts:
        empty = np.zeros(0, dtype=np.intp)
        return empty, empty
    return np.concatenate(a_parts), np.concatenate(b_parts)


def pooling_matrix(positions, present, groups, cfg, pairs=None):
    """Sparse (N * G * G, N) binning of neighbors into each agent's grid.

    Row ``i * G * G + cell`` has a 1 in column ``j`` when agent j sits in that
    cell of agent i's neighborhood (same group, both present, j != i).
    ``pairs`` may carry a precomputed ``neighbor_pairs(groups)``.
    """
    positions = np.asarray(positions, dtype=np.float64)
    N = len(positions)
    G = cfg.grid
    half = cfg.side / 2.0
    a, b = neighbor_pairs(groups) if pairs is None else pairs
    if present is not None and not np.all(present):
        keep = present[a] & present[b]
        a, b = a[keep], b[keep]
    x, y = positions[:, 0], positions[:, 1]
    rx, ry = x[b] - x[a], y[b] - y[a]
    inside = (np.abs(rx) < half) & (np.abs(ry) < half)
    a, b, rx, ry = a[inside], b[inside], rx[inside], ry[inside]
    scale = G / cfg.side
    gx = np.clip(np.floor((rx + half) * scale).astype(np.intp), 0, G - 1)
    gy = np.clip(np.floor((ry + half) * scale).astype(np.intp), 0, G - 1)
    rows = a * (G * G) + gx * G + gy
    # COO keeps construction cheap; products with it and its transpose need no conversion
    return sp.coo_matrix((np.ones(len(rows)), (rows, b)), shape=(N * G * G, N))


def social_pool(params, cfg, positions, hidden, present=None, groups=None, pairs=None):
    """Pooled tensor (N, G*G*C): compressed hidden states summed per grid cell."""
    N = len(positions)
    if groups is None:
        groups = np.zeros(N, dtype=np.intp)
    S = pooling_matrix(positions, present, groups, cfg, pairs)
    comp = ad.matmul(hidden, params["compress_w"])
    return ad.reshape(ad.sparse_matmul(S, comp), (N, cfg.width))


class SceneBatch:
    """Scenes packed for one batched rollout.

    Full agents come first (``n_full`` rows, scene by scene), followed by the
    context agents. ``group`` holds the scene index of every row.
    """

    def __init__(self, scenes):
        scenes = list(scenes)
        if not scenes:
            raise EmptyScene("empty batch")
        for s in scenes:
            if s.n_agents == 0:
                raise EmptyScene(f"scene {s.scene_id} has no fully present agent")
        self.scenes = scenes
        self.sizes = np.array([s.n_agents for s in scenes])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.n_full = int(self.offsets[-1])
        full_obs = np.concatenate([s.observed for s in scenes])
        self.future = np.concatenate([s.future for s in scenes])
        full_group = np.repeat(np.arange(len(scenes)), self.sizes)

        ctx_obs, ctx_present, ctx_group = [], [], []
        for k, s in enumerate(scenes):
            for c in s.context:
                xy = np.zeros((OBS_LEN, 2))
                pres = np.zeros(OBS_LEN, dtype=bool)
                xy[c.offset:c.offset + len(c.xy)] = c.xy
                pres[c.offset:c.offset + len(c.xy)] = True
                ctx_obs.append(xy)
                ctx_present.append(pres)
                ctx_group.append(k)
        n_ctx = len(ctx_obs)
        self.n_context = n_ctx
        if n_ctx:
            self.obs = np.concatenate([full_obs, np.array(ctx_obs)])
            self.present = np.concatenate([np.ones((self.n_full, OBS_LEN), bool), np.array(ctx_present)])
            self.group = np.concatenate([full_group, np.array(ctx_group)])
        else:
            self.obs = full_obs
            self.present = np.ones((self.n_full, OBS_LEN), bool)
            self.group = full_group
        self._pairs = {}

    def pairs(self, full_only=False):
        """Cached neighbor_pairs over all rows, or over full agents only."""
        if full_only not in self._pairs:
            self._pairs[full_only] = neighbor_pairs(self.group[:self.n_full] if full_only else self.group)
        return self._pairs[full_only]

    def __len__(self):
        return len(self.scenes)

    def split(self, predictions):
        """Per-scene (n, 12, 2) views of a stacked prediction array."""
        return [predictions[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def rollout(params, config, batch):
    """Predict (n_full, 12, 2) future positions for a SceneBatch.

    The 9 observed steps are fed ground-truth displacements; after that each
    predicted displacement is both added to the position and fed back as the
    next input. Context agents take part only while present in the observed
    window. Future-step pooling uses predicted positions of full agents.
    """
    social = config.kind == "social"
    H = config.hidden_dim
    N = len(batch.obs)
    nf = batch.n_full
    h = ad.Tensor(np.zeros((N, H)))
    c = ad.Tensor(np.zeros((N, H)))

    for t in range(OBS_LEN):
        pres = batch.present[:, t]
        if t == 0:
            disp = np.zeros((N, 2))
        else:
            both = pres & batch.present[:, t - 1]
            disp = np.where(both[:, None], batch.obs[:, t] - batch.obs[:, t - 1], 0.0)
        e = ad.relu(ad.add(ad.matmul(disp, params["embed_w"]), params["embed_b"]))
        pooled = (social_pool(params, config.pooling, batch.obs[:, t], h, pres, batch.group, batch.pairs())
                  if social else None)
        h_new, c_new = lstm_cell_step(params, e, pooled, (h, c))
        if pres.all():
            h, c = h_new, c_new
        else:
            m = pres[:, None].astype(np.float64)
            h = h_new * m + h * (1.0 - m)
            c = c_new * m + c * (1.0 - m)

    if N > nf:
        h, c = h[:nf], c[:nf]
    group = batch.group[:nf]
    out = ad.add(ad.matmul(h, params["head_w"]), params["head_b"])
    cur = ad.add(batch.obs[:nf, OBS_LEN - 1], out)
    preds = [cur]
    for _ in range(PRED_LEN - 1):
        e = ad.relu(ad.add(ad.matmul(out, params["embed_w"]), params["embed_b"]))
        pooled = (social_pool(params, config.pooling, cur.value, h, None, group, batch.pairs(full_only=True))
                  if social else None)
        h, c = lstm_cell_step(params, e, pooled, (h, c))
        out = ad.add(ad.matmul(h, params["head_w"]), params["head_b"])
        cur = ad.add(cur, out)
        preds.append(cur)
    return ad.stack(preds, axis=1)


class TrajectoryModel:
    def __init__(self, config=None, params=None):
        self.config = config or ModelConfig()
        self.params = init_params(self.config) if params is None else {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        expected = param_shapes(self.config)
        if set(self.params) != set(expected):
            raise ShapeMismatch(f"parameter names {sorted(self.params)} != {sorted(expected)}")
        for k, shape in expected.items():
            if self.params[k].shape != shape:
                raise ShapeMismatch(f"{k}: shape {self.params[k].shape} != {shape}")

    def copy(self):
        return TrajectoryModel(self.config, self.params)

    def forward(self, batch, params=None):
        return rollout(self.params if params is None else params, self.config, batch)

    def predict(self, scenes, batch_size=8):
        """Untracked rollout; returns one (n, 12, 2) array per scene."""
        out = []
        scenes = list(scenes)
        for k in range(0, len(scenes), batch_size):
            batch = SceneBatch(scenes[k:k + batch_size])
            out.extend(batch.split(self.forward(batch).value))
        return out

    def __eq__(self, other):
        if not isinstance(other, TrajectoryModel):
            return NotImplemented
        return (self.config == other.config and set(self.params) == set(other.params)
                and all(np.array_equal(self.params[k], other.params[k]) for k in self.params))


def rollout_scene(model, scene):
    return model.predict([scene])[0]


# -- serialization -----------------------------------------------------------

def encode_array(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(rec):
    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(rec["shape"]).astype(np.float64)


def params_digest(params):
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    return h.hexdigest()


def model_to_record(model):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "params": {k: encode_array(v) for k, v in sorted(model.params.items())},
    }


def model_from_record(rec):
    if rec.get("format") != CHECKPOINT_FORMAT or rec.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported model container {rec.get('format')!r} v{rec.get('version')!r}")
    cfg = ModelConfig(**rec["config"])
    return TrajectoryModel(cfg, {k: decode_array(v) for k, v in rec["params"].items()})


def save_model(model, path):
    path = Path(path)
    path.write_text(json.dumps(model_to_record(model), sort_keys=True))
    return path


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return model_from_record(json.loads(path.read_text()))
