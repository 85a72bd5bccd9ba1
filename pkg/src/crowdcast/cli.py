"""Command line: generate, prepare, train, eval, sweep and radius-report.

Every command reads an optional YAML/JSON run config (``--config``), applies
flag overrides, writes the resolved config next to its outputs and emits CSV
or JSON only. Failures exit with status 2 and a single JSON line on stderr.
"""

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .dataio import parse_raw_file, read_scenes, write_raw_file, write_scenes
from .errors import ConfigError, CrowdcastError, EmptySet
from .loss import LossConfig, scene_radius
from .metrics import report_csv_rows, write_metrics_csv
from .model import ModelConfig, SocialPoolingConfig, TrajectoryModel
from .pipeline import DATASETS, DENSITY_CLASSES, SplitSpec, prepare_datasets
from .synth import SynthConfig, heterogeneous_configs, synthesize_crowd, synthesize_mixture
from .train import TrainConfig, evaluate, fit, history_csv, load_checkpoint, save_checkpoint

log = logging.getLogger("crowdcast")

SPLITS = ("train", "val", "test")
RESOLVED_NAME = "config.resolved.json"

DEFAULTS = {
    "seed": 0,
    "synth": {
        "pattern": "unidirectional",
        "density_band": [0.2, 0.7],
        "width": 9.0,
        "height": 6.5,
        "duration": 300,
        "noise": 0.02,
        "speed": 0.6,
        "mixture_cycles": 0,  # > 0: heterogeneous sessions cycling all density classes
    },
    "split": {"train": 0.70, "val": 0.15, "test": 0.15, "order": "chronological"},
    "model": {
        "kind": "social",
        "embed_dim": 32,
        "hidden_dim": 64,
        "pooling": {"side": 4.0, "grid": 8, "compressed": 16},
    },
    "loss": {"mode": "dos", "weight": 0.0, "fixed_radius": 0.2, "overlap_threshold": 0.4},
    "train": {
        "lr": 1e-3,
        "batch_size": 8,
        "max_epochs": 15,
        "patience": 5,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "clip_norm": None,
    },
    "sweep": {"lambdas": [0.0, 0.001, 0.003, 0.01]},
}


# -- config -------------------------------------------------------------------

def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _set_path(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[k]
    if keys[-1] not in node or isinstance(node[keys[-1]], dict):
        raise ConfigError(f"unknown config key: {dotted}")
    node[keys[-1]] = value


def load_config(path=None):
    """Defaults merged with a YAML/JSON file; unknown keys raise ConfigError."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: unreadable config ({exc.__class__.__name__})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return _merge(DEFAULTS, data)


def resolve_config(args):
    cfg = load_config(args.config)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        _set_path(cfg, key.strip(), yaml.safe_load(raw))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        cfg["loss"]["weight"] = args.lam
    if getattr(args, "loss", None) is not None:
        cfg["loss"]["mode"] = args.loss
    if getattr(args, "model", None) is not None:
        cfg["model"]["kind"] = args.model
    if getattr(args, "lambdas", None) is not None:
        cfg["sweep"]["lambdas"] = args.lambdas
    return cfg


def _build(cls, section, **extra):
    try:
        return cls(**section, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def synth_configs(cfg):
    s = dict(cfg["synth"])
    cycles = s.pop("mixture_cycles")
    if cycles:
        return heterogeneous_configs(cycles, s["duration"], cfg["seed"], s["noise"])
    return [_build(SynthConfig, s, seed=cfg["seed"])]


def split_spec(cfg):
    return _build(SplitSpec, cfg["split"])


def model_config(cfg):
    m = dict(cfg["model"])
    m["pooling"] = _build(SocialPoolingConfig, m["pooling"])
    return _build(ModelConfig, m, seed=cfg["seed"])


def loss_config(cfg):
    return _build(LossConfig, cfg["loss"])


def train_config(cfg):
    return _build(TrainConfig, cfg["train"], loss=loss_config(cfg), seed=cfg["seed"])


def validate_config(cfg):
    """Build every section once so bad values fail before any work starts."""
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}")
    synth_configs(cfg)
    split_spec(cfg)
    model_config(cfg)
    train_config(cfg)
    return cfg


def _echo(cfg, out_dir, command):
    out_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n"
    (out_dir / RESOLVED_NAME).write_text(text)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _load_split(data_dir, dataset, split):
    path = Path(data_dir) / dataset / f"{split}.jsonl"
    if not path.exists():
        raise ConfigError(f"prepared split not found: {path}")
    return read_scenes(path)


# -- commands -----------------------------------------------------------------

def cmd_generate(cfg, out_dir):
    configs = synth_configs(cfg)
    raw = synthesize_mixture(configs) if len(configs) > 1 else synthesize_crowd(configs[0])
    _echo(cfg, out_dir, "generate")
    path = write_raw_file(raw, out_dir / "raw.txt")
    log.info("wrote %d trajectories to %s", len(raw), path)
    return path


def cmd_prepare(cfg, raw_path, out_dir):
    raw = parse_raw_file(raw_path)
    data = prepare_datasets(raw, split_spec(cfg), cfg["seed"])
    _echo(cfg, out_dir, "prepare")
    rows = []
    for name in DATASETS:
        (out_dir / name).mkdir(parents=True, exist_ok=True)
        counts = []
        for split in SPLITS:
            write_scenes(data[name][split], out_dir / name / f"{split}.jsonl")
            counts.append(len(data[name][split]))
        rows.append([name, *counts, sum(counts)])
    _write_csv(out_dir / "counts.csv", ["dataset", *SPLITS, "total"], rows)
    return data


def cmd_train(cfg, data_dir, dataset, out_dir):
    train = _load_split(data_dir, dataset, "train")
    val = _load_split(data_dir, dataset, "val")
    if not train or not val:
        raise EmptySet(f"{dataset}: training and validation splits must be non-empty")
    model = TrajectoryModel(model_config(cfg))
    ckpt, history = fit(model, train, val, train_config(cfg))
    _echo(cfg, out_dir, "train")
    save_checkpoint(ckpt, out_dir / "checkpoint.json")
    history_csv(history, out_dir / "history.csv")
    return ckpt, history


def _labels(dataset, split, model, loss):
    return {"dataset": dataset, "split": split, "model": model.config.kind, "loss_mode": loss.mode,
            "lambda": repr(float(loss.weight)), "seed": model.config.seed}


def cmd_eval(cfg, data_dir, dataset, checkpoint, out_dir, split="test"):
    ckpt = load_checkpoint(checkpoint)
    scenes = _load_split(data_dir, dataset, split)
    if not scenes:
        raise EmptySet(f"{dataset}/{split} has no scenes")
    report = evaluate(ckpt.model, scenes)
    _echo(cfg, out_dir, "eval")
    # label rows with what the checkpoint was trained under, not this run's flags
    loss = ckpt.loss if ckpt.loss is not None else loss_config(cfg)
    rows = report_csv_rows(report, **_labels(dataset, split, ckpt.model, loss))
    write_metrics_csv(rows, out_dir / "metrics.csv")
    return report


def _sweep_point(args):
    cfg, data_dir, dataset, index, lam = args
    point = copy.deepcopy(cfg)
    point["seed"] = cfg["seed"] + index
    point["loss"]["weight"] = float(lam)
    train = _load_split(data_dir, dataset, "train")
    val = _load_split(data_dir, dataset, "val")
    test = _load_split(data_dir, dataset, "test")
    if not train or not val or not test:
        raise EmptySet(f"{dataset}: sweep needs non-empty train, val and test splits")
    model = TrajectoryModel(model_config(point))
    ckpt, history = fit(model, train, val, train_config(point))
    report = evaluate(model, test)
    rows = report_csv_rows(report, overall=True, **_labels(dataset, "test", model, ckpt.loss))
    return rows[0], ckpt.epoch, history


def cmd_sweep(cfg, data_dir, dataset, out_dir, threads=1):
    lambdas = [float(v) for v in cfg["sweep"]["lambdas"]]
    if not lambdas or min(lambdas) < 0:
        raise ConfigError("sweep needs a non-empty list of non-negative lambdas")
    jobs = [(cfg, str(data_dir), dataset, k, lam) for k, lam in enumerate(lambdas)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(job) for job in jobs]
    _echo(cfg, out_dir, "sweep")
    write_metrics_csv([r[0] for r in results], out_dir / "sweep.csv")
    return results


RADIUS_FIELDS = ("density_class", "n_windows", "n_estimated", "estimated_fraction",
                 "mean_r", "min_r", "max_r", "mean_r_estimated")


def radius_rows(scenes, loss_cfg=LossConfig()):
    """Per density class statistics of the window radius over ``scenes``.

    Mean/min/max cover every window (fallbacks count at the fixed radius);
    ``mean_r_estimated`` averages only windows with an estimated radius.
    """
    rows = []
    for cls in DENSITY_CLASSES:
        est = [scene_radius(s, loss_cfg) for s in scenes if s.density_class == cls]
        values = np.array([e.mean for e in est])
        estimated = np.array([e.mean for e in est if e.source == "estimated"])
        n = len(values)
        rows.append({
            "density_class": cls,
            "n_windows": n,
            "n_estimated": len(estimated),
            "estimated_fraction": repr(len(estimated) / n) if n else "",
            "mean_r": repr(float(values.mean())) if n else "",
            "min_r": repr(float(values.min())) if n else "",
            "max_r": repr(float(values.max())) if n else "",
            "mean_r_estimated": repr(float(estimated.mean())) if len(estimated) else "",
        })
    return rows


def cmd_radius_report(cfg, data_dir, dataset, out_dir):
    scenes = [s for split in SPLITS for s in _load_split(data_dir, dataset, split)]
    rows = radius_rows(scenes, loss_config(cfg))
    _echo(cfg, out_dir, "radius-report")
    _write_csv(out_dir / "radius.csv", RADIUS_FIELDS, [[r[k] for k in RADIUS_FIELDS] for r in rows])
    return rows


# -- argument parsing -----------------------------------------------------------

def _lambda_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}") from None


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="YAML or JSON run config")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. train.max_epochs=3 (repeatable)")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--out", required=True, help="output directory")
    shared.add_argument("--dataset", choices=DATASETS, default="allD")
    shared.add_argument("--lambda", dest="lam", type=float, help="collision weight")
    shared.add_argument("--loss", choices=("ade", "dos", "sos"))
    shared.add_argument("--model", choices=("vanilla", "social"))
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="crowdcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[shared], help="synthesize a raw trajectory file")
    p = sub.add_parser("prepare", parents=[shared], help="split, slice and classify a raw file")
    p.add_argument("raw", help="raw trajectory file (frame id x y)")
    p = sub.add_parser("train", parents=[shared], help="fit a model on a prepared dataset")
    p.add_argument("data", help="prepared data directory")
    p = sub.add_parser("eval", parents=[shared], help="metrics CSV for a checkpoint")
    p.add_argument("data", help="prepared data directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p = sub.add_parser("sweep", parents=[shared], help="one model per collision weight")
    p.add_argument("data", help="prepared data directory")
    p.add_argument("--lambdas", type=_lambda_list, help="comma separated weights, e.g. 0,0.001,0.003")
    p = sub.add_parser("radius-report", parents=[shared], help="window radius statistics per density class")
    p.add_argument("data", help="prepared data directory")
    return parser


def _threads():
    raw = os.environ.get("CROWDCAST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CROWDCAST_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("CROWDCAST_THREADS must be >= 1")
    return n


def run(args):
    cfg = validate_config(resolve_config(args))
    out = Path(args.out)
    if args.command == "generate":
        cmd_generate(cfg, out)
    elif args.command == "prepare":
        cmd_prepare(cfg, args.raw, out)
    elif args.command == "train":
        cmd_train(cfg, args.data, args.dataset, out)
    elif args.command == "eval":
        cmd_eval(cfg, args.data, args.dataset, args.checkpoint, out, args.split)
    elif args.command == "sweep":
        cmd_sweep(cfg, args.data, args.dataset, out, _threads())
    elif args.command == "radius-report":
        cmd_radius_report(cfg, args.data, args.dataset, out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (CrowdcastError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
