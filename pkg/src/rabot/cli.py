"""Command-line entry point: ``rabot generate | train | experiment <name>``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .backbones import BackboneConfig
from .edgefilter import ControllerConfig
from .encoder import EncoderConfig
from .graph import DatasetError, SplitError, load_dataset
from .synthgen import GenSpec, GenSpecError, generate, write_dataset
from .trainer import NumericFailure, TrainConfig, train

log = logging.getLogger("rabot")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

CURVE_COLUMNS = ("epoch", "loss_total", "loss_gnn", "loss_aug", "loss_edge", "val_acc", "val_f1", "tau")

EXPERIMENT_DEFAULTS = {
    "experiment.seeds": [1, 2, 3, 4, 5],
    "experiment.drop_rates": [0.1, 0.3, 0.5],
    "experiment.taus": [0.2, 0.4, 0.6, 0.8],
    "experiment.fractions": [round(0.1 * i, 1) for i in range(1, 11)],
    "experiment.backbones": ["gcn", "relational"],
}


class ConfigError(ValueError):
    pass


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _stage:
    """Map any exception raised inside the block to one exit code."""

    def __init__(self, code: int, label: str, catch=(Exception,)):
        self.code, self.label, self.catch = code, label, catch

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, self.catch) and not isinstance(exc, CliExit):
            raise CliExit(self.code, f"{self.label}: {exc}") from exc
        return False


def _config_stage():
    return _stage(EXIT_CONFIG, "config error", (ConfigError, GenSpecError, ValueError, TypeError, FileExistsError))


def _data_stage():
    return _stage(EXIT_DATA, "data error", (DatasetError, SplitError, GenSpecError, ValueError, OSError))


def _run_stage():
    return _stage(EXIT_NUMERIC, "numeric failure", (NumericFailure, FloatingPointError))


def _flatten(obj, prefix: str) -> dict:
    out = {}
    items = dataclasses.asdict(obj).items() if dataclasses.is_dataclass(obj) else obj.items()
    for key, value in items:
        name = f"{prefix}.{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name))
        else:
            out[name] = list(value) if isinstance(value, tuple) else value
    return out


def default_config() -> dict:
    """Every accepted dotted key with its default value."""
    return {**_flatten(GenSpec(), "gen"), **_flatten(TrainConfig(), "train"), **EXPERIMENT_DEFAULTS}


def _coerce(key: str, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(value, bool) and isinstance(value, int):
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, str) and isinstance(value, str):
        return value
    if isinstance(default, list) and isinstance(value, list):
        return value
    raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a flat JSON object")
    unknown = sorted(set(raw) - set(cfg))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in raw.items():
        cfg[key] = _coerce(key, value, cfg[key])
    return cfg


def _section(cfg: dict, prefix: str) -> dict:
    nested: dict = {}
    for key, value in cfg.items():
        if not key.startswith(prefix + "."):
            continue
        parts = key[len(prefix) + 1 :].split(".")
        node = nested
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return nested


def build_genspec(cfg: dict) -> GenSpec:
    d = _section(cfg, "gen")
    d["split"] = tuple(d["split"])
    return GenSpec(**d)


def build_trainconfig(cfg: dict) -> TrainConfig:
    d = _section(cfg, "train")
    d["encoder"] = EncoderConfig(**d["encoder"])
    d["backbone"] = BackboneConfig(**d["backbone"])
    d["controller"] = ControllerConfig(**d["controller"])
    return TrainConfig(**d)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and not force:
        raise FileExistsError(f"{out} already exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: dict, seed: int) -> None:
    manifest = {"command": command, "config_hash": config_hash(cfg), "seed": seed, "version": __version__}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _graph_for(args, cfg: dict):
    if args.data:
        return load_dataset(args.data)
    g, _ = generate(build_genspec(cfg))
    return g


def _check_trainable(g) -> None:
    if g.split is None:
        raise SplitError("dataset has no splits.tsv; every node needs a train/val/test tag")
    if len(g.nodes_in(0)) == 0:
        raise SplitError("dataset has no labeled training nodes")


# ----------------------------------------------------------------------------
# commands


def cmd_generate(args, cfg: dict) -> int:
    with _config_stage():
        if args.seed is not None:
            cfg["gen.seed"] = args.seed
        spec = build_genspec(cfg)
        out = _prepare_out(Path(args.out), args.force)
    with _data_stage():
        write_dataset(spec, out)
    _write_manifest(out, "generate", cfg, spec.seed)
    print(f"wrote dataset to {out}")
    return EXIT_OK


def cmd_train(args, cfg: dict) -> int:
    if args.seed is not None:
        cfg["train.seed"] = args.seed
    for flag, key in (
        ("no_filter", "train.enable_filter"),
        ("no_augment", "train.enable_augment"),
        ("no_attention", "train.enable_attention"),
        ("no_gnn", "train.enable_gnn"),
        ("fixed_tau", "train.dynamic_tau"),
    ):
        if getattr(args, flag):
            cfg[key] = False
    with _config_stage():
        tc = build_trainconfig(cfg)
        if not args.data:
            build_genspec(cfg)
        out = _prepare_out(Path(args.out), args.force)
    with _data_stage():
        g = _graph_for(args, cfg)
        _check_trainable(g)
    with _run_stage():
        report = train(g, tc, trace=args.trace)
    body = {"config_hash": config_hash(cfg), **report.to_dict()}
    (out / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for row in report.curves:
            w.writerow([row[c] for c in CURVE_COLUMNS])
    with open(out / "filter_log.jsonl", "w") as fh:
        for row in report.filter_log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if args.trace:
        with open(out / "augment_trace.jsonl", "w") as fh:
            for row in report.augment_trace:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"wall_clock_seconds": report.wall_clock}) + "\n")
    _write_manifest(out, "train", cfg, tc.seed)
    print(
        f"test accuracy {report.test_accuracy:.4f}  f1 {report.test_f1:.4f}  "
        f"(best epoch {report.best_epoch}, {report.wall_clock:.1f}s)"
    )
    return EXIT_OK


def cmd_experiment(args, cfg: dict) -> int:
    from . import experiments

    with _config_stage():
        if args.name not in experiments.EXPERIMENTS:
            raise ConfigError(f"unknown experiment {args.name!r}; choose from {', '.join(experiments.EXPERIMENTS)}")
        seeds = [args.seed] if args.seed is not None else list(cfg["experiment.seeds"])
        tc = build_trainconfig(cfg)
        if not args.data:
            build_genspec(cfg)
        out = _prepare_out(Path(args.out), args.force)
    with _data_stage():
        g = _graph_for(args, cfg)
        _check_trainable(g)
    grid = {
        "random-drop": {"rates": cfg["experiment.drop_rates"]},
        "oracle-clean": {"backbones": cfg["experiment.backbones"]},
        "ablation": {},
        "tau-sweep": {"taus": cfg["experiment.taus"]},
        "label-fraction": {"fractions": cfg["experiment.fractions"]},
    }[args.name]
    with _run_stage():
        rows = experiments.EXPERIMENTS[args.name](g, tc, seeds=seeds, **grid)
    write_results_csv(out / f"{args.name}.csv", rows, config_hash(cfg))
    _write_manifest(out, f"experiment {args.name}", cfg, seeds[0])
    for s in experiments.summarize(rows, experiments.GROUPING[args.name]):
        keys = {k: v for k, v in s.items() if k not in ("n", "seeds", "acc_std", "f1_std", "acc_mean", "f1_mean")}
        print(
            " ".join(f"{k}={v}" for k, v in keys.items()),
            f"acc={s['acc_mean']:.4f}±{s['acc_std']:.4f} f1={s['f1_mean']:.4f}±{s['f1_std']:.4f}",
        )
    return EXIT_OK


def write_results_csv(path: Path, rows: list[dict], chash: str) -> None:
    columns: list[str] = []
    for r in rows:
        columns += [k for k in r if k not in columns]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)
        fh.write(f"# config_hash={chash}\n")


# ----------------------------------------------------------------------------
# argument parsing


def _defaults_epilog() -> str:
    lines = ["config keys (flat JSON, dotted names) and defaults:"]
    lines += [f"  {k} = {json.dumps(v)}" for k, v in default_config().items()]
    lines += ["", "exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure",
              "RABOT_THREADS caps experiment worker processes; RABOT_DISABLE_NUMBA=1 forces the numpy kernels."]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file with dotted keys")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override the seed (experiments: run only this seed)")
    common.add_argument("--force", action="store_true", help="write into an existing output directory")
    common.add_argument("--trace", action="store_true", help="dump synthetic-node provenance")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="rabot",
        description="Social bot detection with latent oversampling and learned edge filtering.",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic benchmark dataset")
    tr = sub.add_parser("train", parents=[common], help="train once and write report.json + curves.csv")
    tr.add_argument("--data", help="dataset directory (default: generate from gen.* keys)")
    for flag in ("no-filter", "no-augment", "no-attention", "no-gnn", "fixed-tau"):
        tr.add_argument(f"--{flag}", action="store_true")
    ex = sub.add_parser("experiment", parents=[common], help="multi-seed comparison written as CSV")
    ex.add_argument("name", help="random-drop | oracle-clean | ablation | tau-sweep | label-fraction")
    ex.add_argument("--data", help="dataset directory (default: generate from gen.* keys)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    commands = {"generate": cmd_generate, "train": cmd_train, "experiment": cmd_experiment}
    try:
        with _config_stage():
            cfg = load_config(args.config)
        return commands[args.command](args, cfg)
    except CliExit as exc:
        print(exc, file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
