"""``gsli`` command line: train, impute, evaluate, ablate, synth, export-graphs, check-propositions.

Exit codes: 0 success, 1 module failure (one JSON line on stderr), 2 invalid configuration.
Every artifact goes under ``output.dir`` together with a ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import KEYS, RunConfig, build_config, read_config_file, resolve_dataset
from .datamodel import SpatioTemporalDataset, load_dataset, write_adjacency_csv, write_signal_csv
from .errors import ConfigError, GsliError
from .evaluation import ABLATIONS, ablate, attention_stats, run_experiment, write_attention_stats

log = logging.getLogger("gsli")

# short spellings accepted next to the dotted keys
ALIASES = {
    "dataset.path": ["--dataset"],
    "adjacency.path": ["--adjacency"],
    "adjacency.coords": ["--coords"],
    "missing.mechanism": ["--mechanism"],
    "missing.rates": ["--rate", "--rates", "--missing-rate"],
    "mask.ratio": ["--mask-ratio"],
    "mask.pattern": ["--mask-pattern"],
    "seeds": ["--seed"],
    "output.dir": ["--output", "-o"],
    "train.epochs": ["--epochs"],
    "jobs": [],
    "variant": [],
}


class _ExitConfig(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep exit code 2 but route through the JSON error line
        raise _ExitConfig(message)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dataset_files(cfg: RunConfig) -> tuple[Path, Path | None, Path | None]:
    """Signal CSV plus adjacency/coords source; a directory may hold ``signal.csv`` and friends."""
    if not cfg.dataset_path:
        raise ConfigError("dataset.path is required")
    root = resolve_dataset(cfg.dataset_path)
    signal = root / "signal.csv" if root.is_dir() else root
    adjacency = Path(cfg.adjacency_path) if cfg.adjacency_path else None
    coords = Path(cfg.coords_path) if cfg.coords_path else None
    if root.is_dir() and adjacency is None and coords is None:
        if (root / "adjacency.csv").exists():
            adjacency = root / "adjacency.csv"
        elif (root / "coords.csv").exists():
            coords = root / "coords.csv"
    for p in (signal, adjacency, coords):
        if p is not None and not p.is_file():
            raise ConfigError(f"{p} does not exist")
    if adjacency is None and coords is None:
        raise ConfigError("either adjacency.path or adjacency.coords is required")
    return signal, adjacency, coords


def _load(cfg: RunConfig) -> tuple[SpatioTemporalDataset, dict[str, str]]:
    signal, adjacency, coords = _dataset_files(cfg)
    ds = load_dataset(
        signal, adjacency, coords_path=coords, threshold=cfg.gaussian_threshold, metric=cfg.distance_metric
    )
    sums = {str(p): sha256_file(p) for p in (signal, adjacency, coords) if p is not None}
    return ds, sums


class Run:
    """Output directory bookkeeping: every written file is recorded in the manifest."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.files: dict[str, str] = {}
        self.datasets: dict[str, str] = {}
        self.started = time.time()

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def record(self, *paths) -> None:
        for p in paths:
            p = Path(p)
            self.files[str(p.relative_to(self.out))] = sha256_file(p)

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, default=_jsonable))
        self.record(p)
        return p

    def finish(self, extra: dict | None = None) -> dict:
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg.to_keys(),
            "config_sha256": self.cfg.digest(),
            "seeds": self.cfg.seeds,
            "datasets": self.datasets,
            "files": self.files,
            "started": self.started,
            "finished": time.time(),
        }
        manifest.update(extra or {})
        self.path("manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable))
        return manifest


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _checkpoint_path(args) -> Path:
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    p = Path(args.checkpoint)
    if not p.is_file():
        raise ConfigError(f"checkpoint {p} does not exist")
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args, cfg: RunConfig) -> int:
    from .model import save_checkpoint, train

    ds, sums = _load(cfg)
    run = Run("train", cfg)
    run.datasets = sums
    model, trace = train(ds, cfg.model_config(), cfg.train_config())
    ckpt = run.path("model.pt")
    save_checkpoint(ckpt, model, extra={"node_ids": ds.node_ids, "feature_ids": ds.feature_ids, "config": cfg.to_keys()})
    run.record(ckpt)
    loss_path = run.path("loss.csv")
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows((i + 1, repr(v)) for i, v in enumerate(trace))
    run.record(loss_path)
    run.finish({"final_loss": trace[-1] if trace else None})
    print(json.dumps({"checkpoint": str(ckpt), "final_loss": trace[-1] if trace else None}))
    return 0


def cmd_impute(args, cfg: RunConfig) -> int:
    from .model import impute, load_checkpoint

    ckpt = _checkpoint_path(args)
    ds, sums = _load(cfg)
    model = load_checkpoint(ckpt)
    result = impute(ds, model)
    run = Run("impute", cfg)
    run.datasets = {**sums, str(ckpt): sha256_file(ckpt)}
    completed = SpatioTemporalDataset(
        signal=result.completed, mask=np.ones_like(ds.mask), adjacency=ds.adjacency,
        node_ids=ds.node_ids, feature_ids=ds.feature_ids, timestamps=ds.timestamps,
    )
    out = run.path("imputed.csv")
    write_signal_csv(out, completed)
    run.record(out)
    run.finish({"filled_cells": int((ds.mask == 0).sum())})
    print(json.dumps({"imputed": str(out), "filled_cells": int((ds.mask == 0).sum())}))
    return 0


def _report(run: Run, report) -> None:
    report.config["run"] = run.cfg.to_keys()
    paths = report.write(run.out)
    run.record(*paths.values())
    run.finish({"summary": report.summary()})
    print(json.dumps({"report": paths["report"], "summary": report.summary()}))


def cmd_evaluate(args, cfg: RunConfig) -> int:
    ds, sums = _load(cfg)
    run = Run("evaluate", cfg)
    run.datasets = sums
    _report(run, run_experiment(ds, cfg.experiment_config()))
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    variants = args.variants or [cfg.variant]
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise ConfigError(f"unknown ablation variant(s) {unknown}; choose from {sorted(ABLATIONS)}")
    ds, sums = _load(cfg)
    run = Run("ablate", cfg)
    run.datasets = sums
    exp = cfg.experiment_config()
    reports = [ablate(v, ds, exp) for v in variants]
    merged = reports[0]
    for r in reports[1:]:
        merged.runs.extend(r.runs)
        merged.wall_clock += r.wall_clock
    merged.config["variants"] = variants
    _report(run, merged)
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    from .oracle import SyntheticSpec, synth_heterogeneous

    spec = SyntheticSpec(
        n=args.n, f=args.f, t=args.t, noise_std=args.noise, seed=args.synth_seed,
        self_weight=args.self_weight, parent_weight=args.parent_weight,
    )
    ds, truth = synth_heterogeneous(spec)
    run = Run("synth", cfg)
    signal, adjacency, coords_p, truth_p = (run.path(n) for n in ("signal.csv", "adjacency.csv", "coords.csv", "truth.npz"))
    write_signal_csv(signal, ds)
    write_adjacency_csv(adjacency, ds.node_ids, ds.adjacency)
    with open(coords_p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "x", "y"])
        w.writerows([nid, repr(float(a)), repr(float(b))] for nid, (a, b) in zip(ds.node_ids, truth["coords"]))
    np.savez(truth_p, propagation=truth["propagation"], coords=truth["coords"])
    run.record(signal, adjacency, coords_p, truth_p)
    spec_d = {k: v for k, v in asdict(spec).items() if k not in ("propagation", "coords")}
    run.write_json("synth.json", spec_d)
    run.finish({"synthetic_spec": spec_d})
    print(json.dumps({"dataset": str(run.out), "shape": list(ds.shape)}))
    return 0


def cmd_export_graphs(args, cfg: RunConfig) -> int:
    import torch

    from .model import load_checkpoint

    ckpt = _checkpoint_path(args)
    model = load_checkpoint(ckpt)
    extra = getattr(model, "checkpoint_extra", {}) or {}
    node_ids = extra.get("node_ids") or [str(i) for i in range(model.num_nodes)]
    feature_ids = extra.get("feature_ids") or [str(i) for i in range(model.num_features)]
    run = Run("export-graphs", cfg)
    run.datasets = {str(ckpt): sha256_file(ckpt)}
    written = []
    with torch.no_grad():
        node = model.node_adjacency()
        feat = model.feature_adjacency()
    if node is not None:
        names = feature_ids if node.shape[0] == len(feature_ids) else ["shared"]
        for name, mat in zip(names, node.double().numpy()):
            p = run.path(f"node_graph_{name}.csv")
            write_adjacency_csv(p, node_ids, mat)
            written.append(p)
    if feat is not None:
        p = run.path("feature_graph.csv")
        write_adjacency_csv(p, feature_ids, feat.double().numpy())
        written.append(p)
    p = run.path("given_adjacency.csv")
    write_adjacency_csv(p, node_ids, model.adjacency.double().numpy())
    written.append(p)
    run.record(*written)
    run.finish()
    print(json.dumps({"graphs": [str(p) for p in written]}))
    return 0


def cmd_attention_stats(args, cfg: RunConfig) -> int:
    from .model import load_checkpoint

    ckpt = _checkpoint_path(args)
    ds, sums = _load(cfg)
    model = load_checkpoint(ckpt)
    stats = attention_stats(model, ds)
    run = Run("attention-stats", cfg)
    run.datasets = {**sums, str(ckpt): sha256_file(ckpt)}
    paths = write_attention_stats(stats, run.out)
    run.record(*paths.values())
    run.finish()
    print(json.dumps(stats))
    return 0


def cmd_check_propositions(args, cfg: RunConfig) -> int:
    from .oracle import PropositionConfig, check_propositions

    pc = PropositionConfig(n=args.n, f=args.f, t=args.t, data_seed=args.synth_seed, draws=args.draws,
                           epochs=args.prop_epochs, behavioral=not args.structural_only)
    if args.from_synth:
        meta = Path(args.from_synth) / "synth.json"
        if not meta.is_file():
            raise ConfigError(f"{meta} does not exist")
        spec = json.loads(meta.read_text())
        pc.n, pc.f, pc.t, pc.data_seed = spec["n"], spec["f"], spec["t"], spec["seed"]
        pc.noise_std, pc.self_weight, pc.parent_weight = spec["noise_std"], spec["self_weight"], spec["parent_weight"]
    report = check_propositions(pc)
    run = Run("check-propositions", cfg)
    run.write_json("propositions.json", report)
    run.finish({"pass": report["pass"]})
    print(json.dumps(report, default=_jsonable))
    return 0 if report["pass"] else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (flags override --config file keys)")
    g.add_argument("--config", help="flat 'key = value' file with dotted keys")
    for key in KEYS:
        names = [f"--{key}"] + [a for a in ALIASES.get(key, []) if a != f"--{key}"]
        g.add_argument(*names, dest=key, default=None, metavar=key.split(".")[-1].upper())


def _synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=5, help="number of nodes")
    p.add_argument("--f", type=int, default=2, help="number of features")
    p.add_argument("--t", type=int, default=500, help="number of timestamps")
    p.add_argument("--synth-seed", type=int, default=0, help="generator seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gsli", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gsli {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in [
        ("train", "fit a model on a dataset's observed cells and save a checkpoint"),
        ("impute", "fill missing cells of a dataset with a trained checkpoint"),
        ("evaluate", "mechanism x rate x seed grid: corrupt, train, impute, score"),
        ("ablate", "evaluate one or more ablation variants"),
        ("synth", "write a heterogeneous synthetic dataset"),
        ("export-graphs", "write learned meta-graphs of a checkpoint as CSV"),
        ("attention-stats", "mean cross-feature attention per station and feature"),
        ("check-propositions", "structural and behavioral per-feature graph checks (JSON verdict)"),
    ]:
        p = sub.add_parser(name, help=helptext, description=helptext)
        _config_flags(p)
        if name in ("impute", "export-graphs", "attention-stats"):
            p.add_argument("--checkpoint", help="model.pt written by 'train'")
        if name == "ablate":
            p.add_argument("variants", nargs="*", help=f"one or more of {sorted(ABLATIONS)}")
        if name == "synth":
            _synth_flags(p)
            p.add_argument("--noise", type=float, default=0.1, help="innovation standard deviation")
            p.add_argument("--self-weight", type=float, default=0.6)
            p.add_argument("--parent-weight", type=float, default=0.3)
        if name == "check-propositions":
            _synth_flags(p)
            p.add_argument("--from-synth", metavar="DIR", help="reuse n/f/t/seed of a 'synth' output directory")
            p.add_argument("--draws", type=int, default=10, help="random parameter draws for the structural check")
            p.add_argument("--prop-epochs", type=int, default=200, help="training epochs for the behavioral check")
            p.add_argument("--structural-only", action="store_true", help="skip the behavioral training check")
    return parser


def _resolve_config(args) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {key: getattr(args, key) for key in KEYS}
    return build_config(file_values, overrides)


COMMANDS = {
    "train": cmd_train,
    "impute": cmd_impute,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
    "export-graphs": cmd_export_graphs,
    "attention-stats": cmd_attention_stats,
    "check-propositions": cmd_check_propositions,
}


def _fail(kind: str, exc, code: int) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ExitConfig as exc:
        return _fail("UsageError", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail("ConfigError", exc, 2)
    except GsliError as exc:
        return _fail(type(exc).__name__, exc, 1)
    except (OSError, RuntimeError, ValueError) as exc:
        return _fail(type(exc).__name__, exc, 1)


if __name__ == "__main__":
    sys.exit(main())
