"""Metrics, experiment grids, the ablation registry, and cross-feature attention statistics."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path
from statistics import mean

import numpy as np
import torch

from .datamodel import SpatioTemporalDataset, apply_norm
from .errors import GsliError, ParameterError
from .masking import apply_mechanism
from .model import GsliModel, ModelConfig, TrainConfig, impute, train

log = logging.getLogger(__name__)

PAPER_BASE_SEED = 3407


def _eval_cells(pred, truth, eval_mask):
    sel = np.asarray(eval_mask) > 0
    if not sel.any():
        raise ParameterError("evaluation mask is empty")
    return np.asarray(pred)[sel] - np.asarray(truth)[sel]


def rmse(pred, truth, eval_mask) -> float:
    err = _eval_cells(pred, truth, eval_mask)
    return float(np.sqrt(np.mean(err**2)))


def mae(pred, truth, eval_mask) -> float:
    return float(np.mean(np.abs(_eval_cells(pred, truth, eval_mask))))


# ---------------------------------------------------------------------------
# ablation registry
# ---------------------------------------------------------------------------

ABLATIONS = {
    "full": {},
    "TemporalGCN": {"node_scale": "given", "feature_scale": False, "cross_feature": False},
    "TemporalFeatureRL": {"node_scale": "none", "feature_scale": False},
    "no-cross-temporal": {"cross_temporal": False},
    "no-cross-feature": {"cross_feature": False},
    "no-feature-split-scale": {"node_scale": "canonical", "feature_scale": False},
    "no-prominence": {"prominence": False},
    "no-node-scale": {"node_scale": "none"},
    "no-feature-scale": {"feature_scale": False},
    "no-GSL": {"node_scale": "given", "feature_scale": False},
}


def variant_config(variant: str, base: ModelConfig | None = None) -> ModelConfig:
    if variant not in ABLATIONS:
        raise ParameterError(f"unknown ablation variant {variant!r}; choose from {sorted(ABLATIONS)}")
    return replace(base or ModelConfig(), **ABLATIONS[variant])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    mechanisms: list[str] = field(default_factory=lambda: ["mcar"])
    rates: list[float] = field(default_factory=lambda: [0.1])
    seeds: list[int] = field(default_factory=lambda: list(range(PAPER_BASE_SEED, PAPER_BASE_SEED + 5)))
    variant: str = "full"
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    conditioning_feature: int | str = 0
    mnar_quantile: float = 0.9
    jobs: int = 1


@dataclass
class RunResult:
    mechanism: str
    rate: float
    seed: int
    variant: str
    mask_ratio: float
    mask_pattern: str
    rmse: float
    mae: float
    final_loss: float
    seconds: float


@dataclass
class ExperimentReport:
    runs: list[RunResult]
    config: dict
    wall_clock: float = 0.0
    exports: dict = field(default_factory=dict)

    def summary(self) -> list[dict]:
        groups: dict[tuple, list[RunResult]] = {}
        for r in self.runs:
            groups.setdefault((r.variant, r.mechanism, r.rate, r.mask_ratio, r.mask_pattern), []).append(r)
        return [
            {
                "variant": k[0], "mechanism": k[1], "rate": k[2], "mask_ratio": k[3], "mask_pattern": k[4],
                "runs": len(v),
                "rmse": mean(r.rmse for r in v),
                "mae": mean(r.mae for r in v),
            }
            for k, v in groups.items()
        ]

    def mean_rmse(self, **match) -> float:
        sel = [r.rmse for r in self.runs if all(getattr(r, k) == v for k, v in match.items())]
        return mean(sel)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "runs": [asdict(r) for r in self.runs],
            "summary": self.summary(),
            "wall_clock": self.wall_clock,
            "exports": self.exports,
        }

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(out / "runs.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(asdict(self.runs[0]).keys()))
            w.writeheader()
            w.writerows(asdict(r) for r in self.runs)
        with open(out / "summary.csv", "w", newline="") as fh:
            rows = self.summary()
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
        return {"report": str(out / "report.json"), "runs": str(out / "runs.csv"), "summary": str(out / "summary.csv")}


def config_echo(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["model"] = asdict(cfg.model)
    d["training"] = asdict(cfg.training)
    return d


def run_single(
    dataset: SpatioTemporalDataset,
    mechanism: str,
    rate: float,
    seed: int,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    *,
    variant: str = "full",
    conditioning_feature=0,
    mnar_quantile: float = 0.9,
    return_model: bool = False,
):
    """Corrupt, train, impute and score one grid cell (metrics in normalized units)."""
    start = time.perf_counter()
    split = apply_mechanism(
        dataset, mechanism, rate, seed, conditioning_feature=conditioning_feature, quantile=mnar_quantile
    )
    corrupted = dataset.with_mask(split.corrupted_mask)
    model, trace = train(corrupted, replace(model_cfg, seed=seed), replace(train_cfg, seed=seed))
    result = impute(corrupted, model)
    truth = apply_norm(dataset.signal, dataset.mask, model.norm_stats)
    pred = result.prediction_normalized
    run = RunResult(
        mechanism=mechanism,
        rate=rate,
        seed=seed,
        variant=variant,
        mask_ratio=train_cfg.mask_ratio,
        mask_pattern=train_cfg.mask_pattern,
        rmse=rmse(pred, truth, split.eval_mask),
        mae=mae(pred, truth, split.eval_mask),
        final_loss=trace[-1],
        seconds=time.perf_counter() - start,
    )
    return (run, model) if return_model else run


def _run_cell(args):
    dataset, mech, rate, seed, cfg = args
    torch.set_num_threads(1)
    try:
        return run_single(
            dataset, mech, rate, seed, variant_config(cfg.variant, cfg.model), cfg.training,
            variant=cfg.variant, conditioning_feature=cfg.conditioning_feature, mnar_quantile=cfg.mnar_quantile,
        )
    except GsliError as exc:
        raise type(exc)(f"[{cfg.variant} {mech} rate={rate} seed={seed}] {exc}") from exc


def run_experiment(dataset: SpatioTemporalDataset, cfg: ExperimentConfig) -> ExperimentReport:
    """Every (mechanism, rate, seed) cell of the grid, in a deterministic order."""
    start = time.perf_counter()
    cells = [(dataset, m, r, s, cfg) for m, r, s in product(cfg.mechanisms, cfg.rates, cfg.seeds)]
    if cfg.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            runs = list(pool.map(_run_cell, cells))
    else:
        runs = [_run_cell(c) for c in cells]
    for r in runs:
        log.info("%s %s rate=%.2f seed=%d rmse=%.4f mae=%.4f", r.variant, r.mechanism, r.rate, r.seed, r.rmse, r.mae)
    return ExperimentReport(runs, config_echo(cfg), time.perf_counter() - start)


def ablate(variant: str, dataset: SpatioTemporalDataset, cfg: ExperimentConfig) -> ExperimentReport:
    variant_config(variant)  # validate the key before doing any work
    return run_experiment(dataset, replace(cfg, variant=variant))


# ---------------------------------------------------------------------------
# attention statistics
# ---------------------------------------------------------------------------

def incoming_attention_scores(maps: np.ndarray, num_nodes: int, num_features: int) -> tuple[np.ndarray, np.ndarray]:
    """Average incoming attention per station and per feature.

    ``maps`` is ``(..., L, L)`` with rows as queries; the token index is
    ``node * F + feature``.  Both returned vectors sum to one.
    """
    maps = np.asarray(maps, dtype=np.float64)
    incoming = maps.reshape(-1, maps.shape[-2], maps.shape[-1]).mean(axis=(0, 1))
    per_token = incoming.reshape(num_nodes, num_features)
    return per_token.sum(axis=1), per_token.sum(axis=0)


@torch.no_grad()
def attention_stats(model: GsliModel, dataset: SpatioTemporalDataset, *, layer: int = -1) -> dict:
    """Mean cross-feature attention received by each station and each feature."""
    block = model.layers[layer]
    if not block.use_cross_feature:
        raise ParameterError("the selected layer has no cross-feature attention to capture")
    cfg = model.train_config or TrainConfig()
    n, t, f = dataset.shape
    x = apply_norm(dataset.signal, dataset.mask, model.norm_stats)
    length = min(cfg.window_length, t)
    dt = model.cfg.torch_dtype
    block.cross.capture = True
    collected = []
    try:
        for o in range(0, t - length + 1, length):
            xt = torch.as_tensor(x[None, :, o : o + length], dtype=dt)
            mt = torch.as_tensor(dataset.mask[None, :, o : o + length], dtype=dt)
            model(xt * mt, mt)
            collected.append(block.cross.captured.double().numpy())
    finally:
        block.cross.capture = False
        block.cross.captured = None
    stations, features = incoming_attention_scores(np.concatenate(collected, axis=1), n, f)
    return {
        "stations": dict(zip(dataset.node_ids, stations.tolist())),
        "features": dict(zip(dataset.feature_ids, features.tolist())),
    }


def write_attention_stats(stats: dict, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for key in ("stations", "features"):
        path = out / f"attention_{key}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([key[:-1], "mean_attention"])
            for name, v in stats[key].items():
                w.writerow([name, repr(v)])
        paths[key] = str(path)
    return paths
