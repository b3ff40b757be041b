"""Flat ``key = value`` run configuration with dotted keys.

Every key has a command-line flag of the same name (``window.length`` <->
``--window.length``).  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .evaluation import ABLATIONS, ExperimentConfig
from .masking import MECHANISMS, PATTERNS
from .model import ModelConfig, TrainConfig


def parse_seeds(text) -> list[int]:
    """``"3407..3411"`` (inclusive), ``"1,2,5"`` or a single integer."""
    if isinstance(text, (list, tuple)):
        return [int(s) for s in text]
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ConfigError(f"empty seed range {text!r}")
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse seeds from {text!r}") from None


def parse_floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse a number list from {text!r}") from None


@dataclass
class RunConfig:
    dataset_path: str | None = None
    adjacency_path: str | None = None
    coords_path: str | None = None
    distance_metric: str = "haversine"
    gaussian_threshold: float = 0.1
    window_length: int = 24
    window_stride: int = 24
    channels: int = 16
    embed_dim: int = 16
    k_steps: int = 2
    layers: int = 2
    dtype: str = "float32"
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 32
    grad_clip: float = 5.0
    mask_ratio: float = 0.2
    mask_pattern: str = "random"
    block_len: int = 4
    mechanism: str = "mcar"
    rates: list[float] = field(default_factory=lambda: [0.1])
    conditioning_feature: str = "0"
    mnar_quantile: float = 0.9
    seeds: list[int] = field(default_factory=lambda: [3407, 3408, 3409, 3410, 3411])
    variant: str = "full"
    output_dir: str = "gsli-out"
    jobs: int = 1

    def validate(self) -> "RunConfig":
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"missing.mechanism must be one of {MECHANISMS}")
        if self.mask_pattern not in PATTERNS:
            raise ConfigError(f"mask.pattern must be one of {PATTERNS}")
        if self.variant not in ABLATIONS:
            raise ConfigError(f"variant must be one of {sorted(ABLATIONS)}")
        if not 0 < self.mask_ratio < 1:
            raise ConfigError("mask.ratio must lie in (0, 1)")
        if any(not 0 < r < 1 for r in self.rates):
            raise ConfigError("missing.rates must lie in (0, 1)")
        if self.distance_metric not in ("euclidean", "haversine"):
            raise ConfigError("adjacency.metric must be euclidean or haversine")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("model.dtype must be float32 or float64")
        for name in ("window_length", "window_stride", "channels", "embed_dim", "layers", "epochs", "batch_size", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.k_steps < 0:
            raise ConfigError("model.k_steps must be nonnegative")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            channels=self.channels, embed_dim=self.embed_dim, k_steps=self.k_steps, layers=self.layers,
            dtype=self.dtype, seed=self.seeds[0],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate, batch_size=self.batch_size,
            grad_clip=self.grad_clip, mask_ratio=self.mask_ratio, mask_pattern=self.mask_pattern,
            block_len=self.block_len, window_length=self.window_length, window_stride=self.window_stride,
            seed=self.seeds[0],
        )

    def experiment_config(self) -> ExperimentConfig:
        cond = self.conditioning_feature
        return ExperimentConfig(
            mechanisms=[self.mechanism], rates=list(self.rates), seeds=list(self.seeds), variant=self.variant,
            model=self.model_config(), training=self.train_config(),
            conditioning_feature=int(cond) if str(cond).isdigit() else cond,
            mnar_quantile=self.mnar_quantile, jobs=self.jobs,
        )

    def to_keys(self) -> dict:
        d = asdict(self)
        return {key: d[attr] for key, (attr, _) in KEYS.items()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_keys(), sort_keys=True).encode()).hexdigest()


_str = str
KEYS: dict[str, tuple[str, object]] = {
    "dataset.path": ("dataset_path", _str),
    "adjacency.path": ("adjacency_path", _str),
    "adjacency.coords": ("coords_path", _str),
    "adjacency.metric": ("distance_metric", _str),
    "gaussian.threshold": ("gaussian_threshold", float),
    "window.length": ("window_length", int),
    "window.stride": ("window_stride", int),
    "model.channels": ("channels", int),
    "model.embed_dim": ("embed_dim", int),
    "model.k_steps": ("k_steps", int),
    "model.layers": ("layers", int),
    "model.dtype": ("dtype", _str),
    "train.epochs": ("epochs", int),
    "train.learning_rate": ("learning_rate", float),
    "train.batch_size": ("batch_size", int),
    "train.grad_clip": ("grad_clip", float),
    "mask.ratio": ("mask_ratio", float),
    "mask.pattern": ("mask_pattern", _str),
    "mask.block_len": ("block_len", int),
    "missing.mechanism": ("mechanism", _str),
    "missing.rates": ("rates", parse_floats),
    "missing.conditioning_feature": ("conditioning_feature", _str),
    "missing.mnar_quantile": ("mnar_quantile", float),
    "seeds": ("seeds", parse_seeds),
    "variant": ("variant", _str),
    "output.dir": ("output_dir", _str),
    "jobs": ("jobs", int),
}

assert {a for a, _ in KEYS.values()} == {f.name for f in fields(RunConfig)}


def read_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} does not exist")
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config-file values, then non-None overrides (all keyed by dotted name)."""
    cfg = RunConfig()
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, value in merged.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        attr, conv = KEYS[key]
        try:
            setattr(cfg, attr, conv(value))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return cfg.validate()


def resolve_dataset(path_or_name: str) -> Path:
    """A path as given, or a bare dataset name looked up under ``$GSLI_DATA_DIR`` (default ``./data``)."""
    p = Path(path_or_name)
    if p.exists():
        return p
    if os.sep not in path_or_name and "/" not in path_or_name:
        candidate = Path(os.environ.get("GSLI_DATA_DIR", "data")) / path_or_name
        if candidate.exists():
            return candidate
    raise ConfigError(f"dataset {path_or_name!r} not found")
