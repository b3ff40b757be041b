"""GSLI network assembly, masked training objective, training loop, imputation and checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
from torch import nn

from .attention import CrossFeatureAttention, InputProjection, TemporalAttention
from .datamodel import NormStats, SpatioTemporalDataset, apply_norm, covering_origins, denormalize, normalize, window_split
from .errors import EmptyLabelError, NumericError, ParameterError, ShapeError, TrainingError
from .graphlearn import MetaGraph
from .masking import sample_training_mask
from .spatialconv import CanonicalConv, FeatureScaleConv, NodeScaleConv, transition_matrices

log = logging.getLogger(__name__)

NODE_SCALE_KINDS = ("split", "canonical", "given", "none")
CHECKPOINT_FORMAT = "gsli-checkpoint/1"


@dataclass
class ModelConfig:
    channels: int = 16
    embed_dim: int = 16
    k_steps: int = 2
    layers: int = 2
    # architecture switches used by the ablation registry
    node_scale: str = "split"  # split | canonical | given | none
    feature_scale: bool = True
    prominence: bool = True
    cross_temporal: bool = True
    cross_feature: bool = True
    dtype: str = "float32"
    seed: int = 3407

    def __post_init__(self):
        if self.node_scale not in NODE_SCALE_KINDS:
            raise ParameterError(f"node_scale must be one of {NODE_SCALE_KINDS}")
        for name in ("channels", "embed_dim", "layers"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.k_steps < 0:
            raise ParameterError("k_steps must be nonnegative")

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 32
    grad_clip: float = 5.0
    mask_ratio: float = 0.2
    mask_pattern: str = "random"
    block_len: int = 4
    window_length: int = 24
    window_stride: int = 24
    seed: int = 3407


@dataclass
class ImputationResult:
    prediction: np.ndarray  # model output, de-normalized, (N, T, F)
    completed: np.ndarray  # observed values kept, predictions elsewhere
    prediction_normalized: np.ndarray = field(repr=False, default=None)


class GsliLayer(nn.Module):
    def __init__(self, n: int, f: int, cfg: ModelConfig, generator):
        super().__init__()
        c, k = cfg.channels, cfg.k_steps
        self.temporal = TemporalAttention(c, generator=generator) if cfg.cross_temporal else None
        if cfg.node_scale in ("split",):
            self.node_conv = NodeScaleConv(f, c, k, generator=generator)
        elif cfg.node_scale in ("canonical", "given"):
            self.node_conv = CanonicalConv(f, c, k, generator=generator)
        else:
            self.node_conv = None
        self.feature_conv = FeatureScaleConv(c, k, generator=generator) if cfg.feature_scale else None
        self.cross = CrossFeatureAttention(c, generator=generator)
        self.use_cross_feature = cfg.cross_feature


class GsliModel(nn.Module):
    """Stack of identical layers: temporal attention, two-scale graph diffusion, cross-feature attention.

    Layer ``l >= 2`` receives the previous cross-feature output plus the projected input
    signal.  Both attention stages are wrapped in residual connections.  Meta-graphs are
    shared by all layers.
    """

    def __init__(self, num_nodes: int, num_features: int, adjacency, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.num_nodes, self.num_features = num_nodes, num_features
        g = torch.Generator().manual_seed(cfg.seed)
        dt = cfg.torch_dtype
        a = torch.as_tensor(np.asarray(adjacency, dtype=np.float64))
        if a.shape != (num_nodes, num_nodes):
            raise ShapeError(f"adjacency must be {num_nodes}x{num_nodes}")
        fwd, bwd = transition_matrices(a)
        self.register_buffer("adjacency", a)
        self.register_buffer("fwd", fwd)
        self.register_buffer("bwd", bwd)

        self.projection = InputProjection(num_features, cfg.channels, generator=g)
        self.node_graph = None
        if cfg.node_scale == "split":
            self.node_graph = MetaGraph(num_features, num_nodes, cfg.embed_dim, prominence=cfg.prominence, generator=g)
        elif cfg.node_scale == "canonical":
            self.node_graph = MetaGraph(1, num_nodes, cfg.embed_dim, prominence=cfg.prominence, generator=g)
        self.feature_graph = (
            MetaGraph(1, num_features, cfg.embed_dim, prominence=cfg.prominence, generator=g) if cfg.feature_scale else None
        )
        self.layers = nn.ModuleList(GsliLayer(num_nodes, num_features, cfg, g) for _ in range(cfg.layers))
        self.head_w = nn.Parameter(torch.randn(num_features, cfg.channels, generator=g) / math.sqrt(cfg.channels))
        self.head_b = nn.Parameter(torch.zeros(num_features))
        self.to(dt)
        self.norm_stats: NormStats | None = None
        self.train_config: TrainConfig | None = None

    # -- graphs -------------------------------------------------------------
    def node_adjacency(self) -> torch.Tensor | None:
        """``(F, N, N)`` for split node scale, ``(1, N, N)`` for the shared canonical graph."""
        return None if self.node_graph is None else self.node_graph()

    def feature_adjacency(self) -> torch.Tensor | None:
        return None if self.feature_graph is None else self.feature_graph()[0]

    # -- forward ------------------------------------------------------------
    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """``x``/``mask`` are ``(..., N, T, F)`` (normalized, zero-filled); returns the same shape."""
        cfg = self.cfg
        node_adj = self.node_adjacency()
        feat_adj = self.feature_adjacency()
        H = self.projection(x, mask)
        Z = None
        for idx, layer in enumerate(self.layers):
            inp = H if Z is None else Z + H
            R = inp + layer.temporal(inp) if layer.temporal is not None else inp
            if cfg.node_scale == "split":
                R_nl = layer.node_conv(R, node_adj, self.fwd, self.bwd)
            elif cfg.node_scale == "canonical":
                R_nl = layer.node_conv(R, node_adj[0], self.fwd, self.bwd)
            elif cfg.node_scale == "given":
                R_nl = layer.node_conv(R, None, self.fwd, self.bwd)
            else:
                R_nl = torch.zeros_like(R)
            R_fl = layer.feature_conv(R, feat_adj) if layer.feature_conv is not None else torch.zeros_like(R)
            E = layer.cross.fuse(R, R_nl, R_fl)
            Z = E + layer.cross.attend(E) if layer.use_cross_feature else E
            if not torch.isfinite(Z).all():
                raise NumericError(f"non-finite activations in layer {idx + 1}")
        return (Z * self.head_w).sum(-1) + self.head_b


def masked_mse(pred: torch.Tensor, target: torch.Tensor, label_mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error over labelled cells only."""
    if pred.shape != target.shape or pred.shape != label_mask.shape:
        raise ShapeError("prediction, target and label mask must share a shape")
    count = label_mask.sum()
    if count == 0:
        raise EmptyLabelError("training label mask is empty")
    return (((pred - target) * label_mask) ** 2).sum() / count


def loss(pred, target, label_mask) -> torch.Tensor:
    return masked_mse(pred, target, label_mask)


def _as_tensor(a, dtype):
    return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)


def train(
    dataset: SpatioTemporalDataset,
    model_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
    *,
    callback=None,
) -> tuple[GsliModel, list[float]]:
    """Fit a fresh model to the observed cells of ``dataset`` (raw units).

    Every optimisation step re-partitions each window's observed cells into input and
    label.  Returns the model and the per-epoch mean loss.
    """
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    norm_ds, stats = normalize(dataset)
    n, t, f = dataset.shape
    model = GsliModel(n, f, dataset.adjacency, model_cfg)
    model.norm_stats = stats
    model.train_config = train_cfg
    dt = model_cfg.torch_dtype

    windows = window_split(norm_ds, min(train_cfg.window_length, t), train_cfg.window_stride)
    signals = np.stack([w.signal for w in windows])
    masks = np.stack([w.mask for w in windows])
    usable = [i for i in range(len(windows)) if masks[i].sum() * train_cfg.mask_ratio >= 1]
    if not usable:
        raise TrainingError("no window holds enough observed entries to draw a training label")

    rng = np.random.default_rng(train_cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    trace: list[float] = []
    step = 0
    model.train()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(usable)
        total, batches = 0.0, 0
        for start in range(0, len(order), train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            inputs, labels = [], []
            for i in idx:
                split = sample_training_mask(
                    masks[i], train_cfg.mask_ratio, train_cfg.mask_pattern, train_cfg.block_len, rng
                )
                inputs.append(split.input_mask)
                labels.append(split.label_mask)
            in_mask = _as_tensor(np.stack(inputs), dt)
            lab_mask = _as_tensor(np.stack(labels), dt)
            x = _as_tensor(signals[idx], dt)
            opt.zero_grad()
            try:
                pred = model(x * in_mask, in_mask)
            except NumericError as exc:
                raise TrainingError(f"step {step}: {exc}") from exc
            value = masked_mse(pred, x, lab_mask)
            if not torch.isfinite(value):
                raise TrainingError(f"loss became non-finite at step {step}")
            value.backward()
            if train_cfg.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            opt.step()
            total += value.item()
            batches += 1
            step += 1
        trace.append(total / batches)
        if callback is not None:
            callback(epoch, trace[-1])
        log.debug("epoch %d loss %.6f", epoch, trace[-1])
    model.eval()
    return model, trace


@torch.no_grad()
def predict_normalized(model: GsliModel, signal_norm: np.ndarray, mask: np.ndarray, *, batch_size: int = 64) -> np.ndarray:
    """Run the model over covering windows and average overlapping predictions."""
    cfg = model.train_config or TrainConfig()
    n, t, f = signal_norm.shape
    length = min(cfg.window_length, t)
    origins = covering_origins(t, length, cfg.window_stride)
    dt = model.cfg.torch_dtype
    total = np.zeros((n, t, f))
    count = np.zeros((1, t, 1))
    model.eval()
    for s in range(0, len(origins), batch_size):
        chunk = origins[s : s + batch_size]
        x = np.stack([signal_norm[:, o : o + length] for o in chunk])
        m = np.stack([mask[:, o : o + length] for o in chunk])
        xt = _as_tensor(x, dt)
        mt = _as_tensor(m, dt)
        out = model(xt * mt, mt).double().numpy()
        for o, pred in zip(chunk, out):
            total[:, o : o + length] += pred
            count[:, o : o + length] += 1
    return total / count


def impute(dataset: SpatioTemporalDataset, model: GsliModel) -> ImputationResult:
    """Fill every mask-0 cell of ``dataset``; observed cells are returned untouched."""
    n, t, f = dataset.shape
    if (n, f) != (model.num_nodes, model.num_features):
        raise ShapeError(
            f"dataset has N={n}, F={f} but the model was trained for N={model.num_nodes}, F={model.num_features}"
        )
    if model.norm_stats is None:
        raise ParameterError("model carries no normalization statistics; train or load it first")
    x_norm = apply_norm(dataset.signal, dataset.mask, model.norm_stats)
    pred_norm = predict_normalized(model, x_norm, dataset.mask)
    pred = denormalize(pred_norm, model.norm_stats)
    completed = np.where(dataset.mask > 0, dataset.signal, pred)
    return ImputationResult(pred, completed, pred_norm)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: GsliModel, extra: dict | None = None) -> None:
    tensors = {k: v.detach().clone() for k, v in model.state_dict().items()}
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "num_nodes": model.num_nodes,
            "num_features": model.num_features,
            "model_config": asdict(model.cfg),
            "train_config": asdict(model.train_config) if model.train_config else None,
            "norm_stats": model.norm_stats.to_dict() if model.norm_stats else None,
            "shapes": {k: list(v.shape) for k, v in tensors.items()},
            "tensors": tensors,
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path) -> GsliModel:
    blob = torch.load(path, weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ParameterError(f"{path}: not a {CHECKPOINT_FORMAT} archive")
    cfg = ModelConfig(**blob["model_config"])
    adjacency = blob["tensors"]["adjacency"].numpy()
    model = GsliModel(blob["num_nodes"], blob["num_features"], adjacency, cfg)
    model.load_state_dict(blob["tensors"])
    if blob["train_config"]:
        known = {f.name for f in fields(TrainConfig)}
        model.train_config = TrainConfig(**{k: v for k, v in blob["train_config"].items() if k in known})
    if blob["norm_stats"]:
        model.norm_stats = NormStats.from_dict(blob["norm_stats"])
    model.checkpoint_extra = blob.get("extra", {})
    model.eval()
    return model
