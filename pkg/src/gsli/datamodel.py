"""Core data containers, CSV ingestion, adjacency construction, normalization and windowing.

Signals are stored as ``(N, T, F)`` float64 arrays (node, timestamp, feature) with a
matching 0/1 mask.  Missing positions always hold 0.0 and are never read as data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConsistencyError, DegenerateError, ParameterError, ParseError, ShapeError, StructureError

EARTH_RADIUS_KM = 6371.0088

DEFAULT_SCHEMA = {"node": "node_id", "timestamp": "timestamp", "feature": "feature_id", "value": "value"}

MISSING_MARKERS = frozenset({"", "nan", "NaN", "NA", "null", "None"})


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (F,)
    std: np.ndarray  # (F,)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class SpatioTemporalDataset:
    signal: np.ndarray  # (N, T, F)
    mask: np.ndarray  # (N, T, F), 1 = observed
    adjacency: np.ndarray  # (N, N)
    node_ids: list[str]
    feature_ids: list[str]
    timestamps: list = field(default_factory=list)
    norm_stats: NormStats | None = None

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if self.signal.ndim != 3 or self.signal.shape != self.mask.shape:
            raise ShapeError(f"signal {self.signal.shape} and mask {self.mask.shape} must share an (N, T, F) shape")
        n, t, f = self.signal.shape
        if self.adjacency.shape != (n, n):
            raise ShapeError(f"adjacency must be {n}x{n}, got {self.adjacency.shape}")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ParameterError("mask entries must be exactly 0 or 1")
        if np.any(self.adjacency < 0):
            raise ParameterError("adjacency entries must be nonnegative")
        if len(self.node_ids) != n or len(self.feature_ids) != f:
            raise ShapeError("node_ids / feature_ids lengths do not match the signal shape")
        if not self.timestamps:
            self.timestamps = list(range(t))
        self.signal = np.where(self.mask > 0, self.signal, 0.0)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.signal.shape

    def with_mask(self, mask: np.ndarray) -> "SpatioTemporalDataset":
        """Same data with a different observation mask (unobserved cells zeroed)."""
        mask = np.asarray(mask, dtype=np.float64)
        return replace(self, signal=np.where(mask > 0, self.signal, 0.0), mask=mask)


@dataclass(frozen=True)
class DegreePair:
    out_degree: np.ndarray  # diagonal (N, N)
    in_degree: np.ndarray  # diagonal (N, N)


def degree_pair(adjacency: np.ndarray) -> DegreePair:
    a = np.asarray(adjacency, dtype=np.float64)
    return DegreePair(np.diag(a.sum(axis=1)), np.diag(a.sum(axis=0)))


@dataclass(frozen=True)
class Window:
    signal: np.ndarray  # (N, T_w, F)
    mask: np.ndarray
    origin: int


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def _parse_timestamp(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return datetime.fromisoformat(raw)


def _as_number(ts) -> float:
    if isinstance(ts, datetime):
        return ts.timestamp()
    return float(ts)


def _check_regular(timestamps: Sequence) -> None:
    if len(timestamps) < 2:
        return
    values = np.array([_as_number(t) for t in timestamps])
    steps = np.diff(values)
    if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=0, atol=1e-9 * max(1.0, abs(steps[0]))):
        raise StructureError("timestamps do not form a regular grid")


def read_adjacency_csv(path) -> tuple[list[str], np.ndarray]:
    """Dense matrix CSV whose header row lists the node ids."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty adjacency file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    # tolerate a leading row-label column
    if body and len(body[0]) == len(header) + 1:
        body = [r[1:] for r in body]
    elif header and header[0] == "" and body and len(body[0]) == len(header):
        header = header[1:]
        body = [r[1:] for r in body]
    if len(body) != len(header):
        raise ParseError(f"{path}: expected {len(header)} matrix rows, found {len(body)}")
    mat = np.zeros((len(header), len(header)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i + 2} has {len(row)} columns, expected {len(header)}")
        try:
            mat[i] = [float(v) for v in row]
        except ValueError as exc:
            raise ParseError(f"{path}: row {i + 2}: {exc}") from None
    return header, mat


def write_adjacency_csv(path, node_ids: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(node_ids))
        for row in np.asarray(matrix):
            w.writerow([repr(float(v)) for v in row])


def read_coords_csv(path) -> tuple[list[str], np.ndarray]:
    """``node_id,lat,lon`` (or ``node_id,x,y``) per row."""
    ids, coords = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty coordinates file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}: row {lineno} must have 3 columns")
            try:
                coords.append((float(row[1]), float(row[2])))
            except ValueError as exc:
                raise ParseError(f"{path}: row {lineno}: {exc}") from None
            ids.append(row[0].strip())
    return ids, np.asarray(coords, dtype=np.float64)


def write_signal_csv(path, dataset: SpatioTemporalDataset) -> None:
    """Long-form ``node_id,timestamp,feature_id,value``; missing cells are written empty."""
    n, t, f = dataset.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "timestamp", "feature_id", "value"])
        for i in range(n):
            for j in range(t):
                for k in range(f):
                    v = repr(float(dataset.signal[i, j, k])) if dataset.mask[i, j, k] else ""
                    w.writerow([dataset.node_ids[i], dataset.timestamps[j], dataset.feature_ids[k], v])


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def load_dataset(
    signal_path,
    adjacency_source=None,
    schema: dict | None = None,
    *,
    coords_path=None,
    threshold: float = 0.1,
    metric: str = "haversine",
) -> SpatioTemporalDataset:
    """Read a long-form signal CSV plus either a dense adjacency CSV or a coordinates CSV.

    Nodes and features come out in sorted order, timestamps ascending.  Cells that are
    empty/NaN in the file, or absent altogether, are marked missing.
    """
    cols = dict(DEFAULT_SCHEMA)
    cols.update(schema or {})
    records = []
    with open(signal_path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing_cols = [c for c in cols.values() if c not in (reader.fieldnames or [])]
        if missing_cols:
            raise ParseError(f"{signal_path}: header lacks columns {missing_cols}")
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(row.get(c) is None for c in cols.values()):
                raise ParseError(f"{signal_path}: malformed row {lineno}")
            raw = row[cols["value"]].strip()
            try:
                ts = _parse_timestamp(row[cols["timestamp"]])
                value = math.nan if raw in MISSING_MARKERS else float(raw)
            except ValueError as exc:
                raise ParseError(f"{signal_path}: row {lineno}: {exc}") from None
            records.append((lineno, row[cols["node"]].strip(), ts, row[cols["feature"]].strip(), value))
    if not records:
        raise ParseError(f"{signal_path}: no data rows")

    node_ids = sorted({r[1] for r in records})
    feature_ids = sorted({r[3] for r in records})
    timestamps = sorted({r[2] for r in records}, key=_as_number)
    _check_regular(timestamps)
    n_idx = {v: i for i, v in enumerate(node_ids)}
    f_idx = {v: i for i, v in enumerate(feature_ids)}
    t_idx = {v: i for i, v in enumerate(timestamps)}

    signal = np.zeros((len(node_ids), len(timestamps), len(feature_ids)))
    mask = np.zeros_like(signal)
    seen = np.zeros(signal.shape, dtype=bool)
    for lineno, node, ts, feat, value in records:
        key = (n_idx[node], t_idx[ts], f_idx[feat])
        if seen[key]:
            raise ParseError(f"{signal_path}: duplicate cell at row {lineno}")
        seen[key] = True
        if not math.isnan(value):
            signal[key] = value
            mask[key] = 1.0

    if coords_path is not None:
        ids, coords = read_coords_csv(coords_path)
        order = _align(ids, node_ids, coords_path)
        adjacency = build_gaussian_adjacency(coords[order], threshold, metric=metric)
    elif adjacency_source is not None:
        ids, mat = read_adjacency_csv(adjacency_source)
        order = _align(ids, node_ids, adjacency_source)
        adjacency = mat[np.ix_(order, order)]
    else:
        adjacency = np.zeros((len(node_ids), len(node_ids)))
    return SpatioTemporalDataset(signal, mask, adjacency, node_ids, feature_ids, timestamps)


def _align(source_ids: list[str], node_ids: list[str], path) -> list[int]:
    pos = {v: i for i, v in enumerate(source_ids)}
    absent = [v for v in node_ids if v not in pos]
    if absent:
        raise ConsistencyError(f"{path}: nodes {absent} from the signal are absent")
    return [pos[v] for v in node_ids]


def pairwise_distances(coords: np.ndarray, metric: str = "haversine") -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if metric == "euclidean":
        diff = coords[:, None, :] - coords[None, :, :]
        return np.sqrt((diff**2).sum(-1))
    if metric == "haversine":
        lat, lon = np.radians(coords[:, 0]), np.radians(coords[:, 1])
        dlat = lat[:, None] - lat[None, :]
        dlon = lon[:, None] - lon[None, :]
        h = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
        return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    raise ParameterError(f"unknown distance metric {metric!r}")


def build_gaussian_adjacency(
    coords: np.ndarray, threshold: float, *, metric: str = "euclidean", sigma: float | None = None
) -> np.ndarray:
    """Thresholded Gaussian kernel ``exp(-d^2 / sigma^2)`` with a zero diagonal.

    ``sigma`` defaults to the (population) standard deviation of the distances over
    distinct station pairs.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[0] < 2:
        raise ParameterError("need at least two stations")
    if not np.all(np.isfinite(coords)):
        raise ParameterError("coordinates must be finite")
    if threshold < 0:
        raise ParameterError("threshold must be nonnegative")
    dist = pairwise_distances(coords, metric)
    if sigma is None:
        iu = np.triu_indices(len(coords), k=1)
        sigma = float(np.std(dist[iu]))
    if not sigma > 0:
        raise DegenerateError("pairwise distances have zero spread (co-located stations); sigma is undefined")
    w = np.exp(-(dist**2) / sigma**2)
    w[w < threshold] = 0.0
    np.fill_diagonal(w, 0.0)
    return w


def normalize(dataset: SpatioTemporalDataset) -> tuple[SpatioTemporalDataset, NormStats]:
    """Per-feature z-score over observed entries (population stdev); missing cells stay 0."""
    m = dataset.mask > 0
    f = dataset.shape[2]
    mean = np.zeros(f)
    std = np.zeros(f)
    for k in range(f):
        vals = dataset.signal[..., k][m[..., k]]
        name = dataset.feature_ids[k]
        if vals.size < 2:
            raise DegenerateError(f"feature {name!r} has fewer than two observed entries")
        mean[k] = vals.mean()
        std[k] = vals.std()
        if not std[k] > 0:
            raise DegenerateError(f"feature {name!r} has zero variance")
    stats = NormStats(mean, std)
    return replace(dataset, signal=apply_norm(dataset.signal, dataset.mask, stats), norm_stats=stats), stats


def apply_norm(signal: np.ndarray, mask: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.where(mask > 0, (signal - stats.mean) / stats.std, 0.0)


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(values) * stats.std + stats.mean


def window_split(dataset: SpatioTemporalDataset, length: int, stride: int) -> list[Window]:
    t = dataset.shape[1]
    if stride < 1 or length < 1:
        raise ParameterError("window length and stride must be positive")
    if length > t:
        raise ShapeError(f"window length {length} exceeds series length {t}")
    origins = range(0, t - length + 1, stride)
    return [
        Window(dataset.signal[:, o : o + length], dataset.mask[:, o : o + length], o) for o in origins
    ]


def covering_origins(t: int, length: int, stride: int) -> list[int]:
    """Window origins that cover every timestamp (adds a tail window flush with the end)."""
    # a stride longer than the window would leave gaps
    origins = list(range(0, t - length + 1, min(stride, length)))
    if origins[-1] + length < t:
        origins.append(t - length)
    return origins
