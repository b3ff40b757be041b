"""Missing-mechanism simulators (evaluation holdout) and per-step training-label masks.

All samplers draw exact counts (never per-cell Bernoulli) so realized rates are
reproducible, and they are pure functions of their inputs and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .datamodel import SpatioTemporalDataset
from .errors import EmptyLabelError, ParameterError

MECHANISMS = ("mcar", "mar", "mnar")
PATTERNS = ("random", "block", "historical")


@dataclass(frozen=True)
class EvalSplit:
    eval_mask: np.ndarray  # 1 = held out for scoring
    corrupted_mask: np.ndarray  # observed mask with the held-out cells removed


@dataclass(frozen=True)
class TrainingSplit:
    input_mask: np.ndarray
    label_mask: np.ndarray


def exact_count(rate: float, n: int) -> int:
    # tolerance guards against e.g. 0.29 * 100 == 28.999999999999996
    return int(math.floor(rate * n + 1e-9))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _observed(data) -> np.ndarray:
    mask = data.mask if isinstance(data, SpatioTemporalDataset) else data
    return np.asarray(mask) > 0


def _check_rate(rate: float, n_obs: int) -> int:
    if not 0.0 < rate < 1.0:
        raise ParameterError(f"rate must lie in (0, 1), got {rate}")
    k = exact_count(rate, n_obs)
    if k < 1:
        raise ParameterError(f"rate {rate} selects no entries out of {n_obs} observed")
    return k


def weighted_sample(weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` items drawn without replacement, P proportional to weight.

    Exponential-key method: item i gets key log(u_i) / w_i and the k largest keys win.
    Zero-weight items are never drawn.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if np.count_nonzero(weights > 0) < k:
        raise ParameterError(f"only {np.count_nonzero(weights > 0)} items carry positive weight; cannot draw {k}")
    u = rng.random(weights.shape[0])
    with np.errstate(divide="ignore"):
        keys = np.where(weights > 0, np.log(u) / np.where(weights > 0, weights, 1.0), -np.inf)
    return np.argsort(-keys, kind="stable")[:k]


def _split_from(observed: np.ndarray, chosen_flat: np.ndarray) -> EvalSplit:
    obs_idx = np.flatnonzero(observed)
    eval_mask = np.zeros(observed.size)
    eval_mask[obs_idx[chosen_flat]] = 1.0
    eval_mask = eval_mask.reshape(observed.shape)
    return EvalSplit(eval_mask, observed.astype(np.float64) * (1.0 - eval_mask))


def apply_mcar(data, rate: float, seed=None) -> EvalSplit:
    observed = _observed(data)
    n_obs = int(observed.sum())
    k = _check_rate(rate, n_obs)
    chosen = _rng(seed).choice(n_obs, size=k, replace=False)
    return _split_from(observed, chosen)


def apply_mar(data: SpatioTemporalDataset, rate: float, conditioning_feature, seed=None) -> EvalSplit:
    """Hold out cells with probability proportional to the time-rank of one feature's node average."""
    observed = _observed(data)
    k = _check_rate(rate, int(observed.sum()))
    if isinstance(conditioning_feature, str):
        if conditioning_feature not in data.feature_ids:
            raise ParameterError(f"unknown conditioning feature {conditioning_feature!r}")
        cf = data.feature_ids.index(conditioning_feature)
    else:
        cf = int(conditioning_feature)
    cond_obs = observed[:, :, cf]
    counts = cond_obs.sum(axis=0)
    if counts.sum() == 0:
        raise ParameterError("conditioning feature is entirely missing")
    sums = (data.signal[:, :, cf] * cond_obs).sum(axis=0)
    have = counts > 0
    avg = sums[have] / counts[have]
    ranks = np.full(counts.shape, np.nan)
    ranks[have] = rankdata(avg, method="average")
    ranks[~have] = np.mean(ranks[have])
    cell_w = np.broadcast_to(ranks[None, :, None], observed.shape)
    chosen = weighted_sample(cell_w[observed], k, _rng(seed))
    return _split_from(observed, chosen)


def apply_mnar(
    data: SpatioTemporalDataset,
    rate: float,
    quantile: float = 0.9,
    seed=None,
    *,
    w_high: float = 1.0,
    w_low: float | None = None,
) -> EvalSplit:
    """Self-masking: values above their feature's quantile are ``w_high / w_low`` times likelier to go."""
    if not 0.5 < quantile < 1.0:
        raise ParameterError(f"quantile must lie in (0.5, 1), got {quantile}")
    if w_low is None:
        w_low = w_high / 4.0
    observed = _observed(data)
    k = _check_rate(rate, int(observed.sum()))
    weights = np.zeros(observed.shape)
    for f in range(observed.shape[2]):
        obs_f = observed[:, :, f]
        if not obs_f.any():
            continue
        vals = data.signal[:, :, f]
        cut = np.quantile(vals[obs_f], quantile)
        weights[:, :, f] = np.where(vals > cut, w_high, w_low)
    w = weights[observed]
    if np.count_nonzero(w > 0) < k:
        raise ParameterError(
            f"rate {rate} needs {k} cells but only {np.count_nonzero(w > 0)} carry positive weight"
        )
    chosen = weighted_sample(w, k, _rng(seed))
    return _split_from(observed, chosen)


def apply_mechanism(data: SpatioTemporalDataset, mechanism: str, rate: float, seed=None, **kw) -> EvalSplit:
    if mechanism == "mcar":
        return apply_mcar(data, rate, seed)
    if mechanism == "mar":
        return apply_mar(data, rate, kw.get("conditioning_feature", 0), seed)
    if mechanism == "mnar":
        return apply_mnar(data, rate, kw.get("quantile", 0.9), seed)
    raise ParameterError(f"unknown missing mechanism {mechanism!r}")


def sample_training_mask(
    observed_mask: np.ndarray,
    ratio: float = 0.2,
    pattern: str = "random",
    block_len: int = 4,
    seed=None,
) -> TrainingSplit:
    """Partition a window's observed cells into model input and training label.

    ``observed_mask`` has shape ``(N, T, F)``.  Random draws an exact count; block masks
    runs of ``block_len`` timestamps within one (node, feature) series until the target is
    reached (may overshoot by less than one block); historical reuses the previous
    timestamp's label layout with probability 1/2.
    """
    observed = np.asarray(observed_mask) > 0
    if not 0.0 < ratio < 1.0:
        raise ParameterError(f"mask ratio must lie in (0, 1), got {ratio}")
    n_obs = int(observed.sum())
    k = exact_count(ratio, n_obs)
    if k < 1:
        raise EmptyLabelError(f"ratio {ratio} leaves no training label among {n_obs} observed entries")
    rng = _rng(seed)

    if pattern == "random":
        label = np.zeros(observed.size, dtype=bool)
        label[np.flatnonzero(observed)[rng.choice(n_obs, size=k, replace=False)]] = True
        label = label.reshape(observed.shape)
    elif pattern == "block":
        label = _block_label(observed, k, block_len, rng)
    elif pattern == "historical":
        label = _historical_label(observed, ratio, rng)
    else:
        raise ParameterError(f"unknown mask pattern {pattern!r}")

    label &= observed
    input_mask = observed & ~label
    return TrainingSplit(input_mask.astype(np.float64), label.astype(np.float64))


def _block_label(observed: np.ndarray, k: int, block_len: int, rng: np.random.Generator) -> np.ndarray:
    n, t, f = observed.shape
    if block_len < 1:
        raise ParameterError("block_len must be positive")
    run = min(block_len, t)
    label = np.zeros_like(observed)
    series = [(i, j) for i in range(n) for j in range(f) if observed[i, :, j].any()]
    count = 0
    while count < k:
        free = [(i, j) for i, j in series if (observed[i, :, j] & ~label[i, :, j]).any()]
        if not free:
            break
        i, j = free[rng.integers(len(free))]
        start = int(rng.integers(t - run + 1))
        seg = observed[i, start : start + run, j] & ~label[i, start : start + run, j]
        label[i, start : start + run, j] |= seg
        count += int(seg.sum())
    return label


def _historical_label(observed: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    n, t, f = observed.shape
    label = np.zeros_like(observed)
    for step in range(t):
        if step > 0 and rng.random() < 0.5:
            label[:, step, :] = label[:, step - 1, :] & observed[:, step, :]
            continue
        obs_t = np.flatnonzero(observed[:, step, :])
        k_t = exact_count(ratio, obs_t.size)
        if k_t:
            flat = np.zeros(n * f, dtype=bool)
            flat[rng.choice(obs_t, size=k_t, replace=False)] = True
            label[:, step, :] = flat.reshape(n, f)
    return label
