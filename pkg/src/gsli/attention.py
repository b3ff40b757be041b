"""Single-head scaled dot-product attention over space (cross-feature) and time (cross-temporal)."""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import NumericError, ShapeError


def scaled_dot_attention(tokens, w_q, w_k, w_v, *, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(C)) V`` over the second-to-last axis of ``tokens (..., L, C)``."""
    q, k, v = tokens @ w_q, tokens @ w_k, tokens @ w_v
    logits = q @ k.transpose(-1, -2) / math.sqrt(tokens.shape[-1])
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite attention logits")
    weights = torch.softmax(logits, dim=-1)  # max-subtracted internally
    out = weights @ v
    return (out, weights) if return_weights else out


def project_input(x, mask, w_x, w_m, b):
    """Lift every scalar to C channels with a per-feature affine map of (value, observed-flag)."""
    if not torch.isfinite(x).all():
        raise NumericError("non-finite input signal")
    return x.unsqueeze(-1) * w_x + mask.unsqueeze(-1) * w_m + b


def temporal_attention(H, w_q, w_k, w_v):
    """Attend along T independently for each (node, feature) series of ``H (..., N, T, F, C)``."""
    series = H.transpose(-3, -2)  # (..., N, F, T, C)
    return scaled_dot_attention(series, w_q, w_k, w_v).transpose(-3, -2)


def cross_temporal(x, mask, w_x, w_m, b, w_q, w_k, w_v):
    """Project the input signal then attend within each series."""
    return temporal_attention(project_input(x, mask, w_x, w_m, b), w_q, w_k, w_v)


def feature_token_attention(E, w_q, w_k, w_v):
    """Attend over the N*F (node, feature) tokens separately at every timestamp.

    Returns the representation in ``(..., N, T, F, C)`` layout and the attention maps
    ``(..., T, N*F, N*F)`` with token index ``node * F + feature``.
    """
    *lead, n, t, f, c = E.shape
    tokens = E.transpose(-4, -3).reshape(*lead, t, n * f, c)
    out, weights = scaled_dot_attention(tokens, w_q, w_k, w_v, return_weights=True)
    return out.reshape(*lead, t, n, f, c).transpose(-4, -3), weights


def cross_feature(R, R_nl, R_fl, fusion_w, fusion_b, w_q, w_k, w_v, *, return_weights=False):
    if not (R.shape == R_nl.shape == R_fl.shape):
        raise ShapeError(f"cross-feature inputs disagree: {R.shape}, {R_nl.shape}, {R_fl.shape}")
    E = torch.cat([R, R_nl, R_fl], dim=-1) @ fusion_w + fusion_b
    Z, weights = feature_token_attention(E, w_q, w_k, w_v)
    return (Z, weights) if return_weights else Z


def _square(c, generator):
    return nn.Parameter(torch.randn(c, c, generator=generator) / math.sqrt(c))


class InputProjection(nn.Module):
    def __init__(self, num_features: int, channels: int, *, generator=None):
        super().__init__()
        self.w_x = nn.Parameter(torch.randn(num_features, channels, generator=generator))
        self.w_m = nn.Parameter(torch.randn(num_features, channels, generator=generator) * 0.1)
        self.b = nn.Parameter(torch.zeros(num_features, channels))

    def forward(self, x, mask):
        return project_input(x, mask, self.w_x, self.w_m, self.b)


class TemporalAttention(nn.Module):
    def __init__(self, channels: int, *, generator=None):
        super().__init__()
        self.w_q = _square(channels, generator)
        self.w_k = _square(channels, generator)
        self.w_v = _square(channels, generator)

    def forward(self, H):
        return temporal_attention(H, self.w_q, self.w_k, self.w_v)


class CrossFeatureAttention(nn.Module):
    """Fusion of (R, R_NL, R_FL) followed by per-timestamp token attention.

    Set ``capture = True`` to keep the most recent attention maps in ``captured``.
    """

    def __init__(self, channels: int, *, generator=None):
        super().__init__()
        self.fusion_w = nn.Parameter(torch.randn(3 * channels, channels, generator=generator) / math.sqrt(3 * channels))
        self.fusion_b = nn.Parameter(torch.zeros(channels))
        self.w_q = _square(channels, generator)
        self.w_k = _square(channels, generator)
        self.w_v = _square(channels, generator)
        self.capture = False
        self.captured: torch.Tensor | None = None

    def fuse(self, R, R_nl, R_fl):
        if not (R.shape == R_nl.shape == R_fl.shape):
            raise ShapeError(f"cross-feature inputs disagree: {R.shape}, {R_nl.shape}, {R_fl.shape}")
        return torch.cat([R, R_nl, R_fl], dim=-1) @ self.fusion_w + self.fusion_b

    def attend(self, E):
        Z, weights = feature_token_attention(E, self.w_q, self.w_k, self.w_v)
        if self.capture:
            self.captured = weights.detach()
        return Z
