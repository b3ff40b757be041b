"""Graph diffusion convolutions at node scale, feature scale, and the shared-graph baseline.

Representations are laid out ``(..., N, T, F, C)``; any leading dims are batch.
Transition powers are applied to the signal step by step, never materialized.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import NumericError


def transition_matrices(adjacency: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward ``D_O^-1 A`` and backward ``D_I^-1 A^T``; zero-degree rows stay zero."""
    out_deg = adjacency.sum(dim=1, keepdim=True)
    in_deg = adjacency.sum(dim=0).unsqueeze(1)
    fwd = torch.where(out_deg > 0, adjacency / torch.where(out_deg > 0, out_deg, 1.0), 0.0)
    at = adjacency.transpose(0, 1)
    bwd = torch.where(in_deg > 0, at / torch.where(in_deg > 0, in_deg, 1.0), 0.0)
    return fwd, bwd


def _check(t: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in {what}")
    return t


def node_scale_forward(R, meta_adj, fwd, bwd, theta_learned, theta_fwd, theta_bwd) -> torch.Tensor:
    """Per-feature diffusion: for every feature f

        sum_k  Adot_f R_f Th1[k,f] + P_fwd^k R_f Th2[k,f] + P_bwd^k R_f Th3[k,f]

    ``meta_adj`` is ``(F, N, N)`` (or ``None`` to drop the learned term); ``fwd``/``bwd``
    may be ``None`` to drop the given-graph terms.  Kernels are ``(K+1, F, C, C)``.
    """
    # feature-major layout (..., F, N, T, C): graph products and kernels become broadcast matmuls
    lead = R.shape[:-4]
    n, t, f, c = R.shape[-4:]
    Rf = R.movedim(-2, -4)  # (..., F, N, T, C)
    flat = Rf.reshape(*lead, f, n, t * c)

    def kernel(x, th):  # x (..., F, N, T*C), th (F, C, C)
        return (x.reshape(*lead, f, n * t, c) @ th).reshape(*lead, f, n, t * c)

    out = torch.zeros_like(flat)
    if meta_adj is not None:
        # the learned graph carries no power, so its K+1 kernels act on the same product
        out = out + kernel(meta_adj @ flat, theta_learned.sum(0))
    if fwd is not None:
        pf, pb = flat, flat
        for k in range(theta_fwd.shape[0]):
            if k:
                pf = fwd @ pf
                pb = bwd @ pb
            out = out + kernel(pf, theta_fwd[k]) + kernel(pb, theta_bwd[k])
    out = out.reshape(*lead, f, n, t, c).movedim(-4, -2)
    return _check(out, "node-scale convolution")


def feature_scale_forward(R, meta_adj, theta) -> torch.Tensor:
    """Diffuse across features within each (node, timestamp): ``sum_k Adot R' Th[k]``.

    ``meta_adj`` is ``(F, F)``, ``theta`` is ``(K+1, C, C)``.  Working directly on the
    ``(..., N, T, F, C)`` layout is the permute / convolve / permute-back sequence.
    """
    mixed = torch.einsum("fg,...ntgc->...ntfc", meta_adj, R)
    return _check(mixed @ theta.sum(0), "feature-scale convolution")


def canonical_diffusion_conv(R, meta_adj, fwd, bwd, theta_learned, theta_fwd, theta_bwd) -> torch.Tensor:
    """Un-split diffusion over ``(..., N, T, F*C)``: one shared graph, ``(F*C) x (F*C)`` kernels."""
    out = torch.zeros_like(R)
    if meta_adj is not None:
        mixed = torch.einsum("ij,...jtc->...itc", meta_adj, R)
        out = out + mixed @ theta_learned.sum(0)
    if fwd is not None:
        pf, pb = R, R
        for k in range(theta_fwd.shape[0]):
            if k:
                pf = torch.einsum("ij,...jtc->...itc", fwd, pf)
                pb = torch.einsum("ij,...jtc->...itc", bwd, pb)
            out = out + pf @ theta_fwd[k] + pb @ theta_bwd[k]
    return _check(out, "canonical convolution")


def _kernels(*shape, generator, fan_in, terms):
    std = 1.0 / math.sqrt(fan_in * terms)
    return nn.Parameter(torch.randn(*shape, generator=generator) * std)


class NodeScaleConv(nn.Module):
    def __init__(self, num_features: int, channels: int, k_steps: int = 2, *, generator=None):
        super().__init__()
        shape = (k_steps + 1, num_features, channels, channels)
        terms = 3 * (k_steps + 1)
        self.theta_learned = _kernels(*shape, generator=generator, fan_in=channels, terms=terms)
        self.theta_fwd = _kernels(*shape, generator=generator, fan_in=channels, terms=terms)
        self.theta_bwd = _kernels(*shape, generator=generator, fan_in=channels, terms=terms)

    def forward(self, R, meta_adj, fwd, bwd):
        return node_scale_forward(R, meta_adj, fwd, bwd, self.theta_learned, self.theta_fwd, self.theta_bwd)


class FeatureScaleConv(nn.Module):
    def __init__(self, channels: int, k_steps: int = 2, *, generator=None):
        super().__init__()
        self.theta = _kernels(k_steps + 1, channels, channels, generator=generator, fan_in=channels, terms=k_steps + 1)

    def forward(self, R, meta_adj):
        return feature_scale_forward(R, meta_adj, self.theta)


class CanonicalConv(nn.Module):
    """Shared-graph diffusion treating all features of a node as one embedding."""

    def __init__(self, num_features: int, channels: int, k_steps: int = 2, *, generator=None):
        super().__init__()
        fc = num_features * channels
        shape = (k_steps + 1, fc, fc)
        terms = 3 * (k_steps + 1)
        self.theta_learned = _kernels(*shape, generator=generator, fan_in=fc, terms=terms)
        self.theta_fwd = _kernels(*shape, generator=generator, fan_in=fc, terms=terms)
        self.theta_bwd = _kernels(*shape, generator=generator, fan_in=fc, terms=terms)

    def forward(self, R, meta_adj, fwd, bwd):
        *lead, n, t, f, c = R.shape
        flat = R.reshape(*lead, n, t, f * c)
        out = canonical_diffusion_conv(flat, meta_adj, fwd, bwd, self.theta_learned, self.theta_fwd, self.theta_bwd)
        return out.reshape(*lead, n, t, f, c)
