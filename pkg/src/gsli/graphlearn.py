"""Meta-graph learning from source/target embeddings with prominence re-weighting.

A :class:`MetaGraph` holds ``G`` independent graphs over ``M`` vertices.  Node scale
uses one graph per feature over the N stations; feature scale a single graph over
the F features.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import NumericError, ShapeError


def compute_prominence(source: torch.Tensor, w1, b1, w2, b2) -> torch.Tensor:
    """One-hidden-layer perceptron applied row-wise: ``tanh(x W1 + b1) W2 + b2``.

    Works on ``(M, d)`` or batched ``(G, M, d)`` inputs with matching batched weights.
    """
    if not torch.isfinite(source).all():
        raise NumericError("non-finite source embedding")
    hidden = torch.tanh(source @ w1 + b1.unsqueeze(-2))
    return hidden @ w2 + b2.unsqueeze(-2)


def refine_source(source: torch.Tensor, prominence: torch.Tensor) -> torch.Tensor:
    if source.shape != prominence.shape:
        raise ShapeError(f"prominence {tuple(prominence.shape)} does not match embedding {tuple(source.shape)}")
    return source * prominence


def learn_meta_adjacency(refined_source: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Row-softmax of the ReLU-clipped inner products; every row sums to one."""
    logits = torch.relu(refined_source @ target.transpose(-1, -2))
    return torch.softmax(logits, dim=-1)


class MetaGraph(nn.Module):
    """``num_graphs`` learnable adjacencies of size ``size x size``.

    Embedding entries start as N(0, 1/d).  The prominence output bias starts at 1 so an
    untrained network leaves the source embedding roughly unchanged.
    """

    def __init__(self, num_graphs: int, size: int, dim: int = 16, *, prominence: bool = True, generator=None):
        super().__init__()
        std = 1.0 / math.sqrt(dim)
        g = generator

        def normal(*shape, scale=std):
            return nn.Parameter(torch.randn(*shape, generator=g) * scale)

        self.source = normal(num_graphs, size, dim)
        self.target = normal(num_graphs, size, dim)
        self.use_prominence = prominence
        if prominence:
            self.w1 = normal(num_graphs, dim, dim)
            self.b1 = nn.Parameter(torch.zeros(num_graphs, dim))
            self.w2 = normal(num_graphs, dim, dim, scale=0.1 * std)
            self.b2 = nn.Parameter(torch.ones(num_graphs, dim))

    def prominence(self) -> torch.Tensor:
        return compute_prominence(self.source, self.w1, self.b1, self.w2, self.b2)

    def refined_source(self) -> torch.Tensor:
        if not self.use_prominence:
            return self.source
        return refine_source(self.source, self.prominence())

    def forward(self) -> torch.Tensor:
        """Adjacencies of shape ``(num_graphs, size, size)``."""
        return learn_meta_adjacency(self.refined_source(), self.target)
