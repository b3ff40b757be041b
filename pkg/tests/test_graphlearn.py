import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rel_err
from gsli.errors import NumericError, ShapeError
from gsli.graphlearn import MetaGraph, compute_prominence, learn_meta_adjacency, refine_source
from gsli.oracle import finite_diff_grad, naive_meta_adjacency, naive_prominence

T = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64))  # noqa: E731


# ---------------------------------------------------------------------------
# prominence
# ---------------------------------------------------------------------------

def test_prominence_constant_one():
    d = 3
    src = T(np.random.default_rng(0).normal(size=(4, d)))
    p = compute_prominence(src, torch.zeros(d, d, dtype=torch.float64), torch.zeros(d, dtype=torch.float64),
                           torch.zeros(d, d, dtype=torch.float64), torch.ones(d, dtype=torch.float64))
    assert torch.equal(p, torch.ones(4, d, dtype=torch.float64))


def test_prominence_zero_weights_passes_bias():
    d = 2
    b = T([0.3, -1.5])
    p = compute_prominence(T(np.ones((3, d))), torch.zeros(d, d, dtype=torch.float64), torch.zeros(d, dtype=torch.float64),
                           torch.zeros(d, d, dtype=torch.float64), b)
    assert torch.equal(p, b.expand(3, d))


def test_prominence_matches_oracle(rng):
    src, w1, b1, w2, b2 = (rng.normal(size=s) for s in [(3, 2), (2, 2), (2,), (2, 2), (2,)])
    got = compute_prominence(T(src), T(w1), T(b1), T(w2), T(b2)).numpy()
    assert np.max(np.abs(got - naive_prominence(src, w1, b1, w2, b2))) < 1e-10


def test_prominence_batched_matches_per_graph(rng):
    g, m, d = 3, 4, 2
    parts = [rng.normal(size=s) for s in [(g, m, d), (g, d, d), (g, d), (g, d, d), (g, d)]]
    got = compute_prominence(*map(T, parts)).numpy()
    for i in range(g):
        assert np.max(np.abs(got[i] - naive_prominence(*(p[i] for p in parts)))) < 1e-10


def test_prominence_rejects_nonfinite():
    d = 2
    z = torch.zeros(d, d, dtype=torch.float64)
    with pytest.raises(NumericError):
        compute_prominence(T([[np.nan, 0.0]]), z, torch.zeros(d, dtype=torch.float64), z, torch.zeros(d, dtype=torch.float64))


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def test_refine_examples(rng):
    src = T(rng.normal(size=(3, 4)))
    assert torch.equal(refine_source(src, torch.ones_like(src)), src)
    assert not refine_source(src, torch.zeros_like(src)).any()
    p = T(rng.normal(size=(3, 4)))
    assert torch.allclose(refine_source(src, 2 * p), 2 * refine_source(src, p), rtol=0, atol=1e-15)
    with pytest.raises(ShapeError):
        refine_source(src, torch.ones(3, 3, dtype=torch.float64))


# ---------------------------------------------------------------------------
# adjacency
# ---------------------------------------------------------------------------

def test_zero_embeddings_give_uniform():
    a = learn_meta_adjacency(torch.zeros(5, 3, dtype=torch.float64), torch.zeros(5, 3, dtype=torch.float64))
    assert torch.allclose(a, torch.full((5, 5), 0.2, dtype=torch.float64), rtol=0, atol=1e-15)


def test_identity_closed_form():
    eye = torch.eye(2, dtype=torch.float64)
    a = learn_meta_adjacency(eye, eye).numpy()
    e = math.e
    assert np.allclose(a, [[e / (e + 1), 1 / (e + 1)], [1 / (e + 1), e / (e + 1)]], rtol=0, atol=1e-15)
    assert a[0, 0] == pytest.approx(0.7311, abs=1e-4) and a[0, 1] == pytest.approx(0.2689, abs=1e-4)


def test_adjacency_matches_oracle(rng):
    for _ in range(5):
        src, tgt = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        got = learn_meta_adjacency(T(src), T(tgt)).numpy()
        assert np.max(np.abs(got - naive_meta_adjacency(src, tgt))) < 1e-10


def test_all_negative_row_is_uniform():
    src = T([[1.0, 0.0], [0.0, 1.0]])
    tgt = T([[-1.0, -1.0], [-2.0, -3.0]])
    a = learn_meta_adjacency(src, tgt)
    assert torch.allclose(a, torch.full((2, 2), 0.5, dtype=torch.float64))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 6), st.integers(0, 2**31 - 1), st.floats(0.01, 30.0))
def test_row_stochastic(m, d, seed, scale):
    r = np.random.default_rng(seed)
    a = learn_meta_adjacency(T(scale * r.normal(size=(m, d))), T(scale * r.normal(size=(m, d)))).numpy()
    assert np.all(a >= 0)
    assert np.all(np.abs(a.sum(axis=1) - 1) <= 1e-6)


def test_relu_gating(rng):
    for _ in range(20):
        src, tgt = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        logits = src @ tgt.T
        a = learn_meta_adjacency(T(src), T(tgt)).numpy()
        clipped = np.where(logits < 0, 0.0, logits)
        ref = np.exp(clipped) / np.exp(clipped).sum(axis=1, keepdims=True)
        assert np.max(np.abs(a - ref)) < 1e-12


# ---------------------------------------------------------------------------
# MetaGraph module
# ---------------------------------------------------------------------------

def test_metagraph_shapes_and_init():
    g = torch.Generator().manual_seed(0)
    mg = MetaGraph(3, 5, 4, generator=g)
    assert mg().shape == (3, 5, 5)
    assert torch.equal(mg.b2, torch.ones(3, 4))
    plain = MetaGraph(2, 4, 4, prominence=False, generator=g)
    assert torch.equal(plain.refined_source(), plain.source)
    assert not hasattr(plain, "w1")


def test_per_feature_independence():
    mg = MetaGraph(3, 4, 4, generator=torch.Generator().manual_seed(1)).double()
    before = mg().detach().clone()
    with torch.no_grad():
        for p in (mg.source, mg.target, mg.w1, mg.b1, mg.w2, mg.b2):
            p[1] += 0.5
    after = mg().detach()
    assert torch.equal(before[0], after[0]) and torch.equal(before[2], after[2])
    assert not torch.equal(before[1], after[1])


@pytest.mark.parametrize("prominence", [True, False])
def test_gradients_match_finite_differences(prominence):
    m, d = 4, 3
    mg = MetaGraph(1, m, d, prominence=prominence, generator=torch.Generator().manual_seed(2)).double()
    with torch.no_grad():
        for p in mg.parameters():
            p.add_(0.5 * torch.randn(p.shape, generator=torch.Generator().manual_seed(3), dtype=p.dtype))
    names = [n for n, _ in mg.named_parameters()]
    weights = T(np.random.default_rng(4).normal(size=(m, m)))

    def loss_np(values):
        with torch.no_grad():
            for n, p in mg.named_parameters():
                p.copy_(T(values[n]))
            return float((mg()[0] * weights).sum())

    base = {n: p.detach().numpy().copy() for n, p in mg.named_parameters()}
    numeric = finite_diff_grad(loss_np, base, eps=1e-6)
    loss_np(base)
    mg.zero_grad()
    (mg()[0] * weights).sum().backward()
    for n in names:
        assert rel_err(dict(mg.named_parameters())[n].grad.numpy(), numeric[n]) < 1e-4, n
