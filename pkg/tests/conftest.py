import numpy as np
import pytest
import torch

from gsli.datamodel import SpatioTemporalDataset
from gsli.model import GsliModel, ModelConfig

TINY = dict(channels=2, embed_dim=2, k_steps=1, layers=1, dtype="float64")


def make_dataset(n=4, t=30, f=2, seed=0, missing=0.0, adjacency=None):
    rng = np.random.default_rng(seed)
    signal = rng.normal(size=(n, t, f)).cumsum(axis=1)
    mask = (rng.random((n, t, f)) >= missing).astype(float)
    if adjacency is None:
        adjacency = rng.uniform(size=(n, n)) * (1 - np.eye(n))
    return SpatioTemporalDataset(
        signal=signal,
        mask=mask,
        adjacency=adjacency,
        node_ids=[f"n{i}" for i in range(n)],
        feature_ids=[f"f{k}" for k in range(f)],
    )


def tiny_model(n=3, f=2, seed=0, scramble=True, **overrides):
    """A float64 model whose every parameter is moved to a generic random value."""
    rng = np.random.default_rng(seed)
    adjacency = rng.uniform(size=(n, n)) * (1 - np.eye(n))
    cfg = ModelConfig(**{**TINY, **overrides})
    model = GsliModel(n, f, adjacency, cfg)
    if scramble:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in model.parameters():
                p.add_(0.3 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return model


def numpy_params(model):
    return {k: v.detach().double().numpy().copy() for k, v in model.state_dict().items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel_err(a, b):
    """Max-norm relative error between two arrays (scale floor 1e-8)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-8)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion, echoed in the summary
# ---------------------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def report_criterion(number: int, ok: bool, detail: str) -> bool:
    line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


# ---------------------------------------------------------------------------
# shared heavy fixture: the frozen synthetic ablation protocol
# ---------------------------------------------------------------------------

ABLATION_SEEDS = (3407, 3408, 3409)
ABLATION_VARIANTS = ("full", "no-feature-split-scale", "no-GSL")


def ablation_protocol():
    from gsli.model import TrainConfig
    from gsli.oracle import SyntheticSpec, synth_heterogeneous

    spec = SyntheticSpec(n=16, f=3, t=1000, seed=0, self_weight=0.5, parent_weight=0.4, geographic_first=False)
    dataset, _ = synth_heterogeneous(spec)
    model = ModelConfig(channels=8, embed_dim=8, k_steps=2, layers=2)
    training = TrainConfig(epochs=150, batch_size=8, learning_rate=3e-3)
    return dataset, model, training


@pytest.fixture(scope="session")
def synthetic_ablation():
    """``{seed: {variant: RunResult}}`` at 10% MCAR under one identical budget."""
    from gsli.evaluation import run_single, variant_config

    dataset, model, training = ablation_protocol()
    out = {}
    for seed in ABLATION_SEEDS:
        out[seed] = {
            v: run_single(dataset, "mcar", 0.1, seed, variant_config(v, model), training, variant=v)
            for v in ABLATION_VARIANTS
        }
    return out
