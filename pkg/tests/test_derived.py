"""Paired-run examples on synthetic heterogeneous data.

These are long training comparisons; misses are reported with their numbers
rather than loosened.
"""

import numpy as np
import pytest

from conftest import ABLATION_SEEDS
from gsli.evaluation import run_single
from gsli.model import ModelConfig, TrainConfig
from gsli.oracle import SyntheticSpec, synth_heterogeneous

pytestmark = pytest.mark.slow


def test_full_beats_canonical_by_20_percent(synthetic_ablation):
    full = np.mean([synthetic_ablation[s]["full"].rmse for s in ABLATION_SEEDS])
    canon = np.mean([synthetic_ablation[s]["no-feature-split-scale"].rmse for s in ABLATION_SEEDS])
    gain = (canon - full) / canon
    print(f"full {full:.4f} vs canonical {canon:.4f}: {100 * gain:.1f}% lower")
    assert gain >= 0.20


def test_final_loss_half_of_canonical(synthetic_ablation):
    runs = synthetic_ablation[ABLATION_SEEDS[0]]
    full, canon = runs["full"].final_loss, runs["no-feature-split-scale"].final_loss
    print(f"final loss full {full:.4f} vs canonical {canon:.4f} (ratio {full / canon:.3f})")
    assert full <= 0.5 * canon


def test_rate_sweep_non_decreasing():
    ds, _ = synth_heterogeneous(SyntheticSpec())
    model = ModelConfig(channels=8, embed_dim=8, k_steps=2, layers=2)
    training = TrainConfig(epochs=100, batch_size=8, learning_rate=3e-3)
    rates = (0.1, 0.2, 0.3, 0.4)
    scores = [np.mean([run_single(ds, "mcar", r, s, model, training).rmse for s in ABLATION_SEEDS]) for r in rates]
    print("RMSE by rate:", dict(zip(rates, np.round(scores, 4))))
    # four rates give three adjacent pairs; all three must hold
    assert all(b >= a for a, b in zip(scores, scores[1:]))
