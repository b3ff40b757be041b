import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from gsli.datamodel import (
    NormStats,
    SpatioTemporalDataset,
    apply_norm,
    build_gaussian_adjacency,
    covering_origins,
    degree_pair,
    denormalize,
    load_dataset,
    normalize,
    read_adjacency_csv,
    window_split,
    write_adjacency_csv,
    write_signal_csv,
)
from gsli.errors import ConsistencyError, DegenerateError, ParameterError, ParseError, ShapeError, StructureError


def _write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def small_files(tmp_path):
    sig = _write(
        tmp_path / "signal.csv",
        "node_id,timestamp,feature_id,value\n"
        "b,0,x,1.0\nb,1,x,2.0\nb,2,x,\n"
        "a,0,x,4.0\na,1,x,5.0\na,2,x,6.0\n",
    )
    adj = _write(tmp_path / "adj.csv", "a,b\n0,0.5\n0.25,0\n")
    return sig, adj


# ---------------------------------------------------------------------------
# dataset container
# ---------------------------------------------------------------------------

def test_dataset_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        SpatioTemporalDataset(np.zeros((2, 3, 1)), np.ones((2, 3, 2)), np.zeros((2, 2)), ["a", "b"], ["x"])
    with pytest.raises(ShapeError):
        SpatioTemporalDataset(np.zeros((2, 3, 1)), np.ones((2, 3, 1)), np.zeros((3, 3)), ["a", "b"], ["x"])


def test_dataset_rejects_nonbinary_mask_and_negative_adjacency():
    with pytest.raises(ParameterError):
        SpatioTemporalDataset(np.zeros((2, 3, 1)), np.full((2, 3, 1), 0.5), np.zeros((2, 2)), ["a", "b"], ["x"])
    with pytest.raises(ParameterError):
        SpatioTemporalDataset(np.zeros((2, 3, 1)), np.ones((2, 3, 1)), -np.ones((2, 2)), ["a", "b"], ["x"])


def test_missing_cells_hold_zero_sentinel():
    ds = SpatioTemporalDataset(np.full((2, 2, 1), 7.0), np.array([[[1], [0]], [[0], [1]]]), np.zeros((2, 2)), ["a", "b"], ["x"])
    assert ds.signal[0, 1, 0] == 0.0 and ds.signal[1, 0, 0] == 0.0
    assert ds.signal[0, 0, 0] == 7.0


def test_degree_pair():
    a = np.array([[0, 2.0, 1.0], [0, 0, 3.0], [4.0, 0, 0]])
    dp = degree_pair(a)
    assert np.array_equal(np.diag(dp.out_degree), [3.0, 3.0, 4.0])
    assert np.array_equal(np.diag(dp.in_degree), [4.0, 2.0, 4.0])
    assert np.count_nonzero(dp.out_degree - np.diag(np.diag(dp.out_degree))) == 0


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def test_load_one_empty_cell(small_files):
    sig, adj = small_files
    ds = load_dataset(sig, adj)
    assert ds.shape == (2, 3, 1)
    assert int((1 - ds.mask).sum()) == 1
    # sorted node order: a before b
    assert ds.node_ids == ["a", "b"]
    assert ds.mask[1, 2, 0] == 0
    assert ds.signal[0, :, 0].tolist() == [4.0, 5.0, 6.0]
    # adjacency rows follow the sorted node order
    assert ds.adjacency[0, 1] == 0.5 and ds.adjacency[1, 0] == 0.25


def test_load_reorders_adjacency_to_node_order(tmp_path, small_files):
    sig, _ = small_files
    adj = _write(tmp_path / "adj2.csv", "b,a\n0,0.25\n0.5,0\n")
    ds = load_dataset(sig, adj)
    assert ds.adjacency[0, 1] == 0.5 and ds.adjacency[1, 0] == 0.25


def test_load_malformed_row_names_row(tmp_path):
    sig = _write(tmp_path / "s.csv", "node_id,timestamp,feature_id,value\na,0,x,1\na,1,x,oops\n")
    with pytest.raises(ParseError, match="row 3"):
        load_dataset(sig)


def test_load_irregular_grid(tmp_path):
    sig = _write(tmp_path / "s.csv", "node_id,timestamp,feature_id,value\na,0,x,1\na,1,x,1\na,3,x,1\n")
    with pytest.raises(StructureError):
        load_dataset(sig)


def test_load_node_absent_from_adjacency(tmp_path, small_files):
    sig, _ = small_files
    adj = _write(tmp_path / "adj.csv", "a,c\n0,1\n1,0\n")
    with pytest.raises(ConsistencyError):
        load_dataset(sig, adj)


def test_load_iso_timestamps_and_duplicates(tmp_path):
    sig = _write(
        tmp_path / "s.csv",
        "node_id,timestamp,feature_id,value\n"
        "a,2024-01-01T01:00,x,2\na,2024-01-01T00:00,x,1\na,2024-01-01T02:00,x,3\n",
    )
    ds = load_dataset(sig)
    assert ds.signal[0, :, 0].tolist() == [1.0, 2.0, 3.0]
    dup = _write(tmp_path / "d.csv", "node_id,timestamp,feature_id,value\na,0,x,1\na,0,x,2\n")
    with pytest.raises(ParseError, match="duplicate"):
        load_dataset(dup)


def test_mask_conservation_round_trip(tmp_path):
    ds = make_dataset(n=3, t=7, f=2, seed=4, missing=0.3)
    write_signal_csv(tmp_path / "s.csv", ds)
    write_adjacency_csv(tmp_path / "a.csv", ds.node_ids, ds.adjacency)
    back = load_dataset(tmp_path / "s.csv", tmp_path / "a.csv")
    assert np.array_equal(back.mask, ds.mask)
    empties = sum(1 for line in (tmp_path / "s.csv").read_text().splitlines()[1:] if line.endswith(","))
    assert int((1 - back.mask).sum()) == empties
    assert np.array_equal(back.signal, ds.signal)
    names, mat = read_adjacency_csv(tmp_path / "a.csv")
    assert names == ds.node_ids and np.array_equal(mat, ds.adjacency)


def test_load_with_coords_builds_gaussian(tmp_path, small_files):
    sig, _ = small_files
    coords = _write(tmp_path / "c.csv", "node_id,x,y\nb,1,0\na,0,0\n")
    # a single distinct pair has zero distance spread, so sigma is undefined
    with pytest.raises(DegenerateError):
        load_dataset(sig, coords_path=coords, metric="euclidean", threshold=0.0)


# ---------------------------------------------------------------------------
# Gaussian adjacency
# ---------------------------------------------------------------------------

def test_gaussian_two_stations_at_sigma():
    w = build_gaussian_adjacency(np.array([[0.0, 0.0], [2.0, 0.0]]), 0.1, metric="euclidean", sigma=2.0)
    assert w[0, 1] == pytest.approx(math.exp(-1)) and w[1, 0] == pytest.approx(0.36787944117)
    assert w[0, 0] == 0.0


def test_gaussian_threshold_cut():
    w = build_gaussian_adjacency(np.array([[0.0, 0.0], [2.0, 0.0]]), 0.5, metric="euclidean", sigma=2.0)
    assert not w.any()


def test_gaussian_three_on_a_line():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    w = build_gaussian_adjacency(pts, 0.0, metric="euclidean")
    sigma = statistics.pstdev([1.0, 2.0, 3.0])
    for i, j, d in [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)]:
        assert w[i, j] == pytest.approx(math.exp(-(d**2) / sigma**2), abs=1e-15)
        assert w[j, i] == w[i, j]


def test_gaussian_degenerate_geometry():
    with pytest.raises(DegenerateError):
        build_gaussian_adjacency(np.zeros((3, 2)), 0.1, metric="euclidean")


def test_gaussian_haversine_scale():
    # one degree of latitude is about 111.2 km
    w = build_gaussian_adjacency(np.array([[52.0, 4.0], [53.0, 4.0]]), 0.0, metric="haversine", sigma=111.19)
    assert w[0, 1] == pytest.approx(math.exp(-1), rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000), st.floats(0, 0.9))
def test_gaussian_properties(n, seed, threshold):
    pts = np.random.default_rng(seed).uniform(-5, 5, size=(n, 2))
    try:
        w = build_gaussian_adjacency(pts, threshold, metric="euclidean")
    except DegenerateError:
        assert n == 2  # a single distinct pair has zero spread
        return
    assert np.allclose(w, w.T)
    assert np.all((w >= 0) & (w <= 1))
    assert np.all(np.diag(w) == 0)
    assert not np.any((w > 0) & (w < threshold))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_normalize_two_values():
    ds = SpatioTemporalDataset(np.array([[[1.0], [3.0]]]), np.ones((1, 2, 1)), np.zeros((1, 1)), ["a"], ["x"])
    out, stats = normalize(ds)
    assert out.signal[0, :, 0].tolist() == [-1.0, 1.0]
    assert stats.mean.tolist() == [2.0] and stats.std.tolist() == [1.0]


def test_normalize_ignores_missing_and_zero_fills():
    ds = SpatioTemporalDataset(
        np.array([[[1.0], [3.0], [1000.0]]]), np.array([[[1], [1], [0]]]), np.zeros((1, 1)), ["a"], ["x"]
    )
    out, stats = normalize(ds)
    assert stats.mean[0] == 2.0
    assert out.signal[0, 2, 0] == 0.0


def test_normalize_round_trip():
    ds = make_dataset(seed=2, missing=0.2)
    out, stats = normalize(ds)
    back = denormalize(out.signal, stats)
    m = ds.mask > 0
    assert np.max(np.abs(back[m] - ds.signal[m])) < 1e-12
    assert np.array_equal(apply_norm(ds.signal, ds.mask, stats), out.signal)


def test_normalize_matches_streaming_oracle():
    ds = make_dataset(n=5, t=200, f=3, seed=9, missing=0.25)
    _, stats = normalize(ds)
    for k in range(3):
        # Welford streaming mean / population variance
        count, mean, m2 = 0, 0.0, 0.0
        for v, m in zip(ds.signal[..., k].ravel(), ds.mask[..., k].ravel()):
            if m:
                count += 1
                delta = v - mean
                mean += delta / count
                m2 += delta * (v - mean)
        assert abs(stats.mean[k] - mean) < 1e-9
        assert abs(stats.std[k] - math.sqrt(m2 / count)) < 1e-9


def test_normalize_zero_variance_names_feature():
    ds = SpatioTemporalDataset(np.ones((2, 3, 2)), np.ones((2, 3, 2)), np.zeros((2, 2)), ["a", "b"], ["wind", "temp"])
    with pytest.raises(DegenerateError, match="wind"):
        normalize(ds)


def test_norm_stats_dict_round_trip():
    s = NormStats(np.array([1.0, 2.0]), np.array([0.5, 3.0]))
    back = NormStats.from_dict(s.to_dict())
    assert np.array_equal(back.mean, s.mean) and np.array_equal(back.std, s.std)


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

def test_window_examples():
    ds = make_dataset(t=10)
    assert [w.origin for w in window_split(ds, 4, 2)] == [0, 2, 4, 6]
    assert len(window_split(ds, 10, 3)) == 1
    assert len(window_split(make_dataset(n=1, t=8688, f=1), 24, 24)) == 362


def test_window_too_long():
    with pytest.raises(ShapeError):
        window_split(make_dataset(t=5), 6, 1)
    with pytest.raises(ParameterError):
        window_split(make_dataset(t=5), 2, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 10))
def test_window_count_and_bounds(t, length, stride):
    if length > t:
        return
    ds = make_dataset(n=1, t=t, f=1)
    wins = window_split(ds, length, stride)
    assert len(wins) == (t - length) // stride + 1
    for w in wins:
        assert w.signal.shape == (1, length, 1)
        assert np.array_equal(w.signal, ds.signal[:, w.origin : w.origin + length])
    cover = covering_origins(t, length, stride)
    hit = np.zeros(t, dtype=int)
    for o in cover:
        hit[o : o + length] += 1
    assert hit.min() >= 1 and cover[-1] + length <= t
