import csv
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cidfd.analysis import (
    PAIR_TYPES,
    export_histograms,
    export_plot_data,
    export_projection,
    pair_similarity_stats,
    project_2d,
    similarity_gap,
)


def enumerate_means(x, t, b):
    """Per-instance pair-type means by explicit double loop."""
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    out = {k: [] for k in PAIR_TYPES}
    for i in range(len(x)):
        for name, (want_b, want_t) in PAIR_TYPES.items():
            sims = [float(x[i] @ x[j]) for j in range(len(x))
                    if j != i and (b[i] == b[j]) == want_b and (t[i] == t[j]) == want_t]
            out[name].append(sum(sims) / len(sims) if sims else np.nan)
    return {k: np.array(v) for k, v in out.items()}


def test_identical_features_give_unit_means():
    x = np.tile([[0.6, 0.8]], (8, 1))
    t = np.array([0, 0, 1, 1, 0, 0, 1, 1])
    b = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    stats = pair_similarity_stats(x, t, b)
    for name in PAIR_TYPES:
        np.testing.assert_allclose(stats.means[name], 1.0, atol=1e-12)


def test_one_hot_by_target():
    t = np.array([0, 1, 2, 0, 1, 2])
    b = np.array([0, 0, 0, 1, 1, 1])
    stats = pair_similarity_stats(np.eye(3)[t], t, b)
    np.testing.assert_allclose(stats.valid("diff_bg_same_tg"), 1.0)
    np.testing.assert_allclose(stats.valid("same_bg_diff_tg"), 0.0)
    np.testing.assert_allclose(stats.valid("diff_bg_diff_tg"), 0.0)
    # no two instances share both labels here
    assert stats.counts["same_bg_same_tg"].sum() == 0
    assert stats.histograms["same_bg_same_tg"].sum() == 0


def test_hand_dataset_matches_enumeration():
    x = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0], [-0.6, 0.8]])
    t = np.array([0, 0, 1, 1])
    b = np.array([0, 1, 0, 1])
    stats = pair_similarity_stats(x, t, b)
    expected = enumerate_means(x, t, b)
    for name in PAIR_TYPES:
        np.testing.assert_allclose(stats.means[name], expected[name], atol=1e-12)
    # instance 0: same bg diff tg is instance 2 -> 0.0; diff bg same tg is instance 1 -> 0.6
    assert stats.means["same_bg_diff_tg"][0] == pytest.approx(0.0)
    assert stats.means["diff_bg_same_tg"][0] == pytest.approx(0.6)
    assert stats.means["diff_bg_diff_tg"][0] == pytest.approx(-0.6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), block=st.integers(1, 20))
def test_random_sets_match_enumeration_and_partition_pairs(seed, block):
    rng = np.random.default_rng(seed)
    n = 15
    x = rng.normal(size=(n, 4))
    t, b = rng.integers(0, 3, n), rng.integers(0, 2, n)
    stats = pair_similarity_stats(x, t, b, bins=10, block_size=block)
    expected = enumerate_means(x, t, b)
    for name in PAIR_TYPES:
        np.testing.assert_allclose(stats.means[name], expected[name], atol=1e-12)
        assert stats.histograms[name].sum() == np.count_nonzero(stats.counts[name])
        assert (stats.histograms[name] >= 0).all()
        valid = stats.valid(name)
        assert ((valid >= -1 - 1e-12) & (valid <= 1 + 1e-12)).all()
    assert (sum(stats.counts[k] for k in PAIR_TYPES) == n - 1).all()

    perm = rng.permutation(n)
    permuted = pair_similarity_stats(x[perm], t[perm], b[perm], bins=10)
    for name in PAIR_TYPES:
        np.testing.assert_allclose(permuted.means[name], stats.means[name][perm], atol=1e-12)


def test_missing_labels_raise():
    with pytest.raises(ValueError):
        pair_similarity_stats(np.eye(3), [0, 1, 2], None)


def test_similarity_gap():
    t = np.array([0, 1, 2, 0, 1, 2])
    b = np.array([0, 0, 0, 1, 1, 1])
    assert similarity_gap(pair_similarity_stats(np.eye(3)[t], t, b)) == pytest.approx(1.0)


# -- projection -------------------------------------------------------------------

def pdist(x):
    return np.linalg.norm(x[:, None] - x[None], axis=-1)


def test_projection_of_centered_2d_data_preserves_distances():
    x = np.random.default_rng(0).normal(size=(20, 2))
    x -= x.mean(0)
    np.testing.assert_allclose(pdist(project_2d(x)), pdist(x), atol=1e-9)


def test_projection_of_planar_3d_data_is_exact():
    rng = np.random.default_rng(1)
    basis = np.linalg.qr(rng.normal(size=(3, 2)))[0]
    x = rng.normal(size=(15, 2)) @ basis.T + np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(pdist(project_2d(x)), pdist(x), atol=1e-9)


def test_projection_variance_is_top_two_eigenvalues():
    x = np.random.default_rng(2).normal(size=(10, 8))
    p = project_2d(x)
    eig = np.sort(np.linalg.eigvalsh(np.cov(x.T, bias=True)))[::-1]
    assert p.var(0).sum() == pytest.approx(eig[:2].sum(), abs=1e-9)


def test_projection_errors_and_determinism():
    with pytest.raises(ValueError):
        project_2d(np.ones((5, 3)))
    with pytest.raises(ValueError):
        project_2d(np.ones((1, 3)))
    with pytest.raises(ValueError):
        project_2d(np.eye(3), method="umap")
    x = np.random.default_rng(3).normal(size=(12, 5))
    np.testing.assert_array_equal(project_2d(x, seed=0), project_2d(x, seed=0))


# -- exports ---------------------------------------------------------------------

def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_projection_export(tmp_path):
    path = export_plot_data(np.array([[0.5, 1.0], [2.0, -1.0]]), tmp_path / "proj.csv", [3, 4], None)
    rows = read_csv(path)
    assert rows[0] == ["x", "y", "target_label", "background_label"]
    assert rows[1] == ["0.5", "1.0", "3", ""]


def test_histogram_export(tmp_path):
    t = np.array([0, 1, 0, 1])
    b = np.array([0, 0, 1, 1])
    stats = pair_similarity_stats(np.random.default_rng(0).normal(size=(4, 3)), t, b, bins=5)
    path = export_plot_data(stats, tmp_path / "hist.csv")
    rows = read_csv(path)
    assert rows[0] == ["pair_type", "bin_left", "bin_right", "count"]
    assert len(rows) == 1 + 4 * 5
    assert {r[0] for r in rows[1:]} == set(PAIR_TYPES)
    sidecar = json.loads((tmp_path / "hist.bins.json").read_text())
    assert len(sidecar["bin_edges"]) == 6


def test_empty_histogram_export_is_header_only(tmp_path):
    path = export_histograms(None, tmp_path / "empty.csv")
    assert read_csv(path) == [["pair_type", "bin_left", "bin_right", "count"]]
    assert read_csv(export_projection(np.zeros((0, 2)), tmp_path / "p.csv")) == \
        [["x", "y", "target_label", "background_label"]]
