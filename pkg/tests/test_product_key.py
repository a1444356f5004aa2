import numpy as np
import pytest

from fwpkm import SubScores, score_dot, score_idw, select, split_query
from fwpkm.errors import ArgumentError, DimensionError
from fwpkm.oracle import brute_force_select


def test_split_query():
    a, b = split_query(np.arange(6.0))
    assert a.tolist() == [0, 1, 2] and b.tolist() == [3, 4, 5]
    with pytest.raises(DimensionError):
        split_query(np.arange(5.0))


def test_idw_exact_match_scores_highest():
    K = np.eye(4)
    s = score_idw(K[2], K, eps=1e-3)
    assert int(np.argmax(s)) == 2
    assert s[2] == pytest.approx(-np.log(1e-3))


def test_idw_orthogonal_invariance():
    rng = np.random.default_rng(3)
    K = rng.standard_normal((10, 5))
    q = rng.standard_normal(5)
    R, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    np.testing.assert_allclose(score_idw(q, K), score_idw(R @ q, K @ R.T), atol=1e-12)


def test_score_dim_mismatch():
    with pytest.raises(DimensionError):
        score_idw(np.zeros(3), np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        score_dot(np.zeros(3), np.zeros((4, 2)))


def test_select_small_example():
    s1 = np.array([0.0, 2.0, 1.0])
    s2 = np.array([1.0, 0.0, 3.0])
    sel = select(SubScores(s1, s2), 2)
    # best pairs: (1,2)=5, (2,2)=4
    assert sel.pair_idx.tolist() == [1 * 3 + 2, 2 * 3 + 2]
    assert sel.pair_scores.tolist() == [5.0, 4.0]
    np.testing.assert_allclose(sel.final_weights.sum(), 1.0)
    assert sel.sub_weights1[0] == 0.0 and sel.sub_weights1[1] > sel.sub_weights1[2]


def test_select_ties_by_flat_index():
    s1 = np.array([1.0, 1.0, 0.0, 0.0])
    s2 = np.array([0.0, 0.0, 0.0, 0.0])
    sel = select(SubScores(s1, s2), 3)
    assert sel.pair_idx.tolist() == [0, 1, 2]
    # pairs (0, j) and (1, j) tie; ascending flat index wins
    sel = select(SubScores(s1, np.array([0.0, 0.0, 1.0, 1.0])), 4)
    assert sel.pair_idx.tolist() == [2, 3, 6, 7]
    idx, _, _ = brute_force_select(s1, np.array([0.0, 0.0, 1.0, 1.0]), 4)
    assert idx.tolist() == [2, 3, 6, 7]


def test_select_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(300):
        n = int(rng.integers(1, 20))
        k = int(rng.integers(1, n + 1))
        s1, s2 = rng.standard_normal(n), rng.standard_normal(n)
        sel = select(SubScores(s1, s2), k)
        idx, sc, w = brute_force_select(s1, s2, k)
        assert np.array_equal(sel.pair_idx, idx)
        assert np.array_equal(sel.pair_scores, sc)


def test_select_k_out_of_range():
    with pytest.raises(ArgumentError):
        select(SubScores(np.zeros(3), np.zeros(3)), 4)
