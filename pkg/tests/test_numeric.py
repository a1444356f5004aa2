import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fwpkm.errors import ArgumentError, DimensionError
from fwpkm.numeric import entropy, rms_norm, softmax, top_k, zscore

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 40), elements=finite)


@given(vectors)
def test_softmax_sums_to_one(s):
    p = softmax(s)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12


@given(vectors, finite)
def test_softmax_shift_invariant(s, c):
    np.testing.assert_allclose(softmax(s), softmax(s + c), atol=1e-12)


def test_softmax_large_scores_do_not_overflow():
    p = softmax(np.array([1000.0, 999.0, 0.0]))
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p, softmax(np.array([1.0, 0.0, -999.0])), atol=1e-15)


def test_softmax_empty():
    with pytest.raises(DimensionError):
        softmax(np.array([]))


def test_top_k_matches_sort():
    rng = np.random.default_rng(0)
    for i in range(1000):
        n = int(rng.integers(1, 50))
        s = rng.standard_normal(n)
        if i % 3 == 0:
            s = np.round(s)  # ties
        k = int(rng.integers(1, n + 1))
        ref = sorted(range(n), key=lambda j: (-s[j], j))[:k]
        assert top_k(s, k).tolist() == ref


@pytest.mark.parametrize("k", [0, 6])
def test_top_k_range(k):
    with pytest.raises(ArgumentError):
        top_k(np.zeros(5), k)


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(2, 40), elements=finite))
def test_zscore_centred(x):
    z = zscore(x)
    assert abs(z.mean()) < 1e-9 * max(1.0, np.abs(x).max() / (x.std() + 1e-5))
    if x.std() > 1e-3:
        assert abs(z.std() - 1.0) < 1e-2


def test_zscore_population_std():
    z = zscore(np.array([1.0, 3.0]), eps=0.0)
    np.testing.assert_allclose(z, [-1.0, 1.0])


def test_zscore_constant_vector_is_zero():
    np.testing.assert_array_equal(zscore(np.full(5, 7.0)), np.zeros(5))


def test_rms_norm():
    x = np.array([3.0, 4.0])
    out = rms_norm(x, np.ones(2), eps=0.0)
    np.testing.assert_allclose(np.mean(out**2), 1.0)
    with pytest.raises(DimensionError):
        rms_norm(x, np.ones(3))


def test_entropy_limits():
    assert entropy(np.array([0.0, 1.0, 0.0])) == 0.0
    np.testing.assert_allclose(entropy(np.full(8, 1 / 8)), np.log(8))
