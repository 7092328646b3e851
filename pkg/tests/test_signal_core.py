import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from numpy.testing import assert_allclose, assert_array_equal

from oracles import brute_convolve, brute_xcorr, direct_filter, random_stable_denominator
from tfgrad.errors import NumericalRangeError, ShapeError
from tfgrad.signal_core import (MulCounter, TransferFunction, convolve, cross_correlate, filter_bank,
                                flip, impulse_response, iir_filter)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vectors = hnp.arrays(np.float64, st.integers(1, 40), elements=finite)


def test_flip_examples():
    assert_array_equal(flip([1, 2, 3]), [3, 2, 1])
    assert_array_equal(flip([5]), [5])


@given(vectors)
def test_flip_involution(v):
    assert_array_equal(flip(flip(v)), v)


def test_convolve_examples():
    assert_array_equal(convolve([1, 2], [3, 4, 5]), [3, 10, 13, 10])
    y = np.array([0.3, -1.0, 2.5])
    assert_array_equal(convolve([1], y), y)
    assert_array_equal(convolve([0, 0], [1, 1]), [0, 0, 0])


@given(vectors, vectors)
def test_convolve_matches_brute_force(x, y):
    out = convolve(x, y)
    assert out.shape == (len(x) + len(y) - 1,)
    assert_allclose(out, brute_convolve(x, y), rtol=1e-12, atol=1e-10)


@given(vectors, vectors)
def test_convolve_commutes(x, y):
    assert_allclose(convolve(x, y), convolve(y, x), rtol=1e-12, atol=1e-10)


def test_cross_correlate_examples():
    # lags -1, 0, 1, 2
    assert_array_equal(cross_correlate([1, 2], [3, 4, 5]), [6, 11, 14, 5])
    y = np.array([1.5, -2.0, 0.25])
    assert_array_equal(cross_correlate([1], y), y)


@given(vectors, vectors)
def test_cross_correlate_matches_definition(x, y):
    assert_allclose(cross_correlate(x, y), brute_xcorr(x, y), rtol=1e-12, atol=1e-10)


@given(vectors, vectors)
def test_cross_correlate_is_flipped_convolution(x, y):
    assert_allclose(cross_correlate(x, y), convolve(flip(x), y), rtol=1e-12, atol=1e-10)


def test_empty_vectors_rejected():
    with pytest.raises(ShapeError):
        convolve([], [1.0])
    with pytest.raises(ShapeError):
        flip(np.zeros(0))


def test_transfer_function_validation():
    tf = TransferFunction([1.0, 0.5], [-0.2])
    assert (tf.n_b, tf.n_a, tf.is_fir) == (1, 1, False)
    assert TransferFunction([1.0]).is_fir
    assert tf == TransferFunction(np.array([1.0, 0.5]), np.array([-0.2]))
    with pytest.raises(ValueError):
        TransferFunction([1.0, np.nan])
    with pytest.raises(ShapeError):
        TransferFunction([])


def test_iir_filter_examples():
    u = np.array([0.2, -1.0, 3.0, 0.5])
    assert_array_equal(iir_filter(TransferFunction([1.0]), u), u)
    assert_allclose(iir_filter(TransferFunction([1.0], [-0.5]), [1, 0, 0, 0]), [1, 0.5, 0.25, 0.125])
    assert_array_equal(iir_filter(TransferFunction([0.0, 1.0]), [1, 2, 3]), [0, 1, 2])


def test_impulse_response_examples():
    assert_allclose(impulse_response(TransferFunction([1.0], [-0.5]), 3), [1, 0.5, 0.25])
    b = np.array([0.3, -0.1, 2.0])
    assert_array_equal(impulse_response(TransferFunction(b), 6), np.r_[b, 0, 0, 0])
    assert_array_equal(impulse_response(TransferFunction(b), 2), b[:2])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.integers(0, 4), st.integers(1, 60))
def test_iir_filter_matches_direct_recurrence(seed, n_a, n_b, T):
    rng = np.random.default_rng(seed)
    a = random_stable_denominator(rng, n_a)
    b = rng.standard_normal(n_b + 1)
    u = rng.standard_normal(T)
    assert_allclose(iir_filter(TransferFunction(b, a), u), direct_filter(b, a, u), rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(0, 4), st.integers(1, 512))
def test_recurrence_equals_truncated_convolution(seed, n_a, n_b, T):
    rng = np.random.default_rng(seed)
    tf = TransferFunction(rng.standard_normal(n_b + 1), random_stable_denominator(rng, n_a, 0.95))
    u = rng.standard_normal(T)
    g = impulse_response(tf, T)
    assert_allclose(iir_filter(tf, u), convolve(g, u)[:T], rtol=0, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), finite, finite)
def test_linearity(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    tf = TransferFunction(rng.standard_normal(3), random_stable_denominator(rng, 2))
    u1, u2 = rng.standard_normal((2, 100))
    y1, y2 = iir_filter(tf, u1), iir_filter(tf, u2)
    lhs = iir_filter(tf, alpha * u1 + beta * u2)
    rhs = alpha * y1 + beta * y2
    scale = np.max(np.abs(alpha * y1) + np.abs(beta * y2))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 79))
def test_causality(seed, t):
    rng = np.random.default_rng(seed)
    tf = TransferFunction(rng.standard_normal(4), random_stable_denominator(rng, 3))
    u = rng.standard_normal(80)
    v = u.copy()
    v[t] += 1.0
    assert_array_equal(iir_filter(tf, u)[:t], iir_filter(tf, v)[:t])


@pytest.mark.parametrize("n_a,n_b,T", [(0, 0, 1), (3, 2, 17), (0, 5, 9), (8, 8, 100)])
def test_multiplication_count(n_a, n_b, T):
    rng = np.random.default_rng(0)
    tf = TransferFunction(rng.standard_normal(n_b + 1), random_stable_denominator(rng, n_a))
    c = MulCounter()
    iir_filter(tf, rng.standard_normal(T), counter=c)
    assert c.count == T * (n_b + n_a + 1)


def test_filter_bank_channels_are_independent():
    rng = np.random.default_rng(1)
    k = 5
    b = rng.standard_normal((k, 3))
    a = np.array([random_stable_denominator(rng, 2) for _ in range(k)])
    u = rng.standard_normal((50, k))
    c = MulCounter()
    y = filter_bank(b, a, u, counter=c)
    for i in range(k):
        assert_array_equal(y[:, i], iir_filter(TransferFunction(b[i], a[i]), u[:, i]))
    assert c.count == 50 * k * 5


def test_unstable_filter_reports_first_bad_sample():
    u = np.zeros(2000)
    u[0] = 1.0
    with pytest.raises(NumericalRangeError) as info:
        iir_filter(TransferFunction([1.0], [-2.0]), u)
    # 2**t overflows float64 just past t = 1023
    assert info.value.index == 1024
