import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csi2q.errors import InvalidInputError, NearZeroDenominatorError
from csi2q.signal import as_complex_vector, complex_divide, dft, divide_vectors, rms

from conftest import crandn


def naive_dft(x, inverse=False):
    n = len(x)
    k = np.arange(n)
    sign = 1 if inverse else -1
    m = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    return (m @ x) / (n if inverse else 1)


def test_dft_impulse_and_dc():
    np.testing.assert_allclose(dft([1, 0, 0, 0]), [1, 1, 1, 1])
    np.testing.assert_allclose(dft([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-15)


@pytest.mark.parametrize("n", [4, 52, 64, 320])
def test_dft_matches_direct_sum_and_round_trips(rng, n):
    x = crandn(rng, n)
    np.testing.assert_allclose(dft(x), naive_dft(x), atol=1e-9)
    assert np.max(np.abs(dft(dft(x), inverse=True) - x)) < 1e-9


@pytest.mark.parametrize("n", [4, 52, 64, 320])
def test_parseval(rng, n):
    x = crandn(rng, n)
    X = dft(x)
    e_t = np.sum(np.abs(x) ** 2)
    assert abs(e_t - np.sum(np.abs(X) ** 2) / n) <= 1e-9 * e_t


def test_dft_rejects_empty():
    with pytest.raises(InvalidInputError):
        dft([])


def test_complex_divide_examples():
    assert complex_divide(1 + 0j, 1 + 0j) == 1 + 0j
    assert complex_divide(2j, 1j) == 2 + 0j
    assert abs(complex_divide(1 + 1j, 2 - 2j) - 0.5j) < 1e-15


def test_complex_divide_guard():
    with pytest.raises(NearZeroDenominatorError):
        complex_divide(1.0, 1e-13, eps=1e-12)
    with pytest.raises(ArithmeticError):
        complex_divide(1.0, 0.0)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, finite)
def test_divide_then_multiply_recovers(ar, ai, br, bi):
    a, b = complex(ar, ai), complex(br, bi)
    if abs(b) < 1e-6:
        return
    back = complex_divide(a, b) * b
    assert abs(back - a) <= 1e-12 * abs(a) + 1e-300


def test_divide_vectors_flags_bad_positions():
    q, bad = divide_vectors([1, 2, 3], [1, 0, 2], eps=1e-9)
    assert bad.tolist() == [False, True, False]
    assert np.isnan(q[1])
    np.testing.assert_allclose(q[[0, 2]], [1, 1.5])


def test_as_complex_vector_checks():
    with pytest.raises(InvalidInputError):
        as_complex_vector([1, np.nan])
    with pytest.raises(InvalidInputError):
        as_complex_vector([1, 2], length=3)
    assert rms([3, 4j]) == pytest.approx(np.sqrt(12.5))
