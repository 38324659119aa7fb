"""Complex-signal primitives shared by every pipeline stage."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, NearZeroDenominatorError

#: Relative guard for divisions: the floor is ``DIVISION_EPS_REL * rms(frame)``.
DIVISION_EPS_REL = 1e-9


def as_complex_vector(x, length: int | None = None, name: str = "x") -> np.ndarray:
    """Return ``x`` as a finite complex128 array, optionally checking its last axis."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim == 0:
        raise InvalidInputError(f"{name} must be a vector, got a scalar")
    if length is not None and arr.shape[-1] != length:
        raise InvalidInputError(f"{name} must have length {length}, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def rms(x, axis=-1) -> np.ndarray:
    """Root-mean-square magnitude along ``axis``."""
    x = np.asarray(x)
    return np.sqrt(np.mean(np.abs(x) ** 2, axis=axis))


def dft(x, inverse: bool = False) -> np.ndarray:
    """Discrete Fourier transform along the last axis.

    Forward: ``X[m] = sum_k x[k] exp(-j 2 pi k m / n)``.  The inverse uses the
    conjugate kernel and a ``1/n`` factor, so ``dft(dft(x), inverse=True) == x``.
    """
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise InvalidInputError("dft needs a non-empty vector")
    return np.fft.ifft(arr, axis=-1) if inverse else np.fft.fft(arr, axis=-1)


def complex_divide(a: complex, b: complex, eps: float = 1e-12) -> complex:
    """Guarded complex division ``a * conj(b) / |b|^2``.

    Raises
    ------
    NearZeroDenominatorError
        If ``|b| < eps``.
    """
    b = complex(b)
    mag2 = b.real * b.real + b.imag * b.imag
    if not np.sqrt(mag2) >= eps:
        raise NearZeroDenominatorError(f"|b| = {abs(b):.3e} below guard {eps:.3e}")
    return complex(a) * b.conjugate() / mag2


def divide_vectors(a: np.ndarray, b: np.ndarray, eps) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise guarded division.

    Returns the quotient and a boolean mask of positions whose denominator fell
    below ``eps``; those positions hold NaN.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    mag2 = b.real ** 2 + b.imag ** 2
    bad = ~(np.sqrt(mag2) >= eps)
    safe = np.where(bad, 1.0, mag2)
    q = a * np.conj(b) / safe
    q = np.where(bad, np.nan + 0j, q)
    return q, bad
