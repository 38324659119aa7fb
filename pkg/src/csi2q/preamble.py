"""Time-domain sample generation: legacy STF/LTF waveform weighted by processed CSI.

A processed CSI vector ``h~`` (52 occupied subcarriers, DC excluded) scales the
subcarriers of the 20 MHz legacy preamble.  The short field is

    x_S(t) = w_T(t) * sum_k s_k h~_k exp(j 2 pi m_k df t)

and the long field has the same form with ``l_k`` and ``t - T_GI2`` inside the
exponential.  Each field is sampled at 20 Msps over ``T = 8 us`` and the two
160-sample blocks are concatenated into a 320-sample vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError
from .preprocess import ProcessedCsi
from .signal import as_complex_vector

#: Subcarrier index of each CSI position: -26..-1, +1..+26.
SUBCARRIERS = np.concatenate([np.arange(-26, 0), np.arange(1, 27)])

SHORT_SYMBOL = np.sqrt(13.0 / 6.0) * np.array([
    0, 0, 1 + 1j, 0, 0, 0, -1 - 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, -1 - 1j, 0, 0, 0, -1 - 1j, 0, 0, 0,
    1 + 1j, 0, 0, 0, 0, 0, 0, -1 - 1j, 0, 0, 0, -1 - 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, 1 + 1j, 0, 0, 0,
    1 + 1j, 0, 0, 0, 1 + 1j, 0, 0,
], dtype=np.complex128)

LONG_SYMBOL = np.array([
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1,
    1, -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1,
], dtype=np.complex128)


@dataclass(frozen=True)
class TrainingSymbols:
    S: np.ndarray
    L: np.ndarray
    subcarrier_indices: np.ndarray


def training_symbols() -> TrainingSymbols:
    return TrainingSymbols(SHORT_SYMBOL.copy(), LONG_SYMBOL.copy(), SUBCARRIERS.copy())


@dataclass(frozen=True)
class PreambleParams:
    delta_f: float = 312.5e3
    T: float = 8e-6
    T_GI2: float = 1.6e-6
    T_TR: float = 100e-9
    sample_rate: float = 20e6

    @property
    def samples_per_field(self) -> int:
        return int(round(self.T * self.sample_rate))

    @property
    def total_samples(self) -> int:
        return 2 * self.samples_per_field


DEFAULT_PARAMS = PreambleParams()


@dataclass
class TimeDomainFeature:
    u: np.ndarray
    device_id: int = 0


def window(t, params: PreambleParams = DEFAULT_PARAMS):
    """Field window: sin^2 ramps of width ``T_TR`` around ``0`` and ``T``, flat between.

    Times outside ``[-T_TR/2, T + T_TR/2)`` give 0.
    """
    t = np.asarray(t, dtype=np.float64)
    half = params.T_TR / 2
    T = params.T
    w = np.zeros_like(t)
    rise = (t > -half) & (t < half)
    flat = (t >= half) & (t < T - half)
    fall = (t >= T - half) & (t < T + half)
    w = np.where(rise, np.sin(np.pi / 2 * (0.5 + t / params.T_TR)) ** 2, w)
    w = np.where(flat, 1.0, w)
    w = np.where(fall, np.sin(np.pi / 2 * (0.5 - (t - T) / params.T_TR)) ** 2, w)
    return w if w.ndim else float(w)


def field_basis(symbols, guard_offset: float, params: PreambleParams = DEFAULT_PARAMS) -> np.ndarray:
    """``(160, 52)`` matrix ``B`` with ``synth_field(symbols, h) == B @ h``."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    n = np.arange(params.samples_per_field)
    t = n / params.sample_rate
    # phase cycles reduced mod 1 before scaling by 2*pi keeps the basis accurate
    cycles = np.outer(t - guard_offset, SUBCARRIERS * params.delta_f)
    cycles -= np.floor(cycles)
    return window(t, params)[:, None] * np.exp(2j * np.pi * cycles) * symbols[None, :]


@lru_cache(maxsize=8)
def _preamble_basis(params: PreambleParams) -> np.ndarray:
    b = np.vstack([field_basis(SHORT_SYMBOL, 0.0, params), field_basis(LONG_SYMBOL, params.T_GI2, params)])
    b.setflags(write=False)
    return b


def synth_field(symbols, weights, guard_offset: float, params: PreambleParams = DEFAULT_PARAMS) -> np.ndarray:
    """One 160-sample training field with per-subcarrier ``weights``."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    weights = as_complex_vector(weights, name="weights")
    if symbols.shape != (SUBCARRIERS.size,) or weights.shape[-1] != SUBCARRIERS.size:
        raise InvalidInputError(
            f"symbols and weights must both have length {SUBCARRIERS.size}, got "
            f"{symbols.shape[-1]} and {weights.shape[-1]}"
        )
    return weights @ field_basis(symbols, guard_offset, params).T


def tdsg_batch(h_tilde, params: PreambleParams = DEFAULT_PARAMS) -> np.ndarray:
    """Map ``(N, 52)`` processed CSI to ``(N, 320)`` time-domain features."""
    h = as_complex_vector(h_tilde, SUBCARRIERS.size, "h_tilde")
    return h @ _preamble_basis(params).T


def tdsg(processed: ProcessedCsi, params: PreambleParams = DEFAULT_PARAMS) -> TimeDomainFeature:
    """Synthesize the 320-sample feature vector for one processed frame."""
    if processed.discarded:
        raise InvalidInputError(f"cannot transform a discarded frame ({processed.reason})")
    return TimeDomainFeature(tdsg_batch(processed.h_tilde, params), processed.device_id)


def ideal_preamble(params: PreambleParams = DEFAULT_PARAMS) -> np.ndarray:
    """Impairment-free preamble: the TDSG output for an all-ones CSI vector."""
    return tdsg_batch(np.ones(SUBCARRIERS.size), params)


def ltf_bins(n_fft: int = 64) -> np.ndarray:
    """FFT bin of each occupied subcarrier for an ``n_fft``-point DFT."""
    return np.mod(SUBCARRIERS, n_fft)
