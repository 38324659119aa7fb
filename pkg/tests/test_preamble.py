import numpy as np
import pytest

from csi2q.errors import InvalidInputError
from csi2q.preamble import (DEFAULT_PARAMS, LONG_SYMBOL, SHORT_SYMBOL, SUBCARRIERS, ideal_preamble, ltf_bins,
                            synth_field, tdsg, tdsg_batch, training_symbols, window)
from csi2q.preprocess import ProcessedCsi

from conftest import crandn
from reference import reference_legacy_preamble

T = DEFAULT_PARAMS.T
T_GI2 = DEFAULT_PARAMS.T_GI2


def test_training_symbol_invariants():
    ts = training_symbols()
    assert np.count_nonzero(ts.S) == 12
    assert np.all(np.isin(ts.L, [1, -1]))
    # 12 tones x |1+j|^2 x 13/6
    assert np.sum(np.abs(ts.S) ** 2) == pytest.approx(12 * 2 * 13 / 6)
    nz = SUBCARRIERS[ts.S != 0]
    assert sorted(np.abs(nz)) == sorted(np.repeat([4, 8, 12, 16, 20, 24], 2))
    assert ts.subcarrier_indices.tolist() == list(range(-26, 0)) + list(range(1, 27))


def test_window_values():
    assert window(T / 2) == 1.0
    assert window(0.0) == pytest.approx(0.5)
    assert window(T) == pytest.approx(0.5)
    assert window(-1e-6) == 0.0 and window(T + 1e-6) == 0.0
    t = np.linspace(-T, 2 * T, 5001)
    w = window(t)
    assert np.all((w >= 0) & (w <= 1))


def test_synth_field_zero_weights():
    np.testing.assert_array_equal(synth_field(SHORT_SYMBOL, np.zeros(52), 0.0), np.zeros(160))


def test_synth_field_length_mismatch():
    with pytest.raises(InvalidInputError):
        synth_field(SHORT_SYMBOL, np.ones(51), 0.0)


def test_stf_sixteen_sample_period():
    x = synth_field(SHORT_SYMBOL, np.ones(52), 0.0)
    # flat window: samples 2..158
    np.testing.assert_allclose(x[2:142], x[18:158], atol=1e-12)


def test_ltf_second_half_spectrum():
    x = synth_field(LONG_SYMBOL, np.ones(52), T_GI2)
    X = np.fft.fft(x[96:160])[ltf_bins()] / 64
    np.testing.assert_allclose(X, LONG_SYMBOL, rtol=1e-6)


def test_all_zero_and_ideal_preamble():
    np.testing.assert_array_equal(tdsg_batch(np.zeros(52)), np.zeros(320))
    ref = reference_legacy_preamble()
    assert np.max(np.abs(ideal_preamble() - ref)) < 1e-6


def test_spectral_inversion_recovers_weights(rng):
    h = crandn(rng, 52)
    u = tdsg(ProcessedCsi(h)).u
    assert u.shape == (320,)
    rec = np.fft.fft(u[256:320])[ltf_bins()] / (64 * LONG_SYMBOL)
    np.testing.assert_allclose(rec, h, rtol=1e-6)


def test_linearity(rng):
    h = crandn(rng, 52)
    a = complex(*rng.standard_normal(2))
    np.testing.assert_allclose(tdsg_batch(a * h), a * tdsg_batch(h), rtol=1e-12, atol=1e-12)


def test_stf_out_of_band_energy():
    u = tdsg_batch(np.ones(52))
    X = np.fft.fft(u[16:144])  # flat region, 8 periods
    occupied = np.zeros(128, bool)
    occupied[(2 * SUBCARRIERS[SHORT_SYMBOL != 0]) % 128] = True
    assert np.sum(np.abs(X[~occupied]) ** 2) <= 1e-9 * np.sum(np.abs(X) ** 2)


def test_discarded_frame_rejected():
    with pytest.raises(InvalidInputError):
        tdsg(ProcessedCsi(np.ones(52), discarded=True, reason="x"))
