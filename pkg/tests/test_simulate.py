import dataclasses

import numpy as np
import pytest

from csi2q.errors import InvalidInputError
from csi2q.preamble import ideal_preamble, ltf_bins
from csi2q.preprocess import CsiMeasurement, PreprocessConfig, preprocess_frame
from csi2q.simulate import (CARRIER_HZ, ChannelConfig, ChannelRealization, DeviceProfile, ImpairmentRanges,
                            apply_impairments, draw_channel, estimate_cfo_hz, estimate_csi, generate_dataset,
                            propagate, sample_profile)

from conftest import crandn


def test_profile_deterministic():
    assert sample_profile(7, 3) == sample_profile(7, 3)
    assert sample_profile(7, 3) != sample_profile(8, 3)


def test_collapsed_ranges_identical_devices():
    r = ImpairmentRanges.identical()
    a, b = sample_profile(0, 1, r), sample_profile(0, 2, r)
    assert dataclasses.replace(a, device_id=0) == dataclasses.replace(b, device_id=0)


def test_85_profiles_distinct():
    profs = [dataclasses.astuple(dataclasses.replace(sample_profile(5, d), device_id=0)) for d in range(85)]
    assert len(set(profs)) == 85


def test_profile_validation():
    with pytest.raises(InvalidInputError):
        DeviceProfile(0, pa_vsat=0.0)
    with pytest.raises(InvalidInputError):
        DeviceProfile(0, cfo_ppm=np.nan)


def test_identity_impairment(rng):
    x = crandn(rng, 320)
    np.testing.assert_array_equal(apply_impairments(x, DeviceProfile.identity()), x)


def test_cfo_is_pure_rotation(rng):
    x = crandn(rng, 320)
    y = apply_impairments(x, DeviceProfile(0, cfo_ppm=12.0))
    np.testing.assert_allclose(np.abs(y), np.abs(x), rtol=1e-12)
    f = 12e-6 * CARRIER_HZ
    np.testing.assert_allclose(y, x * np.exp(2j * np.pi * f * np.arange(320) / 20e6), rtol=1e-12)


def test_iq_imbalance_formula():
    x = np.array([1 + 0j, 1j, 0.3 - 0.2j])
    g, ph = 0.4, 3.0
    y = apply_impairments(x, DeviceProfile(0, iq_gain_db=g, iq_phase_deg=ph))
    gi, gq, phi = 10 ** (g / 40), 10 ** (-g / 40), np.deg2rad(ph)
    exp = gi * x.real + 1j * gq * (x.imag * np.cos(phi) + x.real * np.sin(phi))
    np.testing.assert_allclose(y, exp, rtol=1e-14)


def test_rapp_hard_limit(rng):
    x = crandn(rng, 320)
    x /= np.sqrt(np.mean(np.abs(x) ** 2))
    y = apply_impairments(x, DeviceProfile(0, pa_vsat=1.0, pa_smoothness=100.0))
    peaks = np.abs(x) > 2.0
    assert peaks.any()
    np.testing.assert_allclose(np.abs(y[peaks]), 1.0, rtol=0.01)
    np.testing.assert_allclose(np.angle(y), np.angle(x), atol=1e-12)


def test_propagate_identity(rng):
    x = crandn(rng, 320)
    np.testing.assert_array_equal(propagate(x, ChannelRealization(np.array([1.0]))), x)


def test_propagate_snr_monte_carlo(rng):
    x = crandn(rng, 320)
    ch = ChannelRealization(np.array([1.0]), snr_db=10.0)
    ratios = [np.mean(np.abs(x) ** 2) / np.mean(np.abs(propagate(x, ch, s) - x) ** 2) for s in range(100)]
    assert abs(10 * np.log10(np.mean(ratios)) - 10.0) < 0.5


def test_two_tap_convolution_theorem():
    x = ideal_preamble()
    taps = np.array([0.9, 0.3 - 0.2j])
    y = propagate(x, ChannelRealization(taps))
    H = np.fft.fft(taps, 64)
    np.testing.assert_allclose(np.fft.fft(y[256:320]), np.fft.fft(x[256:320]) * H, atol=1e-9)


def test_estimate_csi_ideal_and_two_tap():
    np.testing.assert_allclose(estimate_csi(ideal_preamble()), np.ones(52), atol=1e-6)
    taps = np.array([0.8, 0.5j, -0.2])
    h = estimate_csi(propagate(ideal_preamble(), ChannelRealization(taps)))
    np.testing.assert_allclose(h, np.fft.fft(taps, 64)[ltf_bins()], atol=1e-6)


def test_mmse_limit_equals_ls(rng):
    rx = crandn(rng, 320)
    np.testing.assert_allclose(estimate_csi(rx, "mmse", 0.0), estimate_csi(rx, "ls"), atol=1e-9)
    assert np.all(np.abs(estimate_csi(rx, "mmse", 0.1)) <= np.abs(estimate_csi(rx, "ls")))


def test_channel_unit_power():
    rng = np.random.default_rng(0)
    x = ideal_preamble()
    p_in = np.mean(np.abs(x) ** 2)
    p_out = []
    for _ in range(1000):
        ch = draw_channel(rng)
        assert np.sum(np.abs(ch.taps) ** 2) == pytest.approx(1.0)
        p_out.append(np.mean(np.abs(propagate(x, ch)) ** 2))
    assert abs(np.mean(p_out) / p_in - 1) < 0.05


def test_generate_counts_and_labels():
    iq, csi, man = generate_dataset(2, 1, 20.0)
    assert iq.samples.shape == (2, 320) and csi.samples.shape == (2, 52)
    assert sorted(csi.device_ids.tolist()) == [0, 1]
    np.testing.assert_array_equal(iq.device_ids, csi.device_ids)
    np.testing.assert_array_equal(iq.frame_index, csi.frame_index)
    assert man["device_labels"] == [0, 1]


def test_generate_deterministic():
    a = generate_dataset(3, 4, 15.0, master_seed=9)
    b = generate_dataset(3, 4, 15.0, master_seed=9)
    assert a[0].samples.tobytes() == b[0].samples.tobytes()
    assert a[1].samples.tobytes() == b[1].samples.tobytes()
    assert a[2] == b[2]


def test_cfo_recovered_from_iq():
    iq, _, man = generate_dataset(10, 300, 25.0, master_seed=2)
    for prof in man["profiles"]:
        sel = iq.device_ids == prof["device_id"]
        est = np.mean(estimate_cfo_hz(iq.samples[sel]))
        true = prof["cfo_ppm"] * 1e-6 * CARRIER_HZ
        assert abs(est - true) <= 0.1 * abs(true)


def test_channel_scale_does_not_change_processed_csi():
    prof = sample_profile(0, 4)
    tx = apply_impairments(ideal_preamble(), prof)
    # a flat channel leaves the phase nearly constant, so the transmitter's own ripple
    # trips many jitter flags; lift the discard threshold to test the division itself
    cfg = PreprocessConfig(max_jitters=52)
    base = preprocess_frame(CsiMeasurement(estimate_csi(tx)), cfg)
    assert not base.discarded
    for c in (0.01, 3 - 4j, -2j):
        h = estimate_csi(propagate(tx, ChannelRealization(np.array([c]))))
        np.testing.assert_allclose(preprocess_frame(CsiMeasurement(h), cfg).h_tilde, base.h_tilde, rtol=1e-9)


def test_static_channel_reuses_taps():
    _, csi, _ = generate_dataset(2, 3, float("inf"), channel_config=ChannelConfig(static=True))
    sel = csi.device_ids == 0
    h = csi.samples[sel]
    np.testing.assert_allclose(h[0], h[1], atol=1e-12)
