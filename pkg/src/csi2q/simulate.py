"""Synthetic transmitters, multipath channels and receiver-side CSI estimation.

Every device carries a fixed impairment profile (I/Q imbalance, carrier
frequency offset, Rapp power amplifier, DC offset).  Each frame draws a fresh
channel and noise.  Randomness for a frame derives only from
``(master_seed, device_id, frame_index)``, so any subset of frames can be
regenerated independently and in any order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError
from .preamble import DEFAULT_PARAMS, LONG_SYMBOL, ideal_preamble, ltf_bins
from .preprocess import CsiMeasurement
from .signal import as_complex_vector, rms

CARRIER_HZ = 2.462e9
SAMPLE_RATE = DEFAULT_PARAMS.sample_rate
FRAME_LEN = DEFAULT_PARAMS.total_samples
N_FFT = 64

# stream tags keep profile, channel and noise draws independent
_PROFILE, _CHANNEL, _NOISE = 1, 2, 3


@dataclass(frozen=True)
class ImpairmentRanges:
    cfo_ppm: tuple[float, float] = (-20.0, 20.0)
    iq_gain_db: tuple[float, float] = (-0.5, 0.5)
    iq_phase_deg: tuple[float, float] = (-3.0, 3.0)
    pa_vsat: tuple[float, float] = (1.5, 4.0)
    pa_smoothness: tuple[float, float] = (1.0, 3.0)
    dc_offset_max: float = 0.01

    @classmethod
    def identical(cls) -> "ImpairmentRanges":
        """Zero-width ranges: every device gets the same profile."""
        return cls((5.0, 5.0), (0.2, 0.2), (1.0, 1.0), (2.5, 2.5), (2.0, 2.0), 0.0)


@dataclass(frozen=True)
class DeviceProfile:
    device_id: int
    cfo_ppm: float = 0.0
    iq_gain_db: float = 0.0
    iq_phase_deg: float = 0.0
    pa_vsat: float = float("inf")
    pa_smoothness: float = 2.0
    dc_offset: complex = 0j

    def __post_init__(self):
        vals = [self.cfo_ppm, self.iq_gain_db, self.iq_phase_deg, self.pa_smoothness,
                self.dc_offset.real, self.dc_offset.imag]
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("profile parameters must be finite")
        if not self.pa_vsat > 0:
            raise InvalidInputError("pa_vsat must be positive")
        if self.pa_smoothness < 0.5:
            raise InvalidInputError("pa_smoothness must be >= 0.5")

    @classmethod
    def identity(cls, device_id: int = 0) -> "DeviceProfile":
        """No impairment at all (linear PA)."""
        return cls(device_id)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def sample_profile(master_seed: int, device_id: int, ranges: ImpairmentRanges = ImpairmentRanges()) -> DeviceProfile:
    rng = _rng(master_seed, device_id, _PROFILE)
    u = rng.uniform(size=7)

    def draw(lohi, x):
        lo, hi = lohi
        return float(lo + (hi - lo) * x)

    dc = ranges.dc_offset_max * u[5] * np.exp(2j * np.pi * u[6])
    return DeviceProfile(
        device_id=int(device_id),
        cfo_ppm=draw(ranges.cfo_ppm, u[0]),
        iq_gain_db=draw(ranges.iq_gain_db, u[1]),
        iq_phase_deg=draw(ranges.iq_phase_deg, u[2]),
        pa_vsat=draw(ranges.pa_vsat, u[3]),
        pa_smoothness=draw(ranges.pa_smoothness, u[4]),
        dc_offset=complex(dc),
    )


def apply_impairments(x, profile: DeviceProfile, sample_rate: float = SAMPLE_RATE) -> np.ndarray:
    """Transmit chain: I/Q imbalance, CFO rotation, Rapp AM/AM, DC offset.

    ``pa_vsat`` and ``dc_offset`` are relative to the RMS of the signal entering
    that stage, so the model is independent of the waveform scale.
    """
    x = as_complex_vector(x, name="x")
    g = profile.iq_gain_db
    phi = np.deg2rad(profile.iq_phase_deg)
    gi, gq = 10 ** (g / 40), 10 ** (-g / 40)
    re, im = x.real, x.imag
    y = gi * re + 1j * gq * (im * np.cos(phi) + re * np.sin(phi))

    if profile.cfo_ppm:
        f_off = profile.cfo_ppm * 1e-6 * CARRIER_HZ
        t = np.arange(x.shape[-1]) / sample_rate
        y = y * np.exp(2j * np.pi * f_off * t)

    level = rms(y)[..., None]
    if np.isfinite(profile.pa_vsat):
        vsat = profile.pa_vsat * level
        p2 = 2 * profile.pa_smoothness
        mag = np.abs(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(mag > 0, (1 + (mag / vsat) ** p2) ** (-1 / p2), 1.0)
        y = y * gain
    if profile.dc_offset:
        y = y + profile.dc_offset * level
    return y


@dataclass(frozen=True)
class ChannelConfig:
    """Multipath model.

    ``n_taps`` Rayleigh taps with an exponential power-delay profile, preceded
    by a bulk delay of ``sinc_half + U(delay_range)`` samples realised with a
    Hann-windowed sinc.  The bulk delay stands in for propagation and capture
    timing offset; set ``delay_range=None`` for a pure tapped delay line.
    """

    n_taps: int = 4
    decay_db_per_tap: float = 3.0
    static: bool = False  # reuse one realisation for all frames of a device
    delay_range: tuple[float, float] | None = (0.0, 6.0)
    sinc_half: int = 8

    def power_profile(self) -> np.ndarray:
        p = 10 ** (-self.decay_db_per_tap * np.arange(self.n_taps) / 10)
        return p / p.sum()


def fractional_delay(delay: float, half: int) -> np.ndarray:
    """Causal windowed-sinc filter delaying by ``delay >= half`` samples."""
    m = np.arange(int(np.ceil(delay)) + half + 1)
    x = m - delay
    w = np.where(np.abs(x) <= half + 1, np.cos(np.pi * x / (2 * (half + 1))) ** 2, 0.0)
    return np.sinc(x) * w


@dataclass
class ChannelRealization:
    taps: np.ndarray
    snr_db: float = float("inf")

    def __post_init__(self):
        self.taps = as_complex_vector(self.taps, name="taps")
        if self.taps.ndim != 1 or self.taps.size < 1:
            raise InvalidInputError("channel needs at least one tap")

    def frequency_response(self, n_fft: int = N_FFT) -> np.ndarray:
        return np.fft.fft(self.taps, n_fft)


def draw_channel(rng: np.random.Generator, config: ChannelConfig = ChannelConfig(),
                 snr_db: float = float("inf")) -> ChannelRealization:
    """One channel draw, renormalised so the tap energies sum to 1."""
    p = config.power_profile()
    taps = (rng.standard_normal(config.n_taps) + 1j * rng.standard_normal(config.n_taps)) * np.sqrt(p / 2)
    if config.delay_range is not None:
        lo, hi = config.delay_range
        delay = config.sinc_half + lo + (hi - lo) * rng.uniform()
        taps = np.convolve(fractional_delay(delay, config.sinc_half), taps)
    taps /= np.sqrt(np.sum(np.abs(taps) ** 2))
    return ChannelRealization(taps, snr_db)


def propagate(x, channel: ChannelRealization, noise_seed=None) -> np.ndarray:
    """Linear convolution with the taps (trimmed to input length) plus AWGN.

    ``channel.snr_db = inf`` disables noise.  ``noise_seed`` may be an int,
    a SeedSequence or a Generator.
    """
    x = as_complex_vector(x, name="x")
    y = np.convolve(x, channel.taps)[: x.shape[0]]
    if np.isfinite(channel.snr_db):
        rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
        p_sig = np.mean(np.abs(y) ** 2)
        sigma2 = p_sig / 10 ** (channel.snr_db / 10)
        y = y + np.sqrt(sigma2 / 2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


def ltf_noise_var(sigma2_time: float) -> float:
    """Variance of the averaged LS CSI estimate for time-domain noise variance ``sigma2_time``."""
    # two symbols averaged, each bin carries 64 * l_k
    return sigma2_time * N_FFT / 2 / N_FFT**2


def estimate_csi(rx, mode: str = "ls", noise_var: float = 0.0) -> np.ndarray:
    """Channel estimate at the 52 occupied subcarriers from the two LTF symbols.

    LS divides the averaged 64-point DFT of samples 192..255 and 256..319 by
    ``64 * l_k``.  MMSE additionally shrinks each bin by
    ``|h|^2 / (|h|^2 + noise_var)``.  Works on ``(..., 320)`` arrays.
    """
    rx = as_complex_vector(rx, name="rx")
    if rx.shape[-1] < FRAME_LEN:
        raise InvalidInputError(f"rx must hold {FRAME_LEN} samples")
    sym1 = np.fft.fft(rx[..., 192:256], axis=-1)
    sym2 = np.fft.fft(rx[..., 256:320], axis=-1)
    avg = 0.5 * (sym1 + sym2)[..., ltf_bins(N_FFT)]
    h = avg / (N_FFT * LONG_SYMBOL)
    mode = mode.lower()
    if mode == "mmse":
        mag2 = np.abs(h) ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            shrink = np.where(mag2 + noise_var > 0, mag2 / (mag2 + noise_var), 0.0)
        h = h * shrink
    elif mode != "ls":
        raise InvalidInputError(f"unknown estimation mode {mode!r}")
    return h


@dataclass
class FrameSet:
    """``N`` complex frames of equal length with integer device labels."""

    samples: np.ndarray
    device_ids: np.ndarray
    frame_index: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        self.device_ids = np.asarray(self.device_ids, dtype=np.int64)
        if self.samples.ndim != 2 or self.samples.shape[0] != self.device_ids.shape[0]:
            raise InvalidInputError("samples must be (N, L) with one label per frame")
        if self.frame_index is None:
            self.frame_index = np.zeros(len(self.device_ids), dtype=np.int64)
            for d in np.unique(self.device_ids):
                sel = self.device_ids == d
                self.frame_index[sel] = np.arange(sel.sum())
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def frame_length(self) -> int:
        return self.samples.shape[1]

    def subset(self, mask) -> "FrameSet":
        return FrameSet(self.samples[mask], self.device_ids[mask], self.frame_index[mask])

    def frames(self):
        for v, d in zip(self.samples, self.device_ids):
            yield v, int(d)

    def measurements(self):
        return [CsiMeasurement(h, int(d)) for h, d in zip(self.samples, self.device_ids)]


@dataclass(frozen=True)
class DatasetConfig:
    num_devices: int = 10
    frames_per_device: int = 300
    snr_db: float = 20.0
    master_seed: int = 0
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    ranges: ImpairmentRanges = field(default_factory=ImpairmentRanges)
    first_device_id: int = 0
    estimator: str = "ls"

    def device_ids(self) -> list[int]:
        return list(range(self.first_device_id, self.first_device_id + self.num_devices))

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def simulate_device(profile: DeviceProfile, frame_indices, config: DatasetConfig):
    """IQ capture and CSI estimate for selected frames of one device."""
    tx = apply_impairments(ideal_preamble(), profile)
    iq, csi = [], []
    shared = None
    if config.channel.static:
        shared = draw_channel(_rng(config.master_seed, profile.device_id, _CHANNEL), config.channel,
                              config.snr_db)
    for f in frame_indices:
        ch = shared or draw_channel(_rng(config.master_seed, profile.device_id, _CHANNEL, f),
                                    config.channel, config.snr_db)
        rx = propagate(tx, ch, _rng(config.master_seed, profile.device_id, _NOISE, f))
        noise_var = 0.0
        if config.estimator == "mmse" and np.isfinite(config.snr_db):
            clean = np.convolve(tx, ch.taps)[: tx.size]
            noise_var = ltf_noise_var(np.mean(np.abs(clean) ** 2) / 10 ** (config.snr_db / 10))
        iq.append(rx)
        csi.append(estimate_csi(rx, config.estimator, noise_var))
    return np.array(iq), np.array(csi)


def generate_dataset(num_devices: int = 10, frames_per_device: int = 300, snr_db: float = 20.0,
                     master_seed: int = 0, channel_config: ChannelConfig = ChannelConfig(), *,
                     ranges: ImpairmentRanges = ImpairmentRanges(), first_device_id: int = 0,
                     estimator: str = "ls"):
    """Paired IQ and CSI datasets for ``num_devices`` simulated transmitters.

    Returns ``(iq, csi, manifest)`` where ``iq`` holds ``(N, 320)`` post-channel
    captures and ``csi`` the matching ``(N, 52)`` estimates, frame-aligned.
    """
    if num_devices < 2:
        raise InvalidInputError("need at least 2 devices")
    if frames_per_device < 1:
        raise InvalidInputError("need at least 1 frame per device")
    cfg = DatasetConfig(num_devices, frames_per_device, snr_db, master_seed, channel_config, ranges,
                        first_device_id, estimator)
    return generate_from_config(cfg)


def generate_from_config(cfg: DatasetConfig):
    iq_all, csi_all, ids, idx = [], [], [], []
    profiles = []
    for d in cfg.device_ids():
        prof = sample_profile(cfg.master_seed, d, cfg.ranges)
        profiles.append(prof)
        iq, csi = simulate_device(prof, range(cfg.frames_per_device), cfg)
        iq_all.append(iq)
        csi_all.append(csi)
        ids.extend([d] * cfg.frames_per_device)
        idx.extend(range(cfg.frames_per_device))
    ids = np.array(ids, dtype=np.int64)
    idx = np.array(idx, dtype=np.int64)
    iq_set = FrameSet(np.concatenate(iq_all), ids, idx)
    csi_set = FrameSet(np.concatenate(csi_all), ids.copy(), idx.copy())
    manifest = {
        "kind": "simulated",
        "device_labels": [int(d) for d in cfg.device_ids()],
        "frames_per_device": {str(d): cfg.frames_per_device for d in cfg.device_ids()},
        "seed": cfg.master_seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "profiles": [_profile_json(p) for p in profiles],
    }
    return iq_set, csi_set, manifest


def _profile_json(p: DeviceProfile) -> dict:
    d = asdict(p)
    d["dc_offset"] = [p.dc_offset.real, p.dc_offset.imag]
    d["pa_vsat"] = p.pa_vsat if np.isfinite(p.pa_vsat) else None
    return d


def estimate_cfo_hz(iq, sample_rate: float = SAMPLE_RATE, lag: int = 16, start: int = 16, stop: int = 160):
    """CFO from the phase drift between STF periods (lag-16 autocorrelation)."""
    iq = np.asarray(iq)
    a = iq[..., start + lag:stop]
    b = iq[..., start:stop - lag]
    corr = np.sum(a * np.conj(b), axis=-1)
    return np.angle(corr) * sample_rate / (2 * np.pi * lag)
