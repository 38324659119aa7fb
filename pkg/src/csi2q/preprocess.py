"""Channel interference mitigation on raw CSI frames.

The stages run in a fixed order: phase unwrapping, phase-jitter detection and
repair, then cyclic-shift division ``h~_k = h_k / h_{k-1}`` (with
``h~_1 = h_1 / h_2``) which cancels the slowly varying channel response.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .signal import DIVISION_EPS_REL, as_complex_vector, divide_vectors, rms

NUM_SUBCARRIERS = 52
TWO_PI = 2.0 * np.pi


@dataclass
class CsiMeasurement:
    h: np.ndarray
    device_id: int = 0
    meta: dict | None = None

    def __post_init__(self):
        self.h = as_complex_vector(self.h, NUM_SUBCARRIERS, "h")
        if self.device_id < 0:
            raise InvalidInputError("device_id must be non-negative")


@dataclass
class ProcessedCsi:
    h_tilde: np.ndarray
    jitter_count: int = 0
    discarded: bool = False
    reason: str | None = None
    device_id: int = 0


@dataclass(frozen=True)
class PreprocessConfig:
    max_jitters: int = 5
    eps_rel: float = DIVISION_EPS_REL
    repair_jitters: bool = True


def unwrap_phases(phases) -> np.ndarray:
    """Remove 2*pi jumps along the last axis.

    The first element is kept, every consecutive difference is folded into
    ``(-pi, pi]`` and the output differs from the input by whole multiples of
    ``2*pi`` at every position.
    """
    p = np.asarray(phases, dtype=np.float64)
    if p.ndim == 0 or p.shape[-1] == 0:
        raise InvalidInputError("unwrap_phases needs a non-empty sequence")
    if p.shape[-1] == 1:
        return p.copy()
    d = np.diff(p, axis=-1)
    folded = np.mod(d + np.pi, TWO_PI) - np.pi
    # (-pi, pi]: a fold landing on -pi goes to +pi
    folded = np.where(folded <= -np.pi, np.pi, folded)
    turns = np.rint((folded - d) / TWO_PI)
    out = p.copy()
    out[..., 1:] += TWO_PI * np.cumsum(turns, axis=-1)
    return out


def jitter_mask(unwrapped) -> np.ndarray:
    """Boolean mask of jitter positions along the last axis.

    With ``g_i = u[i] - u[i-1]``, position ``i`` (``1 <= i <= n-2``) is a
    jitter when ``g_i`` has the opposite sign to both neighbouring gradients
    ``g_{i-1}`` and ``g_{i+1}`` (only ``g_2`` is consulted at ``i = 1``).
    """
    u = np.asarray(unwrapped, dtype=np.float64)
    n = u.shape[-1]
    mask = np.zeros(u.shape, dtype=bool)
    if n < 3:
        return mask
    g = np.diff(u, axis=-1)  # g[..., i-1] is the gradient into position i
    into = g[..., :-1]  # positions 1..n-2
    out_ = g[..., 1:]
    opposite_next = into * out_ < 0
    before = np.concatenate([np.zeros(u.shape[:-1] + (1,)), g[..., :-2]], axis=-1)
    opposite_prev = into * before < 0
    opposite_prev[..., 0] = True  # no gradient before position 1
    mask[..., 1:-1] = opposite_next & opposite_prev
    return mask


def detect_jitters(unwrapped) -> list[int]:
    """Sorted jitter indices of a single unwrapped phase sequence."""
    u = np.asarray(unwrapped, dtype=np.float64)
    if u.ndim != 1:
        raise InvalidInputError("detect_jitters expects a 1-D sequence")
    return [int(i) for i in np.flatnonzero(jitter_mask(u))]


def repair_phase(unwrapped, jitters) -> np.ndarray:
    """Linearly interpolate jitter positions from the nearest clean neighbours."""
    u = np.asarray(unwrapped, dtype=np.float64).copy()
    bad = np.zeros(u.shape[0], dtype=bool)
    bad[list(jitters)] = True
    if not bad.any():
        return u
    good = np.flatnonzero(~bad)
    if good.size == 0:
        raise InvalidInputError("every position is a jitter; nothing to interpolate from")
    # np.interp holds the edge value outside the clean range, which is the
    # boundary rule: copy the nearest interior phase
    u[bad] = np.interp(np.flatnonzero(bad), good, u[good])
    return u


def correct_jitters(csi: CsiMeasurement, max_jitters: int = 5) -> ProcessedCsi:
    """Detect and repair phase jitters on one frame.

    Returns a :class:`ProcessedCsi` whose ``h_tilde`` holds the phase-repaired
    (not yet divided) values.  Frames with more than ``max_jitters`` jitters come
    back flagged ``discarded`` with the original values untouched.
    """
    h = csi.h
    phase = unwrap_phases(np.angle(h))
    jit = detect_jitters(phase)
    if len(jit) > max_jitters:
        return ProcessedCsi(h.copy(), len(jit), True, f"{len(jit)} phase jitters > {max_jitters}",
                            csi.device_id)
    out = h.copy()
    if jit:
        fixed = repair_phase(phase, jit)
        out[jit] = np.abs(h[jit]) * np.exp(1j * fixed[jit])
    return ProcessedCsi(out, len(jit), False, None, csi.device_id)


def cyclic_shift_division(h, eps: float | None = None) -> ProcessedCsi:
    """Divide each subcarrier by its lower neighbour; the first by the second."""
    h = as_complex_vector(h, name="h")
    if h.ndim != 1 or h.shape[0] < 2:
        raise InvalidInputError("cyclic_shift_division needs a 1-D vector of length >= 2")
    if eps is None:
        eps = DIVISION_EPS_REL * float(rms(h))
    h_tilde, bad = _shift_divide(h[None, :], np.array([eps]))
    if bad[0]:
        return ProcessedCsi(h.copy(), 0, True, "near-zero denominator in cyclic-shift division")
    return ProcessedCsi(h_tilde[0], 0, False, None)


def _shift_divide(h: np.ndarray, eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    den = np.concatenate([h[:, 1:2], h[:, :-1]], axis=1)
    q, bad = divide_vectors(h, den, eps[:, None])
    return q, bad.any(axis=1)


def preprocess_frame(csi: CsiMeasurement, config: PreprocessConfig = PreprocessConfig()) -> ProcessedCsi:
    """Unwrap, repair jitters and cyclic-shift divide one frame."""
    if config.repair_jitters:
        stage = correct_jitters(csi, config.max_jitters)
        if stage.discarded:
            return stage
    else:
        stage = ProcessedCsi(csi.h.copy(), 0, False, None, csi.device_id)
    eps = config.eps_rel * float(rms(csi.h))
    out = cyclic_shift_division(stage.h_tilde, eps)
    out.jitter_count = stage.jitter_count
    out.device_id = csi.device_id
    if out.discarded:
        out.h_tilde = csi.h.copy()
    return out


@dataclass
class BatchResult:
    """Vectorised preprocessing output for ``N`` frames."""

    h_tilde: np.ndarray
    jitter_count: np.ndarray
    discarded: np.ndarray
    reasons: dict = field(default_factory=dict)

    @property
    def kept(self) -> np.ndarray:
        return ~self.discarded


def preprocess_batch(h, config: PreprocessConfig = PreprocessConfig()) -> BatchResult:
    """Frame-by-frame equivalent of :func:`preprocess_frame` on an ``(N, 52)`` array."""
    h = as_complex_vector(h, name="h")
    if h.ndim == 1:
        h = h[None, :]
    n = h.shape[0]
    work = h.copy()
    reasons = {}
    if config.repair_jitters:
        phase = unwrap_phases(np.angle(h))
        mask = jitter_mask(phase)
        counts = mask.sum(axis=1)
        discarded = counts > config.max_jitters
        for i in np.flatnonzero(discarded):
            reasons[int(i)] = f"{int(counts[i])} phase jitters > {config.max_jitters}"
        for i in np.flatnonzero((counts > 0) & ~discarded):
            jit = np.flatnonzero(mask[i])
            fixed = repair_phase(phase[i], jit)
            work[i, jit] = np.abs(h[i, jit]) * np.exp(1j * fixed[jit])
    else:
        counts = np.zeros(n, dtype=np.int64)
        discarded = np.zeros(n, dtype=bool)
    eps = config.eps_rel * rms(h)
    h_tilde, bad = _shift_divide(work, eps)
    for i in np.flatnonzero(bad & ~discarded):
        reasons[int(i)] = "near-zero denominator in cyclic-shift division"
    discarded = discarded | bad
    h_tilde[discarded] = h[discarded]
    return BatchResult(h_tilde, counts.astype(np.int64), discarded, reasons)


def raw_amplitude_phase(h) -> np.ndarray:
    """``(..., 2, 52)`` array of amplitude and unwrapped phase, no repair or division."""
    h = np.asarray(h, dtype=np.complex128)
    return np.stack([np.abs(h), unwrap_phases(np.angle(h))], axis=-2)
