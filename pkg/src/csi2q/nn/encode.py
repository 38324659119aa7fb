"""Complex frames to real network inputs."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from ..preprocess import raw_amplitude_phase

#: Expected frame length per input mode.
MODE_LENGTH = {"tdsg": 320, "iq": 320, "csi": 52, "raw": 52}


def encode_batch(frames, mode: str = "tdsg") -> np.ndarray:
    """``(N, n)`` complex frames to ``(N, 2, n)`` float64.

    ``tdsg``/``iq``/``csi``: real and imaginary channels divided by the frame's
    complex RMS, so every encoded frame has unit RMS.  ``raw``: amplitude
    divided by its RMS, and unwrapped phase in units of pi.
    """
    if mode not in MODE_LENGTH:
        raise InvalidInputError(f"unknown input mode {mode!r}")
    x = np.asarray(frames, dtype=np.complex128)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != MODE_LENGTH[mode]:
        raise InvalidInputError(f"mode {mode!r} expects length {MODE_LENGTH[mode]}, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("frames contain NaN or Inf")
    level = np.sqrt(np.mean(np.abs(x) ** 2, axis=-1))
    if np.any(level == 0):
        raise InvalidInputError("zero-energy frame cannot be normalised")
    if mode == "raw":
        ap = raw_amplitude_phase(x)
        ap[:, 0] /= level[:, None]
        ap[:, 1] /= np.pi
        return ap
    x = x / level[:, None]
    return np.stack([x.real, x.imag], axis=1)


def encode_input(frame, mode: str = "tdsg") -> np.ndarray:
    """Single frame to a ``(2, n)`` array."""
    u = getattr(frame, "u", None)
    if u is None:
        u = getattr(frame, "h", frame)
    return encode_batch(np.asarray(u)[None, :], mode)[0]
