"""Open-world calibration with per-class Weibull models of activation distances.

Each known class keeps the mean activation vector (MAV) of its correctly
classified training samples and a two-parameter Weibull fitted to the largest
distances from that MAV.  At test time ``c_i = 1 - CDF_i(||a - mav_i||)``
scales the class probabilities, and the removed mass ``g`` becomes the
unknown-class score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import CalibrationError, DegenerateFitError, InvalidInputError

DEFAULT_DELTA = 0.15
DEFAULT_TAIL = 20
MIN_SAMPLES = 5
FIT_TOL = 1e-8


def _shape_equation(k, logx, xs):
    # Stationarity of the profile likelihood in the shape parameter.
    w = xs ** k
    return np.dot(w, logx) / w.sum() - 1.0 / k - logx.mean()


def weibull_fit(samples, tol: float = FIT_TOL) -> tuple[float, float]:
    """Maximum-likelihood ``(shape, scale)`` of a two-parameter Weibull.

    The shape solves the profile-likelihood equation by bracketed root finding;
    the scale follows in closed form.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise InvalidInputError("Weibull fit needs finite samples")
    if np.any(x < 0):
        raise InvalidInputError("Weibull samples must be non-negative")
    x = x[x > 0]
    if x.size < 2 or np.ptp(x) <= 1e-12 * x.max():
        raise DegenerateFitError("Weibull fit needs at least two distinct positive samples")
    top = x.max()
    xs = x / top
    logx = np.log(xs)
    lo, hi = 1e-3, 1.0
    while _shape_equation(hi, logx, xs) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise DegenerateFitError("Weibull shape diverged")
    while _shape_equation(lo, logx, xs) > 0:
        lo /= 2.0
        if lo < 1e-12:
            raise DegenerateFitError("Weibull shape collapsed")
    k = brentq(_shape_equation, lo, hi, args=(logx, xs), xtol=tol, rtol=4 * np.finfo(float).eps)
    scale = top * np.mean(xs ** k) ** (1.0 / k)
    return float(k), float(scale)


def weibull_cdf(x, shape: float, scale: float):
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return 1.0 - np.exp(-((x / scale) ** shape))


@dataclass(frozen=True)
class ClassCalibration:
    label: int
    mav: np.ndarray
    weibull_shape: float
    weibull_scale: float
    tail_size: int

    def __post_init__(self):
        for v in (self.weibull_shape, self.weibull_scale):
            if not (np.isfinite(v) and v > 0):
                raise CalibrationError(f"class {self.label}: invalid Weibull parameter {v}")

    def cdf(self, distance):
        return weibull_cdf(distance, self.weibull_shape, self.weibull_scale)

    def to_dict(self) -> dict:
        return {"label": int(self.label), "mav": [float(v) for v in self.mav],
                "shape": self.weibull_shape, "scale": self.weibull_scale, "tail_size": self.tail_size}

    @classmethod
    def from_dict(cls, d) -> "ClassCalibration":
        return cls(int(d["label"]), np.asarray(d["mav"], dtype=np.float64), float(d["shape"]),
                   float(d["scale"]), int(d["tail_size"]))


@dataclass(frozen=True)
class CalibratedPrediction:
    g_vector: np.ndarray
    unknown_mass: float
    decision: int  # 0..I-1 known class position, I means unknown

    @property
    def is_unknown(self) -> bool:
        return self.decision == len(self.g_vector) - 1


def fit_calibration(activations: dict, tail_size: int = DEFAULT_TAIL) -> list[ClassCalibration]:
    """Per-class MAV and tail Weibull from correctly classified activations.

    ``activations`` maps class label (in class order) to an ``(n, d)`` array.
    """
    if tail_size < 1:
        raise InvalidInputError("tail_size must be >= 1")
    out = []
    need = max(tail_size, MIN_SAMPLES)
    for label, acts in activations.items():
        acts = np.asarray(acts, dtype=np.float64)
        if acts.ndim != 2 or acts.shape[0] < need:
            n = acts.shape[0] if acts.ndim == 2 else 0
            raise CalibrationError(f"class {label}: {n} correctly classified samples, need {need}")
        mav = acts.mean(axis=0)
        dist = np.linalg.norm(acts - mav, axis=1)
        tail = np.sort(dist)[-tail_size:]
        try:
            shape, scale = weibull_fit(tail)
        except DegenerateFitError as exc:
            raise DegenerateFitError(f"class {label}: {exc}") from None
        out.append(ClassCalibration(int(label), mav, shape, scale, int(tail_size)))
    return out


def fit_from_predictions(logits, predicted, truths, classes, tail_size: int = DEFAULT_TAIL):
    """Gather correctly classified activations per class, then fit."""
    logits = np.asarray(logits)
    predicted, truths = np.asarray(predicted), np.asarray(truths)
    ok = predicted == truths
    acts = {int(c): logits[ok & (truths == c)] for c in classes}
    return fit_calibration(acts, tail_size)


def _check(p, calib):
    if len(calib) != p.shape[-1]:
        raise CalibrationError(f"calibration covers {len(calib)} classes, probabilities have {p.shape[-1]}")


def confidences(activations, calib) -> np.ndarray:
    """``c_i`` for each row of ``activations`` and each calibrated class."""
    a = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    c = np.empty((a.shape[0], len(calib)))
    for i, cc in enumerate(calib):
        c[:, i] = 1.0 - cc.cdf(np.linalg.norm(a - cc.mav, axis=1))
    return np.clip(c, 0.0, 1.0)


def recalibrate(p, c, delta: float = DEFAULT_DELTA):
    """``G`` rows ``[p*c, sum p*(1-c)]`` and decisions for given ``c``."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    if p.shape != c.shape:
        raise InvalidInputError("p and c must have the same shape")
    known = p * c
    g = np.minimum(np.sum(p * (1.0 - c), axis=1), 1.0)  # rounding can push sum(p) past 1
    G = np.concatenate([known, g[:, None]], axis=1)
    decision = np.where(g > delta, p.shape[1], np.argmax(known, axis=1))
    return G, g, decision


def calibrate(p, activation, calib, delta: float = DEFAULT_DELTA) -> CalibratedPrediction:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidInputError("calibrate expects a single probability vector")
    if abs(p.sum() - 1.0) > 1e-6:
        raise InvalidInputError("probabilities must sum to 1")
    _check(p, calib)
    G, g, d = recalibrate(p, confidences(activation, calib), delta)
    return CalibratedPrediction(G[0], float(g[0]), int(d[0]))


def calibrate_batch(probs, activations, calib, delta: float = DEFAULT_DELTA):
    """Vectorised :func:`calibrate`: returns ``(G, g, decisions)``."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    _check(probs, calib)
    return recalibrate(probs, confidences(activations, calib), delta)


def save_calibration(path, calib, delta: float = DEFAULT_DELTA) -> None:
    doc = {"delta": float(delta), "classes": [c.to_dict() for c in calib]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_calibration(path):
    try:
        doc = json.loads(Path(path).read_text())
        return [ClassCalibration.from_dict(c) for c in doc["classes"]], float(doc["delta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationError(f"{path}: malformed calibration file ({exc})") from None
