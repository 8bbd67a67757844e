"""Zero-field-splitting calibrations D(T) and fringe-frequency thermometry.

Calibrations are polynomials in ``T - t_ref`` (linear or higher order) fitted
to user-supplied ``(T, D)`` points.  A fringe frequency is turned into a
temperature by solving ``D(T) = sign * f + omega - Ex``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import AmbiguousTemperatureError, CalibrationModelError, OutOfRangeError

__all__ = [
    "DEFAULT_SLOPE",
    "CalibrationModel",
    "TemperatureEstimate",
    "default_linear_model",
    "fit_calibration",
    "frequency_to_temperature",
    "required_contrast_sqrt_rate",
    "sensitivity_estimate",
]

DEFAULT_SLOPE = -0.1094  # MHz/K, ODMR right branch near room temperature
_DENSE = 2001


@dataclass(frozen=True)
class CalibrationModel:
    """D(T) = sum_k coefficients[k] * (T - t_ref)**k, valid on [t_min, t_max].

    ``kind`` is ``"linear"`` (two coefficients) or ``"polynomial"``.
    Construction rejects models whose slope vanishes or changes sign on the
    validity range unless ``allow_nonmonotonic`` is set.
    """

    kind: str
    coefficients: tuple
    t_ref: float
    t_min: float
    t_max: float
    allow_nonmonotonic: bool = field(default=False, compare=False)

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if self.kind not in ("linear", "polynomial"):
            raise CalibrationModelError(f"unknown calibration kind {self.kind!r}")
        if self.kind == "linear" and len(coeffs) != 2:
            raise CalibrationModelError("a linear model needs exactly (D0, slope)")
        if not self.t_min <= self.t_max:
            raise CalibrationModelError("t_min must not exceed t_max")
        if self.allow_nonmonotonic:
            return
        if self.kind == "linear":
            if coeffs[1] == 0:
                raise CalibrationModelError("linear calibration slope must be non-zero")
            return
        slopes = self.slope(np.linspace(self.t_min, self.t_max, _DENSE))
        if np.any(slopes == 0) or not (np.all(slopes > 0) or np.all(slopes < 0)):
            raise CalibrationModelError(
                "calibration slope vanishes or changes sign on the validity range"
            )

    @classmethod
    def linear(cls, t0, d0, slope, t_min=None, t_max=None):
        t_min = t0 if t_min is None else t_min
        t_max = t0 if t_max is None else t_max
        return cls("linear", (d0, slope), t0, min(t_min, t0), max(t_max, t0))

    @property
    def degree(self):
        return len(self.coefficients) - 1

    @property
    def T0(self):
        return self.t_ref

    @property
    def D0(self):
        return self.coefficients[0]

    def zfs(self, temperature):
        """D(T) in MHz."""
        x = np.asarray(temperature, dtype=float) - self.t_ref
        return np.polynomial.polynomial.polyval(x, self.coefficients)

    def slope(self, temperature):
        """dD/dT in MHz/K."""
        x = np.asarray(temperature, dtype=float) - self.t_ref
        return np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(self.coefficients))

    def in_range(self, temperature):
        return self.t_min <= temperature <= self.t_max

    def to_dict(self):
        return {
            "kind": self.kind,
            "coefficients": list(self.coefficients),
            "t_ref": self.t_ref,
            "t_min": self.t_min,
            "t_max": self.t_max,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            kind=data["kind"],
            coefficients=tuple(data["coefficients"]),
            t_ref=float(data["t_ref"]),
            t_min=float(data["t_min"]),
            t_max=float(data["t_max"]),
        )


def default_linear_model(t0=293.3, d0=1400.0, half_width=25.0):
    """Room-temperature linear model with the -109.4 kHz/K slope; D0 is a stand-in."""
    return CalibrationModel.linear(t0, d0, DEFAULT_SLOPE, t0 - half_width, t0 + half_width)


@dataclass(frozen=True)
class TemperatureEstimate:
    T: float
    uncertainty: float
    model_kind: str
    f_fringe: float
    extrapolated: bool = False


def fit_calibration(points, kind="linear", degree=5, t_ref=None) -> CalibrationModel:
    """Least-squares D(T) calibration from ``(T, D)`` points.

    The validity range is the temperature hull of the data; ``t_ref``
    defaults to its midpoint.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise CalibrationModelError("points must be a sequence of (T, D) pairs")
    if kind == "linear":
        degree = 1
        needed = 2
    elif kind == "polynomial":
        needed = degree + 2
    else:
        raise CalibrationModelError(f"unknown calibration kind {kind!r}")
    if len(pts) < needed:
        raise CalibrationModelError(
            f"{kind} calibration of degree {degree} needs at least {needed} points, got {len(pts)}"
        )
    temps, zfs = pts[:, 0], pts[:, 1]
    if not np.all(np.isfinite(pts)):
        raise CalibrationModelError("calibration points must be finite")
    t_min, t_max = float(temps.min()), float(temps.max())
    if t_ref is None:
        t_ref = 0.5 * (t_min + t_max)
    half = max(0.5 * (t_max - t_min), 1e-300)
    x = (temps - t_ref) / half
    design = np.vander(x, degree + 1, increasing=True)
    if np.unique(temps).size < degree + 1 or np.linalg.matrix_rank(design) < degree + 1:
        raise CalibrationModelError(
            "rank-deficient calibration design (too few distinct temperatures)"
        )
    scaled, *_ = np.linalg.lstsq(design, zfs, rcond=None)
    coeffs = scaled / half ** np.arange(degree + 1)
    return CalibrationModel(kind, tuple(coeffs), float(t_ref), t_min, t_max)


def _roots_in_range(model: CalibrationModel, target):
    grid = np.linspace(model.t_min, model.t_max, _DENSE)
    resid = model.zfs(grid) - target
    roots = list(grid[resid == 0])
    sign_change = np.nonzero(np.sign(resid[:-1]) * np.sign(resid[1:]) < 0)[0]
    for i in sign_change:
        roots.append(brentq(lambda t: float(model.zfs(t)) - target, grid[i], grid[i + 1], xtol=1e-12, rtol=4 * np.finfo(float).eps))
    return sorted(roots)


def frequency_to_temperature(
    f_fringe, omega, ex, model: CalibrationModel, f_stderr=0.0, sign=1, extrapolate=False
) -> TemperatureEstimate:
    """Temperature at which the Ramsey detuning equals ``sign * f_fringe``.

    ``sign`` restores the detuning sign lost by reporting |detuning|; take it
    from the reference point of the measurement.  Linear models may
    ``extrapolate`` (the estimate is then flagged); otherwise a solution
    outside the validity range raises :class:`OutOfRangeError`.
    """
    if f_fringe < 0:
        raise ValueError("fringe frequency must be >= 0; pass the sign separately")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    target = sign * f_fringe + omega - ex
    if model.kind == "linear":
        d0, slope = model.coefficients
        temp = model.t_ref + (target - d0) / slope
        inside = model.in_range(temp)
        if not inside and not extrapolate:
            raise OutOfRangeError(
                f"T = {temp:.4f} K lies outside the calibration range "
                f"[{model.t_min}, {model.t_max}] K"
            )
        return TemperatureEstimate(temp, abs(f_stderr / slope), model.kind, f_fringe, not inside)

    roots = _roots_in_range(model, target)
    if not roots:
        raise OutOfRangeError(
            f"no temperature in [{model.t_min}, {model.t_max}] K gives D = {target:.6f} MHz"
        )
    if len(roots) > 1:
        raise AmbiguousTemperatureError(
            f"{len(roots)} temperatures match D = {target:.6f} MHz: "
            + ", ".join(f"{r:.4f}" for r in roots),
            roots,
        )
    temp = roots[0]
    slope = float(model.slope(temp))
    unc = abs(f_stderr / slope) if slope != 0 else math.inf
    return TemperatureEstimate(temp, unc, model.kind, f_fringe, False)


def _check_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value!r}")


def sensitivity_estimate(slope, t2, contrast, rate):
    """Shot-noise-limited Ramsey thermal sensitivity in K/sqrt(Hz).

    eta = 1 / (2 pi |dD/dT| C sqrt(rate * t2)), with ``slope`` in MHz/K,
    ``t2`` in us, ``contrast`` as a fraction and ``rate`` in counts/s.
    This is the textbook single-shot-per-t2 form, not a fitted instrument model.
    """
    _check_positive(slope=abs(slope), t2=t2, contrast=contrast, rate=rate)
    return 1.0 / (2.0 * math.pi * abs(slope) * 1e6 * contrast * math.sqrt(rate * t2 * 1e-6))


def required_contrast_sqrt_rate(eta, slope, t2):
    """C * sqrt(rate) (sqrt(counts/s)) that makes :func:`sensitivity_estimate` return ``eta``."""
    _check_positive(eta=eta, slope=abs(slope), t2=t2)
    return 1.0 / (2.0 * math.pi * abs(slope) * 1e6 * eta * math.sqrt(t2 * 1e-6))
