"""Decayed-sinusoid fits of Ramsey fringes.

Model::

    I(t) = a * exp(-(t / t2) ** n) * cos(2 pi f t + phi) + b

fitted by a bounded Levenberg-Marquardt loop with a central-difference
Jacobian, seeded from a zero-padded periodogram.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import hilbert

from .errors import NoOscillationError

__all__ = [
    "FitModel",
    "FitReport",
    "SweepRow",
    "decayed_sinusoid",
    "fit_decayed_sinusoid",
    "initial_guess",
    "numerical_jacobian",
    "t2_sweep",
]

PARAM_NAMES = ("a", "b", "f", "phi", "t2", "n")
T2_MAX = 1e3
T2_MIN = 1e-6
N_MIN, N_MAX = 0.5, 4.0
MAX_ITER = 500
COST_RTOL = 1e-10
GRAD_TOL = 1e-8
STEP_RTOL = 1e-10
POLISH_STEPS = 3
JAC_REL_STEP = 1e-6
# envelope loss over the whole record below which the decay is called unresolved
UNRESOLVED_DECAY = 1e-3

_LOWER = np.array([-np.inf, -np.inf, 0.0, -np.inf, T2_MIN, N_MIN])
_UPPER = np.array([np.inf, np.inf, np.inf, np.inf, T2_MAX, N_MAX])


@dataclass(frozen=True)
class FitModel:
    a: float
    b: float
    f: float
    phi: float
    t2: float
    n: float = 1.0

    def __post_init__(self):
        if not self.t2 > 0:
            raise ValueError("t2 must be positive")
        if not N_MIN <= self.n <= N_MAX:
            raise ValueError(f"n must lie in [{N_MIN}, {N_MAX}]")
        if not self.f >= 0:
            raise ValueError("f must be non-negative")

    @classmethod
    def from_vector(cls, p):
        return cls(*(float(x) for x in p))

    def as_vector(self):
        return np.array([self.a, self.b, self.f, self.phi, self.t2, self.n], dtype=float)

    def __call__(self, t):
        return decayed_sinusoid(t, *self.as_vector())

    @property
    def period(self):
        return 1.0 / self.f if self.f > 0 else math.inf


@dataclass
class FitReport:
    model: FitModel
    stderr: dict
    residual_norm: float
    converged: bool
    iterations: int
    decay_unresolved: bool = False
    message: str = ""
    initial: FitModel | None = field(default=None, repr=False)

    def as_dict(self):
        out = {name: getattr(self.model, name) for name in PARAM_NAMES}
        out.update({f"{name}_stderr": self.stderr[name] for name in PARAM_NAMES})
        out.update(
            residual_norm=self.residual_norm,
            converged=self.converged,
            iterations=self.iterations,
            decay_unresolved=self.decay_unresolved,
        )
        return out


def decayed_sinusoid(t, a, b, f, phi, t2, n):
    t = np.asarray(t, dtype=float)
    return a * np.exp(-((t / t2) ** n)) * np.cos(2.0 * np.pi * f * t + phi) + b


def numerical_jacobian(func, p, rel_step=JAC_REL_STEP, lower=None, upper=None):
    """Central-difference Jacobian of ``func`` at ``p``; step ``rel_step * max(|p_j|, 1)``.

    Where a central step would leave ``[lower, upper]`` a one-sided
    difference is taken instead.
    """
    p = np.asarray(p, dtype=float)
    lower = np.full(p.size, -np.inf) if lower is None else lower
    upper = np.full(p.size, np.inf) if upper is None else upper
    f0 = None
    cols = []
    for j in range(p.size):
        h = rel_step * max(abs(p[j]), 1.0)
        up, down = p.copy(), p.copy()
        up[j] += h
        down[j] -= h
        if down[j] < lower[j]:
            f0 = func(p) if f0 is None else f0
            cols.append((func(up) - f0) / h)
        elif up[j] > upper[j]:
            f0 = func(p) if f0 is None else f0
            cols.append((f0 - func(down)) / h)
        else:
            cols.append((func(up) - func(down)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def _series_arrays(series):
    t = np.asarray(series.taus, dtype=float)
    y = np.asarray(series.p0, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("series must hold matching 1-D taus and values")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise ValueError("series contains non-finite values")
    return t, y


def _periodogram_peak(t, y):
    n = t.size
    dt = np.median(np.diff(t))
    centered = y - y.mean()
    uniform = np.allclose(np.diff(t), dt, rtol=1e-6, atol=0)
    if uniform:
        power = np.abs(np.fft.rfft(centered, n=4 * n)) ** 2
        df = 1.0 / (4 * n * dt)
        freqs = np.arange(power.size) * df
    else:
        df = 1.0 / (4 * (t[-1] - t[0]))
        freqs = np.arange(0.0, 0.5 / dt, df)
        power = np.abs(np.exp(-2j * np.pi * np.outer(freqs, t)) @ centered) ** 2
    k = 1 + int(np.argmax(power[1:]))
    if 1 <= k < power.size - 1:
        # quadratic interpolation through the peak bin and its neighbours
        left, mid, right = power[k - 1], power[k], power[k + 1]
        denom = left - 2 * mid + right
        shift = 0.5 * (left - right) / denom if denom != 0 else 0.0
        return freqs[k] + np.clip(shift, -0.5, 0.5) * df
    return freqs[k]


def initial_guess(series) -> FitModel:
    """Seed values for :func:`fit_decayed_sinusoid` from a periodogram and the signal envelope."""
    t, y = _series_arrays(series)
    if t.size < 8:
        raise ValueError("need at least 8 points to seed a fit")
    a = 0.5 * np.ptp(y)
    if a < 0.5e-6:
        raise NoOscillationError("series is flat (peak-to-peak below 1e-6); nothing to fit")
    b = float(y.mean())
    f = float(_periodogram_peak(t, y))

    span = t[-1] - t[0]
    env = np.abs(hilbert(y - b))
    # skip the Hilbert edge artefacts; stop where the envelope first reaches the noise floor
    edge = max(1, int(0.05 * t.size))
    inner = np.arange(edge, t.size - edge)
    alive = inner
    if inner.size:
        peak = int(np.argmax(env[inner]))
        low = np.nonzero(env[inner[peak:]] < 0.1 * env[inner[peak]])[0]
        stop = peak + (low[0] if low.size else inner.size - peak)
        alive = inner[:stop]
        alive = alive[env[alive] > 0]
    t2 = 10.0 * span
    if alive.size >= 2 and np.ptp(t[alive]) > 0:
        slope = np.polyfit(t[alive], np.log(env[alive]), 1)[0]
        if slope < 0:
            t2 = -1.0 / slope
    t2 = float(np.clip(t2, max(np.min(np.diff(t)), T2_MIN), T2_MAX))

    phi = math.acos(float(np.clip((y[0] - b) / a, -1.0, 1.0)))
    if y[1] > y[0]:
        phi = -phi
    return FitModel(a=float(a), b=b, f=max(f, 0.0), phi=phi, t2=t2, n=1.0)


def _weights(series, weights):
    if weights is None:
        return None
    if isinstance(weights, str):
        if weights != "stderr":
            raise ValueError(f"unknown weighting {weights!r}")
        se = getattr(series, "stderr", None)
        if se is None:
            return None
        se = np.asarray(se, dtype=float)
        positive = se[se > 0]
        if positive.size == 0:
            return None
        # exact points (stderr 0, e.g. tau = 0) get the weight of a typical point
        floor = float(np.median(positive))
        return 1.0 / np.maximum(se, floor)
    w = np.asarray(weights, dtype=float)
    if w.shape != np.shape(series.p0) or np.any(w < 0):
        raise ValueError("weights must be non-negative and match the series")
    return w


def _canonical(p):
    p = p.copy()
    if p[0] < 0:
        p[0] = -p[0]
        p[3] += np.pi
    p[3] = math.remainder(p[3], 2 * np.pi)
    return p


def fit_decayed_sinusoid(series, guess: FitModel | None = None, weights="stderr") -> FitReport:
    """Least-squares fit of the decayed sinusoid to ``series``.

    Parameters
    ----------
    series : PopulationSeries-like
        Anything with ``taus`` and ``p0`` arrays (and optionally ``stderr``).
    guess : FitModel, optional
        Starting point; :func:`initial_guess` is used when omitted.
    weights : array_like or "stderr", optional
        Per-point residual weights, or ``"stderr"`` (default) to use
        ``1/stderr`` when the series carries it; ``None`` for uniform weights.
    """
    t, y = _series_arrays(series)
    w = _weights(series, weights)
    if guess is None:
        guess = initial_guess(series)
    p = np.clip(guess.as_vector(), _LOWER, _UPPER)

    def residuals(q):
        r = decayed_sinusoid(t, *q) - y
        return r if w is None else r * w

    r = residuals(p)
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, MAX_ITER + 1):
        jac = numerical_jacobian(residuals, p, lower=_LOWER, upper=_UPPER)
        grad = jac.T @ r
        # components pushing against an active bound cannot be reduced
        free = ~(((p <= _LOWER) & (grad > 0)) | ((p >= _UPPER) & (grad < 0)))
        if p[4] >= T2_MAX:
            free[5] = False
        if np.linalg.norm(grad[free]) < GRAD_TOL:
            converged, message = True, "gradient norm below tolerance"
            break
        # with t2 pinned at its upper bound the stretch exponent is unidentifiable
        active = np.ones(p.size, dtype=bool)
        if p[4] >= T2_MAX:
            active[5] = False
        ja = jac[:, active]
        jtj = ja.T @ ja
        scale = np.maximum(np.diag(jtj), 1e-12)
        accepted = False
        while lam < 1e16:
            try:
                step_a = np.linalg.solve(jtj + lam * np.diag(scale), -grad[active])
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            step = np.zeros_like(p)
            step[active] = step_a
            trial = np.clip(p + step, _LOWER, _UPPER)
            r_trial = residuals(trial)
            cost_trial = 0.5 * float(r_trial @ r_trial)
            if np.isfinite(cost_trial) and cost_trial < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        rel = (cost - cost_trial) / max(cost, 1e-300)
        moved = np.linalg.norm(trial - p) / (np.linalg.norm(p) + STEP_RTOL)
        p, r, cost = trial, r_trial, cost_trial
        lam = max(lam / 10.0, 1e-12)
        if rel < COST_RTOL:
            converged, message = True, "relative cost change below tolerance"
            break
        if moved < STEP_RTOL:
            converged, message = True, "relative step below tolerance"
            break

    if converged:
        # undamped Gauss-Newton polish so that refitting from the result is a fixed point
        for _ in range(POLISH_STEPS):
            jac = numerical_jacobian(residuals, p, lower=_LOWER, upper=_UPPER)
            active = np.ones(p.size, dtype=bool)
            if p[4] >= T2_MAX:
                active[5] = False
            step = np.zeros_like(p)
            step[active] = np.linalg.lstsq(jac[:, active], -r, rcond=None)[0]
            trial = np.clip(p + step, _LOWER, _UPPER)
            r_trial = residuals(trial)
            cost_trial = 0.5 * float(r_trial @ r_trial)
            if not (np.isfinite(cost_trial) and cost_trial <= cost):
                break
            p, r, cost = trial, r_trial, cost_trial

    jac = numerical_jacobian(residuals, p, lower=_LOWER, upper=_UPPER)
    dof = max(t.size - p.size, 1)
    cov = np.linalg.pinv(jac.T @ jac) * (2.0 * cost / dof)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    span_end = t[-1]
    unresolved = p[4] >= T2_MAX * (1 - 1e-9) or (
        1.0 - math.exp(-((span_end / p[4]) ** p[5])) < UNRESOLVED_DECAY
    )
    if unresolved:
        p[4] = T2_MAX
        se[4] = math.inf
        se[5] = math.inf
    p = _canonical(p)
    return FitReport(
        model=FitModel.from_vector(p),
        stderr=dict(zip(PARAM_NAMES, (float(s) for s in se))),
        residual_norm=float(np.sqrt(np.sum((decayed_sinusoid(t, *p) - y) ** 2))),
        converged=converged,
        iterations=it,
        decay_unresolved=bool(unresolved),
        message=message,
        initial=guess,
    )


@dataclass(frozen=True)
class SweepRow:
    b_max: float
    t2: float
    t2_stderr: float
    f: float
    converged: bool
    decay_unresolved: bool


def t2_sweep(ensembles, weights="stderr"):
    """Fit each ensemble independently; one row per ensemble, failures flagged not dropped."""
    rows = []
    for ens in ensembles:
        report = fit_decayed_sinusoid(ens, weights=weights)
        rows.append(
            SweepRow(
                b_max=float(ens.noise.b_max),
                t2=report.model.t2,
                t2_stderr=report.stderr["t2"],
                f=report.model.f,
                converged=report.converged,
                decay_unresolved=report.decay_unresolved,
            )
        )
    return rows
