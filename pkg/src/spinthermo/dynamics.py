"""Unitary qutrit dynamics and pulse sequences (Rabi, Ramsey, Thermo Echo).

States are length-3 complex arrays over {|up>, |0>, |down>}.  Evolution
under a constant Hamiltonian ``H`` (MHz) for ``t`` microseconds is
``exp(-2j*pi*H*t)``, evaluated through the Hermitian eigendecomposition.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CalibrationError, FormulaDomainError
from .spinmodel import (
    SQRT1_2,
    ZERO_FIELDS,
    FieldSample,
    SpinParams,
    build_lab_h,
    build_rot_h,
    check_hermitian,
    drive_coupling,
)

__all__ = [
    "PLUS",
    "ZERO",
    "PopulationSeries",
    "PulseSegment",
    "PulseSequence",
    "calibrate_pulse",
    "lab_frame_oracle",
    "propagate",
    "ramsey_closed_form",
    "run_sequence",
    "sequence_traces",
    "unitary",
]

TWO_PI = 2.0 * math.pi

UP = np.array([1, 0, 0], dtype=complex)
ZERO = np.array([0, 1, 0], dtype=complex)
DOWN = np.array([0, 0, 1], dtype=complex)
PLUS = np.array([SQRT1_2, 0, SQRT1_2], dtype=complex)
MINUS = np.array([SQRT1_2, 0, -SQRT1_2], dtype=complex)
HALF_PI_TARGET = (ZERO - 1j * PLUS) * SQRT1_2

NORM_TOL = 1e-10
P0_EPS = 1e-9


def unitary(h, t):
    """exp(-2j*pi*h*t) for Hermitian ``h``."""
    check_hermitian(h)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * TWO_PI * w * t)) @ v.conj().T


def propagate(h, psi, t):
    """Evolve ``psi`` for ``t`` microseconds under the constant Hamiltonian ``h``."""
    psi = np.asarray(psi, dtype=complex)
    norm = np.vdot(psi, psi).real
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError(f"state is not normalised (|psi|^2 = {norm!r})")
    return unitary(h, t) @ psi


@dataclass(frozen=True)
class PopulationSeries:
    """P0 sampled on a strictly increasing delay grid (us), optional per-point stderr."""

    taus: np.ndarray
    p0: np.ndarray
    stderr: np.ndarray | None = None

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        p0 = np.asarray(self.p0, dtype=float)
        if taus.ndim != 1 or taus.shape != p0.shape:
            raise ValueError("taus and p0 must be 1-D arrays of equal length")
        if np.any(p0 < -P0_EPS) or np.any(p0 > 1 + P0_EPS):
            raise ValueError("populations must lie in [0, 1]")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "p0", p0)
        if self.stderr is not None:
            se = np.asarray(self.stderr, dtype=float)
            if se.shape != p0.shape or np.any(se < 0):
                raise ValueError("stderr must be non-negative and match p0")
            object.__setattr__(self, "stderr", se)


@dataclass(frozen=True)
class PulseSegment:
    """A stretch of the sequence with the drive on or off.

    ``idealized`` pulses use the strong-drive Hamiltonian that ignores
    detuning and field noise while the microwave is on.
    """

    duration: float
    drive: bool = False
    idealized: bool = True

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError(f"segment duration must be >= 0, got {self.duration!r}")


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[PulseSegment, ...]

    @classmethod
    def rabi(cls, t, idealized=False):
        return cls((PulseSegment(t, True, idealized),))

    @classmethod
    def ramsey(cls, tau, t_half_pi, idealized=True):
        pulse = PulseSegment(t_half_pi, True, idealized)
        return cls((pulse, PulseSegment(tau), pulse))

    @classmethod
    def thermo_echo(cls, tau, t_half_pi, t_two_pi, idealized=True):
        """Ramsey with a 2 pi pulse in the middle of the free evolution."""
        pulse = PulseSegment(t_half_pi, True, idealized)
        return cls(
            (
                pulse,
                PulseSegment(tau / 2),
                PulseSegment(t_two_pi, True, idealized),
                PulseSegment(tau / 2),
                pulse,
            )
        )

    @property
    def free_segments(self):
        return [s for s in self.segments if not s.drive]

    @property
    def duration(self):
        return sum(s.duration for s in self.segments)


def _ideal_drive_eig(ex, rabi):
    params = SpinParams(D=1.0, Ex=ex, omega=1.0 + ex, Omega=rabi)
    return np.linalg.eigh(build_rot_h(params, drive_on=True, idealized=True))


@functools.lru_cache(maxsize=256)
def _calibrate(ex, rabi, kind, points_per_period=400, periods=10):
    if not rabi > 0:
        raise CalibrationError("Rabi frequency must be positive to calibrate a pulse")
    w, v = _ideal_drive_eig(ex, rabi)
    c0 = v.conj().T @ ZERO
    h = (v * w) @ v.conj().T
    target = HALF_PI_TARGET if kind == "pi/2" else ZERO
    tgt = v.conj().T @ target

    def amp(t):
        return np.vdot(tgt, np.exp(-1j * TWO_PI * w * t) * c0)

    def fidelity(t):
        return abs(amp(t)) ** 2

    def slope(t):
        psi = v @ (np.exp(-1j * TWO_PI * w * t) * c0)
        d = np.vdot(target, -1j * TWO_PI * (h @ psi))
        return 2.0 * (np.conj(amp(t)) * d).real

    period = 1.0 / rabi
    grid = np.linspace(0.0, periods * period, periods * points_per_period + 1)
    fid = np.array([fidelity(t) for t in grid])
    start = 1
    if kind == "2pi":
        # skip the trivial t = 0 return; wait for the state to leave |0>
        below = np.nonzero(fid < 0.5)[0]
        if below.size == 0:
            raise CalibrationError("drive never moves the state away from |0>")
        start = below[0]
    for i in range(max(start, 1), grid.size - 1):
        if fid[i] >= fid[i - 1] and fid[i] >= fid[i + 1] and fid[i] > 0.99:
            lo, hi = grid[i - 1], grid[i + 1]
            # bisection on the sign of dF/dt around the bracketed maximum
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid in (lo, hi):
                    break
                if slope(mid) > 0:
                    lo = mid
                else:
                    hi = mid
            t_best = 0.5 * (lo + hi)
            if fidelity(t_best) > 0.999:
                return t_best
    raise CalibrationError(
        f"no {kind} pulse with fidelity above 0.999 within {periods} Rabi periods"
    )


def calibrate_pulse(params: SpinParams, kind="pi/2"):
    """Shortest idealized-drive duration (us) realising a pi/2 or 2 pi pulse.

    ``pi/2`` maps |0> to (|0> - i|+>)/sqrt(2); ``2pi`` returns |0> to itself
    up to a global phase.
    """
    if kind not in ("pi/2", "2pi"):
        raise ValueError(f"unknown pulse kind {kind!r}; expected 'pi/2' or '2pi'")
    return _calibrate(float(params.Ex), float(params.Omega), kind)


def _fields_for_free_segments(fields, n_free):
    if isinstance(fields, FieldSample):
        return [fields] * n_free
    fields = list(fields)
    if len(fields) != n_free:
        raise ValueError(f"expected {n_free} field samples (one per free segment), got {len(fields)}")
    return fields


def run_sequence(params: SpinParams, fields, seq: PulseSequence, psi0=None):
    """Population of |0> after running ``seq`` from |0> (or ``psi0``).

    ``fields`` is one :class:`FieldSample` held static for the whole sequence,
    or a list with one sample per free-evolution segment (noise resampling).
    Finite (non-idealized) pulses see the sample of the preceding free
    segment, or the first one before any free evolution.
    """
    free_fields = _fields_for_free_segments(fields, len(seq.free_segments))
    current = free_fields[0] if free_fields else (fields if isinstance(fields, FieldSample) else ZERO_FIELDS)
    psi = ZERO.copy() if psi0 is None else np.asarray(psi0, dtype=complex)
    k = 0
    for seg in seq.segments:
        if seg.drive:
            h = build_rot_h(params, current, drive_on=True, idealized=seg.idealized)
        else:
            current = free_fields[k]
            k += 1
            h = build_rot_h(params, current, drive_on=False)
        psi = propagate(h, psi, seg.duration)
    return float(abs(psi[1]) ** 2)


def _free_h_batch(params: SpinParams, bz, pz):
    bz = np.asarray(bz, dtype=float)
    pz = np.asarray(pz, dtype=float)
    h = np.zeros(bz.shape + (3, 3), dtype=complex)
    diag = params.detuning + pz - params.Ex
    h[..., 0, 0] = diag + bz
    h[..., 2, 2] = diag - bz
    h[..., 0, 2] = params.Ex
    h[..., 2, 0] = params.Ex
    return h


def _pulse_unitaries(params, bz, pz, duration, idealized):
    if idealized:
        u = unitary(build_rot_h(params, drive_on=True, idealized=True), duration)
        return np.broadcast_to(u, np.shape(bz) + (3, 3))
    h = _free_h_batch(params, bz, pz) + params.Omega * drive_coupling()
    w, v = np.linalg.eigh(h)
    return np.einsum("...ij,...j,...kj->...ik", v, np.exp(-1j * TWO_PI * w * duration), v.conj())


def sequence_traces(params: SpinParams, bz, pz, taus, kind="ramsey", idealized=True):
    """P0 versus free-evolution time for a batch of static field samples.

    Parameters
    ----------
    bz, pz : array_like, shape (R,) or (R, m)
        Field samples per run; a second axis gives one sample per free
        segment (m = 1 for Ramsey, 2 for Thermo Echo).
    taus : array_like, shape (T,)
        Total free-evolution times in microseconds.
    kind : {"ramsey", "thermo_echo"}

    Returns
    -------
    ndarray, shape (R, T)
        Same values as :func:`run_sequence` applied run by run.
    """
    if kind == "ramsey":
        fractions = np.array([1.0])
    elif kind == "thermo_echo":
        fractions = np.array([0.5, 0.5])
    else:
        raise ValueError(f"unknown sequence kind {kind!r}")
    m = fractions.size
    bz = np.atleast_1d(np.asarray(bz, dtype=float))
    pz = np.atleast_1d(np.asarray(pz, dtype=float))
    bz, pz = np.broadcast_arrays(bz, pz)
    if bz.ndim == 1:
        bz = np.repeat(bz[:, None], m, axis=1)
        pz = np.repeat(pz[:, None], m, axis=1)
    if bz.shape[1] != m:
        raise ValueError(f"{kind} needs {m} field samples per run, got {bz.shape[1]}")
    t_half = calibrate_pulse(params, "pi/2")
    w, v = np.linalg.eigh(_free_h_batch(params, bz, pz))
    half = _pulse_unitaries(params, bz[:, 0], pz[:, 0], t_half, idealized)
    last = _pulse_unitaries(params, bz[:, -1], pz[:, -1], t_half, idealized)
    if kind == "ramsey":
        pulses = np.stack([half, last], axis=1)
    else:
        t_two = calibrate_pulse(params, "2pi")
        mid = _pulse_unitaries(params, bz[:, 0], pz[:, 0], t_two, idealized)
        pulses = np.stack([half, mid, last], axis=1)
    return kernels.sequence_p0(
        np.ascontiguousarray(pulses), fractions, w, v, np.asarray(taus, dtype=float)
    )


def ramsey_closed_form(params: SpinParams, fields: FieldSample, tau):
    """Second-order Ramsey population 1/2 [1 - cos 2 pi (detuning + pz + bz^2 / 2 Ex) tau]."""
    if params.Ex <= 0:
        raise FormulaDomainError(
            "the closed form divides by Ex; use run_sequence for Ex = 0"
        )
    freq = params.detuning + fields.pz + fields.bz**2 / (2.0 * params.Ex)
    return 0.5 * (1.0 - np.cos(TWO_PI * freq * np.asarray(tau, dtype=float)))


def lab_frame_oracle(params: SpinParams, fields: FieldSample, seq: PulseSequence, dt=None):
    """P0 from the lab-frame Hamiltonian with an explicit 2 Omega cos(2 pi omega t) drive.

    No rotating-wave approximation: drive-on segments are integrated with
    midpoint piecewise-constant slices of width ``dt`` (default
    ``1 / (1000 omega)``); drive-off segments are constant and propagated
    exactly.  The carrier phase runs continuously from t = 0.
    """
    max_dt = 1.0 / (50.0 * params.omega)
    if dt is None:
        dt = 1.0 / (1000.0 * params.omega)
    if not 0 < dt <= max_dt:
        raise ValueError(f"dt = {dt!r} us does not resolve the carrier; need 0 < dt <= {max_dt:.3e}")
    h0 = build_lab_h(params, fields)
    coupling = drive_coupling()
    psi = ZERO.copy()
    t = 0.0
    for seg in seq.segments:
        if seg.drive and params.Omega > 0 and seg.duration > 0:
            n = max(1, int(math.ceil(seg.duration / dt - 1e-9)))
            psi = kernels.lab_propagate(h0, coupling, 2.0 * params.Omega, params.omega, t, seg.duration / n, n, psi)
        else:
            psi = propagate(h0, psi, seg.duration)
        t += seg.duration
    return float(abs(psi[1]) ** 2)


def ramsey_trace(params: SpinParams, taus, fields: FieldSample = ZERO_FIELDS, kind="ramsey", idealized=True):
    """Single-run P0(tau) trace; convenience wrapper over :func:`sequence_traces`."""
    return sequence_traces(params, [fields.bz], [fields.pz], taus, kind, idealized)[0]

