"""Spin-1 Hamiltonians of a basal divacancy and its ODMR line positions.

All matrices are written in the {|up>, |0>, |down>} basis and carry
ordinary-frequency units (MHz).  Time is in microseconds, so a constant
Hamiltonian ``H`` evolves a state by ``exp(-2j*pi*H*t)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BOHR_MAGNETON_MHZ_PER_GAUSS",
    "G_FACTOR",
    "MHZ_PER_GAUSS",
    "FieldSample",
    "SpinParams",
    "build_lab_h",
    "build_rot_h",
    "check_hermitian",
    "drive_coupling",
    "gauss_to_mhz",
    "odmr_lines",
    "spin1_operators",
]

G_FACTOR = 2.00
# mu_B / h in MHz per gauss (CODATA 2018: 13.996245 GHz/T)
BOHR_MAGNETON_MHZ_PER_GAUSS = 1.3996245
MHZ_PER_GAUSS = G_FACTOR * BOHR_MAGNETON_MHZ_PER_GAUSS

SQRT1_2 = 1.0 / math.sqrt(2.0)
HERMITIAN_RTOL = 1e-12


class RotatingFrameWarning(UserWarning):
    """Detuning too large compared with the transition frequency for the RWA."""


@dataclass(frozen=True)
class SpinParams:
    """Static defect and drive parameters, all in MHz.

    Parameters
    ----------
    D : float
        Zero-field splitting.
    Ex : float
        Transverse (electric) splitting coupling |up> and |down>.
    omega : float
        Microwave carrier frequency.
    Omega : float
        Rabi frequency of the drive (0 means drive off).
    """

    D: float
    Ex: float
    omega: float
    Omega: float = 0.0

    def __post_init__(self):
        for name in ("D", "Ex", "omega", "Omega"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.D <= 0:
            raise ValueError("D must be positive")
        if self.Ex < 0:
            raise ValueError("Ex must be non-negative")
        if self.Omega < 0:
            raise ValueError("Omega must be non-negative")
        if abs(self.detuning) > 0.01 * (self.D + self.Ex):
            warnings.warn(
                f"|detuning| = {abs(self.detuning):g} MHz exceeds 1% of D+Ex; "
                "rotating-wave results may be inaccurate",
                RotatingFrameWarning,
                stacklevel=3,
            )

    @property
    def detuning(self) -> float:
        """Drive detuning from the |0> <-> |+> transition, D + Ex - omega."""
        return self.D + self.Ex - self.omega

    @classmethod
    def from_detuning(cls, detuning, Ex, D=1400.0, Omega=0.0):
        """Build parameters whose carrier sits ``detuning`` below D + Ex."""
        return cls(D=D, Ex=Ex, omega=D + Ex - detuning, Omega=Omega)

    def replace(self, **changes) -> "SpinParams":
        values = dict(D=self.D, Ex=self.Ex, omega=self.omega, Omega=self.Omega)
        values.update(changes)
        return SpinParams(**values)


@dataclass(frozen=True)
class FieldSample:
    """One static realisation of the fluctuating fields, in MHz.

    ``bz`` is the longitudinal magnetic term g*mu_B*B_z/h and ``pz`` the
    electric term d_z*Pi_z/h.
    """

    bz: float = 0.0
    pz: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.bz) and math.isfinite(self.pz)):
            raise ValueError("field sample must be finite")


ZERO_FIELDS = FieldSample()


def gauss_to_mhz(b_gauss):
    """Axial Zeeman term in MHz for a field given in gauss."""
    return MHZ_PER_GAUSS * b_gauss


def spin1_operators():
    """Return the spin-1 matrices ``(Sx, Sy, Sz)`` in the {up, 0, down} basis."""
    s = SQRT1_2
    sx = np.array([[0, s, 0], [s, 0, s], [0, s, 0]], dtype=complex)
    sy = np.array([[0, -1j * s, 0], [1j * s, 0, -1j * s], [0, 1j * s, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


def check_hermitian(h, rtol=HERMITIAN_RTOL):
    """Raise ``ValueError`` unless ``h`` is Hermitian to ``rtol`` relative to max|h|."""
    h = np.asarray(h)
    if h.shape[-2:] != (3, 3):
        raise ValueError(f"expected 3x3 operator(s), got shape {h.shape}")
    scale = np.max(np.abs(h)) if h.size else 0.0
    err = np.max(np.abs(h - np.swapaxes(h, -1, -2).conj())) if h.size else 0.0
    if err > rtol * max(scale, 1e-300) and err > 0:
        raise ValueError(
            f"operator is not Hermitian: max|H - H^dagger| = {err:.3e} "
            f"(scale {scale:.3e}, rtol {rtol:g})"
        )


def build_lab_h(params: SpinParams, fields: FieldSample = ZERO_FIELDS):
    """Static lab-frame Hamiltonian D Sz^2 + Ex (Sx^2 - Sy^2) + bz Sz + pz Sz^2."""
    d = params.D + fields.pz
    return np.array(
        [
            [d + fields.bz, 0.0, params.Ex],
            [0.0, 0.0, 0.0],
            [params.Ex, 0.0, d - fields.bz],
        ],
        dtype=complex,
    )


def drive_coupling():
    """Unit-amplitude coupling of |0> to |+> = (|up> + |down>)/sqrt(2)."""
    s = SQRT1_2
    return np.array([[0, s, 0], [s, 0, s], [0, s, 0]], dtype=complex)


def build_rot_h(params: SpinParams, fields: FieldSample = ZERO_FIELDS, drive_on=False, idealized=False):
    """Hamiltonian in the frame rotating at the carrier, under the RWA.

    With ``drive_on`` the |0> <-> |+> coupling is ``Omega``.  ``idealized``
    keeps only the drive and the Ex structure during a pulse, dropping the
    detuning and both field terms (valid when Omega dominates them).
    """
    ex = params.Ex
    if drive_on and idealized:
        diag = -ex
        bz = 0.0
    else:
        diag = params.detuning + fields.pz - ex
        bz = fields.bz
    h = np.array(
        [
            [diag + bz, 0.0, ex],
            [0.0, 0.0, 0.0],
            [ex, 0.0, diag - bz],
        ],
        dtype=complex,
    )
    if drive_on:
        h += params.Omega * drive_coupling()
    return h


def odmr_lines(params: SpinParams, bz_freq):
    """Transition frequencies ``(f_minus, f_plus)`` from |0> to the upper doublet.

    ``bz_freq`` is the axial Zeeman term in MHz; use :func:`gauss_to_mhz`
    to convert from gauss.
    """
    split = np.hypot(params.Ex, bz_freq)
    return params.D - split, params.D + split
