"""Quasi-static field noise, seeded sampling and ensemble-averaged fringes.

Every random number is a pure function of ``(master_seed, segment,
run_index, dimension)``: a Philox block cipher is keyed by the master
seed and its counter is set from the segment and run index.  Ensembles are
therefore reproducible and independent of evaluation order or thread count.
"""
from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri

from .dynamics import PopulationSeries, sequence_traces
from .spinmodel import FieldSample, SpinParams

__all__ = [
    "DEFAULT_PROJECTION",
    "EnsembleConfig",
    "EnsembleSeries",
    "NoiseSpec",
    "draw_fields",
    "draw_fields_batch",
    "ensemble_average",
    "pairwise_sum",
    "project_applied_field",
    "sigma_from_t2",
    "t2_from_sigma",
]

# The c axis sits 109.5 deg from the sample normal, along which the coil field points.
DEFAULT_PROJECTION = math.cos(math.radians(109.5))

_DIM_PZ, _DIM_B_UNIFORM, _DIM_B_NORMAL = 0, 1, 2
_U53 = 2.0**-53


@dataclass(frozen=True)
class NoiseSpec:
    """Static noise model, all widths in MHz.

    Parameters
    ----------
    sigma_pz : float
        Standard deviation of the Gaussian electric term.
    b_max : float
        Half-width of the uniform applied magnetic field; projected onto the
        defect axis by ``projection``.
    sigma_bz : float
        Standard deviation of an additional Gaussian axial magnetic term,
        already expressed along the defect axis (not projected).
    projection : float
        Cosine between the applied field and the defect axis.
    """

    sigma_pz: float = 0.0
    b_max: float = 0.0
    sigma_bz: float = 0.0
    projection: float = DEFAULT_PROJECTION

    def __post_init__(self):
        for name in ("sigma_pz", "b_max", "sigma_bz"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
        if not abs(self.projection) <= 1:
            raise ValueError(f"|projection| must be <= 1, got {self.projection!r}")

    def replace(self, **changes) -> "NoiseSpec":
        values = asdict(self)
        values.update(changes)
        return NoiseSpec(**values)


@dataclass(frozen=True)
class EnsembleConfig:
    n_runs: int
    master_seed: int
    tau_grid: tuple

    def __post_init__(self):
        if int(self.n_runs) != self.n_runs or self.n_runs < 1:
            raise ValueError("n_runs must be an integer >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")
        taus = np.asarray(self.tau_grid, dtype=float)
        if taus.ndim != 1 or taus.size == 0:
            raise ValueError("tau_grid must be a non-empty 1-D sequence")
        if taus[0] < 0 or np.any(np.diff(taus) <= 0):
            raise ValueError("tau_grid must be non-negative and strictly increasing")
        object.__setattr__(self, "tau_grid", tuple(float(t) for t in taus))


@dataclass(frozen=True)
class EnsembleSeries(PopulationSeries):
    """Run-averaged P0(tau) with the provenance needed to regenerate it."""

    n_runs: int = 1
    master_seed: int = 0
    kind: str = "ramsey"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    params: SpinParams | None = None

    def provenance(self):
        return {
            "kind": self.kind,
            "n_runs": self.n_runs,
            "master_seed": self.master_seed,
            "noise": asdict(self.noise),
            "params": asdict(self.params) if self.params is not None else None,
        }


def project_applied_field(b_applied, spec: NoiseSpec = NoiseSpec()):
    """Axial component of a field applied along the sample normal."""
    return spec.projection * b_applied


def _uniforms(master_seed, run_index, segment=0):
    raw = np.random.Philox(key=int(master_seed), counter=[0, 0, int(segment), int(run_index)]).random_raw(4)
    # open interval (0, 1) so the inverse normal CDF stays finite
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


@functools.lru_cache(maxsize=64)
def _uniform_block(master_seed, n_runs, segment):
    block = np.empty((n_runs, 4))
    for i in range(n_runs):
        block[i] = _uniforms(master_seed, i, segment)
    block.setflags(write=False)
    return block


def _fields_from_uniforms(spec: NoiseSpec, u):
    u = np.asarray(u)
    pz = spec.sigma_pz * ndtri(u[..., _DIM_PZ])
    bz = spec.projection * spec.b_max * (2.0 * u[..., _DIM_B_UNIFORM] - 1.0)
    bz = bz + spec.sigma_bz * ndtri(u[..., _DIM_B_NORMAL])
    return bz, pz


def draw_fields(spec: NoiseSpec, run_index, master_seed, segment=0) -> FieldSample:
    """The static field sample of one run: pz ~ N(0, sigma_pz), applied b ~ U(-b_max, b_max)."""
    bz, pz = _fields_from_uniforms(spec, _uniforms(master_seed, run_index, segment))
    return FieldSample(bz=float(bz), pz=float(pz))


def draw_fields_batch(spec: NoiseSpec, n_runs, master_seed, segment=0):
    """``(bz, pz)`` arrays for runs ``0 .. n_runs-1``; identical to looping :func:`draw_fields`."""
    return _fields_from_uniforms(spec, _uniform_block(int(master_seed), int(n_runs), int(segment)))


def pairwise_sum(a):
    """Sum along axis 0 by fixed recursive halving (order depends only on the length)."""
    a = np.asarray(a)
    n = a.shape[0]
    if n <= 8:
        total = a[0].copy()
        for row in a[1:]:
            total = total + row
        return total
    half = n // 2
    return pairwise_sum(a[:half]) + pairwise_sum(a[half:])


def sigma_from_t2(t2):
    """Gaussian frequency spread (MHz) giving a quasi-static dephasing time ``t2`` (us)."""
    if not t2 > 0:
        raise ValueError(f"t2 must be positive, got {t2!r}")
    return 1.0 / (math.sqrt(2.0) * math.pi * t2)


def t2_from_sigma(sigma):
    """Quasi-static dephasing time (us) of a Gaussian frequency spread ``sigma`` (MHz)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    return 1.0 / (math.sqrt(2.0) * math.pi * sigma)


def ensemble_average(
    params: SpinParams,
    spec: NoiseSpec,
    config: EnsembleConfig,
    seq_kind="ramsey",
    *,
    idealized=True,
    resample=False,
    workers=1,
    chunk=128,
) -> EnsembleSeries:
    """Average P0(tau) over ``config.n_runs`` static noise realisations.

    Each run draws one field sample and keeps it for the whole sequence.
    With ``resample=True`` a Thermo Echo run draws a fresh sample for its
    second free segment.  ``workers`` only changes wall time; the result is
    bit-identical for any value.
    """
    taus = np.asarray(config.tau_grid)
    n = config.n_runs
    bz, pz = draw_fields_batch(spec, n, config.master_seed)
    if resample and seq_kind == "thermo_echo":
        bz2, pz2 = draw_fields_batch(spec, n, config.master_seed, segment=1)
        bz, pz = np.stack([bz, bz2], axis=1), np.stack([pz, pz2], axis=1)

    p0 = np.empty((n, taus.size))

    def work(lo):
        hi = min(lo + chunk, n)
        p0[lo:hi] = sequence_traces(params, bz[lo:hi], pz[lo:hi], taus, seq_kind, idealized)

    starts = range(0, n, chunk)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for lo in starts:
            work(lo)

    mean = pairwise_sum(p0) / n
    if n > 1:
        var = pairwise_sum((p0 - mean) ** 2) / (n - 1)
        stderr = np.sqrt(var / n)
    else:
        stderr = np.zeros_like(mean)
    return EnsembleSeries(
        taus=taus,
        p0=mean,
        stderr=stderr,
        n_runs=n,
        master_seed=int(config.master_seed),
        kind=seq_kind,
        noise=spec,
        params=params,
    )
