"""Compare the compiled and numpy kernel backends on ensemble-sized inputs.

Usage::

    python benchmarks/bench_kernels.py [--repeat N] [--json]
"""
import argparse
import json
import timeit

import numpy as np

from spinthermo import _kernels_py
from spinthermo.dynamics import _free_h_batch, _pulse_unitaries, calibrate_pulse
from spinthermo.noise import NoiseSpec, draw_fields_batch, sigma_from_t2
from spinthermo.spinmodel import SpinParams, build_lab_h, drive_coupling

try:
    from spinthermo import _kernels as compiled
except ImportError:
    compiled = None


def ensemble_case(n_runs=1000, n_tau=601, kind="ramsey"):
    params = SpinParams.from_detuning(2.0, 16.5, Omega=10.0)
    bz, pz = draw_fields_batch(NoiseSpec(sigma_pz=sigma_from_t2(1.8), b_max=1.0), n_runs, 1)
    m = 1 if kind == "ramsey" else 2
    bz = np.repeat(bz[:, None], m, axis=1)
    pz = np.repeat(pz[:, None], m, axis=1)
    w, v = np.linalg.eigh(_free_h_batch(params, bz, pz))
    half = _pulse_unitaries(params, bz[:, 0], pz[:, 0], calibrate_pulse(params), True)
    if kind == "ramsey":
        pulses = np.stack([half, half], axis=1)
    else:
        two = _pulse_unitaries(params, bz[:, 0], pz[:, 0], calibrate_pulse(params, "2pi"), True)
        pulses = np.stack([half, two, half], axis=1)
    fractions = np.full(m, 1.0 / m)
    return np.ascontiguousarray(pulses), fractions, w, v, np.linspace(0, 6, n_tau)


def lab_case(n_steps=50_000):
    params = SpinParams.from_detuning(2.0, 16.5, Omega=5.0)
    psi = np.array([0, 1, 0], dtype=complex)
    return build_lab_h(params), drive_coupling(), 10.0, params.omega, 0.0, 1e-3 / params.omega, n_steps, psi


def best_time(func, args, repeat):
    return min(timeit.repeat(lambda: func(*args), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", action="store_true", help="print results as JSON")
    args = parser.parse_args(argv)

    cases = {
        "sequence_p0 ramsey 1000x601": ("sequence_p0", ensemble_case()),
        "sequence_p0 echo 1000x601": ("sequence_p0", ensemble_case(kind="thermo_echo")),
        "lab_propagate 50k steps": ("lab_propagate", lab_case()),
    }
    rows = []
    for label, (name, case) in cases.items():
        py = best_time(getattr(_kernels_py, name), case, args.repeat)
        cy = best_time(getattr(compiled, name), case, args.repeat) if compiled else None
        if compiled:
            gap = np.max(np.abs(getattr(compiled, name)(*case) - getattr(_kernels_py, name)(*case)))
        else:
            gap = None
        rows.append({"case": label, "python_s": py, "cython_s": cy, "speedup": py / cy if cy else None, "max_abs_diff": gap})

    if args.json:
        print(json.dumps(rows, indent=2, default=float))
        return
    print(f"{'case':32s} {'python (s)':>11s} {'cython (s)':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for r in rows:
        cy = f"{r['cython_s']:11.4f}" if r["cython_s"] is not None else f"{'n/a':>11s}"
        sp = f"{r['speedup']:8.1f}" if r["speedup"] is not None else f"{'n/a':>8s}"
        diff = f"{r['max_abs_diff']:11.1e}" if r["max_abs_diff"] is not None else f"{'n/a':>11s}"
        print(f"{r['case']:32s} {r['python_s']:11.4f} {cy} {sp} {diff}")


if __name__ == "__main__":
    main()
