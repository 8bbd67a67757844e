import os
import subprocess
import sys

import numpy as np
import pytest

from spinthermo import _kernels_py, kernels
from spinthermo.dynamics import unitary

try:
    from spinthermo import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def random_inputs(rng, runs=5, segments=2, n_tau=17):
    def rand_u():
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        return unitary((a + a.conj().T) / 2, 0.1)

    pulses = np.array([[rand_u() for _ in range(segments + 1)] for _ in range(runs)])
    w = rng.normal(size=(runs, segments, 3))
    v = np.empty((runs, segments, 3, 3), dtype=complex)
    for r in range(runs):
        for s in range(segments):
            a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
            v[r, s] = np.linalg.eigh(a + a.conj().T)[1]
    fractions = np.full(segments, 1.0 / segments)
    taus = np.linspace(0, 3, n_tau)
    return pulses, fractions, w, v, taus


@needs_ext
def test_sequence_p0_parity():
    rng = np.random.default_rng(0)
    for segments in (1, 2):
        args = random_inputs(rng, segments=segments)
        np.testing.assert_allclose(compiled.sequence_p0(*args), _kernels_py.sequence_p0(*args), atol=1e-13)


@needs_ext
def test_lab_propagate_parity():
    rng = np.random.default_rng(1)
    h = np.diag([1400.0, 0.0, 1400.0]).astype(complex)
    h[0, 2] = h[2, 0] = 16.5
    c = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / np.sqrt(2)
    psi = rng.normal(size=3) + 1j * rng.normal(size=3)
    psi /= np.linalg.norm(psi)
    args = (h, c, 10.0, 1414.5, 0.013, 1e-3 / 1414.5, 20_000, psi)
    a, b = compiled.lab_propagate(*args), _kernels_py.lab_propagate(*args)
    np.testing.assert_allclose(a, b, atol=1e-10)
    assert abs(np.linalg.norm(a) - 1) < 1e-10


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    forced = bool(os.environ.get("SPINTHERMO_PURE_PYTHON"))
    assert kernels.BACKEND == ("cython" if compiled is not None and not forced else "python")


def test_fallback_selected_by_environment():
    env = dict(os.environ, SPINTHERMO_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import spinthermo.kernels as k; print(k.BACKEND)"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "python"
