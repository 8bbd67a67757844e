"""Pure-numpy reference implementation of the hot propagation kernels.

Mirrors ``_kernels.pyx`` function for function; used whenever the compiled
extension is unavailable or ``SPINTHERMO_PURE_PYTHON`` is set.
"""
import numpy as np

TWO_PI = 2.0 * np.pi
LAB_CHUNK = 8192


def sequence_p0(pulses, fractions, w, V, taus):
    """|<0|psi>|^2 after alternating pulses and free evolutions.

    Parameters
    ----------
    pulses : (R, m+1, 3, 3) complex
        Pulse unitaries per run, applied first to last.
    fractions : (m,) float
        Free segment k lasts ``fractions[k] * tau``.
    w, V : (R, m, 3) float and (R, m, 3, 3) complex
        Eigen-decomposition of each run's free Hamiltonian for segment k.
    taus : (T,) float
        Total free-evolution times in microseconds.

    Returns
    -------
    (R, T) float
    """
    pulses = np.asarray(pulses, dtype=np.complex128)
    w = np.asarray(w, dtype=np.float64)
    V = np.asarray(V, dtype=np.complex128)
    taus = np.asarray(taus, dtype=np.float64)
    n_runs = pulses.shape[0]
    psi = np.broadcast_to(pulses[:, 0, :, 1][:, None, :], (n_runs, taus.size, 3)).copy()
    for k, frac in enumerate(fractions):
        vk = V[:, k]
        coeff = np.einsum("rji,rtj->rti", vk.conj(), psi)
        phase = np.exp(-1j * TWO_PI * frac * w[:, k, None, :] * taus[None, :, None])
        psi = np.einsum("rij,rtj->rti", vk, coeff * phase)
        psi = np.einsum("rij,rtj->rti", pulses[:, k + 1], psi)
    return np.abs(psi[:, :, 1]) ** 2


def lab_propagate(h_static, coupling, amp, freq, t0, dt, n_steps, psi):
    """Midpoint piecewise-constant propagation under h_static + amp*cos(2 pi freq t)*coupling."""
    h_static = np.asarray(h_static, dtype=np.complex128)
    coupling = np.asarray(coupling, dtype=np.complex128)
    psi = np.array(psi, dtype=np.complex128)
    for start in range(0, n_steps, LAB_CHUNK):
        k = np.arange(start, min(start + LAB_CHUNK, n_steps))
        t_mid = t0 + (k + 0.5) * dt
        h = h_static[None] + (amp * np.cos(TWO_PI * freq * t_mid))[:, None, None] * coupling[None]
        evals, evecs = np.linalg.eigh(h)
        phase = np.exp(-1j * TWO_PI * dt * evals)
        steps = np.einsum("kij,kj,klj->kil", evecs, phase, evecs.conj())
        for u in steps:
            psi = u @ psi
    return psi
