# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled propagation kernels; see ``_kernels_py`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, M_PI
from scipy.linalg.cython_lapack cimport zheev

cnp.import_array()

ctypedef double complex cplx


cdef inline void matvec3(const cplx[:, :] m, cplx* x, cplx* out) noexcept nogil:
    cdef int i
    for i in range(3):
        out[i] = m[i, 0] * x[0] + m[i, 1] * x[1] + m[i, 2] * x[2]


def sequence_p0(pulses, fractions, w, V, taus):
    cdef cplx[:, :, :, ::1] P = np.ascontiguousarray(pulses, dtype=np.complex128)
    cdef double[::1] frac = np.ascontiguousarray(fractions, dtype=np.float64)
    cdef double[:, :, ::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef cplx[:, :, :, ::1] VV = np.ascontiguousarray(V, dtype=np.complex128)
    cdef double[::1] T = np.ascontiguousarray(taus, dtype=np.float64)
    cdef Py_ssize_t n_runs = P.shape[0], n_seg = frac.shape[0], n_tau = T.shape[0]
    out_arr = np.empty((n_runs, n_tau), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, t, k, i
    cdef cplx psi[3]
    cdef cplx tmp[3]
    cdef double ang
    with nogil:
        for r in range(n_runs):
            for t in range(n_tau):
                for i in range(3):
                    psi[i] = P[r, 0, i, 1]
                for k in range(n_seg):
                    # tmp = V^H psi
                    for i in range(3):
                        tmp[i] = (VV[r, k, 0, i].conjugate() * psi[0]
                                  + VV[r, k, 1, i].conjugate() * psi[1]
                                  + VV[r, k, 2, i].conjugate() * psi[2])
                        ang = -2.0 * M_PI * frac[k] * W[r, k, i] * T[t]
                        tmp[i] = tmp[i] * (cos(ang) + 1j * sin(ang))
                    matvec3(VV[r, k], tmp, psi)
                    for i in range(3):
                        tmp[i] = psi[i]
                    matvec3(P[r, k + 1], tmp, psi)
                out[r, t] = psi[1].real * psi[1].real + psi[1].imag * psi[1].imag
    return out_arr


def lab_propagate(h_static, coupling, double amp, double freq, double t0,
                  double dt, Py_ssize_t n_steps, psi):
    cdef cplx[:, ::1] H0 = np.ascontiguousarray(h_static, dtype=np.complex128)
    cdef cplx[:, ::1] X = np.ascontiguousarray(coupling, dtype=np.complex128)
    out_arr = np.array(psi, dtype=np.complex128)
    cdef cplx[::1] state = out_arr
    cdef cplx a[9]
    cdef cplx work[64]
    cdef double rwork[7]
    cdef double evals[3]
    cdef cplx tmp[3]
    cdef cplx ph[3]
    cdef int n = 3, lda = 3, lwork = 64, info = 0
    cdef char jobz = b'V', uplo = b'L'
    cdef Py_ssize_t k, i, j
    cdef double c, ang
    with nogil:
        for k in range(n_steps):
            c = amp * cos(2.0 * M_PI * freq * (t0 + (k + 0.5) * dt))
            # column-major: a[i + 3 j] = H[i, j]
            for i in range(3):
                for j in range(3):
                    a[i + 3 * j] = H0[i, j] + c * X[i, j]
            zheev(&jobz, &uplo, &n, a, &lda, evals, work, &lwork, rwork, &info)
            if info != 0:
                break
            # state <- V diag(exp(-i 2 pi dt lambda)) V^H state, V[i, j] = a[i + 3 j]
            for j in range(3):
                ang = -2.0 * M_PI * dt * evals[j]
                ph[j] = cos(ang) + 1j * sin(ang)
                tmp[j] = (a[0 + 3 * j].conjugate() * state[0]
                          + a[1 + 3 * j].conjugate() * state[1]
                          + a[2 + 3 * j].conjugate() * state[2]) * ph[j]
            for i in range(3):
                state[i] = a[i] * tmp[0] + a[i + 3] * tmp[1] + a[i + 6] * tmp[2]
    if info != 0:
        raise np.linalg.LinAlgError(f"zheev failed with info={info}")
    return out_arr
