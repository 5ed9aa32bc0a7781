# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: cyclic Jacobi eigensolver and pairwise RBF routines.

Mirrors ``lur._core_py`` function for function; ``lur._backend`` picks one.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, exp

cnp.import_array()


def jacobi_eigh(double[:, ::1] a_in, double tol=1e-15, int max_sweeps=100):
    """Unsorted eigenpairs of a symmetric matrix by cyclic Jacobi rotations."""
    cdef Py_ssize_t n = a_in.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a_arr = np.array(a_in, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] v_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t p, q, k
    cdef int sweep
    cdef double off, norm, apq, tau, t, c, s, akp, akq
    with nogil:
        norm = 0.0
        for p in range(n):
            for q in range(n):
                norm += a[p, q] * a[p, q]
        norm = sqrt(norm)
        for sweep in range(max_sweeps):
            off = 0.0
            for p in range(n):
                for q in range(p + 1, n):
                    off += a[p, q] * a[p, q]
            if sqrt(2.0 * off) <= tol * norm or off == 0.0:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if tau >= 0:
                        t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                    else:
                        t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = t * c
                    for k in range(n):
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = c * akp - s * akq
                        a[k, q] = s * akp + c * akq
                    for k in range(n):
                        akp = a[p, k]
                        akq = a[q, k]
                        a[p, k] = c * akp - s * akq
                        a[q, k] = s * akp + c * akq
                    for k in range(n):
                        akp = v[k, p]
                        akq = v[k, q]
                        v[k, p] = c * akp - s * akq
                        v[k, q] = s * akp + c * akq
    return np.diagonal(a_arr).copy(), v_arr


def sq_dists(double[:, ::1] x):
    """P x P matrix of squared Euclidean distances between rows."""
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc, d
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(m):
                    d = x[i, k] - x[j, k]
                    acc += d * d
                out[i, j] = acc
                out[j, i] = acc
    return out_arr


def kde_repulsion(double[:, ::1] x, double h):
    """Row i: sum_j grad_i k(x_i, x_j) / sum_j k(x_i, x_j) for the RBF kernel."""
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] d2_arr = sq_dists(x)
    cdef double[:, ::1] d2 = d2_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double inv_h2 = 1.0 / (h * h)
    cdef double kij, denom
    with nogil:
        for i in range(n):
            denom = 0.0
            for j in range(n):
                kij = exp(-0.5 * d2[i, j] * inv_h2)
                denom += kij
                if j == i:
                    continue
                for k in range(m):
                    out[i, k] -= kij * (x[i, k] - x[j, k]) * inv_h2
            for k in range(m):
                out[i, k] /= denom
    return out_arr
