"""Pure-Python/numpy fallback for the compiled kernels in ``_core.pyx``."""
import numpy as np


def jacobi_eigh(a_in, tol=1e-15, max_sweeps=100):
    a = np.array(a_in, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.sqrt(np.sum(a * a))
    iu = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        off = float(np.sum(a[iu] ** 2))
        if np.sqrt(2.0 * off) <= tol * norm or off == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                a[:, p] = c * col_p - s * a[:, q]
                a[:, q] = s * col_p + c * a[:, q]
                row_p = a[p, :].copy()
                a[p, :] = c * row_p - s * a[q, :]
                a[q, :] = s * row_p + c * a[q, :]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
    return np.diagonal(a).copy(), v


def sq_dists(x):
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kde_repulsion(x, h):
    x = np.asarray(x, dtype=np.float64)
    k = np.exp(-0.5 * sq_dists(x) / (h * h))
    diff = x[:, None, :] - x[None, :, :]
    num = -np.einsum("ij,ijk->ik", k, diff) / (h * h)
    return num / k.sum(axis=1, keepdims=True)
