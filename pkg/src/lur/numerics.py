"""Dense numeric primitives: softmax, cross-entropy, symmetric eigensolver, RNG.

Matrices are plain float64 numpy arrays. Random streams come from numpy's
counter-based Philox bit generator, so a seed fully determines the stream.
"""
import numpy as np

from ._backend import core
from .errors import InvalidInputError, NumericError

# Cyclic Jacobi is used up to this size; LAPACK (numpy.linalg.eigh) above.
JACOBI_MAX_SIZE = 64


def make_rng(seed, *stream):
    """Return a ``numpy.random.Generator`` backed by Philox.

    Extra integers in ``stream`` select an independent sub-stream, e.g.
    ``make_rng(seed, 3)`` for the fourth ensemble member.
    """
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite values")


def softmax(logits, axis=-1):
    """Numerically stable softmax along ``axis``."""
    logits = np.asarray(logits, dtype=np.float64)
    _check_finite(logits, "logits")
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy_with_grad(logits, label):
    """Cross-entropy of one logit vector against ``label``.

    Returns ``(loss, grad)`` where ``grad = softmax(logits) - onehot(label)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    _check_finite(logits, "logits")
    n_classes = logits.shape[-1]
    if not 0 <= label < n_classes:
        raise IndexError(f"label {label} out of range for {n_classes} classes")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def batch_cross_entropy(logits, labels):
    """Per-row cross-entropy and gradient for an ``(B, C)`` logit batch."""
    logp = log_softmax(logits)
    rows = np.arange(logits.shape[0])
    losses = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return losses, grad


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def sym_eigh(a, method="auto"):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_SIZE``). Returns ``(eigenvalues, eigenvectors)`` with the
    eigenvectors as orthonormal columns.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    _check_finite(a, "matrix")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > 1e-10 * scale:
        raise InvalidInputError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_SIZE else "lapack"
    if method == "jacobi":
        w, v = core.jacobi_eigh(a)
    elif method == "lapack":
        w, v = np.linalg.eigh(a)
    else:
        raise InvalidInputError(f"unknown eigensolver {method!r}")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
        raise NumericError("eigendecomposition produced non-finite values")
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]
