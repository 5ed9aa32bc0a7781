"""Particle updates with kernel repulsion.

Each particle is a flattened parameter vector. A step moves every particle
along ``attraction - repulsion`` where the attraction is the log-posterior
gradient and the repulsion is an estimate of the score of the particle
distribution itself (KDE, Stein gradient estimator or its spectral variant).
Subtracting that score pushes particles out of crowded regions.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from ._backend import core
from .errors import InvalidInputError, NumericError, TrainingDiverged
from .numerics import sym_eigh

ESTIMATORS = ("kde", "sge", "ssge")
# "auto": median heuristic for KDE, median pairwise distance for SGE/SSGE.
BANDWIDTH_MODES = ("auto", "median_heuristic", "median_distance", "fixed")


@dataclass(frozen=True)
class KernelConfig:
    estimator: str = "kde"
    bandwidth_mode: str = "auto"
    fixed_bandwidth: float = 1.0
    sge_ridge: float = 1.0
    ssge_eigen_threshold: float = 0.01
    space: str = "weight"  # or "function": repulse on logits over a fixed batch

    def validate(self):
        if self.estimator not in ESTIMATORS:
            raise InvalidInputError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.bandwidth_mode not in BANDWIDTH_MODES:
            raise InvalidInputError(f"unknown bandwidth_mode {self.bandwidth_mode!r}")
        if self.bandwidth_mode == "fixed" and not self.fixed_bandwidth > 0:
            raise InvalidInputError("fixed_bandwidth must be > 0")
        if not self.sge_ridge > 0:
            raise InvalidInputError("sge_ridge must be > 0")
        if not 0 < self.ssge_eigen_threshold <= 1:
            raise InvalidInputError("ssge_eigen_threshold must lie in (0, 1]")
        if self.space not in ("weight", "function"):
            raise InvalidInputError(f"space must be 'weight' or 'function', got {self.space!r}")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PriorConfig:
    """Isotropic Gaussian prior over each particle."""

    stdev: float = 1.0

    def grad_log_prior(self, particles):
        return -particles / self.stdev**2


def _as_particles(particles):
    x = np.ascontiguousarray(particles, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InvalidInputError(f"particles must be a P x M array, got shape {x.shape}")
    return x


def pairwise_sq_dists(particles):
    return core.sq_dists(_as_particles(particles))


def rbf_gram(particles, h):
    if not h > 0:
        raise InvalidInputError("bandwidth must be > 0")
    return np.exp(-pairwise_sq_dists(particles) / (2.0 * h * h))


def median_bandwidth(particles):
    """Median heuristic ``sqrt(med / (2 ln(P + 1)))``; 1.0 if all particles coincide."""
    x = _as_particles(particles)
    p = x.shape[0]
    if p < 2:
        raise InvalidInputError("median bandwidth needs at least two particles")
    d2 = pairwise_sq_dists(x)[np.triu_indices(p, 1)]
    med = float(np.median(d2))
    if med == 0.0:
        return 1.0
    return math.sqrt(med / (2.0 * math.log(p + 1)))


def median_distance(particles):
    """Median pairwise Euclidean distance; 1.0 if all particles coincide."""
    x = _as_particles(particles)
    p = x.shape[0]
    if p < 2:
        raise InvalidInputError("median distance needs at least two particles")
    med = float(np.median(pairwise_sq_dists(x)[np.triu_indices(p, 1)]))
    return math.sqrt(med) if med > 0 else 1.0


def bandwidth(particles, kernel):
    mode = kernel.bandwidth_mode
    if mode == "auto":
        mode = "median_heuristic" if kernel.estimator == "kde" else "median_distance"
    if mode == "fixed":
        return float(kernel.fixed_bandwidth)
    if mode == "median_distance":
        return median_distance(particles)
    return median_bandwidth(particles)


def repulsion_grad_kde(particles, h):
    """``grad_i log sum_j k(theta_i, theta_j)`` for every particle i."""
    if not h > 0:
        raise InvalidInputError("bandwidth must be > 0")
    return core.kde_repulsion(_as_particles(particles), float(h))


def _sum_grad_second_arg(x, k, h):
    # row i: sum_j grad_{x_j} k(x_i, x_j) = sum_j k_ij (x_i - x_j) / h^2
    return (k.sum(axis=1)[:, None] * x - k @ x) / (h * h)


def score_sge(particles, ridge, h=None):
    """Stein gradient estimate of ``grad log q`` at each particle.

    ``-(K + ridge I)^{-1} <grad, K>`` with an RBF Gram matrix ``K``.
    """
    x = _as_particles(particles)
    p = x.shape[0]
    if p < 2:
        raise InvalidInputError("score estimation needs at least two particles")
    if not ridge > 0:
        raise InvalidInputError("ridge must be > 0")
    h = median_distance(x) if h is None else h
    k = rbf_gram(x, h)
    try:
        return -np.linalg.solve(k + ridge * np.eye(p), _sum_grad_second_arg(x, k, h))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"K + ridge*I is singular ({exc}); increase sge_ridge") from None


def score_ssge(particles, threshold=0.01, h=None):
    """Spectral Stein gradient estimate of ``grad log q`` at each particle.

    Eigenfunctions of the RBF kernel are approximated by Nystrom from the
    Gram matrix; eigenpairs with eigenvalue below ``threshold * max`` are
    dropped.
    """
    x = _as_particles(particles)
    p = x.shape[0]
    if p < 2:
        raise InvalidInputError("score estimation needs at least two particles")
    h = median_distance(x) if h is None else h
    k = rbf_gram(x, h)
    lam, u = sym_eigh(k)
    keep = (lam >= threshold * lam[0]) & (lam > 0)
    if not np.any(keep):
        raise NumericError("no Gram eigenvalue above the SSGE threshold; lower ssge_eigen_threshold")
    lam, u = lam[keep], u[:, keep]
    sqrt_p = math.sqrt(p)
    psi = sqrt_p * (k @ u) / lam  # (P, J) eigenfunctions at the particles
    # sum_j grad psi_m(x_j) = (sqrt(P)/lam_m) sum_k u_km sum_j grad_1 k(x_j, x_k)
    grad_sum = _sum_grad_second_arg(x, k, h)  # row k: sum_j grad_{x_j} k(x_j, x_k)
    beta = -(sqrt_p / p) * (u.T @ grad_sum) / lam[:, None]  # (J, M)
    return psi @ beta


def estimate_repulsion(particles, kernel):
    """Repulsion direction for each particle under ``kernel`` (a score estimate)."""
    x = _as_particles(particles)
    h = bandwidth(x, kernel)
    if kernel.estimator == "kde":
        return repulsion_grad_kde(x, h)
    if kernel.estimator == "sge":
        return score_sge(x, kernel.sge_ridge, h)
    if kernel.estimator == "ssge":
        return score_ssge(x, kernel.ssge_eigen_threshold, h)
    raise InvalidInputError(f"unknown estimator {kernel.estimator!r}")


def repulsive_step(particles, attraction_grads, kernel, step_size, repulsion=None):
    """One attraction-repulsion update; returns the new ``(P, M)`` particle array.

    ``repulsion`` may be passed precomputed (e.g. pulled back from function
    space); otherwise it is estimated from ``particles`` with ``kernel``.
    """
    x = _as_particles(particles)
    attraction = np.asarray(attraction_grads, dtype=np.float64).reshape(x.shape)
    if step_size == 0:
        return x.copy()
    if repulsion is None:
        repulsion = estimate_repulsion(x, kernel)
    new = x + step_size * (attraction - repulsion)
    if not np.all(np.isfinite(new)):
        raise TrainingDiverged("non-finite particle update")
    return new


def mean_pairwise_distance(particles):
    x = _as_particles(particles)
    p = x.shape[0]
    d = np.sqrt(pairwise_sq_dists(x)[np.triu_indices(p, 1)])
    return float(d.mean())
