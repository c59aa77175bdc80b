"""Source/target discrepancy estimates.

Classification: a domain classifier separates source features (label 0) from
target features (label 1); its logistic loss ``eps_hat`` stands in for the
domain error and ``disc = 2 (1 - eps_hat)``.

Regression (squared loss): ``disc`` is the largest-magnitude eigenvalue of
the difference of feature second-moment matrices, found by power iteration.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .nn import logistic_loss

POWER_MAX_ITERS = 20
POWER_TOL = 1e-7


@dataclass(frozen=True)
class DiscEstimate:
    value: float
    kind: str
    domain_index: int


def domain_classifier_error(hd_logits, is_target):
    """Mean logistic loss of a domain classifier (target = 1, source = 0)."""
    logits = np.asarray(hd_logits, dtype=np.float64).ravel()
    labels = np.asarray(is_target, dtype=bool).ravel()
    if logits.size == 0:
        raise InvalidInputError("empty batch")
    if logits.shape != labels.shape:
        raise InvalidInputError("logits and labels differ in length")
    loss, _ = logistic_loss(logits, labels)
    return loss


def disc_classification(eps_hat):
    if eps_hat < 0:
        raise InvalidInputError("eps_hat must be non-negative")
    return max(0.0, 2.0 * (1.0 - eps_hat))


def second_moment(features):
    """``F^T F / m`` for an m x d feature batch."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise InvalidInputError("need a non-empty 2-D feature batch")
    M = F.T @ F / F.shape[0]
    # exact symmetry; the matmul can differ in the last bit across the diagonal
    return 0.5 * (M + M.T)


def _start_vector(d, seed):
    v = np.random.default_rng(seed).normal(size=d)
    return v / np.linalg.norm(v)


def power_iteration_signed(M, max_iters=POWER_MAX_ITERS, tol=POWER_TOL, seed=0):
    """Like ``power_iteration`` but keeps the sign of the eigenvalue estimate."""
    M = np.ascontiguousarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got {M.shape}")
    if max_iters < 1:
        raise InvalidInputError("max_iters must be >= 1")
    lam, v, _ = _kernels.power_iteration(M, _start_vector(M.shape[0], seed), int(max_iters), float(tol))
    return float(lam), v


def power_iteration(M, max_iters=POWER_MAX_ITERS, tol=POWER_TOL, seed=0):
    """(|lambda|, v) for the eigenvalue of M with the largest magnitude.

    Starts from a seeded random unit vector; stops once successive Rayleigh
    quotients differ by less than ``tol`` or after ``max_iters`` steps. A zero
    matrix gives ``(0.0, start vector)``.
    """
    lam, v = power_iteration_signed(M, max_iters, tol, seed)
    return abs(lam), v


def disc_regression(m_target, m_source, max_iters=POWER_MAX_ITERS, tol=POWER_TOL, seed=0):
    m_target = np.asarray(m_target, dtype=np.float64)
    m_source = np.asarray(m_source, dtype=np.float64)
    if m_target.shape != m_source.shape:
        raise InvalidInputError(f"dimension mismatch: {m_target.shape} vs {m_source.shape}")
    return power_iteration(m_target - m_source, max_iters, tol, seed)[0]


def disc_regression_with_grad(f_target, f_source, max_iters=POWER_MAX_ITERS, tol=POWER_TOL, seed=0):
    """disc and its gradient w.r.t. both feature batches.

    With ``lambda = v^T (M_T - M_S) v`` at the converged eigenvector,
    ``d|lambda|/dM_T = sign(lambda) v v^T`` and ``d(F^T F / m)/dF`` maps a
    symmetric G to ``2 F G / m``.
    """
    D = second_moment(f_target) - second_moment(f_source)
    lam, v = power_iteration_signed(D, max_iters, tol, seed)
    s = np.sign(lam)
    Fv_t = f_target @ v
    Fv_s = f_source @ v
    d_t = (2.0 * s / f_target.shape[0]) * np.outer(Fv_t, v)
    d_s = (-2.0 * s / f_source.shape[0]) * np.outer(Fv_s, v)
    return abs(lam), d_t, d_s
