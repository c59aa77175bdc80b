"""Domain-weight projection onto the probability simplex.

``darn_project`` solves

    min_{alpha in simplex}  -<z, alpha> + ||alpha||_2

by bisecting for the dual threshold ``nu`` with ``||[z - nu]_+||_2 = 1`` and
normalising the positive part. With ``z = -g / tau`` this is the inner
minimisation of ``<g, alpha> + tau * ||alpha||_2``.

The Jacobian d alpha / d z has a two-term closed form on the support, so a
Jacobian-vector product costs O(k).
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegeneratePointError, InvalidInputError

DEFAULT_TOL = 1e-12
# tolerances at or below this get a closed-form refinement to machine precision
_POLISH_BELOW = 1e-6


@dataclass(frozen=True)
class ProjectionResult:
    alpha: np.ndarray
    nu: float
    residual_norm: float
    n_iter: int = 0

    @property
    def support(self):
        return np.flatnonzero(self.alpha > 0)


def _as_scores(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InvalidInputError(f"expected a non-empty 1-D score vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("score vector contains non-finite entries")
    return z


def _polish(w, nu):
    # On a fixed support S the threshold solves sum_S (w - nu)^2 = 1 exactly:
    # nu = mean_S - sqrt(|S| - |S|^2 var_S) / |S|. Re-derive S from the new nu
    # until it stops changing; this settles entries sitting on the threshold.
    for _ in range(4):
        s = w > nu
        ws = w[s]
        n = ws.size
        dev = ws - ws.mean()
        A = n - n * float(dev @ dev)
        if A <= 0:
            return nu
        exact = ws.mean() - math.sqrt(A) / n
        if np.array_equal(w > exact, s):
            return exact
        nu = exact
    return nu


def _find_nu_shifted(z, tol):
    # Bisect in coordinates where max(z) == 0 so the bracket and the returned
    # threshold keep full precision even for large constant offsets.
    zmax = z.max()
    w = z - zmax
    nu_w, n_iter = _kernels.bisect_nu(w, tol)
    nu_w = _polish(w, float(nu_w)) if tol <= _POLISH_BELOW else float(nu_w)
    return w, nu_w, zmax, int(n_iter)


def find_nu(z, tol=DEFAULT_TOL):
    """Threshold ``nu`` with ``||[z - nu]_+||_2 == 1``, found by bisection
    on ``[min(z) - 1, max(z)]``."""
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    z = _as_scores(z)
    if z.size == 1:
        return float(z[0] - 1.0)
    _, nu_w, zmax, _ = _find_nu_shifted(z, tol)
    return nu_w + zmax


def max_bisection_steps(z, tol=DEFAULT_TOL):
    """Upper bound on the bisection steps ``find_nu`` takes for ``z``."""
    z = np.asarray(z, dtype=np.float64)
    return math.ceil(math.log2((z.max() - z.min() + 1.0) / tol))


def darn_project(z, tol=DEFAULT_TOL):
    z = _as_scores(z)
    if z.size == 1:
        return ProjectionResult(np.ones(1), float(z[0] - 1.0), 1.0, 0)
    w, nu_w, zmax, n_iter = _find_nu_shifted(z, tol)
    pos = w - nu_w
    # ties at the threshold are out of the support
    pos[pos <= 0] = 0.0
    alpha = pos / pos.sum()
    return ProjectionResult(alpha, nu_w + zmax, float(np.sqrt(pos @ pos)), n_iter)


def _support_terms(z, result):
    z = _as_scores(z)
    alpha = np.asarray(result.alpha, dtype=np.float64)
    if alpha.shape != z.shape:
        raise InvalidInputError("projection result does not match z")
    s = alpha > 0
    n = int(s.sum())
    zs = z[s]
    # A = (sum z)^2 - n (sum z^2 - 1) == n - n * sum (z - mean)^2, shift-free form
    dev = zs - zs.mean()
    A = n - n * float(dev @ dev)
    if not A > 0:
        raise DegeneratePointError(f"degenerate support (A={A:.3g})")
    # K = sum_S (z - nu) equals sqrt(A) at the exact threshold; using it avoids
    # cancellation in z - nu when z carries a large offset.
    K = math.sqrt(A)
    u = s / n - alpha * s
    return s.astype(np.float64), n, K, A, u


def darn_jacobian(z, result=None):
    """Dense ``J[i, j] = d alpha_i / d z_j`` at the current support."""
    if result is None:
        result = darn_project(z)
    if np.size(result.alpha) == 1:
        return np.zeros((1, 1))
    s, n, K, A, u = _support_terms(z, result)
    J = (np.diag(s) - np.outer(s, s) / n) / K
    J += (n / K) * np.outer(u, u)
    return J


def darn_jvp(z, result, v):
    """``J @ v`` in O(k) without forming J."""
    v = np.asarray(v, dtype=np.float64)
    if np.size(result.alpha) == 1:
        return np.zeros_like(v)
    s, n, K, A, u = _support_terms(z, result)
    if v.shape != s.shape:
        raise InvalidInputError("v does not match z")
    return s * (v - (s @ v) / n) / K + (n / K) * (u @ v) * u


def danskin_residual(z, result):
    """``J (z - alpha / ||alpha||_2)``; zero at an exact optimum.

    This is the extra gradient that back-propagating through the projection
    contributes on top of the envelope gradient ``alpha``.
    """
    z = _as_scores(z)
    alpha = result.alpha
    # J annihilates constants; centring keeps large offsets out of the product
    return darn_jvp(z, result, (z - z.max()) - alpha / np.linalg.norm(alpha))


def sparsemax_project(z):
    """Euclidean projection ``argmin ||z - alpha||_2^2`` onto the simplex."""
    z = _as_scores(z)
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, z.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(z - theta, 0.0)


def softmax(z):
    z = _as_scores(z)
    e = np.exp(z - z.max())
    return e / e.sum()


def aggregate_objective(g, alpha, tau):
    """Upper-bound value ``<g, alpha> + tau * ||alpha||_2``."""
    g = np.asarray(g, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if g.shape != alpha.shape:
        raise InvalidInputError(f"length mismatch: g {g.shape} vs alpha {alpha.shape}")
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    return float(g @ alpha + tau * np.linalg.norm(alpha))


def effective_sample_size(alpha, m):
    alpha = np.asarray(alpha, dtype=np.float64)
    if m < 1:
        raise InvalidInputError("m must be >= 1")
    return m / float(alpha @ alpha)
