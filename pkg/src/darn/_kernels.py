"""Hot numeric kernels.

Each kernel has a numba-compiled loop version and a pure-numpy version with
identical signatures. The numba path is used when numba imports cleanly and
the environment variable ``DARN_DISABLE_NUMBA`` is not set to a true value.
Both implementations stay importable so they can be benchmarked and
cross-checked against each other in one process.
"""
import os

import numpy as np

_FLAG = os.environ.get("DARN_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _bisect_nu_np(w, tol):
    # w is shifted so that max(w) == 0; bracket [min(w) - 1, 0]
    lo = w.min() - 1.0
    hi = 0.0
    iters = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        pos = w - mid
        pos = pos[pos > 0]
        f = pos @ pos
        if f > 1.0:
            lo = mid
        else:
            hi = mid
        iters += 1
    return 0.5 * (lo + hi), iters


def _power_iteration_np(M, v0, max_iters, tol):
    v = v0.copy()
    lam = np.inf
    iters = 0
    for _ in range(max_iters):
        y = M @ v
        lam_new = float(v @ y)
        ny = np.sqrt(y @ y)
        iters += 1
        if ny == 0.0:
            return 0.0, v, iters
        v = y / ny
        if abs(lam_new - lam) < tol:
            lam = lam_new
            break
        lam = lam_new
    return lam, v, iters


def _csr_matmul_np(indptr, indices, values, W):
    n = indptr.shape[0] - 1
    out = np.zeros((n, W.shape[1]))
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, rows, values[:, None] * W[indices])
    return out


def _csr_t_matmul_np(indptr, indices, values, G, n_cols):
    n = indptr.shape[0] - 1
    out = np.zeros((n_cols, G.shape[1]))
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, indices, values[:, None] * G[rows])
    return out


# ---------------------------------------------------------------------------
# numba implementations (plain loops; compiled lazily on first call)
# ---------------------------------------------------------------------------


def _bisect_nu_loop(w, tol):
    k = w.shape[0]
    lo = w[0]
    for i in range(1, k):
        if w[i] < lo:
            lo = w[i]
    lo -= 1.0
    hi = 0.0
    iters = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f = 0.0
        for i in range(k):
            d = w[i] - mid
            if d > 0.0:
                f += d * d
        if f > 1.0:
            lo = mid
        else:
            hi = mid
        iters += 1
    return 0.5 * (lo + hi), iters


def _power_iteration_loop(M, v0, max_iters, tol):
    d = M.shape[0]
    v = v0.copy()
    y = np.empty(d)
    lam = np.inf
    iters = 0
    for _ in range(max_iters):
        lam_new = 0.0
        ny = 0.0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += M[i, j] * v[j]
            y[i] = acc
            lam_new += v[i] * acc
            ny += acc * acc
        iters += 1
        if ny == 0.0:
            return 0.0, v, iters
        ny = np.sqrt(ny)
        for i in range(d):
            v[i] = y[i] / ny
        if abs(lam_new - lam) < tol:
            lam = lam_new
            break
        lam = lam_new
    return lam, v, iters


def _csr_matmul_loop(indptr, indices, values, W):
    n = indptr.shape[0] - 1
    h = W.shape[1]
    out = np.zeros((n, h))
    for r in range(n):
        for p in range(indptr[r], indptr[r + 1]):
            c = indices[p]
            x = values[p]
            for j in range(h):
                out[r, j] += x * W[c, j]
    return out


def _csr_t_matmul_loop(indptr, indices, values, G, n_cols):
    n = indptr.shape[0] - 1
    h = G.shape[1]
    out = np.zeros((n_cols, h))
    for r in range(n):
        for p in range(indptr[r], indptr[r + 1]):
            c = indices[p]
            x = values[p]
            for j in range(h):
                out[c, j] += x * G[r, j]
    return out


NUMPY = {
    "bisect_nu": _bisect_nu_np,
    "power_iteration": _power_iteration_np,
    "csr_matmul": _csr_matmul_np,
    "csr_t_matmul": _csr_t_matmul_np,
}

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, fastmath=False)
    NUMBA = {
        "bisect_nu": _jit(_bisect_nu_loop),
        "power_iteration": _jit(_power_iteration_loop),
        "csr_matmul": _jit(_csr_matmul_loop),
        "csr_t_matmul": _jit(_csr_t_matmul_loop),
    }
else:  # pragma: no cover
    NUMBA = dict(NUMPY)

ACTIVE = NUMBA if USING_NUMBA else NUMPY

bisect_nu = ACTIVE["bisect_nu"]
power_iteration = ACTIVE["power_iteration"]
csr_matmul = ACTIVE["csr_matmul"]
csr_t_matmul = ACTIVE["csr_t_matmul"]

BACKEND = "numba" if USING_NUMBA else "numpy"
