"""Independent reference computations used by the tests.

None of these call into the code paths they check.
"""
import itertools

import numpy as np


def nu_by_support_enumeration(z):
    """Exact threshold by trying every top-n support and solving the quadratic
    ``sum_{top n} (z - nu)^2 = 1`` in closed form."""
    z = np.asarray(z, dtype=float)
    u = np.sort(z)[::-1]
    for n in range(1, len(u) + 1):
        top = u[:n]
        mean = top.mean()
        disc = 1.0 - np.sum((top - mean) ** 2)
        if disc < 0:
            continue
        nu = mean - np.sqrt(disc / n)
        rest_ok = n == len(u) or u[n] <= nu
        if np.all(top > nu) and rest_ok:
            return nu
    raise AssertionError("no consistent support found")


def inner_objective(z, alpha):
    """-<z, alpha> + ||alpha||_2 for one or many candidate rows."""
    alpha = np.atleast_2d(alpha)
    return -(alpha @ z) + np.linalg.norm(alpha, axis=1)


def simplex_grid(k, per_axis=200):
    """All points with coordinates in {0, 1/n, ..., 1} on the simplex (k <= 3)."""
    if k == 1:
        return np.ones((1, 1))
    if k == 2:
        t = np.linspace(0.0, 1.0, per_axis + 1)
        return np.stack([t, 1 - t], axis=1)
    if k == 3:
        pts = [(i, j, per_axis - i - j) for i in range(per_axis + 1) for j in range(per_axis + 1 - i)]
        return np.array(pts, dtype=float) / per_axis
    raise ValueError("grid only for k <= 3")


def dirichlet_candidates(k, n, rng):
    c = rng.dirichlet(np.ones(k), size=n)
    # include the vertices and the barycentre explicitly
    return np.vstack([c, np.eye(k), np.full((1, k), 1.0 / k)])


def central_fd_jacobian(fn, z, h=1e-6):
    z = np.asarray(z, dtype=float)
    k = z.size
    J = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        J[:, j] = (fn(z + e) - fn(z - e)) / (2 * h)
    return J


def sparsemax_by_enumeration(z):
    """Brute force: try every support set, keep the feasible KKT point."""
    z = np.asarray(z, dtype=float)
    k = z.size
    best = None
    for n in range(1, k + 1):
        for S in itertools.combinations(range(k), n):
            S = list(S)
            theta = (z[S].sum() - 1.0) / n
            p = np.zeros(k)
            p[S] = z[S] - theta
            if np.all(p[S] >= 0):
                d = np.sum((p - z) ** 2)
                if best is None or d < best[0]:
                    best = (d, p)
    return best[1]


def finite_difference_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arrays``
    (perturbed in place and restored)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            fp = f()
            a[idx] = old - h
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out
