"""Seeded property checks for the projection, its Jacobian and power iteration.

Used by ``darn verify``. Every check compares against a reference that does
not go through the code under test: grid or Dirichlet search for optimality,
central differences for the Jacobian, a dense eigensolver for power iteration.
"""
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import simplex
from .discrepancy import power_iteration

PROFILES = {
    "fast": {"n_points": 100, "grid": 60, "dirichlet": 1000, "n_jac": 50, "n_power": 20, "timing": False},
    "default": {"n_points": 1000, "grid": 200, "dirichlet": 10000, "n_jac": 500, "n_power": 100, "timing": True},
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _inner(z, A):
    return -(A @ z) + np.linalg.norm(A, axis=1)


def _grid(k, n):
    if k == 2:
        t = np.linspace(0, 1, n + 1)
        return np.stack([t, 1 - t], 1)
    pts = [(i, j, n - i - j) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.array(pts, dtype=float) / n


def _random_z(rng, n):
    return [rng.uniform(-3, 3, size=rng.choice([2, 3, 5, 10])) for _ in range(n)]


def check_optimality(p, rng, tol):
    worst_gap = worst_sum = worst_res = 0.0
    for z in _random_z(rng, p["n_points"]):
        r = simplex.darn_project(z, tol)
        worst_sum = max(worst_sum, abs(r.alpha.sum() - 1))
        worst_res = max(worst_res, abs(np.linalg.norm(np.maximum(z - r.nu, 0)) - 1))
        cand = rng.dirichlet(np.ones(z.size), size=p["dirichlet"])
        if z.size <= 3:
            cand = np.vstack([cand, _grid(z.size, p["grid"])])
        worst_gap = max(worst_gap, _inner(z, r.alpha[None])[0] - _inner(z, cand).min())
    ok = worst_sum <= 1e-12 and worst_res <= 1e-10 and worst_gap <= 1e-8
    return CheckResult("projection optimality", ok, f"sum err {worst_sum:.1e}, kkt residual {worst_res:.1e}, gap {worst_gap:.1e}")


def _stable_points(rng, n, tol):
    out = []
    while len(out) < n:
        z = rng.uniform(-3, 3, size=rng.integers(2, 11))
        r = simplex.darn_project(z, tol)
        if np.all(np.abs(z - r.nu) > 1e-4):
            out.append((z, r))
    return out


def check_jacobian(p, rng, tol, h=1e-6):
    worst = 0.0
    for z, r in _stable_points(rng, p["n_jac"], tol):
        J = simplex.darn_jacobian(z, r)
        fd = np.empty_like(J)
        for j in range(z.size):
            e = np.zeros(z.size)
            e[j] = h
            fd[:, j] = (simplex.darn_project(z + e, tol).alpha - simplex.darn_project(z - e, tol).alpha) / (2 * h)
        err = np.abs(J - fd) / np.maximum(np.abs(fd), 1e-3)
        worst = max(worst, err.max())
    return CheckResult("jacobian finite differences", worst < 1e-5, f"max rel err {worst:.1e}")


def check_danskin(p, rng, tol):
    worst = 0.0
    for z, r in _stable_points(rng, p["n_jac"], tol):
        worst = max(worst, np.abs(simplex.danskin_residual(z, r)).max())
    return CheckResult("danskin consistency", worst < 1e-8, f"max |J(z - a/|a|)| {worst:.1e}")


def check_shift(p, rng, tol):
    worst = 0.0
    for z in _random_z(rng, p["n_points"] // 4):
        a = simplex.darn_project(z, tol).alpha
        for c in (1.0, -1.0, 1e6, -1e6):
            worst = max(worst, np.abs(simplex.darn_project(z + c, tol).alpha - a).max())
    return CheckResult("shift invariance", worst <= 1e-10, f"max diff {worst:.1e}")


def check_power(p, rng):
    worst = 0.0
    for i in range(p["n_power"]):
        d = int(rng.integers(2, 51))
        A = rng.normal(size=(d, d))
        A = (A + A.T) / 2
        lam, _ = power_iteration(A, max_iters=200000, tol=1e-13, seed=i)
        worst = max(worst, abs(lam - np.abs(np.linalg.eigvalsh(A)).max()))
    return CheckResult("power iteration", worst < 1e-6, f"max |lambda| err {worst:.1e}")


def _median_time(z, tol, reps=15):
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        simplex.darn_project(z, tol)
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def timing_ratio(rng, tol=simplex.DEFAULT_TOL):
    """Median projection time at k = 1e4 over that at k = 1e3."""
    small = rng.uniform(-3, 3, size=1000)
    big = rng.uniform(-3, 3, size=10000)
    simplex.darn_project(small, tol)  # warm-up / compile
    return _median_time(big, tol) / _median_time(small, tol)


def check_complexity(rng, tol):
    r = timing_ratio(rng, tol)
    return CheckResult("complexity k=1e4 vs 1e3", r <= 20.0, f"time ratio {r:.2f} (limit 20)")


def run_checks(profile="default", seed=0, nu_tol=simplex.DEFAULT_TOL):
    p = PROFILES[profile]
    rng = np.random.default_rng(seed)
    results = [
        check_optimality(p, rng, nu_tol),
        check_jacobian(p, rng, nu_tol),
        check_danskin(p, rng, nu_tol),
        check_shift(p, rng, nu_tol),
        check_power(p, rng),
    ]
    if p["timing"]:
        results.append(check_complexity(rng, nu_tol))
    return results
