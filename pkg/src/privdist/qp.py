"""Local subproblem solver: argmin_{z in C_i} 0.5 z'Hz + h'z - mu'z.

Strong convexity gives a unique minimizer.  The solver uses an analytic fast
path for unconstrained and axis-aligned-box/diagonal-H problems, and a primal
active-set iteration (add most-violated row, drop most-negative multiplier)
otherwise.  A brute-force grid oracle is provided for tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog

__all__ = [
    "LocalSolution",
    "SubsolverError",
    "InfeasibleSubproblem",
    "solve_local",
    "brute_force_local",
    "kkt_residual",
]

DEFAULT_TOL = 1e-8
MAX_ITER = 100_000


class SubsolverError(RuntimeError):
    def __init__(self, msg, best_residual=None):
        super().__init__(msg)
        self.best_residual = best_residual


class InfeasibleSubproblem(SubsolverError):
    pass


@dataclass
class LocalSolution:
    z: np.ndarray
    w: np.ndarray
    kkt_residual: float
    iterations: int


def kkt_residual(P, mu, z, w):
    """Max-norm residual over stationarity, feasibility, dual sign and
    complementary slackness."""
    g = P.H @ z + P.h - mu
    if P.n_cons:
        g = g + P.C.T @ w
        slack = P.C @ z - P.c
        feas = float(np.max(np.maximum(slack, 0.0)))
        sign = float(np.max(np.maximum(-w, 0.0)))
        comp = float(np.max(np.abs(w * slack)))
    else:
        feas = sign = comp = 0.0
    return max(float(np.max(np.abs(g))), feas, sign, comp)


def _cached(P, key, fn):
    cache = P._cache
    if key not in cache:
        cache[key] = fn()
    return cache[key]


def _chol(P):
    return _cached(P, "chol", lambda: cho_factor(P.H))


def _box_structure(P):
    """If constraints are axis-aligned bounds and H is diagonal, return
    (lo, hi) arrays; else None."""

    def build():
        n = P.dim
        if np.max(np.abs(P.H - np.diag(np.diag(P.H))), initial=0.0) > 0:
            return None
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        for row, b in zip(P.C, P.c):
            nz = np.nonzero(row)[0]
            if len(nz) != 1:
                return None
            j = nz[0]
            a = row[j]
            if a > 0:
                hi[j] = min(hi[j], b / a)
            else:
                lo[j] = max(lo[j], b / a)
        if np.any(lo > hi):
            return "infeasible"
        return (lo, hi)

    return _cached(P, "box", build)


def _box_duals(P, z, grad):
    """Recover multipliers for box rows from the unconstrained gradient."""
    w = np.zeros(P.n_cons)
    resid = -grad  # H z + h - mu = -C'w at the clipped point
    for r, (row, b) in enumerate(zip(P.C, P.c)):
        j = np.nonzero(row)[0][0]
        a = row[j]
        active = abs(a * z[j] - b) <= 1e-12 * (1.0 + abs(b))
        if active and resid[j] * np.sign(a) > 0:
            w[r] = resid[j] / a
            resid[j] = 0.0
    return w


def _active_set_solve(P, q, active):
    """Solve the equality-constrained KKT system for the given active rows."""
    n = P.dim
    A = P.C[active]
    m = A.shape[0]
    if m == 0:
        z = cho_solve(_chol(P), q)
        return z, np.zeros(0)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = P.H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([q, P.c[active]])
    try:
        sol = np.linalg.solve(K, rhs)
        sol += np.linalg.solve(K, rhs - K @ sol)  # one refinement pass
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:n], sol[n:]


def _check_feasible(P):
    """Phase-1 LP feasibility check of {z : Cz <= c}."""
    n = P.dim
    res = linprog(
        c=np.zeros(n + 1).tolist()[:n] + [1.0],
        A_ub=np.hstack([P.C, -np.ones((P.n_cons, 1))]),
        b_ub=P.c,
        bounds=[(None, None)] * n + [(0, None)],
        method="highs",
    )
    return res.success and res.x is not None and res.x[-1] <= 1e-9


def solve_local(P, mu, tol=DEFAULT_TOL, max_iter=MAX_ITER, warm=None):
    """Solve argmin_{z: Cz<=c} 0.5 z'Hz + (h - mu)'z to KKT residual <= tol.

    Raises InfeasibleSubproblem when the constraint set is empty and
    SubsolverError (carrying the best residual) on non-convergence.
    """
    if P.defects:
        raise ValueError(f"invalid local problem: {'; '.join(P.defects)}")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.shape != (P.dim,):
        raise ValueError(f"mu has shape {mu.shape}, expected ({P.dim},)")
    q = mu - P.h
    # absolute tolerance, relaxed only when the data itself is large
    tol = tol * max(1.0, float(np.max(np.abs(q), initial=0.0)))

    if P.n_cons == 0:
        z = cho_solve(_chol(P), q)
        return LocalSolution(z=z, w=np.zeros(0), kkt_residual=kkt_residual(P, mu, z, np.zeros(0)), iterations=0)

    box = _box_structure(P)
    if box == "infeasible":
        raise InfeasibleSubproblem("infeasible subproblem (inconsistent bounds)")
    if box is not None:
        lo, hi = box
        z = np.clip(q / np.diag(P.H), lo, hi)
        w = _box_duals(P, z, P.H @ z - q)
        res = kkt_residual(P, mu, z, w)
        if res <= tol:
            return LocalSolution(z=z, w=w, kkt_residual=res, iterations=0)

    # active-set iteration: one row change per equality-constrained KKT solve
    active = np.zeros(P.n_cons, dtype=bool)
    if warm is not None:
        active = np.asarray(warm, float) > tol
    best = np.inf
    seen = set()
    for it in range(1, min(max_iter, 50 * (P.n_cons + 1)) + 1):
        z, wa = _active_set_solve(P, q, active)
        w = np.zeros(P.n_cons)
        w[active] = wa
        if np.any(wa < -tol):
            drop = np.where(active)[0][int(np.argmin(wa))]
            active = active.copy()
            active[drop] = False
        else:
            w = np.maximum(w, 0.0)
            res = kkt_residual(P, mu, z, w)
            best = min(best, res)
            if res <= tol:
                return LocalSolution(z=z, w=w, kkt_residual=res, iterations=it)
            viol = P.C @ z - P.c
            add = int(np.argmax(viol))
            if viol[add] <= tol:
                break  # residual stuck above tol without a violated row to add
            active = active.copy()
            active[add] = True
        key = frozenset(np.where(active)[0])
        if key in seen:
            break  # cycling guard
        seen.add(key)

    if not _check_feasible(P):
        raise InfeasibleSubproblem("infeasible subproblem")
    raise SubsolverError(
        f"subsolver stalled above tolerance {tol:g} "
        f"(best residual {best:.3e})",
        best_residual=best,
    )


def brute_force_local(P, mu, grid_step, box):
    """Grid-search minimizer over the feasible box grid (dim <= 3).

    ``box`` is a list of (lo, hi) per coordinate.  The result is within
    grid_step * sqrt(dim) of the true optimum in argument when the box covers
    the feasible optimum.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    n = P.dim
    if n > 3:
        raise ValueError("brute force oracle supports dim <= 3")
    axes = [np.arange(lo, hi + grid_step * 0.5, grid_step) for lo, hi in box]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    if P.n_cons:
        feas = np.all(pts @ P.C.T <= P.c + 1e-9, axis=1)
        pts = pts[feas]
    if len(pts) == 0:
        raise SubsolverError("empty feasible grid")
    vals = 0.5 * np.einsum("ij,jk,ik->i", pts, P.H, pts) + pts @ (P.h - mu)
    return pts[int(np.argmin(vals))]
