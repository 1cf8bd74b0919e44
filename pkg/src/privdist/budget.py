"""Cumulative privacy budget computation and its allocation across agents:
equal split, equal epsilon, Kelly proportional fairness, and VCG-Kelly with
externality payments.

Shares are allocated in the same sigma^2 units as the suboptimality bound;
conversion to Laplace scales (the factor-2 second-moment choice) happens at
the NoiseSchedule boundary and is flagged in reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BudgetAllocation",
    "compute_budget",
    "allocate_equal",
    "allocate_equal_epsilon",
    "allocate_kelly",
    "allocate_vcg_kelly",
    "maximize_separable_concave",
]


@dataclass
class BudgetAllocation:
    budget: float
    shares: np.ndarray  # per-agent variance shares sigma_i^2
    scheme: str
    infeasible_target: bool = False
    payments: np.ndarray = None
    bids: np.ndarray = None

    def scales(self):
        """Laplace scales implied by the shares: scale = sqrt(sigma^2)."""
        return np.sqrt(np.maximum(self.shares, 0.0))

    def to_dict(self):
        d = {
            "schema_version": 1,
            "budget": self.budget,
            "shares_sigma2": np.asarray(self.shares).tolist(),
            "scheme": self.scheme,
            "infeasible_target": self.infeasible_target,
            "variance_convention": "shares are sigma^2 (bound units); Laplace second moment is 2*dim*scale^2",
        }
        if self.payments is not None:
            d["payments"] = np.asarray(self.payments).tolist()
        if self.bids is not None:
            d["bids"] = np.asarray(self.bids).tolist()
        return d


def compute_budget(rho_phi, K, S_K, G):
    """Sigma_budget = max(0, 1/4 rho^2 K S_K - sum G_i^2).

    Zero (with the infeasible flag on the allocation) means the target is
    unreachable with any noise.
    """
    if rho_phi <= 0 or K <= 0 or S_K <= 0:
        raise ValueError("inputs must be positive")
    raw = 0.25 * rho_phi**2 * K * S_K - float(np.sum(np.square(G)))
    return max(raw, 0.0)


def allocate_equal(budget, M):
    """Split the variance budget evenly over the M agents."""
    if M <= 0:
        raise ValueError("M must be >= 1")
    shares = np.full(M, budget / M)
    return BudgetAllocation(budget=budget, shares=shares, scheme="equal-split",
                            infeasible_target=(budget == 0.0))


def allocate_equal_epsilon(budget, thetas):
    """Equalize epsilon across agents: Theta_i / sigma_i constant.

    Closed form sigma_i = Theta_i sqrt(budget / sum Theta_j^2); agents with
    Theta_i = 0 get sigma = 0 and drop out of the ratio system.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if np.any(thetas < 0):
        raise ValueError("sensitivities must be >= 0")
    shares = np.zeros(len(thetas))
    ss = float(np.sum(thetas**2))
    if ss > 0 and budget > 0:
        shares = thetas**2 * (budget / ss)
    return BudgetAllocation(budget=budget, shares=shares, scheme="equal-epsilon",
                            infeasible_target=(budget == 0.0))


def maximize_separable_concave(fs, weights, budget, floors=None, tol=1e-13):
    """Maximize sum_i w_i f_i(x_i) s.t. sum x_i <= budget, x_i >= floor_i.

    f_i strictly increasing and strictly concave, so the budget binds and the
    KKT system w_i f_i'(x_i) = lam (or x_i at its floor) is solved by
    bisection on the shared multiplier lam.
    """
    weights = np.asarray(weights, dtype=float)
    M = len(weights)
    floors = np.zeros(M) if floors is None else np.asarray(floors, dtype=float)
    if np.sum(floors) > budget + 1e-12:
        raise ValueError("floors exceed the budget")
    if budget <= 0:
        return floors.copy()

    def deriv(i, x):
        e = max(1e-9 * budget, 1e-12)
        x = max(x, e)
        return weights[i] * (fs[i](x + e) - fs[i](x - e)) / (2 * e) if x > e else math.inf

    def x_of_lam(i, lam):
        if weights[i] <= 0:
            return floors[i]
        lo, hi = floors[i], budget
        if deriv(i, hi) >= lam:
            return hi
        if deriv(i, max(lo, 1e-12 * budget)) <= lam:
            return lo
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if deriv(i, mid) > lam:
                lo = mid
            else:
                hi = mid
            if hi - lo <= tol * budget:
                break
        return 0.5 * (lo + hi)

    def total(lam):
        return sum(x_of_lam(i, lam) for i in range(M))

    lam_lo, lam_hi = 1e-30, 1.0
    while total(lam_hi) > budget:
        lam_hi *= 2.0
        if lam_hi > 1e60:
            break
    for _ in range(300):
        lam = 0.5 * (lam_lo + lam_hi)
        if total(lam) > budget:
            lam_lo = lam
        else:
            lam_hi = lam
        if lam_hi - lam_lo <= 1e-15 * lam_hi:
            break
    lam = 0.5 * (lam_lo + lam_hi)
    x = np.array([x_of_lam(i, lam) for i in range(M)])
    excess = np.sum(x) - budget
    if excess > 0:  # distribute rounding error over interior coordinates
        interior = x > floors + tol
        if np.any(interior):
            x[interior] -= excess / np.sum(interior)
    return x


def _check_concave(f, budget, rng):
    xs = rng.uniform(1e-6 * budget, budget, size=16)
    e = 1e-5 * budget
    for x in xs:
        d1 = (f(x + e) - f(x - e)) / (2 * e)
        d2 = (f(x + e) - 2 * f(x) + f(x - e)) / (e * e)
        if d1 <= 0 or d2 >= 1e-6:
            return False
    return True


def allocate_kelly(budget, bids, floors=None):
    """Proportional-fair allocation maximizing sum_i w_i log sigma_i^2.

    Solved numerically and cross-checked against the closed form
    sigma_i^2 = (w_i / sum w) * budget (exact when no floors bind).
    """
    bids = np.atleast_1d(np.asarray(bids, dtype=float))
    if np.any(bids < 0) or np.sum(bids) == 0:
        raise ValueError("bids must be >= 0 with at least one positive")
    if budget <= 0:
        return BudgetAllocation(budget=budget, shares=np.zeros(len(bids)),
                                scheme="kelly", infeasible_target=True, bids=bids)
    active = bids > 0
    shares = np.zeros(len(bids))
    fs = [(lambda x: math.log(x)) for _ in range(int(np.sum(active)))]
    flo = None if floors is None else np.asarray(floors, float)[active]
    numeric = maximize_separable_concave(fs, bids[active], budget, floors=flo)
    shares[active] = numeric
    if floors is None:
        closed = bids / np.sum(bids) * budget
        if np.max(np.abs(shares - closed)) > 1e-6 * max(budget, 1.0):
            raise AssertionError("kelly numeric and closed-form allocations disagree")
        shares = closed  # report the exact form
    return BudgetAllocation(budget=budget, shares=shares, scheme="kelly", bids=bids)


def allocate_vcg_kelly(budget, bids, utilities=None, floors=None, rng=None):
    """VCG-Kelly: maximize sum_i w_i f_i(sigma_i^2) and charge each agent the
    externality it imposes on the others (both terms by re-solving the
    concave program).  Default utility family f_i = log.
    """
    bids = np.atleast_1d(np.asarray(bids, dtype=float))
    M = len(bids)
    if np.any(bids < 0) or np.sum(bids) == 0:
        raise ValueError("bids must be >= 0 with at least one positive")
    if utilities is None:
        utilities = [math.log] * M
    else:
        check_rng = rng or np.random.default_rng(0)
        for f in utilities:
            if budget > 0 and not _check_concave(f, budget, check_rng):
                raise ValueError("utility family failed the concavity spot-check")
    if budget <= 0:
        return BudgetAllocation(budget=budget, shares=np.zeros(M), scheme="vcg-kelly",
                                infeasible_target=True, payments=np.zeros(M), bids=bids)

    floors_arr = None if floors is None else np.asarray(floors, float)

    def solve(mask):
        idx = np.where(mask)[0]
        x = np.zeros(M)
        if len(idx) == 0:
            return x
        flo = None if floors_arr is None else floors_arr[idx]
        x[idx] = maximize_separable_concave([utilities[i] for i in idx], bids[idx], budget, floors=flo)
        return x

    def value(x, skip=None):
        tot = 0.0
        for j in range(M):
            if j == skip or bids[j] == 0 or x[j] <= 0:
                continue
            tot += bids[j] * utilities[j](x[j])
        return tot

    full = solve(bids > 0)
    payments = np.zeros(M)
    for i in range(M):
        if bids[i] == 0:
            continue
        mask = bids > 0
        mask[i] = False
        if not np.any(mask):
            continue  # no others: payment 0
        without_i = solve(mask)
        payments[i] = value(without_i, skip=i) - value(full, skip=i)
    if np.any(payments < -1e-9):
        raise AssertionError("negative VCG payment beyond numeric round-off")
    payments[(payments < 0)] = 0.0  # absorb bisection round-off only
    return BudgetAllocation(budget=budget, shares=full, scheme="vcg-kelly",
                            payments=payments, bids=bids)
