"""Laplace noise generation, per-agent epsilon accounting, and sensitivity
estimation via scenario sampling plus analytic bounds.

The Laplace scale is the stored primitive; the second moment used by the
suboptimality bound is derived as 2 * dim * scale^2.  Noise is per-coordinate
independent Laplace, drawn by inverse CDF from per-(agent, round) streams.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import adjacency_distance, perturb_problem
from .qp import SubsolverError, solve_local

__all__ = [
    "NoiseSchedule",
    "PrivacyReport",
    "SensitivityEstimate",
    "DpCheckReport",
    "noise_rng",
    "sample_laplace",
    "privacy_level",
    "sample_count",
    "sensitivity_sample",
    "sensitivity_bound_H",
    "sensitivity_bound_h",
    "empirical_dp_check",
]


def noise_rng(seed, agent, k):
    """Derived RNG stream for (seed, agent, round); scheduling-independent."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(agent), int(k)]))


def sample_laplace(scale, dim, rng):
    """dim iid Laplace(0, scale) draws via inverse CDF; scale 0 gives zeros."""
    if scale < 0:
        raise ValueError("scale must be >= 0")
    if scale == 0.0:
        return np.zeros(dim)
    u = rng.uniform(-0.5, 0.5, size=dim)
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-agent, per-iteration Laplace scales sigma_i^k >= 0.

    ``scales`` has shape (K, M); scale 0 means the agent opts out of noise.
    """

    scales: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.scales, dtype=float))
        if np.any(~np.isfinite(s)) or np.any(s < 0):
            raise ValueError("noise scales must be finite and >= 0")
        object.__setattr__(self, "scales", s)

    @staticmethod
    def constant(per_agent, K):
        per_agent = np.atleast_1d(np.asarray(per_agent, dtype=float))
        return NoiseSchedule(np.tile(per_agent, (K, 1)))

    @staticmethod
    def zero(M, K):
        return NoiseSchedule(np.zeros((K, M)))

    @property
    def K(self):
        return self.scales.shape[0]

    @property
    def M(self):
        return self.scales.shape[1]

    def scale(self, i, k):
        """Scale for agent i at round k (1-based)."""
        return float(self.scales[k - 1, i])

    def max_scale(self, i):
        return float(np.max(self.scales[:, i])) if self.K else 0.0

    def agent_row(self, i):
        return self.scales[:, i].copy()

    def check_cover(self, M, K):
        if self.M != M or self.K < K:
            raise ValueError(
                f"noise schedule covers {self.M} agents x {self.K} rounds, "
                f"need {M} x {K}"
            )

    def is_constant(self):
        return bool(np.all(self.scales == self.scales[0:1, :]))


def privacy_level(theta, scales, K=None):
    """epsilon = Theta * sum_k 1/sigma_k over the first K rounds.

    Theta = 0 gives 0 for any schedule; a zero scale with Theta > 0 gives the
    infinity sentinel (no privacy from a noiseless round).
    """
    if theta < 0:
        raise ValueError("theta must be >= 0")
    scales = np.atleast_1d(np.asarray(scales, dtype=float))
    if K is not None:
        scales = scales[:K]
    if theta == 0.0:
        return 0.0
    if np.any(scales == 0.0):
        return float("inf")
    return float(theta * np.sum(1.0 / scales))


@dataclass
class PrivacyReport:
    """Per-agent epsilon accounting for a run of K rounds."""

    K: int
    theta: list
    theta_kind: list  # "certified" (analytic bound) or "optimistic" (gamma^N)
    epsilon: list
    locally_private: list

    @staticmethod
    def build(noise, thetas, K, kinds=None, requested=None):
        eps, private = [], []
        for i, th in enumerate(thetas):
            e = privacy_level(th, noise.agent_row(i), K)
            eps.append(e)
            wants = True if requested is None else bool(requested[i])
            private.append(wants and math.isfinite(e))
        return PrivacyReport(
            K=K,
            theta=[float(t) for t in thetas],
            theta_kind=list(kinds) if kinds else ["certified"] * len(thetas),
            epsilon=eps,
            locally_private=private,
        )

    def to_dict(self):
        return {
            "schema_version": 1,
            "K": self.K,
            "theta": self.theta,
            "theta_kind": self.theta_kind,
            "epsilon": [e if math.isfinite(e) else "inf" for e in self.epsilon],
            "locally_private": self.locally_private,
        }


# ---------------------------------------------------------------------------
# sensitivity estimation


def sample_count(alpha, beta):
    """Minimum sample count N >= 1/(alpha beta) - 1 for the (alpha, beta)
    robust-feasibility certificate."""
    if not (0 < alpha <= 1 and 0 < beta <= 1):
        raise ValueError("alpha, beta must lie in (0, 1]")
    return max(int(math.ceil(1.0 / (alpha * beta))) - 1, 1)


@dataclass
class SensitivityEstimate:
    gamma_N: float
    N: int
    alpha: float
    beta: float
    analytic_upper: float = None
    argmax_pair: tuple = None
    metric_hash: str = ""

    def to_dict(self):
        return {
            "schema_version": 1,
            "gamma_N": self.gamma_N,
            "N": self.N,
            "alpha": self.alpha,
            "beta": self.beta,
            "analytic_upper": self.analytic_upper,
            "metric_hash": self.metric_hash,
        }


def sensitivity_bound_H(P, G):
    """Analytic bound G / lambda_min for a spectral-norm metric on H only."""
    return float(G) / P.lam_min


def sensitivity_bound_h(P):
    """Analytic bound 1 / lambda_min for a Euclidean metric on h only."""
    return 1.0 / P.lam_min


def analytic_upper_for(P, metric, G=None):
    """Closed-form bound when the metric matches a special case, else None."""
    active = metric.active_blocks()
    if metric.norm != "l2":
        return None
    if active == ["H"] and G is not None and metric.block_weight("H") == 1.0 and not metric.masks:
        return sensitivity_bound_H(P, G)
    if active == ["h"] and metric.block_weight("h") == 1.0 and not metric.masks:
        return sensitivity_bound_h(P)
    return None


def _theta_of_pair(Pa, Pb, mu):
    za = solve_local(Pa, mu).z
    zb = solve_local(Pb, mu).z
    return float(np.linalg.norm(za - zb))


def _max_workers():
    try:
        return max(int(os.environ.get("PRIVDIST_THREADS", "1")), 1)
    except ValueError:
        return 1


def sensitivity_sample(P, metric, alpha, beta, rng, G=None, mu=None, N=None):
    """Scenario estimate of the sensitivity with an (alpha, beta) certificate.

    Each of the N draws samples a base problem inside the unit adjacency ball
    around P and a second endpoint inside the unit ball around the base, so
    every recorded pair satisfies adj <= 1.  Local solves run at mu = 0
    (mu-independence of the quadratic case); an explicit mu grid may be
    supplied to also scan user-chosen dual signals.  gamma^N is a lower
    estimate; the analytic bound, when the metric matches a special case, is
    attached as the certified value.
    """
    N = sample_count(alpha, beta) if N is None else int(N)
    mus = [np.zeros(P.dim)] if mu is None else [np.asarray(m, float) for m in mu]

    seeds = rng.integers(0, 2**63 - 1, size=N)

    def one(seed_s):
        r = np.random.default_rng(int(seed_s))
        for _ in range(50):  # skip-and-resample on solver failure
            try:
                base = perturb_problem(P, metric, r)
                other = perturb_problem(base, metric, r)
                theta = max(_theta_of_pair(base, other, m) for m in mus)
                return theta, base, other
            except SubsolverError:
                continue
        raise SubsolverError("sensitivity sampling: repeated subsolver failures")

    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, seeds))
    else:
        results = [one(s) for s in seeds]

    best = max(results, key=lambda t: t[0])
    import hashlib
    from .model import canonical_json, _metric_to_dict

    mh = hashlib.sha256(canonical_json(_metric_to_dict(metric)).encode()).hexdigest()[:16]
    return SensitivityEstimate(
        gamma_N=best[0],
        N=N,
        alpha=float(alpha),
        beta=float(beta),
        analytic_upper=analytic_upper_for(P, metric, G=G),
        argmax_pair=(best[1], best[2]),
        metric_hash=mh,
    )


# ---------------------------------------------------------------------------
# empirical differential-privacy check


@dataclass
class DpCheckReport:
    epsilon: float
    max_log_ratio: float
    max_excess: float  # max over bins of (log ratio - epsilon - slack)
    passed: bool
    trials: int
    bins_used: int


def empirical_dp_check(P, P_prime, metric, theta, sigma, trials, seed, n_bins=40, min_count=50):
    """Monte-Carlo likelihood-ratio audit of the first-iteration mechanism
    output z^1 = g(P, 0) + Laplace(sigma).

    Bins outputs under P and P', compares the max binned log-probability
    ratio against epsilon = privacy_level(theta, [sigma], 1) plus a 3-sigma
    binomial slack per bin (bins with fewer than ``min_count`` samples on
    either side are excluded).  Small instances only (dim <= 2).
    """
    if adjacency_distance(metric, P, P_prime) > 1.0 + 1e-9:
        raise ValueError("P and P' must be unit-adjacent")
    if P.dim > 2:
        raise ValueError("empirical check restricted to dim <= 2")
    if trials < 100 * min_count:
        raise ValueError("insufficient trials for the confidence interval")
    eps = privacy_level(theta, [sigma], 1)
    z0 = solve_local(P, np.zeros(P.dim)).z
    z1 = solve_local(P_prime, np.zeros(P.dim)).z
    rng_a = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    rng_b = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    a = z0[None, :] + sample_laplace(sigma, (trials, P.dim), rng_a)
    b = z1[None, :] + sample_laplace(sigma, (trials, P.dim), rng_b)
    lo = np.minimum(a.min(axis=0), b.min(axis=0))
    hi = np.maximum(a.max(axis=0), b.max(axis=0))
    edges = [np.linspace(lo[d], hi[d] + 1e-12, n_bins + 1) for d in range(P.dim)]
    ca, _ = np.histogramdd(a, bins=edges)
    cb, _ = np.histogramdd(b, bins=edges)
    use = (ca >= min_count) & (cb >= min_count)
    if not np.any(use):
        raise ValueError("insufficient trials for the confidence interval")
    ratios = np.log(ca[use] / cb[use])
    slack = 3.0 * np.sqrt(1.0 / ca[use] + 1.0 / cb[use])
    excess = ratios - eps - slack
    return DpCheckReport(
        epsilon=eps,
        max_log_ratio=float(np.max(ratios)),
        max_excess=float(np.max(excess)),
        passed=bool(np.all(excess <= 0)),
        trials=trials,
        bins_used=int(np.sum(use)),
    )
