"""Privacy-vs-suboptimality trade-off algebra: attainable (epsilon, S)
points, feasibility of (nu, K) against specifications, Pareto fronts, and the
OPF-specialized inequalities.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TradeoffSpec",
    "tradeoff_point",
    "feasible",
    "pareto_front",
    "opf_tradeoff",
    "cloud_csv",
]


@dataclass(frozen=True)
class TradeoffSpec:
    """Specification (eps_bar, S_bar) with the uniform-G simplification."""

    eps_bar: float
    S_bar: float
    M: int
    G: float
    rho_phi: float
    thetas: tuple  # per-agent sensitivities

    def __post_init__(self):
        object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))
        for name in ("G", "rho_phi"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("eps_bar", "S_bar"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.M < 1 or len(self.thetas) != self.M:
            raise ValueError("need one sensitivity per agent")


def tradeoff_point(theta, sigma, K, M, G, rho_phi):
    """Attainable-region point for constant per-iteration noise:

    epsilon = Theta K / sigma,  S_bound = 4 M (G^2 + sigma^2) / (rho^2 K).
    """
    eps = theta * K / sigma
    s = 4.0 * M * (G * G + sigma * sigma) / (rho_phi**2 * K)
    return eps, s


def feasible(spec, nu, K):
    """Test the two design inequalities for uniform nu.

    Privacy (per agent): K/nu <= (G/Theta_i) eps_bar.
    Suboptimality:       (1 + nu^2)/K <= (S_bar / 4M)(rho/G)^2.
    Returns (ok, slacks) with nonnegative slack meaning satisfied.
    """
    slacks = {}
    priv = min((spec.G / th) * spec.eps_bar if th > 0 else float("inf") for th in spec.thetas)
    slacks["privacy"] = priv - (K / nu if nu > 0 else float("inf"))
    rhs = (spec.S_bar / (4.0 * spec.M)) * (spec.rho_phi / spec.G) ** 2
    slacks["suboptimality"] = rhs - (1.0 + nu * nu) / K
    ok = all(s >= 0 for s in slacks.values())
    return ok, slacks


def pareto_front(theta, M, G, rho_phi, sigmas=None, Ks=None):
    """Sweep (sigma, K) grids, returning the attainable cloud and its
    nondominated (minimize both coordinates) subset.

    Default grids: sigma logarithmic over [1e-3 G, 10 G] (25 points), K
    log-spaced over 1..1e4 (25 points).
    """
    if sigmas is None:
        sigmas = np.geomspace(1e-3 * G, 10.0 * G, 25)
    if Ks is None:
        Ks = np.unique(np.geomspace(1, 1e4, 25).astype(int))
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    Ks = np.atleast_1d(np.asarray(Ks, dtype=int))
    if len(sigmas) == 0 or len(Ks) == 0:
        raise ValueError("grid is empty")
    cloud = []
    for s in sigmas:
        for K in Ks:
            eps, sub = tradeoff_point(theta, s, int(K), M, G, rho_phi)
            cloud.append((float(s), int(K), eps, sub))
    pts = np.array([(c[2], c[3]) for c in cloud])
    nondom = []
    for idx, (e, s) in enumerate(pts):
        dominated = np.any(
            (pts[:, 0] <= e) & (pts[:, 1] <= s) & ((pts[:, 0] < e) | (pts[:, 1] < s))
        )
        if not dominated:
            nondom.append(idx)
    front = sorted((cloud[i] for i in nondom), key=lambda c: (c[2], c[3]))
    return cloud, front


def opf_tradeoff(pi_max, u_max, u_i_max, thetas, eps_bar, S_bar, nus, K):
    """OPF-specialized feasibility report.

    Uses the printed constants rho_phi = pi_max and G_i = u_{i,max}:
    per-agent K/nu_i <= (u_{i,max}/Theta_i) eps_bar and collective
    (M + sum nu_i^2)/K <= (S_bar/4)(pi_max/u_max)^2.
    """
    u_i_max = np.atleast_1d(np.asarray(u_i_max, dtype=float))
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    nus = np.atleast_1d(np.asarray(nus, dtype=float))
    M = len(u_i_max)
    per_agent = []
    for i in range(M):
        rhs = (u_i_max[i] / thetas[i]) * eps_bar if thetas[i] > 0 else float("inf")
        lhs = K / nus[i] if nus[i] > 0 else float("inf")
        per_agent.append({"agent": i, "lhs": lhs, "rhs": rhs, "slack": rhs - lhs})
    rhs_c = (S_bar / 4.0) * (pi_max / u_max) ** 2
    lhs_c = (M + float(np.sum(nus**2))) / K
    report = {
        "per_agent": per_agent,
        "collective": {"lhs": lhs_c, "rhs": rhs_c, "slack": rhs_c - lhs_c},
        "feasible": all(a["slack"] >= 0 for a in per_agent) and (rhs_c - lhs_c) >= 0,
        "rho_phi_as_printed": pi_max,
    }
    return report


def cloud_csv(cloud, front):
    """CSV of the (sigma, K, epsilon, S) cloud with a Pareto-front flag."""
    front_keys = {(c[0], c[1]) for c in front}
    buf = io.StringIO()
    wtr = csv.writer(buf, lineterminator="\n")
    buf.write("# privdist tradeoff cloud schema v1\n")
    wtr.writerow(["sigma", "K", "epsilon", "S_bound", "on_front"])
    for s, K, e, sub in cloud:
        wtr.writerow([repr(s), K, repr(e), repr(sub), int((s, K) in front_keys)])
    return buf.getvalue()
