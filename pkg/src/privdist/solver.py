"""Noisy distributed iteration (dual decomposition with per-round Laplace
noise), the stochastic proximal-gradient reference on the dual, and the
suboptimality bound.

Both iterations derive per-(agent, round) RNG streams from the run seed, so
they see identical noise realizations and their dual iterates coincide.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

import numpy as np

from .model import problem_hash, validate_problem
from .qp import SubsolverError, solve_local
from .privacy import sample_laplace, noise_rng

__all__ = [
    "IterationState",
    "Transcript",
    "DualState",
    "SolverFailure",
    "run_algorithm1",
    "run_algorithm2",
    "dual_objective",
    "centralized_reference",
    "suboptimality_bound",
    "transcript_csv",
]


class SolverFailure(RuntimeError):
    def __init__(self, msg, agent=None, iteration=None):
        super().__init__(msg)
        self.agent = agent
        self.iteration = iteration


@dataclass
class IterationState:
    k: int
    tau: float
    z: list  # post-noise local solutions, per agent
    v: list  # consensus components [v]_i, per agent
    mu: list  # dual variables, per agent
    delta: list  # injected noise (logged for test harnesses only)


@dataclass
class Transcript:
    states: list
    seed: int
    problem_hash: str
    noise: object
    bound_violations: list = field(default_factory=list)

    def __len__(self):
        return len(self.states)

    def mu_stacked(self, k):
        st = self.states[k - 1]
        return np.concatenate(st.mu)

    def final_v(self):
        return [np.array(vi) for vi in self.states[-1].v]


@dataclass
class DualState:
    k: int
    w: np.ndarray  # stacked dual vector
    e: np.ndarray  # injected gradient error


def _noise_draw(noise, seed, i, k, dim):
    scale = noise.scale(i, k)
    return sample_laplace(scale, dim, noise_rng(seed, i, k))


def run_algorithm1(p, noise, K, seed, mu0=None, tol=1e-8):
    """Run the noisy distributed iteration for K synchronous rounds.

    Per round: each agent solves its local problem, adds per-coordinate
    Laplace noise, neighbors average shared components, and duals update by
    mu_i += tau_k (E_i v - z_i).  mu0 seeds warm starts across MPC steps.
    """
    rep = validate_problem(p)
    if not rep.ok:
        raise ValueError(f"invalid problem: {rep}")
    noise.check_cover(p.M, K)
    M = p.M
    sel = p.selection
    tau0 = p.rho_phi
    mu = [np.zeros(sel.z_dim(i)) if mu0 is None else np.array(mu0[i], float) for i in range(M)]
    states = []
    violations = []
    for k in range(1, K + 1):
        tau = 1.0 / (tau0 * k)
        zs, deltas = [], []
        for i in range(M):
            delta = _noise_draw(noise, seed, i, k, sel.z_dim(i))
            try:
                zi = solve_local(p.locals_[i], mu[i], tol=tol).z + delta
            except SubsolverError as exc:
                raise SolverFailure(f"agent {i}, iteration {k}: {exc}", agent=i, iteration=k) from exc
            zs.append(zi)
            deltas.append(delta)
            if np.linalg.norm(zi) > p.bounds_G[i]:
                violations.append((k, i, float(np.linalg.norm(zi))))
        v = []
        for i in range(M):
            if sel.dims[i] == 0:
                v.append(np.zeros(0))
                continue
            acc = np.zeros(sel.dims[i])
            nbrs = p.graph.neighbors(i)
            for j in nbrs:
                acc += zs[j][sel.copy_positions(j, i)]
            v.append(acc / len(nbrs))
        v_full = np.concatenate(v) if v else np.zeros(0)
        new_mu = []
        for i in range(M):
            new_mu.append(mu[i] + tau * (sel.gather(i, v_full) - zs[i]))
        mu = new_mu
        states.append(IterationState(k=k, tau=tau, z=zs, v=v, mu=mu, delta=deltas))
    return Transcript(
        states=states,
        seed=seed,
        problem_hash=problem_hash(p),
        noise=noise,
        bound_violations=violations,
    )


def _consensus_projection(sel):
    """Projection onto {w : E'w = 0} subtracts the per-component group mean."""
    groups = sel.global_of_zstack()
    counts = np.bincount(groups, minlength=sel.dim_v).astype(float)

    def proj(w):
        sums = np.bincount(groups, weights=w, minlength=sel.dim_v)
        means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
        return w - means[groups]

    return proj


def run_algorithm2(p, noise, K, seed, w0=None, tol=1e-8):
    """Stochastic proximal-gradient iteration on the dual problem.

    The gradient of the smooth dual term at w is the stack of local solutions
    g(P_i, w_i); the prox of the consensus indicator is the subspace
    projection.  Noise streams match run_algorithm1, so e^k stacks the same
    delta_i^k draws.
    """
    rep = validate_problem(p)
    if not rep.ok:
        raise ValueError(f"invalid problem: {rep}")
    noise.check_cover(p.M, K)
    sel = p.selection
    offs = sel.z_offsets()
    tau0 = p.rho_phi
    proj = _consensus_projection(sel)
    w = np.zeros(offs[-1]) if w0 is None else np.asarray(w0, float).copy()
    out = []
    for k in range(1, K + 1):
        tau = 1.0 / (tau0 * k)
        grad = np.empty(offs[-1])
        err = np.empty(offs[-1])
        for i in range(p.M):
            delta = _noise_draw(noise, seed, i, k, sel.z_dim(i))
            try:
                zi = solve_local(p.locals_[i], w[offs[i] : offs[i + 1]], tol=tol).z
            except SubsolverError as exc:
                raise SolverFailure(f"agent {i}, iteration {k}: {exc}", agent=i, iteration=k) from exc
            grad[offs[i] : offs[i + 1]] = zi + delta
            err[offs[i] : offs[i + 1]] = delta
        w = proj(w - tau * grad)
        out.append(DualState(k=k, w=w.copy(), e=err))
    return out


def dual_objective(p, w, tol=1e-8):
    """D(w) = -sum_i f_i*(w_i) on the consensus subspace E'w = 0.

    Conjugates are evaluated through the local solver: f_i*(w_i) =
    w_i'z* - f_i(z*) with z* = g(P_i, w_i).  Returns -inf when E'w != 0
    beyond tolerance.
    """
    sel = p.selection
    w = np.asarray(w, dtype=float)
    offs = sel.z_offsets()
    if w.shape != (offs[-1],):
        raise ValueError(f"w has shape {w.shape}, expected ({offs[-1]},)")
    groups = sel.global_of_zstack()
    sums = np.bincount(groups, weights=w, minlength=sel.dim_v)
    if sel.dim_v and np.max(np.abs(sums)) > tol * (1.0 + np.max(np.abs(w), initial=0.0)):
        return float("-inf")
    total = 0.0
    for i in range(p.M):
        wi = w[offs[i] : offs[i + 1]]
        z = solve_local(p.locals_[i], wi).z
        total += float(wi @ z) - p.locals_[i].objective(z)
    return -total


def centralized_reference(p, tol=1e-10):
    """Optimal value via the assembled centralized QP (consensus eliminated).

    Returns (v_star, f_star); by strong duality f_star equals D(w*).
    """
    from .model import QuadraticLocal  # local import to avoid cycle at module load

    sel = p.selection
    n = sel.dim_v
    H = np.zeros((n, n))
    h = np.zeros(n)
    C_rows, c_rows = [], []
    for i in range(p.M):
        idx = sel._gidx[i]
        H[np.ix_(idx, idx)] += p.locals_[i].H
        h[idx] += p.locals_[i].h
        if p.locals_[i].n_cons:
            Ci = np.zeros((p.locals_[i].n_cons, n))
            Ci[:, idx] = p.locals_[i].C
            C_rows.append(Ci)
            c_rows.append(p.locals_[i].c)
    P = QuadraticLocal(
        H=H,
        h=h,
        C=np.vstack(C_rows) if C_rows else None,
        c=np.concatenate(c_rows) if c_rows else None,
    )
    sol = solve_local(P, np.zeros(n), tol=tol)
    return sol.z, P.objective(sol.z)


def suboptimality_bound(p, noise, k):
    """Expected-suboptimality bound 4 sum_i (G_i^2 + sigma_i^2) / (rho_phi^2 k).

    sigma_i^2 is the noise-vector second moment E||delta_i||^2 =
    2 * dim(z_i) * scale_i^2 for per-coordinate Laplace; non-constant
    schedules use the max scale over rounds.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    total = 0.0
    for i in range(p.M):
        scale = noise.max_scale(i)
        total += p.bounds_G[i] ** 2 + 2.0 * p.selection.z_dim(i) * scale * scale
    return 4.0 * total / (p.rho_phi**2 * k)


def transcript_csv(p, transcript, gaps=None):
    """One row per agent per iteration: k, i, z, v, mu (and dual gap if given)."""
    buf = io.StringIO()
    wtr = csv.writer(buf, lineterminator="\n")
    buf.write("# privdist transcript schema v1\n")
    wtr.writerow(["k", "agent", "z", "v", "mu", "dual_gap"])
    for st in transcript.states:
        gap = "" if gaps is None or st.k not in gaps else repr(float(gaps[st.k]))
        for i in range(p.M):
            wtr.writerow(
                [
                    st.k,
                    i,
                    " ".join(repr(float(x)) for x in st.z[i]),
                    " ".join(repr(float(x)) for x in st.v[i]),
                    " ".join(repr(float(x)) for x in st.mu[i]),
                    gap,
                ]
            )
    return buf.getvalue()
