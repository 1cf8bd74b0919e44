"""Builders compiling the two applications into distributed problem
instances: optimal power flow on a radial feeder (linearized lossless flows)
and receding-horizon temperature tracking for a set of rooms.

Conventions: agent 0 is the central trusted node in both star-shaped
problems; economic/input-cost curvature is split evenly between each agent
and the center so every local Hessian stays positive definite.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

import numpy as np
import yaml

from .model import (
    AdjacencyMetric,
    DistributedProblem,
    Graph,
    QuadraticLocal,
    SelectionMap,
)
from .privacy import NoiseSchedule
from .qp import InfeasibleSubproblem, solve_local
from .solver import run_algorithm1

__all__ = [
    "FeederModel",
    "BuildingModel",
    "MpcTrajectory",
    "build_opf",
    "opf_adjacency",
    "branch_flows",
    "build_mpc",
    "mpc_closed_loop",
    "opf_toy",
    "mpc_toy",
    "builtin_problem",
    "feeder_from_dict",
    "building_from_dict",
    "load_case",
]


# ---------------------------------------------------------------------------
# OPF on a radial feeder


@dataclass(frozen=True)
class FeederModel:
    """Radial feeder rooted at bus 0.

    ``parent[j]`` is the upstream bus of j (parent[0] = -1).  ``der_buses``
    lists the controllable buses in agent order with capacities and prices;
    ``safe_branches`` carries (upstream, downstream, P_lo, P_hi) flow limits.
    """

    parent: tuple
    p_c: tuple
    p_g: tuple
    der_buses: tuple  # bus ids
    u_lo: tuple
    u_hi: tuple
    prices: tuple
    safe_branches: tuple = ()
    delta_pi: float = None
    delta_u_hi: float = None
    delta_u_lo: float = None

    def __post_init__(self):
        n = len(self.parent)
        for name in ("p_c", "p_g"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per bus")
        if not (len(self.der_buses) == len(self.u_lo) == len(self.u_hi) == len(self.prices)):
            raise ValueError("per-DER arrays must align")
        if self.parent[0] != -1:
            raise ValueError("bus 0 must be the feeder head (parent -1)")
        # tree check: every bus reaches the root without cycles
        for j in range(1, n):
            seen, i = set(), j
            while i != 0:
                if i in seen or not (0 <= self.parent[i] < n):
                    raise ValueError(f"bus {j} is not connected to the root by a tree path")
                seen.add(i)
                i = self.parent[i]
        for lo, hi in zip(self.u_lo, self.u_hi):
            if lo > hi:
                raise ValueError("capacity interval is empty")
        for *_, plo, phi in self.safe_branches:
            if plo > phi:
                raise ValueError("flow limit interval is empty")

    @property
    def n_bus(self):
        return len(self.parent)

    @property
    def n_der(self):
        return len(self.der_buses)

    def downstream(self, j):
        """Buses downstream of branch (parent[j], j), i.e. the subtree at j."""
        out = {j}
        changed = True
        while changed:
            changed = False
            for k in range(self.n_bus):
                if k not in out and self.parent[k] in out:
                    out.add(k)
                    changed = True
        return out

    def max_price(self):
        return max(self.prices)

    def max_capacity(self):
        return max(max(abs(lo), abs(hi)) for lo, hi in zip(self.u_lo, self.u_hi))


def branch_flows(f, u):
    """Flow on every branch (parent[j], j): summed downstream net load."""
    u_at = dict(zip(f.der_buses, u))
    flows = {}
    for j in range(1, f.n_bus):
        d = f.downstream(j)
        flows[(f.parent[j], j)] = sum(
            f.p_c[k] - f.p_g[k] + u_at.get(k, 0.0) for k in d
        )
    return flows


def build_opf(f, G=None):
    """Compile the feeder into a star-shaped distributed problem.

    Agent 0 (center) holds the shared half of the economic objective plus the
    branch safety rows with consumption/generation folded into constants;
    DER agent i holds the other half and its capacity box.  Raises
    InfeasibleSubproblem when capacities cannot satisfy the flow limits.
    """
    n = f.n_der
    if n == 0:
        raise ValueError("feeder has no controllable buses")
    graph = Graph.star(n + 1)
    dims = (0,) + (1,) * n
    selection = SelectionMap.neighborhood(graph, dims)

    locals_ = []
    # center: half of each price on the diagonal, safety rows over all u
    H0 = np.diag(np.asarray(f.prices, dtype=float))
    rows, rhs = [], []
    for i_up, j_dn, plo, phi in f.safe_branches:
        d = f.downstream(j_dn)
        base = sum(f.p_c[k] - f.p_g[k] for k in d)
        row = np.array([1.0 if b in d else 0.0 for b in f.der_buses])
        rows.append(row)
        rhs.append(phi - base)
        rows.append(-row)
        rhs.append(base - plo)
    locals_.append(
        QuadraticLocal(
            H=H0,
            h=np.zeros(n),
            C=np.array(rows) if rows else None,
            c=np.array(rhs) if rows else None,
        )
    )
    for i in range(n):
        locals_.append(
            QuadraticLocal(
                H=np.array([[f.prices[i]]]),
                h=np.zeros(1),
                C=np.array([[1.0], [-1.0]]),
                c=np.array([f.u_hi[i], -f.u_lo[i]]),
            )
        )
    if G is None:
        gi = [max(abs(lo), abs(hi)) for lo, hi in zip(f.u_lo, f.u_hi)]
        G = [float(np.sqrt(np.sum(np.square(gi))))] + gi
    p = DistributedProblem(graph=graph, selection=selection, locals_=tuple(locals_), bounds_G=tuple(G))

    # phase-1 feasibility of the assembled problem (box + safety rows)
    from scipy.optimize import linprog

    if rows:
        res = linprog(
            c=np.zeros(n),
            A_ub=np.array(rows),
            b_ub=np.array(rhs),
            bounds=list(zip(f.u_lo, f.u_hi)),
            method="highs",
        )
        if not res.success:
            raise InfeasibleSubproblem("infeasible OPF: capacities cannot satisfy flow limits")
    return p


def opf_adjacency(f, der_index=0):
    """Adjacency metric for one DER agent's local problem.

    l1 block distances scaled so a change of delta_pi in the price or of
    delta_u in a capacity has distance exactly 1; only the price entry of H
    and the capacity entries of c are private.
    """
    dpi = f.delta_pi if f.delta_pi is not None else f.max_price()
    duh = f.delta_u_hi if f.delta_u_hi is not None else f.max_capacity()
    dul = f.delta_u_lo if f.delta_u_lo is not None else f.max_capacity()
    if dpi <= 0 or duh <= 0 or dul <= 0:
        raise ValueError("adjacency radii must be positive")
    return AdjacencyMetric(
        weights=(1.0, 0.0, 0.0, 1.0),
        norm="l1",
        masks={"H": np.array([[1.0 / dpi]]), "c": np.array([1.0 / duh, 1.0 / dul])},
    )


# ---------------------------------------------------------------------------
# MPC temperature tracking


@dataclass(frozen=True)
class BuildingModel:
    """Per-room two-state linear dynamics tracking a shared reference.

    States are deviations from the setpoint; x[0] is the room temperature
    deviation.  All rooms share (A, B, Q, R) in this model; the reference
    r(t) enters the center's linear term and is the private signal.
    """

    M: int
    A: np.ndarray
    B: np.ndarray
    N: int
    Q: np.ndarray
    R: float
    alpha_tr: float
    r: np.ndarray
    u_lo: float
    u_hi: float
    x0: np.ndarray  # (M, 2)
    temp_setpoint: float = 23.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float).reshape(2, 2)
        B = np.asarray(self.B, dtype=float).reshape(2)
        Q = np.asarray(self.Q, dtype=float).reshape(2, 2)
        x0 = np.asarray(self.x0, dtype=float).reshape(self.M, 2)
        r = np.asarray(self.r, dtype=float)
        for k, v in (("A", A), ("B", B), ("Q", Q), ("x0", x0), ("r", r)):
            object.__setattr__(self, k, v)
        if self.N < 1:
            raise ValueError("horizon must be >= 1")
        if self.R <= 0:
            raise ValueError("R must be positive")
        if np.linalg.matrix_rank(np.column_stack([B, A @ B])) < 2:
            raise ValueError("(A, B) is not controllable")
        ev = np.linalg.eigvalsh(0.5 * (Q + Q.T))
        if ev[0] < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if self.u_lo > self.u_hi:
            raise ValueError("input interval is empty")


def _condensation(b):
    """Prediction matrices: x_stack = Phi x0 + Gamma u over t = 1..N."""
    N = b.N
    Phi = np.zeros((2 * N, 2))
    Gamma = np.zeros((2 * N, N))
    Apow = [np.eye(2)]
    for _ in range(N):
        Apow.append(b.A @ Apow[-1])
    for t in range(1, N + 1):
        Phi[2 * (t - 1) : 2 * t, :] = Apow[t]
        for s in range(t):
            Gamma[2 * (t - 1) : 2 * t, s] = Apow[t - 1 - s] @ b.B
    Qbar = np.kron(np.eye(N), b.Q)
    return Phi, Gamma, Qbar


def build_mpc(b, x_init=None, r_offset=0, G=None):
    """Condense the horizon problem into a star-shaped distributed QP.

    States are eliminated by explicit rollout; each room keeps its condensed
    state cost plus half the input cost, the center keeps the other half plus
    the coupling tracking term.  Returns (problem, info) where info carries
    the objective constant dropped from the quadratic forms.
    """
    x_init = b.x0 if x_init is None else np.asarray(x_init, dtype=float).reshape(b.M, 2)
    if r_offset + b.N > len(b.r):
        raise ValueError("reference signal shorter than horizon window")
    rw = b.r[r_offset : r_offset + b.N]
    N, M = b.N, b.M
    Phi, Gamma, Qbar = _condensation(b)

    graph = Graph.star(M + 1)
    dims = (0,) + (N,) * M
    selection = SelectionMap.neighborhood(graph, dims)

    H_state = 2.0 * Gamma.T @ Qbar @ Gamma
    locals_ = []
    const = b.alpha_tr * float(rw @ rw)
    # center: half input cost per room plus the tracking coupler
    S = np.zeros((N, M * N))
    for i in range(M):
        S[np.arange(N), i * N + np.arange(N)] = 1.0
    H0 = b.R * np.eye(M * N) + 2.0 * b.alpha_tr * S.T @ S
    h0 = -2.0 * b.alpha_tr * S.T @ rw
    locals_.append(QuadraticLocal(H=H0, h=h0))
    for i in range(M):
        Hi = H_state + b.R * np.eye(N)
        hi = 2.0 * Gamma.T @ Qbar @ (Phi @ x_init[i])
        C = np.vstack([np.eye(N), -np.eye(N)])
        c = np.concatenate([np.full(N, b.u_hi), np.full(N, -b.u_lo)])
        locals_.append(QuadraticLocal(H=Hi, h=hi, C=C, c=c))
        const += float(x_init[i] @ (Phi.T @ Qbar @ Phi) @ x_init[i])
    if G is None:
        g_room = float(np.sqrt(N)) * max(abs(b.u_lo), abs(b.u_hi))
        G = [float(np.sqrt(M)) * g_room] + [g_room] * M
    p = DistributedProblem(graph=graph, selection=selection, locals_=tuple(locals_), bounds_G=tuple(G))
    info = {"constant": const, "r_window": rw, "S": S, "Phi": Phi, "Gamma": Gamma, "Qbar": Qbar}
    return p, info


def rollout_objective(b, x_init, u, rw):
    """Time-domain objective by explicit state rollout (test oracle)."""
    x_init = np.asarray(x_init, dtype=float).reshape(b.M, 2)
    u = np.asarray(u, dtype=float).reshape(b.M, b.N)
    total = 0.0
    x = x_init.copy()
    for t in range(b.N):
        total += b.alpha_tr * (float(np.sum(u[:, t])) - rw[t]) ** 2
        for i in range(b.M):
            total += b.R * u[i, t] ** 2
            x[i] = b.A @ x[i] + b.B * u[i, t]
        for i in range(b.M):
            total += float(x[i] @ b.Q @ x[i])
    # tail tracking terms beyond applied inputs are not modeled: horizon == N
    return total


@dataclass
class MpcTrajectory:
    steps: int
    r: np.ndarray
    sum_u: np.ndarray
    temps: np.ndarray  # (steps, M) absolute temperatures
    sum_u_central: np.ndarray = None
    temps_central: np.ndarray = None
    input_violations: int = 0

    def tracking_rel_error(self):
        if self.sum_u_central is None:
            raise ValueError("no centralized reference recorded")
        denom = max(float(np.linalg.norm(self.sum_u_central)), 1e-12)
        return float(np.linalg.norm(self.sum_u - self.sum_u_central)) / denom

    def to_csv(self):
        buf = io.StringIO()
        wtr = csv.writer(buf, lineterminator="\n")
        buf.write("# privdist mpc trajectory schema v1\n")
        header = ["t", "r", "sum_u"] + [f"temp_room{i+1}" for i in range(self.temps.shape[1])]
        if self.sum_u_central is not None:
            header += ["sum_u_central", "temp_room1_central"]
        wtr.writerow(header)
        for t in range(self.steps):
            row = [t, repr(float(self.r[t])), repr(float(self.sum_u[t]))]
            row += [repr(float(x)) for x in self.temps[t]]
            if self.sum_u_central is not None:
                row += [repr(float(self.sum_u_central[t])), repr(float(self.temps_central[t][0]))]
            wtr.writerow(row)
        return buf.getvalue()


def _centralized_mpc_input(b, x, r_offset):
    """Exact first inputs of the horizon problem (receding-horizon oracle)."""
    p, _ = build_mpc(b, x_init=x, r_offset=r_offset)
    from .solver import centralized_reference

    v, _ = centralized_reference(p, tol=1e-10)
    return v.reshape(b.M, b.N)[:, 0]


def mpc_closed_loop(b, sigma, K_per_step, steps, seed, with_reference=True, tol=1e-8):
    """Receding-horizon loop: run the noisy distributed iteration at each
    step (warm-started), apply the first inputs, advance the dynamics.

    Applied inputs are saturated to the input interval (the consensus average
    of noisy copies can exit the box).  Returns the trajectory, optionally
    with the exact centralized receding-horizon reference alongside.
    """
    if steps < 1 or r_len_needed(b, steps) > len(b.r):
        raise ValueError("reference signal shorter than simulation horizon")
    x = np.asarray(b.x0, dtype=float).reshape(b.M, 2).copy()
    xc = x.copy()
    warm = None
    sum_u = np.zeros(steps)
    temps = np.zeros((steps, b.M))
    sum_uc = np.zeros(steps) if with_reference else None
    tempsc = np.zeros((steps, b.M)) if with_reference else None
    violations = 0
    for t in range(steps):
        p, _ = build_mpc(b, x_init=x, r_offset=t)
        noise = NoiseSchedule.constant([sigma] * (b.M + 1), K_per_step)
        tr = run_algorithm1(p, noise, K_per_step, seed=seed + t, mu0=warm, tol=tol)
        warm = tr.states[-1].mu
        v = tr.final_v()
        u0 = np.array([v[i + 1][0] for i in range(b.M)])
        sat = np.clip(u0, b.u_lo, b.u_hi)
        violations += int(np.any(sat != u0))
        sum_u[t] = float(np.sum(sat))
        for i in range(b.M):
            x[i] = b.A @ x[i] + b.B * sat[i]
            temps[t, i] = x[i][0] + b.temp_setpoint
        if with_reference:
            uc = _centralized_mpc_input(b, xc, t)
            sum_uc[t] = float(np.sum(uc))
            for i in range(b.M):
                xc[i] = b.A @ xc[i] + b.B * uc[i]
                tempsc[t, i] = xc[i][0] + b.temp_setpoint
    return MpcTrajectory(
        steps=steps,
        r=b.r[:steps].copy(),
        sum_u=sum_u,
        temps=temps,
        sum_u_central=sum_uc,
        temps_central=tempsc,
        input_violations=violations,
    )


def r_len_needed(b, steps):
    return steps - 1 + b.N


# ---------------------------------------------------------------------------
# built-in instances


def opf_toy():
    """Chain feeder 0-1-2-3, DERs on buses 1..3, one monitored head branch
    forcing a load shed so the coupling constraint is active."""
    return FeederModel(
        parent=(-1, 0, 1, 2),
        p_c=(0.0, 1.0, 0.6, 0.4),
        p_g=(0.0, 0.0, 0.0, 0.0),
        der_buses=(1, 2, 3),
        u_lo=(-1.0, -1.0, -1.0),
        u_hi=(1.0, 1.0, 1.0),
        prices=(1.0, 1.2, 0.8),
        safe_branches=((0, 1, -10.0, 0.8),),
    )


def _daily_reference(steps, horizon):
    levels = [0.3, 0.9, 1.5, 0.6]
    r = np.repeat(levels, max((steps + horizon) // len(levels) + 1, 1))
    return r[: steps + horizon]


def mpc_toy(steps=96):
    """Synthetic three-room building; the dynamics are a documented stand-in
    (stable A, spectral radius below 0.97)."""
    return BuildingModel(
        M=3,
        A=np.array([[0.85, 0.12], [0.0, 0.95]]),
        B=np.array([0.5, 0.1]),
        N=13,
        Q=np.diag([0.05, 0.0]),
        R=0.7,
        alpha_tr=0.35,
        r=_daily_reference(steps, 13),
        u_lo=-0.2047,
        u_hi=0.7409,
        x0=np.array([[1.0, 0.2], [0.5, -0.1], [-0.3, 0.4]]),
    )


def builtin_problem(name):
    """Resolve a built-in case-study name to (problem, metric)."""
    if name == "opf-toy":
        f = opf_toy()
        return build_opf(f), opf_adjacency(f)
    if name == "mpc-toy":
        p, _ = build_mpc(mpc_toy())
        return p, None
    raise KeyError(f"unknown built-in problem {name!r}")


# ---------------------------------------------------------------------------
# config loading


def feeder_from_dict(d):
    return FeederModel(
        parent=tuple(d["parent"]),
        p_c=tuple(d["p_c"]),
        p_g=tuple(d["p_g"]),
        der_buses=tuple(d["der_buses"]),
        u_lo=tuple(d["u_lo"]),
        u_hi=tuple(d["u_hi"]),
        prices=tuple(d["prices"]),
        safe_branches=tuple(tuple(b) for b in d.get("safe_branches", [])),
        delta_pi=d.get("delta_pi"),
        delta_u_hi=d.get("delta_u_hi"),
        delta_u_lo=d.get("delta_u_lo"),
    )


def building_from_dict(d):
    return BuildingModel(
        M=int(d["rooms"]),
        A=np.asarray(d["A"], float),
        B=np.asarray(d["B"], float),
        N=int(d["horizon"]),
        Q=np.asarray(d["Q"], float),
        R=float(d["R"]),
        alpha_tr=float(d["alpha_tr"]),
        r=np.asarray(d["r"], float),
        u_lo=float(d["u_lo"]),
        u_hi=float(d["u_hi"]),
        x0=np.asarray(d["x0"], float),
        temp_setpoint=float(d.get("temp_setpoint", 23.0)),
    )


def load_case(path):
    """Load a feeder or building model from a YAML config with a 'kind' key."""
    with open(path) as fh:
        d = yaml.safe_load(fh)
    kind = d.get("kind")
    if kind == "feeder":
        return feeder_from_dict(d)
    if kind == "building":
        return building_from_dict(d)
    raise ValueError("config must set kind: feeder | building")
