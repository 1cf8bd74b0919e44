"""Problem representation: communication graph, per-agent quadratic data,
selection (index) maps between local and global variables, and the adjacency
metric on problem parameters.

All objects are immutable after construction and safe to share read-only
across parallel workers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

__all__ = [
    "Graph",
    "SelectionMap",
    "QuadraticLocal",
    "AdjacencyMetric",
    "DistributedProblem",
    "ValidationReport",
    "DegenerateAdjacencyBall",
    "validate_problem",
    "adjacency_distance",
    "perturb_problem",
    "load_problem",
    "problem_to_dict",
    "problem_from_dict",
    "canonical_json",
    "problem_hash",
]

SYM_TOL = 1e-10


class DegenerateAdjacencyBall(RuntimeError):
    """No positive-definite neighbor exists inside the unit adjacency ball."""


# ---------------------------------------------------------------------------
# graph


@dataclass(frozen=True)
class Graph:
    """Undirected communication graph on agents 0..M-1.

    ``edges`` holds unordered pairs (i, j) with i != j; every agent is
    implicitly its own neighbor.
    """

    M: int
    edges: frozenset

    @staticmethod
    def from_edges(M, edge_list):
        edges = set()
        for i, j in edge_list:
            i, j = int(i), int(j)
            if i == j:
                continue
            edges.add((min(i, j), max(i, j)))
        return Graph(M=int(M), edges=frozenset(edges))

    @staticmethod
    def star(M):
        """Node 0 connected to every other node."""
        return Graph.from_edges(M, [(0, i) for i in range(1, M)])

    def neighbors(self, i):
        """Sorted neighbor set of agent i, including i itself."""
        out = {i}
        for a, b in self.edges:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return tuple(sorted(out))

    def is_connected(self):
        if self.M <= 1:
            return True
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in self.neighbors(i):
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.M

    def check(self):
        msgs = []
        for a, b in self.edges:
            if not (0 <= a < self.M and 0 <= b < self.M):
                msgs.append(f"edge ({a},{b}) references unknown agent")
        if not self.is_connected():
            msgs.append("graph is not connected")
        return msgs


# ---------------------------------------------------------------------------
# selection maps


@dataclass(frozen=True, eq=False)
class SelectionMap:
    """Index-map representation of the selection matrices.

    Agent i owns a block [v]_i of dimension ``dims[i]`` inside the global
    vector v.  ``entries[i]`` is the ordered list of (owner j, component t)
    pairs defining z_i, i.e. z_i = v[indices of entries[i]].
    """

    dims: tuple
    entries: tuple  # per agent: tuple of (owner, component)

    def __post_init__(self):
        offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        object.__setattr__(self, "_offsets", offsets)
        gidx = []
        for ent in self.entries:
            gidx.append(np.array([offsets[j] + t for j, t in ent], dtype=int))
        object.__setattr__(self, "_gidx", tuple(gidx))

    @staticmethod
    def neighborhood(graph, dims):
        """Canonical selection: z_i concatenates [v]_j for j in sorted N_i."""
        entries = []
        for i in range(graph.M):
            ent = []
            for j in graph.neighbors(i):
                ent.extend((j, t) for t in range(dims[j]))
            entries.append(tuple(ent))
        return SelectionMap(dims=tuple(int(d) for d in dims), entries=tuple(entries))

    @property
    def M(self):
        return len(self.dims)

    @property
    def dim_v(self):
        return int(self._offsets[-1])

    def z_dim(self, i):
        return len(self.entries[i])

    def gather(self, i, v):
        """z_i = E_i v."""
        return np.asarray(v, dtype=float)[self._gidx[i]]

    def copy_positions(self, j, i):
        """Positions inside z_j holding the components of [v]_i, in order.

        Returns None if z_j does not carry a complete single copy of [v]_i.
        """
        pos = [[] for _ in range(self.dims[i])]
        for p, (owner, t) in enumerate(self.entries[j]):
            if owner == i:
                pos[t].append(p)
        if any(len(ps) != 1 for ps in pos):
            return None
        return np.array([ps[0] for ps in pos], dtype=int)

    def global_of_zstack(self):
        """For the stacked z = (z_1,...,z_M): global component per coordinate."""
        return np.concatenate([g for g in self._gidx]) if self._gidx else np.array([], int)

    def z_offsets(self):
        lens = [len(e) for e in self.entries]
        return np.concatenate([[0], np.cumsum(lens)]).astype(int)

    def check(self, graph):
        msgs = []
        if len(self.entries) != graph.M or len(self.dims) != graph.M:
            msgs.append("selection map agent count does not match graph")
            return msgs
        for i, ent in enumerate(self.entries):
            ni = set(graph.neighbors(i))
            for j, t in ent:
                if j not in ni:
                    msgs.append(f"z_{i} references component of agent {j} outside N_{i}")
                if not (0 <= t < self.dims[j]):
                    msgs.append(f"z_{i} references component {t} out of range for agent {j}")
        # every neighbor of i must carry exactly one full copy of [v]_i
        for i in range(graph.M):
            if self.dims[i] == 0:
                continue
            for j in graph.neighbors(i):
                if self.copy_positions(j, i) is None:
                    msgs.append(f"z_{j} does not carry a single full copy of [v]_{i}")
        return msgs


# ---------------------------------------------------------------------------
# quadratic local data


@dataclass(frozen=True, eq=False)
class QuadraticLocal:
    """Local objective f(z) = 0.5 z'Hz + h'z with constraint Cz <= c.

    H must be symmetric positive definite; eigen bounds are computed at
    construction.  Matrices failing symmetry by more than 1e-10 are rejected
    rather than silently symmetrized.
    """

    H: np.ndarray
    h: np.ndarray
    C: np.ndarray = None
    c: np.ndarray = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        n = H.shape[0]
        if self.C is None or np.size(self.C) == 0:
            C = np.zeros((0, n))
            c = np.zeros(0)
        else:
            C = np.atleast_2d(np.asarray(self.C, dtype=float))
            c = np.atleast_1d(np.asarray(self.c, dtype=float))
        for name, arr in (("H", H), ("h", h), ("C", C), ("c", c)):
            object.__setattr__(self, name, arr)
        msgs = []
        if H.shape[0] != H.shape[1]:
            msgs.append("H is not square")
        elif np.max(np.abs(H - H.T), initial=0.0) > SYM_TOL:
            msgs.append("H is not symmetric (tolerance 1e-10)")
        if h.shape != (n,):
            msgs.append("h dimension does not match H")
        if C.shape[1] != n:
            msgs.append("C column count does not match H")
        if c.shape != (C.shape[0],):
            msgs.append("c dimension does not match C")
        if not msgs:
            evals = np.linalg.eigvalsh(0.5 * (H + H.T))
            lam_min = float(evals[0])
            lam_max = float(evals[-1])
            if lam_min <= SYM_TOL:
                msgs.append(f"lambda_min <= 0 (got {lam_min:.3e})")
        else:
            lam_min, lam_max = float("nan"), float("nan")
        object.__setattr__(self, "lam_min", lam_min)
        object.__setattr__(self, "lam_max", lam_max)
        object.__setattr__(self, "defects", tuple(msgs))
        object.__setattr__(self, "_cache", {})

    @property
    def dim(self):
        return self.H.shape[0]

    @property
    def n_cons(self):
        return self.C.shape[0]

    def objective(self, z):
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.h @ z)

    def with_h(self, h):
        return QuadraticLocal(H=self.H, h=np.asarray(h, float), C=self.C, c=self.c)

    def with_H(self, H):
        return QuadraticLocal(H=np.asarray(H, float), h=self.h, C=self.C, c=self.c)

    def with_c(self, c):
        return QuadraticLocal(H=self.H, h=self.h, C=self.C, c=np.asarray(c, float))


# ---------------------------------------------------------------------------
# adjacency metric

_BLOCKS = ("H", "h", "C", "c")


def _block_norm(delta, norm):
    delta = np.asarray(delta, dtype=float)
    if delta.size == 0:
        return 0.0
    if norm == "l1":
        return float(np.sum(np.abs(delta)))
    if norm == "linf":
        return float(np.max(np.abs(delta)))
    if norm == "l2":
        if delta.ndim == 2 and min(delta.shape) > 1:
            return float(np.linalg.norm(delta, 2))  # spectral
        return float(np.linalg.norm(delta.ravel()))
    raise ValueError(f"unknown norm selector {norm!r}")


@dataclass(frozen=True, eq=False)
class AdjacencyMetric:
    """Weighted-norm pseudometric on (H, h, C, c) parameter blocks.

    adj(P, P') = a1*||m_H o dH|| + a2*||m_h o dh|| + a3*||m_C o dC|| + a4*||m_c o dc||

    ``masks`` carries optional per-entry nonnegative weights (elementwise),
    restricting the distance to "private entries"; None means all-ones.
    The l2 selector uses the spectral norm for matrices and the Euclidean
    norm for vectors.
    """

    weights: tuple  # (a1, a2, a3, a4)
    norm: str = "l2"
    masks: dict = None

    def __post_init__(self):
        w = tuple(float(a) for a in self.weights)
        if len(w) != 4 or any(a < 0 for a in w):
            raise ValueError("weights must be four nonnegative reals")
        if not any(a > 0 for a in w):
            raise ValueError("at least one weight must be positive")
        if self.norm not in ("l1", "l2", "linf"):
            raise ValueError(f"unknown norm selector {self.norm!r}")
        masks = {}
        if self.masks:
            for k, m in self.masks.items():
                if k not in _BLOCKS:
                    raise ValueError(f"unknown mask block {k!r}")
                if m is not None:
                    masks[k] = np.asarray(m, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "masks", masks)
        hm = masks.get("H")
        if hm is not None and hm.ndim == 2 and np.max(np.abs(hm - hm.T), initial=0.0) > SYM_TOL:
            raise ValueError("H mask must be symmetric")

    def mask_for(self, block, shape):
        m = self.masks.get(block)
        if m is None:
            return np.ones(shape)
        if m.shape != tuple(shape):
            raise ValueError(f"mask for block {block!r} has shape {m.shape}, expected {shape}")
        return m

    def block_weight(self, block):
        return self.weights[_BLOCKS.index(block)]

    def distance(self, P, Pp):
        total = 0.0
        for block, a in zip(_BLOCKS, self.weights):
            if a == 0.0:
                continue
            x, y = getattr(P, block), getattr(Pp, block)
            if x.shape != y.shape:
                raise ValueError(f"dimension mismatch in block {block}")
            if x.size == 0:
                continue
            m = self.mask_for(block, x.shape)
            total += a * _block_norm(m * (x - y), self.norm)
        return total

    def active_blocks(self):
        """Blocks that can contribute nonzero distance."""
        out = []
        for block, a in zip(_BLOCKS, self.weights):
            if a == 0.0:
                continue
            m = self.masks.get(block)
            if m is not None and not np.any(m > 0):
                continue
            out.append(block)
        return out


def adjacency_distance(metric, P, Pp):
    """adj(P, P') under the metric; raises on dimension mismatch."""
    return metric.distance(P, Pp)


def _unit_direction(shape, mask, weight, norm, rng, symmetric):
    """Random direction with weight * ||mask o d|| == 1, supported on mask>0."""
    for _ in range(64):
        g = rng.standard_normal(shape)
        if symmetric and len(shape) == 2:
            g = 0.5 * (g + g.T)
        g = np.where(mask > 0, g, 0.0)
        nrm = _block_norm(mask * g, norm)
        if nrm > 1e-12:
            return g / (weight * nrm)
    raise DegenerateAdjacencyBall("mask support too small to draw a direction")


def perturb_problem(P, metric, rng):
    """Uniform-in-radius draw of P' inside the unit adjacency ball around P.

    Draws a direction per unmasked parameter block, a radius r ~ U[0,1], and
    random block fractions, scaling blocks so the weighted distance equals r.
    Retries the H block until H' stays positive definite; raises
    DegenerateAdjacencyBall if no positive-definite neighbor can be found.
    """
    blocks = []
    for block, a in zip(_BLOCKS, metric.weights):
        if a == 0.0:
            continue
        arr = getattr(P, block)
        if arr.size == 0:
            continue
        mask = metric.mask_for(block, arr.shape)
        if not np.any(mask > 0):
            continue
        blocks.append((block, a, arr, mask))
    if not blocks:
        return P

    r = float(rng.uniform(0.0, 1.0))
    fracs = rng.dirichlet(np.ones(len(blocks))) if len(blocks) > 1 else np.array([1.0])

    for _ in range(200):
        new = {"H": P.H, "h": P.h, "C": P.C, "c": P.c}
        ok = True
        for (block, a, arr, mask), t in zip(blocks, fracs):
            d = _unit_direction(arr.shape, mask, a, metric.norm, rng, symmetric=(block == "H"))
            new[block] = arr + (r * t) * d
        if "H" in [b for b, *_ in blocks]:
            Hn = 0.5 * (new["H"] + new["H"].T)
            new["H"] = Hn
            if np.linalg.eigvalsh(Hn)[0] <= SYM_TOL:
                ok = False
        if ok:
            return QuadraticLocal(H=new["H"], h=new["h"], C=new["C"], c=new["c"])
    raise DegenerateAdjacencyBall(
        "degenerate adjacency ball: no positive-definite neighbor found "
        f"(lambda_min={P.lam_min:.3e} vs H-block radius)"
    )


# ---------------------------------------------------------------------------
# distributed problem


@dataclass(frozen=True, eq=False)
class DistributedProblem:
    """Problem instance: graph + selection maps + per-agent quadratic data.

    ``bounds_G`` is the user-supplied radius on ||z_i^k|| assumed by the
    suboptimality analysis; it is audited post-run, not inferred.
    """

    graph: Graph
    selection: SelectionMap
    locals_: tuple
    bounds_G: tuple

    def __post_init__(self):
        object.__setattr__(self, "locals_", tuple(self.locals_))
        object.__setattr__(self, "bounds_G", tuple(float(g) for g in self.bounds_G))

    @property
    def M(self):
        return self.graph.M

    @property
    def rho_phi(self):
        """min_i lambda_min(H_i): convexity modulus used as tau^0."""
        return min(P.lam_min for P in self.locals_)

    @property
    def B_squared(self):
        """Dual-gradient bound sum_i G_i^2."""
        return float(sum(g * g for g in self.bounds_G))


@dataclass
class ValidationReport:
    messages: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.messages

    def __str__(self):
        return "ok" if self.ok else "; ".join(self.messages)


def validate_problem(p):
    """Check every structural invariant; the report lists all violations."""
    rep = ValidationReport()
    rep.messages.extend(p.graph.check())
    rep.messages.extend(p.selection.check(p.graph))
    if len(p.locals_) != p.M:
        rep.messages.append("one QuadraticLocal required per agent")
        return rep
    if len(p.bounds_G) != p.M:
        rep.messages.append("one G bound required per agent")
        return rep
    for i, P in enumerate(p.locals_):
        for d in P.defects:
            rep.messages.append(f"agent {i}: {d}")
        if not P.defects and P.dim != p.selection.z_dim(i):
            rep.messages.append(
                f"agent {i}: H dimension {P.dim} does not match z_{i} dimension "
                f"{p.selection.z_dim(i)}"
            )
    for i, g in enumerate(p.bounds_G):
        if not g > 0:
            rep.messages.append(f"agent {i}: G bound must be positive")
    return rep


# ---------------------------------------------------------------------------
# config I/O


def _metric_to_dict(m):
    d = {"weights": list(m.weights), "norm": m.norm}
    if m.masks:
        d["masks"] = {k: np.asarray(v).tolist() for k, v in m.masks.items()}
    return d


def _metric_from_dict(d):
    return AdjacencyMetric(
        weights=tuple(d["weights"]),
        norm=d.get("norm", "l2"),
        masks={k: np.asarray(v) for k, v in d.get("masks", {}).items()} or None,
    )


def problem_to_dict(p, metric=None):
    d = {
        "agents": p.M,
        "edges": sorted([list(e) for e in p.graph.edges]),
        "dims": list(p.selection.dims),
        "selection": [[list(e) for e in ent] for ent in p.selection.entries],
        "locals": [
            {
                "H": P.H.tolist(),
                "h": P.h.tolist(),
                "C": P.C.tolist(),
                "c": P.c.tolist(),
            }
            for P in p.locals_
        ],
        "G": list(p.bounds_G),
    }
    if metric is not None:
        d["adjacency"] = _metric_to_dict(metric)
    return d


def problem_from_dict(d):
    graph = Graph.from_edges(d["agents"], d.get("edges", []))
    dims = tuple(int(x) for x in d["dims"])
    sel = d.get("selection", "neighborhood")
    if sel == "neighborhood":
        selection = SelectionMap.neighborhood(graph, dims)
    else:
        selection = SelectionMap(
            dims=dims,
            entries=tuple(tuple((int(j), int(t)) for j, t in ent) for ent in sel),
        )
    locals_ = tuple(
        QuadraticLocal(
            H=np.asarray(L["H"], float),
            h=np.asarray(L["h"], float),
            C=np.asarray(L.get("C", []), float) if L.get("C") else None,
            c=np.asarray(L.get("c", []), float) if L.get("c") else None,
        )
        for L in d["locals"]
    )
    p = DistributedProblem(graph=graph, selection=selection, locals_=locals_, bounds_G=tuple(d["G"]))
    metric = _metric_from_dict(d["adjacency"]) if "adjacency" in d else None
    return p, metric


def load_problem(path):
    """Load a problem (and optional adjacency metric) from a YAML/JSON config."""
    with open(path) as fh:
        d = yaml.safe_load(fh)
    return problem_from_dict(d)


def canonical_json(obj):
    """Byte-stable serialization (sorted keys, full float repr)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def problem_hash(p):
    return hashlib.sha256(canonical_json(problem_to_dict(p)).encode()).hexdigest()
