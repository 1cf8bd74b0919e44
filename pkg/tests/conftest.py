import numpy as np

from privdist import DistributedProblem, Graph, QuadraticLocal, SelectionMap


def random_connected_graph(rng, M):
    edges = [(i, i + 1) for i in range(M - 1)]
    for i in range(M):
        for j in range(i + 2, M):
            if rng.random() < 0.3:
                edges.append((i, j))
    return Graph.from_edges(M, edges)


def random_problem(rng, M_max=4, dim_max=3, with_constraints=True, G=10.0):
    """Random valid instance: chain-plus-chords graph, PD locals, optional boxes."""
    M = int(rng.integers(2, M_max + 1))
    g = random_connected_graph(rng, M)
    dims = tuple(int(rng.integers(1, dim_max + 1)) for _ in range(M))
    sel = SelectionMap.neighborhood(g, dims)
    locs = []
    for i in range(M):
        n = sel.z_dim(i)
        A = rng.standard_normal((n, n))
        H = A @ A.T + n * np.eye(n)
        if with_constraints and rng.random() < 0.5:
            C = np.vstack([np.eye(n), -np.eye(n)])
            c = np.full(2 * n, float(rng.uniform(2.0, 5.0)))
        else:
            C = c = None
        locs.append(QuadraticLocal(H=H, h=rng.standard_normal(n), C=C, c=c))
    return DistributedProblem(graph=g, selection=sel, locals_=tuple(locs), bounds_G=(G,) * M)


def random_local(rng, dim_max=3, with_constraints=True):
    n = int(rng.integers(1, dim_max + 1))
    A = rng.standard_normal((n, n))
    H = A @ A.T + n * np.eye(n)
    h = rng.standard_normal(n)
    if with_constraints:
        m = int(rng.integers(0, 4))
        C = rng.standard_normal((m, n)) if m else None
        c = rng.uniform(0.5, 2.0, m) if m else None
    else:
        C = c = None
    return QuadraticLocal(H=H, h=h, C=C, c=c)
