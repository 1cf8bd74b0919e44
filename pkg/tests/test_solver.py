import numpy as np
import pytest

from privdist import (
    DistributedProblem,
    Graph,
    NoiseSchedule,
    QuadraticLocal,
    SelectionMap,
    centralized_reference,
    dual_objective,
    run_algorithm1,
    run_algorithm2,
    suboptimality_bound,
)
from privdist.solver import transcript_csv

from conftest import random_problem


def single_agent(H, h, C=None, c=None, G=10.0):
    g = Graph.from_edges(1, [])
    sel = SelectionMap.neighborhood(g, (len(h),))
    return DistributedProblem(
        graph=g,
        selection=sel,
        locals_=(QuadraticLocal(H=H, h=h, C=C, c=c),),
        bounds_G=(G,),
    )


def two_agent_pair(lam=2.0):
    g = Graph.from_edges(2, [(0, 1)])
    sel = SelectionMap.neighborhood(g, (1, 1))
    locs = tuple(QuadraticLocal(H=lam * np.eye(2), h=np.zeros(2)) for _ in range(2))
    return DistributedProblem(graph=g, selection=sel, locals_=locs, bounds_G=(1.0, 1.0))


# distributed iteration -------------------------------------------------


def test_single_agent_hits_optimum_immediately():
    p = single_agent([[1.0]], [-1.0])
    tr = run_algorithm1(p, NoiseSchedule.zero(1, 5), K=5, seed=0)
    for st in tr.states:
        assert st.z[0] == pytest.approx([1.0])
        assert st.mu[0] == pytest.approx([0.0])


def test_deterministic_replay_byte_identical():
    rng = np.random.default_rng(20)
    p = random_problem(rng)
    noise = NoiseSchedule.constant([0.2] * p.M, 10)
    a = run_algorithm1(p, noise, K=10, seed=7)
    b = run_algorithm1(p, noise, K=10, seed=7)
    assert transcript_csv(p, a) == transcript_csv(p, b)


def test_different_seed_changes_noise():
    p = two_agent_pair()
    noise = NoiseSchedule.constant([0.5, 0.5], 3)
    a = run_algorithm1(p, noise, K=3, seed=1)
    b = run_algorithm1(p, noise, K=3, seed=2)
    assert not np.array_equal(a.states[0].z[0], b.states[0].z[0])


def test_noiseless_gap_decays():
    rng = np.random.default_rng(21)
    p = random_problem(rng, with_constraints=False)
    _, f_star = centralized_reference(p)
    tr = run_algorithm1(p, NoiseSchedule.zero(p.M, 300), K=300, seed=0)
    g10 = f_star - dual_objective(p, tr.mu_stacked(10))
    g300 = f_star - dual_objective(p, tr.mu_stacked(300))
    assert 0 <= g300 <= g10 + 1e-12


def test_bound_violation_flagged_with_tiny_G():
    g = Graph.from_edges(1, [])
    sel = SelectionMap.neighborhood(g, (1,))
    p = DistributedProblem(
        graph=g,
        selection=sel,
        locals_=(QuadraticLocal(H=[[1.0]], h=[-5.0]),),
        bounds_G=(1.0,),
    )
    tr = run_algorithm1(p, NoiseSchedule.zero(1, 2), K=2, seed=0)
    assert len(tr.bound_violations) == 2


def test_schedule_cover_enforced():
    p = two_agent_pair()
    with pytest.raises(ValueError):
        run_algorithm1(p, NoiseSchedule.zero(2, 3), K=5, seed=0)
    with pytest.raises(ValueError):
        run_algorithm1(p, NoiseSchedule.zero(3, 5), K=5, seed=0)


# dual reference iteration ----------------------------------------------


def test_dual_iterates_match_distributed_ones():
    rng = np.random.default_rng(22)
    for trial in range(5):
        p = random_problem(rng)
        noise = NoiseSchedule.constant(rng.uniform(0.05, 0.3, p.M), 20)
        tr = run_algorithm1(p, noise, K=20, seed=100 + trial)
        ws = run_algorithm2(p, noise, K=20, seed=100 + trial)
        for k in (1, 10, 20):
            diff = np.max(np.abs(tr.mu_stacked(k) - ws[k - 1].w))
            assert diff <= 1e-9


def test_dual_stays_zero_when_started_at_optimum():
    p = single_agent([[1.0]], [-1.0])
    out = run_algorithm2(p, NoiseSchedule.zero(1, 4), K=4, seed=0)
    for st in out:
        assert st.w == pytest.approx([0.0])
        assert st.e == pytest.approx([0.0])


def test_zero_rounds_empty_list():
    p = two_agent_pair()
    assert run_algorithm2(p, NoiseSchedule.zero(2, 1), K=0, seed=0) == []


def test_warm_start_seeds_duals():
    # M=1: E_i v = z_i, so the dual stays at the supplied warm start and the
    # round-1 solution is H^-1 (mu0 - h)
    p = single_agent([[2.0]], [0.0])
    tr = run_algorithm1(p, NoiseSchedule.zero(1, 3), K=3, seed=0, mu0=[np.array([3.0])])
    assert tr.states[0].z[0] == pytest.approx([1.5])
    assert tr.states[-1].mu[0] == pytest.approx([3.0])


# dual objective ---------------------------------------------------------


def test_dual_objective_origin_unconstrained():
    p = single_agent([[1.0]], [0.0])
    assert dual_objective(p, np.zeros(1)) == pytest.approx(0.0)


def test_dual_objective_origin_interval():
    # f = z^2/2 on [1, 2]: conjugate at 0 is -min f = -1/2, so D(0) = 1/2
    p = single_agent([[1.0]], [0.0], C=[[1.0], [-1.0]], c=[2.0, -1.0])
    assert dual_objective(p, np.zeros(1)) == pytest.approx(0.5)


def test_dual_objective_off_subspace_sentinel():
    p = two_agent_pair()
    w = np.array([1.0, 0.0, 0.0, 0.0])  # copies of component 0 do not cancel
    assert dual_objective(p, w) == float("-inf")


def test_dual_objective_dimension_check():
    p = two_agent_pair()
    with pytest.raises(ValueError):
        dual_objective(p, np.zeros(3))


def test_strong_duality_at_optimum():
    # well-conditioned locals (eigenvalues in [0.8, 2]) so the 1/(tau0 k)
    # schedule converges fast enough to expose the duality gap
    rng = np.random.default_rng(23)
    for _ in range(5):
        p = random_problem(rng, with_constraints=False)
        locs = []
        for loc in p.locals_:
            n = loc.dim
            A = rng.standard_normal((n, n))
            Q, _ = np.linalg.qr(A)
            D = np.diag(rng.uniform(0.8, 2.0, n))
            locs.append(QuadraticLocal(H=Q @ D @ Q.T, h=loc.h))
        p = DistributedProblem(
            graph=p.graph, selection=p.selection, locals_=tuple(locs), bounds_G=p.bounds_G
        )
        _, f_star = centralized_reference(p)
        tr = run_algorithm1(p, NoiseSchedule.zero(p.M, 400), K=400, seed=0)
        gap = f_star - dual_objective(p, tr.mu_stacked(400))
        assert 0 <= gap <= 1e-2


# suboptimality bound ----------------------------------------------------


def test_bound_plugin_single_agent():
    # M=1, G=1, no noise, rho_phi=1, k=4: 4*1/(1*4) = 1
    p = single_agent([[1.0]], [0.0], G=1.0)
    assert suboptimality_bound(p, NoiseSchedule.zero(1, 4), 4) == pytest.approx(1.0)


def test_bound_plugin_two_agents_with_noise():
    # each agent holds a 2-vector; scale 0.5 gives second moment
    # 2*2*0.25 = 1 per agent, so 4*(1+1+1+1)/(2^2*10) = 0.4
    p = two_agent_pair(lam=2.0)
    noise = NoiseSchedule.constant([0.5, 0.5], 10)
    assert suboptimality_bound(p, noise, 10) == pytest.approx(0.4)


def test_bound_halves_when_k_doubles():
    p = two_agent_pair()
    noise = NoiseSchedule.constant([0.3, 0.3], 1)
    assert suboptimality_bound(p, noise, 40) == pytest.approx(
        suboptimality_bound(p, noise, 20) / 2
    )


def test_bound_rejects_k_zero():
    p = two_agent_pair()
    with pytest.raises(ValueError):
        suboptimality_bound(p, NoiseSchedule.zero(2, 1), 0)


# transcript export ------------------------------------------------------


def test_transcript_csv_shape_and_gaps():
    p = two_agent_pair()
    tr = run_algorithm1(p, NoiseSchedule.zero(2, 3), K=3, seed=0)
    text = transcript_csv(p, tr, gaps={3: 0.125})
    lines = text.strip().split("\n")
    assert lines[0].startswith("#")
    assert lines[1] == "k,agent,z,v,mu,dual_gap"
    assert len(lines) == 2 + 3 * 2
    assert lines[-1].endswith("0.125")
    assert "np.float" not in text
