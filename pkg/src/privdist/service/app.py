"""FastAPI service wrapping the pipeline: run, sensitivity, tradeoff,
allocate, mpc-loop.  Endpoints are stateless; all randomness is seeded by
the request, so identical requests produce identical artifacts.
"""

from __future__ import annotations

import math

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import budget as budget_mod
from .. import tradeoff as tradeoff_mod
from ..casestudies import builtin_problem, building_from_dict, mpc_closed_loop, mpc_toy
from ..model import problem_from_dict, validate_problem
from ..privacy import NoiseSchedule, PrivacyReport, sensitivity_sample
from ..qp import SubsolverError
from ..solver import (
    SolverFailure,
    centralized_reference,
    dual_objective,
    run_algorithm1,
    suboptimality_bound,
    transcript_csv,
)
from .schemas import (
    AllocateRequest,
    AllocateResponse,
    MpcLoopRequest,
    MpcLoopResponse,
    RunRequest,
    RunResponse,
    SensitivityRequest,
    SensitivityResponse,
    TradeoffRequest,
    TradeoffResponse,
)

app = FastAPI(title="privdist", version="0.1.0")


def _resolve_problem(src):
    try:
        if src.builtin is not None:
            return builtin_problem(src.builtin)
        return problem_from_dict(src.inline)
    except KeyError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    except (ValueError, TypeError) as exc:
        raise HTTPException(status_code=422, detail=f"bad problem config: {exc}")


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/run", response_model=RunResponse)
def run(req: RunRequest):
    p, _metric = _resolve_problem(req.problem)
    rep = validate_problem(p)
    if not rep.ok:
        raise HTTPException(status_code=422, detail=f"invalid problem: {rep}")
    try:
        scales = req.noise.scales_for(p.M)
        noise = NoiseSchedule.constant(scales, req.K)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    try:
        tr = run_algorithm1(p, noise, req.K, seed=req.seed)
        _, f_star = centralized_reference(p)
        gap = abs(dual_objective(p, tr.mu_stacked(req.K)) - f_star)
    except SolverFailure as exc:
        raise HTTPException(status_code=500, detail=f"solver failure: {exc}")
    thetas = req.thetas if req.thetas is not None else [0.0] * p.M
    preport = PrivacyReport.build(noise, thetas, req.K, requested=req.privacy_requested)
    warnings = []
    if tr.bound_violations:
        warnings.append(f"{len(tr.bound_violations)} iterates exceeded their G bound")
    for i, e in enumerate(preport.epsilon):
        if not math.isfinite(e) and (req.privacy_requested or [True] * p.M)[i]:
            warnings.append(f"agent {i}: requested privacy but a zero noise scale gives epsilon=inf")
    summary = {
        "schema_version": 1,
        "K": req.K,
        "seed": req.seed,
        "rng_streams": "per (seed, agent, k) derived streams",
        "problem_hash": tr.problem_hash,
        "final_dual_gap": gap,
        "suboptimality_bound": suboptimality_bound(p, noise, req.K),
        "warnings": warnings,
    }
    return RunResponse(
        summary=summary,
        privacy_report=preport.to_dict(),
        transcript_csv=transcript_csv(p, tr, gaps={req.K: gap}),
    )


@app.post("/sensitivity", response_model=SensitivityResponse)
def sensitivity(req: SensitivityRequest):
    p, metric = _resolve_problem(req.problem)
    if metric is None:
        raise HTTPException(status_code=422, detail="problem carries no adjacency metric")
    if not (0 <= req.agent < p.M):
        raise HTTPException(status_code=422, detail="agent index out of range")
    try:
        est = sensitivity_sample(
            p.locals_[req.agent],
            metric,
            req.alpha,
            req.beta,
            np.random.default_rng(req.seed),
            G=p.bounds_G[req.agent],
            N=req.N_override,
        )
    except SubsolverError as exc:
        raise HTTPException(status_code=500, detail=f"solver failure: {exc}")
    if est.analytic_upper is not None and est.gamma_N > est.analytic_upper + 1e-9:
        raise HTTPException(
            status_code=409,
            detail="internal-consistency failure: sampled estimate exceeds the analytic bound",
        )
    return SensitivityResponse(certificate=est.to_dict())


@app.post("/tradeoff", response_model=TradeoffResponse)
def tradeoff(req: TradeoffRequest):
    try:
        cloud, front = tradeoff_mod.pareto_front(
            req.theta, req.M, req.G, req.rho_phi,
            sigmas=req.sigmas, Ks=req.Ks,
        )
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    verdicts = []
    if req.test_points:
        if req.eps_bar is None or req.S_bar is None:
            raise HTTPException(status_code=422, detail="test points need eps_bar and S_bar")
        spec = tradeoff_mod.TradeoffSpec(
            eps_bar=req.eps_bar, S_bar=req.S_bar, M=req.M, G=req.G,
            rho_phi=req.rho_phi, thetas=(req.theta,) * req.M,
        )
        for tp in req.test_points:
            ok, slacks = tradeoff_mod.feasible(spec, tp["nu"], int(tp["K"]))
            verdicts.append({"nu": tp["nu"], "K": int(tp["K"]), "feasible": ok, "slacks": slacks})
    return TradeoffResponse(
        front=[{"sigma": s, "K": K, "epsilon": e, "S_bound": sub} for s, K, e, sub in front],
        verdicts=verdicts,
        cloud_csv=tradeoff_mod.cloud_csv(cloud, front),
    )


@app.post("/allocate", response_model=AllocateResponse)
def allocate(req: AllocateRequest):
    total = budget_mod.compute_budget(req.rho_phi, req.K, req.S_K, req.G)
    try:
        if req.scheme == "equal-split":
            M = req.M or len(req.G)
            alloc = budget_mod.allocate_equal(total, M)
        elif req.scheme == "equal-epsilon":
            if req.thetas is None:
                raise ValueError("equal-epsilon needs per-agent sensitivities")
            alloc = budget_mod.allocate_equal_epsilon(total, req.thetas)
        elif req.scheme == "kelly":
            if req.bids is None:
                raise ValueError("kelly needs bids")
            alloc = budget_mod.allocate_kelly(total, req.bids)
        elif req.scheme == "vcg-kelly":
            if req.bids is None:
                raise ValueError("vcg-kelly needs bids")
            alloc = budget_mod.allocate_vcg_kelly(total, req.bids)
        else:
            raise ValueError(f"unknown scheme {req.scheme!r}")
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    d = alloc.to_dict()
    if req.thetas is not None:
        from ..privacy import privacy_level

        d["implied_epsilon"] = [
            privacy_level(th, [s] * req.K) if s > 0 else (0.0 if th == 0 else "inf")
            for th, s in zip(req.thetas, alloc.scales())
        ]
    return AllocateResponse(allocation=d)


@app.post("/mpc-loop", response_model=MpcLoopResponse)
def mpc_loop(req: MpcLoopRequest):
    try:
        b = mpc_toy(steps=req.steps) if req.building is None else building_from_dict(req.building)
        traj = mpc_closed_loop(
            b, sigma=req.sigma, K_per_step=req.K_per_step, steps=req.steps,
            seed=req.seed, with_reference=req.with_reference,
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=f"bad building config: {exc}")
    except SolverFailure as exc:
        raise HTTPException(status_code=500, detail=f"solver failure: {exc}")
    summary = {
        "schema_version": 1,
        "steps": req.steps,
        "K_per_step": req.K_per_step,
        "sigma": req.sigma,
        "seed": req.seed,
        "input_saturations": traj.input_violations,
    }
    if req.with_reference:
        summary["tracking_rel_error_vs_centralized"] = traj.tracking_rel_error()
    return MpcLoopResponse(summary=summary, trajectory_csv=traj.to_csv())
