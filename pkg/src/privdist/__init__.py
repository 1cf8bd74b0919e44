"""privdist: locally differentially private distributed optimization.

Core package solves separable strongly-convex problems over a simulated
agent network with per-agent Laplace noise, quantifies the privacy and
suboptimality of a run, and allocates a cumulative noise budget across
agents.  A FastAPI service wraps the pipeline; the CLI is a thin client.
"""

from .model import (
    AdjacencyMetric,
    DistributedProblem,
    Graph,
    QuadraticLocal,
    SelectionMap,
    adjacency_distance,
    load_problem,
    perturb_problem,
    validate_problem,
)
from .qp import LocalSolution, brute_force_local, solve_local
from .solver import (
    Transcript,
    centralized_reference,
    dual_objective,
    run_algorithm1,
    run_algorithm2,
    suboptimality_bound,
)
from .privacy import (
    NoiseSchedule,
    PrivacyReport,
    SensitivityEstimate,
    empirical_dp_check,
    privacy_level,
    sample_laplace,
    sensitivity_bound_H,
    sensitivity_bound_h,
    sensitivity_sample,
)
from .budget import (
    BudgetAllocation,
    allocate_equal,
    allocate_equal_epsilon,
    allocate_kelly,
    allocate_vcg_kelly,
    compute_budget,
)
from .tradeoff import TradeoffSpec, feasible, opf_tradeoff, pareto_front, tradeoff_point
from .casestudies import (
    BuildingModel,
    FeederModel,
    branch_flows,
    build_mpc,
    build_opf,
    builtin_problem,
    mpc_closed_loop,
    mpc_toy,
    opf_adjacency,
    opf_toy,
)

__version__ = "0.1.0"
