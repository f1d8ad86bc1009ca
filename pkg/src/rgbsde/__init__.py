"""Monte Carlo solver and audits for reflected generalized BSDEs."""

from .backward_solver import (
    PipelineConfig,
    RegressionBasis,
    SolutionBundle,
    SolverConfig,
    extract_K,
    solve_penalized,
    solve_pipeline,
    solve_reflected,
)
from .catalog import CATALOG, Problem, get_problem, problem_names
from .estimates import (
    AuditReport,
    audit_apriori_bound,
    audit_comparison,
    audit_skorokhod,
    audit_stability,
    audit_Z_control,
)
from .forward_sde import ForwardBundle, expected_local_time, simulate_reflected
from .pde_oracle import binomial_american_put, cross_validate, solve_obstacle_pde
from .runner import SolveSettings, audit_problem, pde_compare, simulate_problem, solve_problem
from .models import (
    DomainSpec,
    DriverSpec,
    ObstacleSpec,
    TimeGrid,
    ball_domain,
    check_assumptions,
    half_line_domain,
    interval_domain,
    whole_space,
)

__version__ = "0.1.0"

__all__ = [
    "DomainSpec",
    "DriverSpec",
    "ObstacleSpec",
    "TimeGrid",
    "ball_domain",
    "check_assumptions",
    "half_line_domain",
    "interval_domain",
    "whole_space",
    "ForwardBundle",
    "simulate_reflected",
    "expected_local_time",
    "PipelineConfig",
    "RegressionBasis",
    "SolutionBundle",
    "SolverConfig",
    "solve_reflected",
    "solve_penalized",
    "solve_pipeline",
    "extract_K",
    "AuditReport",
    "audit_Z_control",
    "audit_apriori_bound",
    "audit_stability",
    "audit_skorokhod",
    "audit_comparison",
    "solve_obstacle_pde",
    "cross_validate",
    "binomial_american_put",
    "CATALOG",
    "Problem",
    "get_problem",
    "problem_names",
    "SolveSettings",
    "simulate_problem",
    "solve_problem",
    "audit_problem",
    "pde_compare",
]
