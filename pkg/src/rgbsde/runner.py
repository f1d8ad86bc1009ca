"""High-level operations on catalog problems, shared by the CLI and tests."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .backward_solver import (
    ConvergenceTrace,
    PipelineConfig,
    RegressionBasis,
    SolutionBundle,
    SolverConfig,
    solve_penalized,
    solve_pipeline,
    solve_reflected,
)
from .catalog import Problem
from .estimates import AuditReport, audit_apriori_bound, audit_skorokhod, audit_stability, audit_Z_control
from .forward_sde import ForwardBundle, simulate_reflected
from .models import TimeGrid
from .pde_oracle import CrossValidation, PdeGrid, cross_validate, solve_obstacle_pde

__all__ = [
    "sub_seed",
    "METHODS",
    "SolveSettings",
    "simulate_problem",
    "solve_problem",
    "audit_problem",
    "solve_pde",
    "pde_compare",
]

METHODS = ("reflected", "penalized", "pipeline")


def sub_seed(seed: int, component: str) -> int:
    """Stable 63-bit seed for a named component, derived from the top-level seed."""
    digest = hashlib.blake2b(f"{int(seed)}:{component}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass(frozen=True)
class SolveSettings:
    method: str = "reflected"
    penalty: float = 50.0
    basis: RegressionBasis | None = None
    solver: SolverConfig = SolverConfig(check_driver=False)
    pipeline: PipelineConfig = PipelineConfig()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")


def simulate_problem(
    problem: Problem,
    M: int | None = None,
    N: int | None = None,
    seed: int = 0,
    scheme: str = "projection",
    x0: float | None = None,
    bridge: bool = False,
) -> ForwardBundle:
    start = problem.x0 if x0 is None else float(x0)
    component = "forward" if x0 is None else f"forward@{start!r}"
    return simulate_reflected(
        problem.domain,
        problem.b,
        problem.sigma,
        start,
        TimeGrid(problem.T, N or problem.N),
        M or problem.M,
        seed=sub_seed(seed, component),
        scheme=scheme,
        bridge=bridge,
    )


def solve_problem(
    problem: Problem, forward: ForwardBundle, settings: SolveSettings, obstacle=None
) -> tuple[SolutionBundle, ConvergenceTrace | None]:
    """Solve ``problem`` on ``forward``; ``obstacle`` may replace the catalog data."""
    obstacle = problem.obstacle if obstacle is None else obstacle
    basis = settings.basis or problem.basis
    if settings.method == "reflected":
        return solve_reflected(forward, problem.driver, obstacle, basis, settings.solver), None
    if settings.method == "penalized":
        return solve_penalized(forward, problem.driver, obstacle, settings.penalty, basis, settings.solver), None
    pipe = replace(settings.pipeline, solver=replace(settings.pipeline.solver, basis=basis))
    return solve_pipeline(forward, problem.driver, obstacle, basis, pipe)


def skorokhod_report(sol: SolutionBundle, p: float, tol: float | None = None) -> AuditReport:
    """Wrap the Skorokhod score as a report; reflection must give exactly zero."""
    score = audit_skorokhod(sol)
    if tol is None:
        tol = 0.0 if sol.penalty is None else np.inf
    return AuditReport("skorokhod", score, {}, score, p, score, bool(score <= tol), score == 0.0)


def audit_problem(
    problem: Problem,
    forward: ForwardBundle,
    sol: SolutionBundle,
    settings: SolveSettings,
    p: float = 1.5,
    ceiling: float = 100.0,
    perturbation: float = 0.05,
) -> list:
    """Z control, a priori bound, stability under a terminal shift, and Skorokhod."""
    reports = [
        audit_Z_control(sol, forward, problem.driver, p, ceiling),
        audit_apriori_bound(sol, forward, problem.driver, p, ceiling),
    ]
    if perturbation > 0:
        # realised targets flip exercise decisions under tiny data changes, so
        # the comparison uses regressed targets, which are continuous in the data
        stable = replace(
            settings,
            solver=replace(settings.solver, target="regressed"),
            pipeline=replace(settings.pipeline, solver=replace(settings.pipeline.solver, target="regressed")),
        )
        base = solve_problem(problem, forward, stable, obstacle=(sol.S, sol.xi))[0]
        shifted = []
        for eps in (perturbation, 0.5 * perturbation):
            data = (sol.S, sol.xi + eps)
            shifted.append(solve_problem(problem, forward, stable, obstacle=data)[0])
        reports.append(
            audit_stability(
                shifted[0], base, forward, problem.driver, problem.driver, p, ceiling, sol_half=shifted[1]
            )
        )
    reports.append(skorokhod_report(sol, p))
    return reports


def solve_pde(problem: Problem, J: int | None = None, Nt: int | None = None) -> PdeGrid:
    d = problem.pde
    if d is None:
        raise ValueError(f"problem {problem.name!r} has no PDE form")
    return solve_obstacle_pde(
        d.b, d.sigma, d.f, d.g, d.h, d.l, d.x_min, d.x_max, problem.T, J or d.J, Nt or d.Nt, problem=problem.name
    )


def pde_compare(
    problem: Problem,
    settings: SolveSettings,
    M: int | None = None,
    N: int | None = None,
    seed: int = 0,
    starts=None,
    C_disc: float = 1.0,
    J: int | None = None,
    Nt: int | None = None,
) -> tuple[CrossValidation, PdeGrid]:
    """Solve once per starting point by Monte Carlo and compare with the PDE grid."""
    u = solve_pde(problem, J, Nt)
    starts = tuple(problem.starts if starts is None else starts)
    Y0, se = [], []
    dt = problem.T / (N or problem.N)
    for x0 in starts:
        forward = simulate_problem(problem, M, N, seed, x0=x0)
        sol, _ = solve_problem(problem, forward, settings)
        Y0.append(sol.Y0)
        se.append(sol.Y0_se)
    return cross_validate(u, starts, Y0, se, dt, C_disc, problem.name), u
