"""Backward induction for reflected generalized BSDEs.

Conditional expectations are least-squares regressions on a basis of the
current state, one global regression per time step.  Three entry points:

* :func:`solve_reflected` reflects at the barrier with a max,
* :func:`solve_penalized` replaces reflection by the penalty ``n (S - y)^+``,
* :func:`solve_pipeline` handles non-Lipschitz drivers by the two-step
  truncation scheme and checks that the approximations settle down.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .approximation import (
    build_f_n_step1,
    pi_r,
    step1_radius,
    truncate_data_step2,
)
from .errors import MismatchedGrids, PicardDiverged, PipelineNotCauchy, RegressionSingular
from .forward_sde import ForwardBundle
from .models import DriverSpec, ObstacleSpec, check_assumptions

__all__ = [
    "RegressionBasis",
    "SolverConfig",
    "PipelineConfig",
    "SolutionBundle",
    "ConvergenceTrace",
    "solve_reflected",
    "solve_penalized",
    "solve_pipeline",
    "extract_K",
    "cauchy_distance",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegressionBasis:
    """Regression basis on the state at one time step.

    ``polynomial`` uses monomials of total degree ``<= degree`` in the
    standardised state; ``piecewise-linear`` uses ``degree`` hinge functions
    at empirical quantiles (one dimension only).  A ridge penalty is added
    only when the design is worse conditioned than ``cond_threshold``.
    """

    family: str = "polynomial"
    degree: int = 4
    ridge: float = 1e-10
    cond_threshold: float = 1e10

    def __post_init__(self):
        if self.family not in ("polynomial", "piecewise-linear"):
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.degree < 0 or self.ridge < 0:
            raise ValueError("degree and ridge must be nonnegative")

    def design(self, x: np.ndarray) -> np.ndarray:
        m, d = x.shape
        scale = x.std(axis=0)
        live = scale > 1e-12 * (1.0 + np.abs(x.mean(axis=0)))
        cols = [np.ones(m)]
        if not np.any(live) or self.degree == 0:
            return np.column_stack(cols)
        u = (x[:, live] - x[:, live].mean(axis=0)) / scale[live]
        if self.family == "polynomial":
            k = u.shape[1]
            for deg in range(1, self.degree + 1):
                for combo in itertools.combinations_with_replacement(range(k), deg):
                    cols.append(np.prod(u[:, combo], axis=1))
        else:
            v = u[:, 0]
            cols.append(v)
            knots = np.quantile(v, np.linspace(0, 1, self.degree + 2)[1:-1])
            # a knot at the sample minimum (e.g. mass at a reflecting boundary)
            # would duplicate the linear column, one at the maximum is all zero
            lo, hi = v.min(), v.max()
            for kn in np.unique(knots):
                if lo < kn < hi:
                    cols.append(np.maximum(v - kn, 0.0))
        return np.column_stack(cols)


class _Projector:
    """Least-squares projection onto the span of a design matrix."""

    def __init__(self, phi: np.ndarray, basis: RegressionBasis):
        self.phi = phi
        q, r = np.linalg.qr(phi)
        sv = np.linalg.svd(r, compute_uv=False)
        # more columns than rows is rank deficient whatever the singular values say
        cond = sv[0] / sv[-1] if sv[-1] > 0 and phi.shape[1] <= phi.shape[0] else np.inf
        self.ridge = cond > basis.cond_threshold
        if self.ridge:
            if basis.ridge == 0:
                raise RegressionSingular(f"design condition number {cond:.3e} and no ridge allowed")
            gram = phi.T @ phi
            lam = basis.ridge * np.trace(gram) / gram.shape[0]
            self._gram = gram + lam * np.eye(gram.shape[0])
        else:
            self.q, self.r = q, r

    def fit(self, y: np.ndarray) -> np.ndarray:
        """Fitted values; the design holds constants, so targets are centred first.

        Centring makes constant targets come back exactly.
        """
        y = np.asarray(y, dtype=float)
        cols = y[:, None] if y.ndim == 1 else y
        const = np.all(cols == cols[:1], axis=0)
        ref = np.where(const, cols[0], cols.mean(axis=0))
        c = cols - ref
        if self.ridge:
            out = self.phi @ np.linalg.solve(self._gram, self.phi.T @ c)
        else:
            out = self.q @ (self.q.T @ c)
        out = out + ref
        return out[:, 0] if y.ndim == 1 else out


@dataclass(frozen=True)
class SolverConfig:
    """Backward-induction settings.

    ``target`` picks what is regressed at each step: ``regressed`` uses the
    previous node's fitted ``Y``; ``realised`` uses the pathwise value
    accumulated along each path, reset to the barrier where reflection
    binds.  ``auto`` takes ``realised`` for reflection and ``regressed``
    for penalization.
    """

    basis: RegressionBasis = field(default_factory=RegressionBasis)
    picard_iters: int = 2
    check_driver: bool = True
    check_samples: int = 200
    target: str = "auto"

    def __post_init__(self):
        if self.target not in ("auto", "realised", "regressed"):
            raise ValueError(f"unknown regression target {self.target!r}")


@dataclass(frozen=True)
class SolutionBundle:
    """Discrete solution ``(Y, Z, K)`` on the forward grid.

    ``K_increments[:, i]`` is the push applied at node ``i``; ``K`` on the
    nodes is its cumulative sum starting from ``K_0 = 0``.  The barrier
    ``S`` and terminal value ``xi`` used by the solve are attached.
    """

    grid: object
    Y: np.ndarray
    Z: np.ndarray
    K_increments: np.ndarray
    method: str
    S: np.ndarray
    xi: np.ndarray
    seed: int = 0
    Y0_se: float = 0.0
    penalty: float | None = None

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def K(self) -> np.ndarray:
        out = np.zeros_like(self.Y)
        np.cumsum(self.K_increments, axis=1, out=out[:, 1:])
        return out

    @property
    def Y0(self) -> float:
        return float(np.mean(self.Y[:, 0]))


def _evaluate_obstacle(forward: ForwardBundle, obstacle):
    if isinstance(obstacle, ObstacleSpec):
        S, xi = obstacle.evaluate(forward.grid.nodes, forward.X)
    else:
        S, xi = obstacle
    S = np.asarray(S, float)
    xi = np.asarray(xi, float)
    if S.shape != (forward.M, forward.grid.N + 1) or xi.shape != (forward.M,):
        raise MismatchedGrids("obstacle data do not match the forward bundle")
    return S, xi


def _backward(forward, driver, S, xi, config, penalty):
    grid = forward.grid
    N, dt = grid.N, grid.dt
    t = grid.nodes
    M, d = forward.M, forward.d
    Y = np.empty((M, N + 1))
    Z = np.zeros((M, N, d))
    dK = np.zeros((M, N))
    Y[:, N] = xi
    realised = np.array(xi, dtype=float)
    y0_se = 0.0
    f, g = driver.f, driver.g
    target = config.target
    if target == "auto":
        target = "regressed" if penalty is not None else "realised"
    for i in range(N - 1, -1, -1):
        x = forward.X[:, i, :]
        proj = _Projector(config.basis.design(x), config.basis)
        nxt = realised if target == "realised" else Y[:, i + 1]
        fitted = proj.fit(np.column_stack([nxt, forward.G_increments[:, i]]))
        cont = fitted[:, 0]
        dG_hat = np.maximum(fitted[:, 1], 0.0)
        resid = nxt - cont
        Z[:, i, :] = proj.fit(resid[:, None] * forward.dW[:, i, :]) / dt
        z = Z[:, i, :]

        y = cont.copy()
        steps = []
        for _ in range(max(1, config.picard_iters)):
            base = cont + np.asarray(f(t[i], x, y, z), float) * dt
            base = base + np.asarray(g(t[i], x, y), float) * dG_hat
            if penalty is not None and penalty > 0:
                lam = penalty * dt
                s = S[:, i]
                active = base < s
                new = np.where(active, (base + lam * np.where(active, s, 0.0)) / (1.0 + lam), base)
            else:
                new = base
            steps.append(float(np.max(np.abs(new - y))))
            y = new
        if not np.all(np.isfinite(y)) or (
            len(steps) >= 2 and steps[-1] > steps[-2] and steps[-1] > 1e-8 * (1.0 + np.max(np.abs(y)))
        ):
            raise PicardDiverged(
                f"y-iteration not contracting at step {i}: updates {steps}; "
                f"|mu| dt + lam^2 dt = {(abs(driver.mu) + driver.lam**2) * dt:.3g}"
            )
        if penalty is None:
            Y[:, i] = np.maximum(y, S[:, i])
            dK[:, i] = Y[:, i] - y
        else:
            Y[:, i] = y
            dK[:, i] = penalty * np.maximum(S[:, i] - y, 0.0) * dt
        # pathwise value: realised increments along the path plus the push
        step_value = (
            nxt
            + np.asarray(f(t[i], x, y, z), float) * dt
            + np.asarray(g(t[i], x, y), float) * forward.G_increments[:, i]
        )
        if i == 0:
            y0_se = float(np.std(step_value) / math.sqrt(M))
        if penalty is None:
            realised = np.where(S[:, i] > y, S[:, i], step_value)
        else:
            realised = step_value + dK[:, i]
    return Y, Z, dK, y0_se


def _maybe_check(driver, config, forward):
    if not config.check_driver:
        return
    report = check_assumptions(driver, samples=config.check_samples, seed=0, T=forward.grid.T)
    failed = report.failed()
    if not np.any(forward.G_increments):
        # g never acts without boundary contact
        failed = [c for c in failed if c not in ("vi", "vii")]
    if failed:
        log.warning("driver %s fails sampled assumption clauses %s", driver.name, failed)


def solve_reflected(
    forward: ForwardBundle,
    driver: DriverSpec,
    obstacle,
    basis: RegressionBasis | None = None,
    config: SolverConfig | None = None,
) -> SolutionBundle:
    """Regression-based backward induction with reflection by ``max(., S)``.

    ``obstacle`` is an :class:`ObstacleSpec` or a precomputed ``(S, xi)``
    pair.  The boundary term uses the regressed conditional mean of the
    ``G`` increment so that ``Y_i`` stays a function of ``X_i``.
    """
    config = config or SolverConfig()
    if basis is not None:
        config = replace(config, basis=basis)
    S, xi = _evaluate_obstacle(forward, obstacle)
    _maybe_check(driver, config, forward)
    Y, Z, dK, se = _backward(forward, driver, S, xi, config, None)
    return SolutionBundle(forward.grid, Y, Z, dK, "reflected", S, xi, forward.seed, se)


def solve_penalized(
    forward: ForwardBundle,
    driver: DriverSpec,
    obstacle,
    n: float,
    basis: RegressionBasis | None = None,
    config: SolverConfig | None = None,
) -> SolutionBundle:
    """Same recursion with the barrier enforced by the penalty ``n (S - y)^+``.

    The penalty is solved in closed form inside each Picard step, so large
    ``n dt`` does not break the fixed point iteration.  ``n = 0`` gives the
    plain generalized BSDE.
    """
    if n < 0:
        raise ValueError("penalty index must be nonnegative")
    config = config or SolverConfig()
    if basis is not None:
        config = replace(config, basis=basis)
    S, xi = _evaluate_obstacle(forward, obstacle)
    _maybe_check(driver, config, forward)
    Y, Z, dK, se = _backward(forward, driver, S, xi, config, float(n))
    return SolutionBundle(forward.grid, Y, Z, dK, f"penalized({n:g})", S, xi, forward.seed, se, float(n))


def cauchy_distance(a: SolutionBundle, b: SolutionBundle):
    """Max over nodes of the path-mean distance between two solutions, for Y and Z."""
    dy = float(np.max(np.mean(np.abs(a.Y - b.Y), axis=0)))
    dz = float(np.max(np.mean(np.linalg.norm(a.Z - b.Z, axis=2), axis=0)))
    return dy, dz


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for :func:`solve_pipeline`.

    ``r_policy`` is ``"bound"`` (radius from the data caps at each level)
    or ``"doubling"`` (``r_min * 2 ** (n // 8)``).  ``G_cap`` defaults to
    ``cap_factor`` times the largest simulated ``G_T``.
    """

    solver: SolverConfig = field(default_factory=lambda: SolverConfig(check_driver=False))
    n_min: int = 8
    n_max: int = 64
    tol_cauchy: float = 1e-3
    r_policy: str = "bound"
    r_min: float = 1.0
    r_margin: float = 0.05
    G_cap: float | None = None
    cap_factor: float = 1.5
    pi_points: int = 201

    def __post_init__(self):
        if self.r_policy not in ("bound", "doubling"):
            raise ValueError(f"unknown r_policy {self.r_policy!r}")
        if self.n_min < 1 or self.n_max < self.n_min:
            raise ValueError("need 1 <= n_min <= n_max")


@dataclass
class ConvergenceTrace:
    ns: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    d_Y: list = field(default_factory=list)
    d_Z: list = field(default_factory=list)
    Y0: list = field(default_factory=list)
    repaired: list = field(default_factory=list)
    G_cap: float = 0.0
    G_cap_exceeded: bool = False
    converged: bool = False
    inactive: bool = False


def _sup_along_paths(fn, forward, driver_dim):
    best = 0.0
    M = forward.M
    for i, t in enumerate(forward.grid.nodes):
        x = forward.X[:, i, :]
        val = np.abs(np.asarray(fn(t, x, np.zeros(M), np.zeros((M, driver_dim))), float))
        best = max(best, float(np.max(val)))
    return best


def solve_pipeline(
    forward: ForwardBundle,
    driver: DriverSpec,
    obstacle,
    basis: RegressionBasis | None = None,
    config: PipelineConfig | None = None,
):
    """Solve a problem with a driver that is only continuous in y.

    For ``n = n_min, 2 n_min, ...`` the data are truncated at level ``n``,
    the driver is made Lipschitz by ``q_n`` and the ``pi_{r+1}`` scaling,
    and the approximating problem is solved by :func:`solve_reflected`.
    Iteration stops once consecutive solutions are closer than
    ``tol_cauchy`` or ``n_max`` is reached.

    Returns
    -------
    (SolutionBundle, ConvergenceTrace)

    Raises
    ------
    PipelineNotCauchy
        If the distance between consecutive iterates fails to decrease over
        three consecutive doublings.
    """
    config = config or PipelineConfig()
    solver = config.solver
    if basis is not None:
        solver = replace(solver, basis=basis)
    S, xi = _evaluate_obstacle(forward, obstacle)
    trace = ConvergenceTrace()
    G_T = forward.G_increments.sum(axis=1)
    G_emp = float(G_T.max()) if G_T.size else 0.0
    trace.G_cap = config.G_cap if config.G_cap is not None else config.cap_factor * G_emp
    trace.G_cap_exceeded = G_emp > trace.G_cap
    if trace.G_cap_exceeded:
        log.warning("empirical max G_T %.4g exceeds G_cap %.4g", G_emp, trace.G_cap)

    prev = None
    n = config.n_min
    while True:
        data = truncate_data_step2(xi, driver, S, n)
        f0_sup = _sup_along_paths(lambda t, x, y, z: data.driver.f(t, x, y, z), forward, driver.dim)
        g0_sup = _sup_along_paths(lambda t, x, y, z: data.driver.g(t, x, y), forward, driver.dim)
        finite_S = data.S[np.isfinite(data.S)]
        s_plus = float(np.max(np.maximum(finite_S, 0.0))) if finite_S.size else 0.0
        if config.r_policy == "bound":
            bound = step1_radius(
                float(np.max(np.abs(data.xi))), f0_sup, g0_sup, trace.G_cap, s_plus, driver.lam, forward.grid.T
            )
            r = bound * (1.0 + config.r_margin) + config.r_margin
        else:
            r = config.r_min * 2.0 ** (n // 8)
        approx = build_f_n_step1(data.driver, n, r, points=config.pi_points)
        sol = solve_reflected(forward, approx, (data.S, data.xi), config=solver)
        sol = SolutionBundle(
            sol.grid, sol.Y, sol.Z, sol.K_increments, f"pipeline({n:g})", sol.S, sol.xi, sol.seed, sol.Y0_se
        )
        trace.ns.append(n)
        trace.radii.append(r)
        trace.Y0.append(sol.Y0)
        trace.repaired.append(data.repaired)

        if prev is None and _truncation_inactive(data, driver, xi, S, sol, n, r, forward, config, f0_sup, g0_sup):
            trace.inactive = True
            trace.converged = True
            return sol, trace
        if prev is not None:
            dy, dz = cauchy_distance(sol, prev)
            trace.d_Y.append(dy)
            trace.d_Z.append(dz)
            if dy < config.tol_cauchy:
                trace.converged = True
                return sol, trace
            d = trace.d_Y
            if len(d) >= 4 and all(d[-k] >= d[-k - 1] for k in (1, 2, 3)):
                raise PipelineNotCauchy(f"Cauchy distances not decreasing: {d[-4:]}")
        if n >= config.n_max:
            return sol, trace
        prev = sol
        n = min(2 * n, config.n_max)


def _truncation_inactive(data, driver, xi, S, sol, n, r, forward, config, f0_sup, g0_sup):
    """True when no truncation changed anything at level ``n``."""
    if data.repaired or np.max(np.abs(xi)) > n or f0_sup > n or g0_sup > n:
        return False
    finite = S[np.isfinite(S)]
    if finite.size and np.max(np.abs(finite)) > n:
        return False
    if np.max(np.linalg.norm(sol.Z, axis=2)) > n:
        return False
    for i, t in enumerate(forward.grid.nodes):
        if np.max(pi_r(driver, r + 1.0, t, x=forward.X[:, i, :], points=config.pi_points)) > n:
            return False
    return True


def extract_K(sol: SolutionBundle, forward: ForwardBundle, driver: DriverSpec, pathwise: bool = False):
    """Recompute ``K`` from the residual of the discrete equation.

    ``K_j = Y_0 - Y_j - sum f dt - sum g dG + sum Z dW`` over steps before
    node ``j``.  Returns the residual paths and the consistency score, the
    max over nodes of ``|mean(K_residual - K_stored)|``.  With
    ``pathwise=True`` the score is the max over nodes of
    ``mean |K_residual - K_stored|``; that version also carries the part of
    each martingale increment not spanned by ``Z dW`` and does not vanish
    as the path count grows.
    """
    if sol.Y.shape != (forward.M, forward.grid.N + 1):
        raise MismatchedGrids("solution and forward bundle differ in shape")
    t = forward.grid.nodes
    dt = forward.grid.dt
    M, N = sol.Y.shape[0], forward.grid.N
    incr = np.empty((M, N))
    for i in range(N):
        x = forward.X[:, i, :]
        y = sol.Y[:, i]
        z = sol.Z[:, i, :]
        drift = np.asarray(driver.f(t[i], x, y, z), float) * dt
        bdry = np.asarray(driver.g(t[i], x, y), float) * forward.G_increments[:, i]
        mart = np.sum(z * forward.dW[:, i, :], axis=1)
        incr[:, i] = y - sol.Y[:, i + 1] - drift - bdry + mart
    K_res = np.zeros((M, N + 1))
    np.cumsum(incr, axis=1, out=K_res[:, 1:])
    diff = K_res - sol.K
    if pathwise:
        score = float(np.max(np.mean(np.abs(diff), axis=0)))
    else:
        score = float(np.max(np.abs(np.mean(diff, axis=0))))
    return K_res, score
