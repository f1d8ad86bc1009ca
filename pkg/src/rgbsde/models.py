"""Problem data: time grids, drivers, obstacles, domains and assumption checks.

Callables follow one vectorised convention throughout the package.  With
``M`` paths in dimension ``d``:

* ``f(t, x, y, z)`` takes a scalar time, ``x`` of shape ``(M, d)``, ``y`` of
  shape ``(M,)`` and ``z`` of shape ``(M, d)``; it returns shape ``(M,)``.
* ``g(t, x, y)`` is the boundary driver with the same conventions.
* ``h(t, x)`` is the barrier and ``l(x)`` the terminal payoff, both ``(M,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidDriver, NonCallableDriver, ObstacleTerminalViolation

__all__ = [
    "TimeGrid",
    "DriverSpec",
    "ObstacleSpec",
    "DomainSpec",
    "ClauseResult",
    "AssumptionReport",
    "check_assumptions",
    "half_line_domain",
    "interval_domain",
    "ball_domain",
    "whole_space",
    "zero_g",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i T / N`` on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"step count must be a positive integer, got {self.N}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t


def zero_g(t, x, y):
    return np.zeros_like(y, dtype=float)


@dataclass(frozen=True)
class DriverSpec:
    """The pair ``(f, g)`` together with its declared structural constants.

    ``lam`` bounds the z-Lipschitz constant of ``f``, ``mu`` its
    y-monotonicity, ``beta < 0`` the monotonicity of ``g`` and ``growth``
    the linear-growth constant of both.  ``lipschitz`` is filled in by the
    approximation builders, which produce globally Lipschitz drivers.
    ``x_dependent=False`` declares that ``f`` ignores the state, which lets
    sup-type quantities be computed once per time instead of per path.
    """

    f: Callable
    g: Callable = zero_g
    lam: float = 0.0
    mu: float = 0.0
    beta: float = -1.0
    growth: float = 0.0
    p: float = 1.5
    dim: int = 1
    lipschitz: float | None = None
    name: str = "driver"
    x_dependent: bool = True

    def __post_init__(self):
        if not callable(self.f) or not callable(self.g):
            raise NonCallableDriver("f and g must be callable")
        if not self.beta < 0:
            raise InvalidDriver(f"beta must be negative, got {self.beta}")
        if not 1.0 < self.p < 2.0:
            raise InvalidDriver(f"p must lie in (1, 2), got {self.p}")
        if self.lam < 0 or self.growth < 0:
            raise InvalidDriver("lam and growth must be nonnegative")

    def f0(self, t, x):
        """Signed baseline ``f(t, x, 0, 0)``."""
        x = np.atleast_2d(x)
        m = x.shape[0]
        return np.asarray(self.f(t, x, np.zeros(m), np.zeros((m, self.dim))), float)

    def g0(self, t, x):
        x = np.atleast_2d(x)
        return np.asarray(self.g(t, x, np.zeros(x.shape[0])), float)

    def replace(self, **changes) -> "DriverSpec":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class ObstacleSpec:
    """Barrier and terminal data, either Markovian or path-indexed.

    In Markovian mode ``h(t, x)`` and ``l(x)`` are evaluated along the
    forward paths.  In explicit mode ``S`` has shape ``(M, N + 1)`` and
    ``xi`` shape ``(M,)``.  A missing barrier means ``S = -inf``.
    """

    h: Callable | None = None
    l: Callable | None = None
    S: np.ndarray | None = None
    xi: np.ndarray | None = None
    terminal_tol: float = 1e-12

    def __post_init__(self):
        if self.l is None and self.xi is None:
            raise ValueError("either a terminal function l or terminal samples xi is required")

    @property
    def markovian(self) -> bool:
        return self.xi is None

    def evaluate(self, times: np.ndarray, X: np.ndarray):
        """Return ``(S, xi)`` along paths ``X`` of shape ``(M, N + 1, d)``."""
        M, n_nodes = X.shape[0], X.shape[1]
        if self.xi is not None:
            xi = np.broadcast_to(np.asarray(self.xi, float), (M,)).copy()
        else:
            xi = np.asarray(self.l(X[:, -1, :]), float).reshape(M)
        if self.S is not None:
            S = np.broadcast_to(np.asarray(self.S, float), (M, n_nodes)).copy()
        elif self.h is not None:
            S = np.empty((M, n_nodes))
            for i, t in enumerate(times):
                S[:, i] = np.asarray(self.h(t, X[:, i, :]), float).reshape(M)
        else:
            S = np.full((M, n_nodes), -np.inf)
        gap = S[:, -1] - xi
        if np.any(gap > self.terminal_tol):
            worst = int(np.argmax(gap))
            raise ObstacleTerminalViolation(
                f"barrier exceeds terminal value on path {worst} by {gap[worst]:.3e}"
            )
        return S, xi


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return x, scalar


@dataclass(frozen=True)
class DomainSpec:
    """Domain ``{psi > 0}``; ``grad_psi`` is the inward unit normal on the boundary."""

    psi_fn: Callable
    grad_fn: Callable
    dim: int = 1
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def psi(self, x):
        pts, scalar = _as_points(x, self.dim)
        out = np.asarray(self.psi_fn(pts), float)
        return float(out) if scalar else out

    def grad_psi(self, x):
        pts, scalar = _as_points(x, self.dim)
        out = np.asarray(self.grad_fn(pts), float)
        if scalar:
            return float(out.reshape(-1)[0]) if self.dim == 1 else out.reshape(self.dim)
        return out

    @property
    def bounded_reflection(self) -> bool:
        return self.kind != "whole_space"


def half_line_domain() -> DomainSpec:
    return DomainSpec(
        psi_fn=lambda x: x[..., 0],
        grad_fn=lambda x: np.ones_like(x),
        dim=1,
        kind="half_line",
    )


def interval_domain(length: float) -> DomainSpec:
    """The interval ``[0, L]`` with ``psi = min(x, L - x)``."""
    if not length > 0:
        raise ValueError("interval length must be positive")
    L = float(length)

    def psi(x):
        return np.minimum(x[..., 0], L - x[..., 0])

    def grad(x):
        return np.where(x < 0.5 * L, 1.0, -1.0)

    return DomainSpec(psi, grad, dim=1, kind="interval", params={"length": L})


def ball_domain(radius: float, center=None, dim: int = 2) -> DomainSpec:
    c = np.zeros(dim) if center is None else np.asarray(center, float)
    dim = c.size
    R = float(radius)

    def psi(x):
        return R - np.linalg.norm(x - c, axis=-1)

    def grad(x):
        v = x - c
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(n > 0, n, 1.0)
        return np.where(n > 0, -v / safe, 0.0)

    return DomainSpec(psi, grad, dim=dim, kind="ball", params={"radius": R, "center": c.tolist()})


def whole_space(dim: int = 1) -> DomainSpec:
    """No boundary: ``psi`` is constant positive, so ``G`` stays zero."""
    return DomainSpec(
        psi_fn=lambda x: np.ones(x.shape[:-1]),
        grad_fn=lambda x: np.zeros_like(x),
        dim=dim,
        kind="whole_space",
    )


@dataclass(frozen=True)
class ClauseResult:
    passed: bool
    worst_violation: float


@dataclass(frozen=True)
class AssumptionReport:
    clauses: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())

    def failed(self) -> list:
        return [k for k, c in self.clauses.items() if not c.passed]

    def merge(self, other: "AssumptionReport") -> "AssumptionReport":
        """Combine two shards; the worst violation wins clause by clause."""
        out = {}
        for key in self.clauses.keys() | other.clauses.keys():
            a = self.clauses.get(key, ClauseResult(True, -np.inf))
            b = other.clauses.get(key, ClauseResult(True, -np.inf))
            out[key] = ClauseResult(a.passed and b.passed, max(a.worst_violation, b.worst_violation))
        return AssumptionReport(out)


def _evaluate(fn, *args):
    try:
        return np.asarray(fn(*args), dtype=float)
    except Exception as exc:  # user callables can fail in arbitrary ways
        raise NonCallableDriver(f"driver evaluation raised {exc!r}") from exc


def check_assumptions(
    driver: DriverSpec,
    samples: int = 1000,
    seed: int = 0,
    box: float = 10.0,
    T: float = 1.0,
    rel_tol: float = 1e-9,
) -> AssumptionReport:
    """Sample the Lipschitz, monotonicity and growth clauses on a box.

    Tuples ``(t, x, y, y', z, z')`` are drawn uniformly from
    ``[0, T] x [-box, box]^...``.  A clause's violation is ``lhs - rhs``;
    it passes when every violation is at most ``rel_tol * (1 + scale)``
    plus a rounding allowance of a few ulps of ``scale``, the magnitude of
    the operands involved.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    d = driver.dim
    t = rng.uniform(0.0, T, samples)
    x = rng.uniform(-box, box, (samples, d))
    y = rng.uniform(-box, box, samples)
    y2 = rng.uniform(-box, box, samples)
    z = rng.uniform(-box, box, (samples, d))
    z2 = rng.uniform(-box, box, (samples, d))
    zero_y = np.zeros(samples)
    zero_z = np.zeros((samples, d))

    # drivers take a scalar time, so samples are evaluated one at a time
    def fv(yy, zz):
        return np.array([_evaluate(driver.f, t[k], x[k : k + 1], yy[k : k + 1], zz[k : k + 1])[0]
                         for k in range(samples)])

    def gv(yy):
        return np.array([_evaluate(driver.g, t[k], x[k : k + 1], yy[k : k + 1])[0]
                         for k in range(samples)])

    f_yz = fv(y, z)
    f_yz2 = fv(y, z2)
    f_y2z = fv(y2, z)
    f_00 = fv(zero_y, zero_z)
    g_y = gv(y)
    g_y2 = gv(y2)
    g_0 = gv(zero_y)

    dz = np.linalg.norm(z - z2, axis=1)
    dy = y - y2
    znorm = np.linalg.norm(z, axis=1)

    def result(viol, scale):
        # a few ulps of the operands always remain, so rel_tol = 0 means exact up to rounding
        allowed = rel_tol * (1.0 + scale) + 16.0 * np.finfo(float).eps * scale
        return ClauseResult(bool(np.all(viol <= allowed)), float(np.max(viol)))

    clauses = {}
    lhs = np.abs(f_yz - f_yz2)
    rhs = driver.lam * dz
    clauses["iii"] = result(lhs - rhs, np.abs(f_yz) + np.abs(f_yz2) + rhs)
    lhs = dy * (f_yz - f_y2z)
    rhs = driver.mu * dy**2
    clauses["iv"] = result(lhs - rhs, np.abs(dy) * (np.abs(f_yz) + np.abs(f_y2z)) + np.abs(rhs))
    lhs = np.abs(f_yz)
    rhs = np.abs(f_00) + driver.growth * (np.abs(y) + znorm)
    clauses["v"] = result(lhs - rhs, lhs + rhs)
    lhs = dy * (g_y - g_y2)
    rhs = driver.beta * dy**2
    clauses["vi"] = result(lhs - rhs, np.abs(dy) * (np.abs(g_y) + np.abs(g_y2)) + np.abs(rhs))
    lhs = np.abs(g_y)
    rhs = np.abs(g_0) + driver.growth * np.abs(y)
    clauses["vii"] = result(lhs - rhs, lhs + rhs)
    return AssumptionReport(clauses)
