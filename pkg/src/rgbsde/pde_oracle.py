"""Finite-difference oracle for the 1-d obstacle problem with Neumann boundary.

Solves ``min{u - h, -u_t - L u - f(t, x, u, sigma u_x)} = 0`` on
``[x_min, x_max]`` with ``u(T, .) = l`` and ``du/dn + g(t, x, u) = 0`` at both
ends, ``n`` the inward normal.  ``L = sigma^2/2 d^2/dx^2 + b d/dx``.

Also holds a Cox-Ross-Rubinstein tree for American puts, used as an
independent reference by the tests.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import GridTooCoarse, LcpNotConverged, MismatchedProblem

__all__ = [
    "PdeGrid",
    "solve_obstacle_pde",
    "CrossValidation",
    "cross_validate",
    "binomial_american_put",
    "write_pde_csv",
]


@dataclass(frozen=True)
class PdeGrid:
    """Solution ``u[n, j]`` at time ``t[n]`` and space node ``x[j]``."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    h: np.ndarray
    residual: float
    problem: str = ""

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def at(self, x0, time_index: int = 0):
        """Linear interpolation of ``u`` in space at one time level."""
        return np.interp(x0, self.x, self.u[time_index])


def _node_values(c, x, n):
    if c is None:
        return np.zeros(n)
    val = c(x[:, None]) if callable(c) else c
    return np.broadcast_to(np.asarray(val, dtype=float).reshape(-1), (n,)).copy()


def _psor(lower, diag, upper, rhs, h, u, tol, max_iter):
    """Projected SOR with red-black ordering for a tridiagonal LCP."""
    n = diag.size
    rho = float(np.max((np.abs(lower) + np.abs(upper)) / diag))
    rho = min(rho, 0.999999)
    omega = 2.0 / (1.0 + math.sqrt(1.0 - rho * rho))
    u = np.maximum(u, h)
    colors = (np.arange(0, n, 2), np.arange(1, n, 2))
    for it in range(max_iter):
        for idx in colors:
            left = np.where(idx > 0, u[np.maximum(idx - 1, 0)], 0.0)
            right = np.where(idx < n - 1, u[np.minimum(idx + 1, n - 1)], 0.0)
            gs = (rhs[idx] - lower[idx] * left - upper[idx] * right) / diag[idx]
            u[idx] = np.maximum(h[idx], u[idx] + omega * (gs - u[idx]))
        if it % 4 == 3:
            res = _lcp_residual(lower, diag, upper, rhs, h, u)
            if res <= tol:
                return u, res
    res = _lcp_residual(lower, diag, upper, rhs, h, u)
    if res > tol:
        raise LcpNotConverged(f"projected SOR stopped at residual {res:.3e} after {max_iter} sweeps")
    return u, res


def _apply(lower, diag, upper, u):
    out = diag * u
    out[1:] += lower[1:] * u[:-1]
    out[:-1] += upper[:-1] * u[1:]
    return out


def _lcp_residual(lower, diag, upper, rhs, h, u):
    gap = np.where(np.isfinite(h), u - h, np.inf)
    comp = np.minimum(gap, _apply(lower, diag, upper, u) - rhs)
    return float(np.max(np.abs(comp)))


def solve_obstacle_pde(
    b,
    sigma,
    f,
    g=None,
    h=None,
    l=None,
    x_min: float = 0.0,
    x_max: float = 1.0,
    T: float = 1.0,
    J: int = 200,
    Nt: int = 200,
    tol_lcp: float = 1e-10,
    max_iter: int = 20000,
    outer_iters: int = 50,
    problem: str = "",
) -> PdeGrid:
    """Implicit time stepping with an LCP solve per step.

    ``b`` and ``sigma`` are constants or callables of an ``(J+1, 1)`` node
    array; ``f(t, x, y, z)`` and ``g(t, x, y)`` use the package-wide driver
    convention; ``h(t, x)`` and ``l(x)`` give the barrier and terminal data
    (``h=None`` means no barrier).  The nonlinear terms are lagged and
    iterated to a fixed point within each step.

    Raises
    ------
    GridTooCoarse
        If the cell Peclet number ``|b| dx / sigma^2`` exceeds 1, where the
        central scheme stops being monotone.
    LcpNotConverged
        If projected SOR does not reach ``tol_lcp``.
    """
    if J < 2 or Nt < 1 or not x_max > x_min:
        raise GridTooCoarse("need J >= 2, Nt >= 1 and a nonempty interval")
    x = np.linspace(x_min, x_max, J + 1)
    t = np.linspace(0.0, T, Nt + 1)
    dx, dt = x[1] - x[0], t[1] - t[0]
    X = x[:, None]
    n = J + 1
    bb = _node_values(b, x, n)
    ss = _node_values(sigma, x, n)
    var = ss**2
    if np.any(np.abs(bb) * dx > var + 1e-15):
        raise GridTooCoarse(
            f"cell Peclet number {float(np.max(np.abs(bb) * dx / np.maximum(var, 1e-300))):.3g} > 1; refine dx"
        )

    diff = 0.5 * var / dx**2
    conv = bb / (2 * dx)
    # A = I - dt L, ghost nodes folded into the boundary rows
    lower = -dt * (diff - conv)
    upper = -dt * (diff + conv)
    diag = 1.0 + 2.0 * dt * diff
    upper[0] = -dt * 2.0 * diff[0]
    lower[-1] = -dt * 2.0 * diff[-1]
    lower[0] = 0.0
    upper[-1] = 0.0
    # flux coefficient multiplying g at each end
    flux_left = dt * (var[0] / dx - bb[0])
    flux_right = dt * (var[-1] / dx + bb[-1])

    def barrier(tn):
        if h is None:
            return np.full(n, -np.inf)
        return np.asarray(h(tn, X), float).reshape(n)

    u = np.empty((Nt + 1, n))
    H = np.empty((Nt + 1, n))
    u[-1] = np.asarray(l(X), float).reshape(n)
    H[-1] = barrier(t[-1])
    banded = np.vstack([np.r_[0.0, upper[:-1]], diag, np.r_[lower[1:], 0.0]])
    worst = 0.0
    for k in range(Nt - 1, -1, -1):
        hk = barrier(t[k])
        H[k] = hk
        cur = u[k + 1].copy()
        for _ in range(outer_iters):
            rhs = u[k + 1].copy()
            if f is not None:
                ux = np.gradient(cur, dx)
                rhs += dt * np.asarray(f(t[k], X, cur, (ss * ux)[:, None]), float).reshape(n)
            if g is not None:
                gv = np.asarray(g(t[k], X[[0, -1]], cur[[0, -1]]), float).reshape(2)
                rhs[0] += flux_left * gv[0]
                rhs[-1] += flux_right * gv[1]
            if h is None:
                new = solve_banded((1, 1), banded, rhs)
                res = 0.0
            else:
                new, res = _psor(lower, diag, upper, rhs, hk, cur.copy(), tol_lcp, max_iter)
            change = float(np.max(np.abs(new - cur)))
            cur = new
            if change <= tol_lcp * (1.0 + float(np.max(np.abs(cur)))):
                break
        worst = max(worst, res)
        u[k] = cur
    return PdeGrid(x, t, u, H, worst, problem)


@dataclass(frozen=True)
class CrossValidation:
    starts: np.ndarray
    Y0: np.ndarray
    se: np.ndarray
    u0: np.ndarray
    abs_error: np.ndarray
    budget: np.ndarray
    max_rel_error: float
    within_budget: bool


def cross_validate(
    u: PdeGrid,
    starts,
    Y0,
    se,
    dt: float,
    C_disc: float = 1.0,
    problem: str | None = None,
) -> CrossValidation:
    """Compare probabilistic ``Y_0(x0)`` with the interpolated ``u(0, x0)``.

    The budget at each start is ``3 se + C_disc (sqrt(dt) + dx^2)`` with
    ``dt`` the step of the probabilistic solver and ``dx`` the PDE mesh.
    """
    if problem is not None and u.problem and problem != u.problem:
        raise MismatchedProblem(f"PDE solved for {u.problem!r}, estimates are for {problem!r}")
    starts = np.atleast_1d(np.asarray(starts, float))
    Y0 = np.atleast_1d(np.asarray(Y0, float))
    se = np.broadcast_to(np.asarray(se, float), starts.shape)
    if Y0.shape != starts.shape:
        raise MismatchedProblem("one estimate per starting point is required")
    if np.any(starts <= u.x[0]) or np.any(starts >= u.x[-1]):
        raise MismatchedProblem("starting points must lie inside the PDE interval")
    u0 = u.at(starts)
    err = np.abs(Y0 - u0)
    budget = 3.0 * se + C_disc * (math.sqrt(dt) + u.dx**2)
    return CrossValidation(
        starts, Y0, np.array(se), u0, err, budget, float(np.max(err / (1.0 + np.abs(u0)))), bool(np.all(err <= budget))
    )


def binomial_american_put(spot, strike, rate, vol, T, steps: int = 1000) -> float:
    """Cox-Ross-Rubinstein price of an American put."""
    dt = T / steps
    up = math.exp(vol * math.sqrt(dt))
    down = 1.0 / up
    prob = (math.exp(rate * dt) - down) / (up - down)
    disc = math.exp(-rate * dt)
    j = np.arange(steps + 1)
    values = np.maximum(strike - spot * up ** (steps - 2.0 * j), 0.0)
    for k in range(steps - 1, -1, -1):
        prices = spot * up ** (k - 2.0 * np.arange(k + 1))
        values = np.maximum(disc * (prob * values[:-1] + (1 - prob) * values[1:]), strike - prices)
    return float(values[0])


def write_pde_csv(path, u: PdeGrid) -> None:
    """Write ``u`` as a matrix: first row the x nodes, first column the t nodes."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t\\x"] + [f"{v:.17e}" for v in u.x])
        for tn, row in zip(u.t, u.u):
            writer.writerow([f"{tn:.17e}"] + [f"{v:.17e}" for v in row])
    os.replace(tmp, path)
