"""Lipschitz approximation toolkit for non-Lipschitz drivers.

Contains the inf-convolution approximant, radial truncation ``q_n``, the
smooth cutoff ``theta_r``, the local modulus ``pi_r`` and the composite
drivers used by the two-step existence construction (localisation first,
then truncation of the data).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EmptyGrid, GrowthExceedsIndex, InvalidDriver
from .models import DriverSpec, check_assumptions

__all__ = [
    "InfConvApproximant",
    "infconv",
    "candidate_grid",
    "truncate_q",
    "cutoff_theta",
    "pi_r",
    "build_h_n",
    "build_f_n_step1",
    "truncate_data_step2",
    "Step2Data",
    "step1_radius",
]


def candidate_grid(radius: float, spacing: float = 1e-3, dim: int = 1) -> np.ndarray:
    """Uniform tensor grid on ``[-radius, radius]^dim`` as an ``(G, dim)`` array."""
    if radius <= 0 or spacing <= 0:
        raise EmptyGrid("grid radius and spacing must be positive")
    k = int(round(radius / spacing))
    axis = np.arange(-k, k + 1) * spacing
    if dim == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class InfConvApproximant:
    """Evaluator for ``x -> min_y {base(y) + n |x - y|}`` over a finite grid."""

    base: Callable
    n: float
    grid: np.ndarray
    values: np.ndarray
    spacing: float

    def __call__(self, x, chunk: int = 512):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        pts = x.reshape(-1, 1) if self.grid.shape[1] == 1 else x.reshape(-1, self.grid.shape[1])
        out = np.empty(pts.shape[0])
        for start in range(0, pts.shape[0], chunk):
            block = pts[start : start + chunk]
            dist = np.linalg.norm(block[:, None, :] - self.grid[None, :, :], axis=-1)
            out[start : start + chunk] = np.min(self.values[None, :] + self.n * dist, axis=1)
        if scalar:
            return float(out[0])
        return out.reshape(x.shape if self.grid.shape[1] == 1 else x.shape[:-1])


def infconv(base: Callable, n: float, grid=None, spacing: float = 1e-3, radius: float = 8.0):
    """Build the n-Lipschitz inf-convolution of ``base`` on a candidate grid.

    ``base`` maps an array of points (shape ``(G,)`` in one dimension,
    ``(G, k)`` otherwise) to values.  The result is exactly n-Lipschitz and
    lies below ``base`` up to ``n * spacing`` off the grid.

    Raises
    ------
    EmptyGrid
        If the candidate grid has no points.
    GrowthExceedsIndex
        If ``base`` falls off faster than slope ``n`` somewhere on the grid,
        in which case the infimum over the whole space is minus infinity.
    """
    if grid is None:
        grid = candidate_grid(radius, spacing)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.size == 0:
        raise EmptyGrid("candidate grid is empty")
    arg = grid[:, 0] if grid.shape[1] == 1 else grid
    values = np.asarray(base(arg), dtype=float).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise GrowthExceedsIndex("base is not finite on the candidate grid")

    anchor = int(np.argmin(np.linalg.norm(grid, axis=1)))
    dist = np.linalg.norm(grid - grid[anchor], axis=1)
    far = dist > 0
    if np.any(far):
        drop_slope = np.max((values[anchor] - values[far]) / dist[far])
        if drop_slope > n * (1 + 1e-12):
            raise GrowthExceedsIndex(
                f"base decreases with slope {drop_slope:.4g} > n = {n} on the grid"
            )
    if grid.shape[0] > 1:
        diffs = np.diff(np.unique(grid[:, 0]))
        delta = float(np.min(diffs)) if diffs.size else 0.0
    else:
        delta = 0.0
    return InfConvApproximant(base=base, n=float(n), grid=grid, values=values, spacing=delta)


def truncate_q(z, n: float):
    """Radial retraction ``z * n / max(|z|, n)`` onto the ball of radius n.

    The last axis of an array is the vector axis; a scalar is a point of the
    real line.
    """
    if n < 1:
        raise ValueError("truncation index must be >= 1")
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        return float(np.clip(z, -n, n))
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    return z * (n / np.maximum(norm, n))


def cutoff_theta(y, r: float):
    """C1 cutoff: 1 on ``[-r, r]``, 0 outside ``(-r-1, r+1)``, cubic in between."""
    if not r > 0:
        raise ValueError("cutoff radius must be positive")
    y = np.asarray(y, dtype=float)
    u = np.clip(np.abs(y) - r, 0.0, 1.0)
    out = 1.0 - 3.0 * u**2 + 2.0 * u**3
    return float(out) if out.ndim == 0 else out


def pi_r(driver: DriverSpec, r: float, t: float, y_grid=None, x=None, points: int = 1001):
    """Local modulus ``sup_{|y| <= r} |f(t, x, y, 0) - f(t, x, 0, 0)|``.

    ``x`` is an ``(M, d)`` array of state points (default: the origin); the
    result has shape ``(M,)``, or is a float when ``x`` is omitted.
    """
    if y_grid is None:
        y_grid = np.linspace(-r, r, points)
    y_grid = np.asarray(y_grid, dtype=float)
    if np.any(np.abs(y_grid) > r * (1 + 1e-12)):
        raise ValueError("y_grid must lie inside [-r, r]")
    scalar = x is None
    x = np.zeros((1, driver.dim)) if x is None else np.atleast_2d(np.asarray(x, float))
    if not driver.x_dependent and x.shape[0] > 1:
        return np.full(x.shape[0], pi_r(driver, r, t, y_grid=y_grid, x=x[:1])[0])
    m = x.shape[0]
    z0 = np.zeros((m, driver.dim))
    base = np.asarray(driver.f(t, x, np.zeros(m), z0), float)
    best = np.zeros(m)
    for y in y_grid:
        val = np.asarray(driver.f(t, x, np.full(m, y), z0), float)
        np.maximum(best, np.abs(val - base), out=best)
    return float(best[0]) if scalar else best


class _ModulusCache:
    """Remembers ``pi_{r+1}(t, x)`` for the last ``(t, x)`` it was asked about."""

    def __init__(self, driver, r, points):
        self.driver, self.r, self.points = driver, r, points
        self._key = None
        self._x = None
        self._value = None

    def __call__(self, t, x):
        key = (float(t), x.shape)
        if key == self._key and np.array_equal(x, self._x):
            return self._value
        self._value = pi_r(self.driver, self.r, t, x=x, points=self.points)
        self._key, self._x = key, np.array(x, copy=True)
        return self._value


def _lipschitz_estimate(fn, dim, r, n, t=0.0):
    """Finite-difference y- and z-slopes of ``fn`` at the origin state."""
    ys = np.linspace(-(r + 1.5), r + 1.5, 601)
    x = np.zeros((ys.size, dim))
    vals = np.asarray(fn(t, x, ys, np.zeros((ys.size, dim))), float)
    ly = float(np.max(np.abs(np.diff(vals)) / np.diff(ys)))
    zs = np.linspace(-(n + 1.0), n + 1.0, 601)
    zz = np.zeros((zs.size, dim))
    zz[:, 0] = zs
    vals = np.asarray(fn(t, np.zeros((zs.size, dim)), np.zeros(zs.size), zz), float)
    lz = float(np.max(np.abs(np.diff(vals)) / np.diff(zs)))
    return ly, lz


def _scaled_driver(driver, n, r, with_cutoff, points):
    modulus = _ModulusCache(driver, r + 1.0, points)
    f = driver.f

    def approx(t, x, y, z):
        y = np.asarray(y, float)
        f0 = np.asarray(f(t, x, np.zeros_like(y), np.zeros_like(z)), float)
        scale = n / np.maximum(modulus(t, x), n)
        bracket = np.asarray(f(t, x, y, truncate_q(z, n)), float) - f0
        if with_cutoff:
            bracket = cutoff_theta(y, r) * bracket
        return bracket * scale + f0

    return approx


def build_h_n(driver: DriverSpec, n: float, r: float, points: int = 1001) -> DriverSpec:
    """Localised driver ``theta_r(y) (f(t,y,q_n(z)) - f0) n / (pi_{r+1} v n) + f0``.

    The baseline ``f0 = f(t, x, 0, 0)`` is signed, so ``h_n(t, 0, 0) = f(t, 0, 0)``.
    The returned spec records a finite-difference Lipschitz estimate.
    """
    if n < 1 or not r > 0:
        raise ValueError("need n >= 1 and r > 0")
    h = _scaled_driver(driver, n, r, True, points)
    ly, lz = _lipschitz_estimate(h, driver.dim, r, n)
    lip = 1.05 * max(ly, lz) + 1e-12
    return driver.replace(
        f=h,
        lam=max(driver.lam, 1.05 * lz),
        mu=1.05 * ly,
        growth=max(driver.growth, lip),
        lipschitz=lip,
        name=f"{driver.name}|h_{n:g}",
    )


def build_f_n_step1(
    driver: DriverSpec, n: float, r: float, points: int = 1001, check_samples: int = 64
) -> DriverSpec:
    """Truncated driver ``(f(t,y,q_n(z)) - f0) n / (pi_{r+1} v n) + f0`` (no cutoff).

    When the input driver is y-monotone with ``mu <= 0`` the output is
    checked on a sample to keep that property.
    """
    if n < 1 or not r > 0:
        raise ValueError("need n >= 1 and r > 0")
    fn = _scaled_driver(driver, n, r, False, points)
    out = driver.replace(f=fn, mu=max(driver.mu, 0.0), name=f"{driver.name}|f_{n:g}")
    if driver.mu <= 0 and check_samples:
        report = check_assumptions(out, samples=check_samples, seed=int(n), box=r + 1.0)
        if not report.clauses["iv"].passed:
            raise InvalidDriver(
                f"truncated driver lost y-monotonicity (worst {report.clauses['iv'].worst_violation:.3e})"
            )
    return out


@dataclass(frozen=True)
class Step2Data:
    xi: np.ndarray
    driver: DriverSpec
    S: np.ndarray
    repaired: int


def truncate_data_step2(xi, driver: DriverSpec, S, n: float) -> Step2Data:
    """Truncate terminal value, driver baselines and barrier at level n.

    A barrier of ``-inf`` (no obstacle) is kept as is.  If truncation makes
    the barrier exceed the terminal value on a path, the terminal value is
    raised to the barrier and the number of repaired paths is reported.
    """
    if n < 1:
        raise ValueError("truncation index must be >= 1")
    xi_n = np.clip(np.asarray(xi, float), -n, n)
    S = np.asarray(S, float)
    S_n = np.where(np.isneginf(S), S, np.clip(S, -n, n))
    bad = S_n[..., -1] > xi_n
    repaired = int(np.count_nonzero(bad))
    if repaired:
        xi_n = np.maximum(xi_n, S_n[..., -1])
    f, g = driver.f, driver.g

    def f_n(t, x, y, z):
        f0 = np.asarray(f(t, x, np.zeros_like(y, dtype=float), np.zeros_like(z, dtype=float)), float)
        return np.asarray(f(t, x, y, z), float) - f0 + np.clip(f0, -n, n)

    def g_n(t, x, y):
        g0 = np.asarray(g(t, x, np.zeros_like(y, dtype=float)), float)
        return np.asarray(g(t, x, y), float) - g0 + np.clip(g0, -n, n)

    new = driver.replace(f=f_n, g=g_n, name=f"{driver.name}|trunc_{n:g}")
    return Step2Data(xi=xi_n, driver=new, S=S_n, repaired=repaired)


def step1_radius(xi_sup, f0_sup, g0_sup, G_T_sup, S_plus_sup, lam, T):
    """Left side of the Step-1 radius bound; the radius must exceed it."""
    return float(np.sqrt(np.exp((1.0 + lam**2) * T)) * (xi_sup + T * f0_sup + G_T_sup * g0_sup + S_plus_sup))
