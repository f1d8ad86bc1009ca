"""Built-in benchmark problems.

Each entry bundles the forward dynamics, driver, obstacle, default grid
sizes, a suggested regression basis and the matching 1-d PDE data so the
same problem can be handed to the Monte Carlo solvers and to the
finite-difference oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backward_solver import RegressionBasis
from .errors import ConfigInvalid
from .models import DomainSpec, DriverSpec, ObstacleSpec, half_line_domain, interval_domain, whole_space

__all__ = ["Problem", "PdeData", "CATALOG", "DESCRIPTIONS", "get_problem", "problem_names"]


@dataclass(frozen=True)
class PdeData:
    """Inputs of :func:`rgbsde.pde_oracle.solve_obstacle_pde` for one problem."""

    x_min: float
    x_max: float
    b: object
    sigma: object
    f: Callable | None = None
    g: Callable | None = None
    h: Callable | None = None
    l: Callable | None = None
    J: int = 200
    Nt: int = 200


@dataclass(frozen=True)
class Problem:
    name: str
    description: str
    domain: DomainSpec
    b: object
    sigma: object
    x0: float
    T: float
    driver: DriverSpec
    obstacle: ObstacleSpec
    N: int = 64
    M: int = 10_000
    method: str = "reflected"
    basis: RegressionBasis = field(default_factory=RegressionBasis)
    pde: PdeData | None = None
    starts: tuple = ()
    reference: float | None = None
    params: dict = field(default_factory=dict)

    def with_start(self, x0: float) -> "Problem":
        from dataclasses import replace

        return replace(self, x0=float(x0))


def _const(value):
    return lambda x: np.full(np.shape(x)[0], value, dtype=float)


def trivial_constant(c: float = 1.5, T: float = 1.0) -> Problem:
    driver = DriverSpec(f=lambda t, x, y, z: np.zeros_like(y), name="zero", x_dependent=False)
    return Problem(
        "trivial_constant",
        "zero driver, no barrier, constant terminal value c; Y is identically c",
        whole_space(1),
        0.0,
        1.0,
        0.0,
        T,
        driver,
        ObstacleSpec(l=_const(c)),
        pde=PdeData(-5.0, 5.0, 0.0, 1.0, l=_const(c)),
        starts=(-1.0, 0.0, 1.0),
        reference=c,
        params={"c": c, "T": T},
    )


def linear_discount(rate: float = 0.05, T: float = 1.0) -> Problem:
    def f(t, x, y, z):
        return -rate * y

    driver = DriverSpec(f=f, mu=-rate, growth=rate, name="linear", x_dependent=False)
    return Problem(
        "linear_discount",
        "f = -rate * y with terminal value 1; Y_0 = exp(-rate T)",
        whole_space(1),
        0.0,
        1.0,
        0.0,
        T,
        driver,
        ObstacleSpec(l=_const(1.0)),
        M=50_000,
        pde=PdeData(-5.0, 5.0, 0.0, 1.0, f=f, l=_const(1.0)),
        starts=(0.0,),
        reference=math.exp(-rate * T),
        params={"rate": rate, "T": T},
    )


def american_put_analog(
    strike: float = 100.0, spot: float = 100.0, rate: float = 0.05, vol: float = 0.2, T: float = 1.0
) -> Problem:
    """American put with log-price state on the whole line."""

    def f(t, x, y, z):
        return -rate * y

    def payoff(x):
        return np.maximum(strike - np.exp(np.asarray(x, float)[:, 0]), 0.0)

    def h(t, x):
        return payoff(x)

    drift = rate - 0.5 * vol * vol
    x0 = math.log(spot)
    driver = DriverSpec(f=f, mu=-rate, growth=rate, name="discount", x_dependent=False)
    return Problem(
        "american_put_analog",
        "American put in log-price: f = -r y, barrier and payoff (K - e^x)^+",
        whole_space(1),
        drift,
        vol,
        x0,
        T,
        driver,
        ObstacleSpec(h=h, l=payoff),
        N=128,
        M=100_000,
        basis=RegressionBasis("piecewise-linear", 16),
        pde=PdeData(x0 - 3.0, x0 + 3.0, drift, vol, f=f, h=h, l=payoff, J=400, Nt=400),
        starts=(x0,),
        params={"strike": strike, "spot": spot, "rate": rate, "vol": vol, "T": T},
    )


def cubic_driver(T: float = 1.0) -> Problem:
    """Driver ``-y^3``: continuous and monotone in y but not Lipschitz."""

    def f(t, x, y, z):
        return -(y * y * y)

    def l(x):
        return np.tanh(np.asarray(x, float)[:, 0])

    driver = DriverSpec(f=f, mu=0.0, growth=0.0, name="cubic", x_dependent=False)
    return Problem(
        "cubic_driver",
        "f = -y^3 (non-Lipschitz), terminal tanh(X_T); solved by the truncation pipeline",
        whole_space(1),
        0.0,
        1.0,
        0.0,
        T,
        driver,
        ObstacleSpec(l=l),
        M=20_000,
        method="pipeline",
        pde=PdeData(-6.0, 6.0, 0.0, 1.0, f=f, l=l),
        starts=(0.0,),
        params={"T": T},
    )


def reflected_bm_neumann(length: float = 2.0, gamma: float = 0.5, kappa: float = 0.5, T: float = 1.0) -> Problem:
    """Reflected Brownian motion on ``[0, L]`` with boundary driver ``-gamma - kappa y``."""

    def g(t, x, y):
        return -gamma - kappa * np.asarray(y, float)

    driver = DriverSpec(
        f=lambda t, x, y, z: np.zeros_like(y),
        g=g,
        beta=-kappa,
        growth=kappa,
        name="neumann",
        x_dependent=False,
    )
    return Problem(
        "reflected_bm_neumann",
        "reflected BM on [0, L], f = 0, terminal 0, boundary driver g = -gamma - kappa y",
        interval_domain(length),
        0.0,
        1.0,
        0.25,
        T,
        driver,
        ObstacleSpec(l=_const(0.0)),
        N=128,
        M=50_000,
        pde=PdeData(0.0, length, 0.0, 1.0, g=g, l=_const(0.0), J=200, Nt=400),
        starts=(0.25, 1.0),
        params={"length": length, "gamma": gamma, "kappa": kappa, "T": T},
    )


def binding_obstacle(level: float = 1.0, rate: float = 0.1, kappa: float = 0.2, T: float = 1.0) -> Problem:
    """Reflected BM on the half-line with barrier ``level - x`` that binds near the boundary."""

    def f(t, x, y, z):
        return -rate * y

    def g(t, x, y):
        return -kappa * np.asarray(y, float)

    def h(t, x):
        return level - np.asarray(x, float)[:, 0]

    def l(x):
        return np.maximum(level - np.asarray(x, float)[:, 0], 0.0)

    driver = DriverSpec(
        f=f, g=g, mu=-rate, beta=-kappa, growth=max(rate, kappa), name="binding", x_dependent=False
    )
    return Problem(
        "binding_obstacle",
        "half-line reflected BM, f = -r y, g = -kappa y, barrier level - x binding near the boundary",
        half_line_domain(),
        0.0,
        1.0,
        0.5,
        T,
        driver,
        ObstacleSpec(h=h, l=l),
        M=20_000,
        pde=PdeData(0.0, 6.0, 0.0, 1.0, f=f, g=g, h=h, l=l, J=300, Nt=200),
        starts=(0.5,),
        params={"level": level, "rate": rate, "kappa": kappa, "T": T},
    )


CATALOG = {
    "trivial_constant": trivial_constant,
    "linear_discount": linear_discount,
    "american_put_analog": american_put_analog,
    "cubic_driver": cubic_driver,
    "reflected_bm_neumann": reflected_bm_neumann,
    "binding_obstacle": binding_obstacle,
}


def problem_names() -> list:
    return list(CATALOG)


def get_problem(name: str, **params) -> Problem:
    """Build a catalog problem, overriding its keyword parameters."""
    if name not in CATALOG:
        raise ConfigInvalid(f"unknown problem {name!r}; known: {', '.join(CATALOG)}", "problem")
    try:
        return CATALOG[name](**params)
    except TypeError as exc:
        raise ConfigInvalid(str(exc), "params") from exc


DESCRIPTIONS = {name: fn().description for name, fn in CATALOG.items()}
