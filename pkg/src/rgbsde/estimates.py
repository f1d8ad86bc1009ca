"""Audits that turn the a priori estimates into measured ratios.

Each audit evaluates both sides of an inequality on a simulated solution
and reports the implied constant ``lhs / rhs``.  The estimates only assert
that some constant exists, so an audit passes when the implied constant is
below a generous ceiling; zero data give ``0 / 0``, which passes by
convention and is flagged as degenerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backward_solver import SolutionBundle
from .errors import EmptyBundle, MismatchedGrids
from .forward_sde import ForwardBundle
from .models import DriverSpec

__all__ = [
    "NormEstimate",
    "AuditReport",
    "ComparisonReport",
    "hat",
    "power_weight",
    "c_p",
    "lp_sup_norm",
    "lp_quadvar_norm",
    "audit_Z_control",
    "audit_apriori_bound",
    "audit_stability",
    "audit_skorokhod",
    "audit_comparison",
]


def hat(x):
    """``x / |x|`` with the value 0 at the origin."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    return np.divide(x, a, out=np.zeros_like(x), where=a > 0)


def power_weight(y, p: float):
    """``|y|^(p-1) * hat(y)``, the derivative of ``|y|^p / p``."""
    y = np.asarray(y, dtype=float)
    return np.abs(y) ** (p - 1.0) * hat(y)


def c_p(p: float) -> float:
    return p * min(p - 1.0, 1.0) / 2.0


@dataclass(frozen=True)
class NormEstimate:
    value: float
    se: float


def _paths(a):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raise EmptyBundle("no paths to average over")
    return a[None, :] if a.ndim == 1 else a


def _mean_se(sample):
    sample = np.asarray(sample, float)
    m = sample.size
    se = float(np.std(sample, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return float(np.mean(sample)), se


def lp_sup_norm(Y, p: float) -> NormEstimate:
    """``E[sup_t |Y_t|^p]^(1/p)`` over paths (rows) with a delta-method SE."""
    Y = _paths(Y)
    mean, se = _mean_se(np.max(np.abs(Y), axis=1) ** p)
    value = mean ** (1.0 / p)
    dse = se / (p * value ** (p - 1.0)) if value > 0 else 0.0
    return NormEstimate(value, dse)


def lp_quadvar_norm(Z, dt: float, p: float) -> NormEstimate:
    """``E[(int |Z|^2 dt)^(p/2)]`` for ``Z`` of shape ``(M, N)`` or ``(M, N, d)``."""
    Z = np.asarray(Z, dtype=float)
    if Z.size == 0:
        raise EmptyBundle("no paths to average over")
    if Z.ndim == 1:
        Z = Z[None, :]
    sq = Z**2 if Z.ndim == 2 else np.sum(Z**2, axis=2)
    mean, se = _mean_se((np.sum(sq, axis=1) * dt) ** (p / 2.0))
    return NormEstimate(mean, se)


@dataclass(frozen=True)
class AuditReport:
    """One audited inequality.

    ``constant_estimate`` equals ``ratio``; both are ``lhs / rhs``.
    ``extra`` carries audit-specific side values.
    """

    lemma: str
    lhs: float
    rhs_components: dict
    ratio: float
    p: float
    constant_estimate: float
    passed: bool
    degenerate: bool = False
    c_p: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_components.values()))

    def as_row(self) -> dict:
        row = {"lemma": self.lemma, "p": self.p, "lhs": self.lhs, "rhs": self.rhs}
        for k, v in self.rhs_components.items():
            row[f"rhs_{k}"] = v
        row.update({"ratio": self.ratio, "pass": int(self.passed), "degenerate": int(self.degenerate)})
        for k, v in self.extra.items():
            row[k] = v
        return row


def _report(lemma, lhs, comps, p, ceiling, extra=None, scale_tol=1e-300):
    rhs = float(sum(comps.values()))
    degenerate = rhs <= scale_tol and lhs <= scale_tol
    if degenerate:
        ratio = 0.0
    elif rhs <= scale_tol:
        ratio = math.inf
    else:
        ratio = lhs / rhs
    return AuditReport(
        lemma=lemma,
        lhs=float(lhs),
        rhs_components={k: float(v) for k, v in comps.items()},
        ratio=float(ratio),
        p=p,
        constant_estimate=float(ratio),
        passed=bool(ratio <= ceiling),
        degenerate=degenerate,
        c_p=c_p(p),
        extra=dict(extra or {}),
    )


def _baseline_integrals(sol: SolutionBundle, forward: ForwardBundle, driver: DriverSpec):
    """Pathwise ``int f0 dt`` and ``int g0 dG`` by left-point sums."""
    t = forward.grid.nodes
    dt = forward.grid.dt
    M = forward.M
    f_int = np.zeros(M)
    g_int = np.zeros(M)
    for i in range(forward.grid.N):
        x = forward.X[:, i, :]
        f_int += np.abs(driver.f0(t[i], x)) * dt
        if np.any(forward.G_increments[:, i]):
            g_int += np.abs(driver.g0(t[i], x)) * forward.G_increments[:, i]
    return f_int, g_int


def _sup_pos_p(S, p):
    return np.max(np.maximum(S, 0.0), axis=1) ** p


def _check(sol, forward):
    if sol.Y.shape != (forward.M, forward.grid.N + 1):
        raise MismatchedGrids("solution and forward bundle differ in shape")


def audit_Z_control(
    sol: SolutionBundle, forward: ForwardBundle, driver: DriverSpec, p: float = 1.5, ceiling: float = 100.0
) -> AuditReport:
    """Control of ``E (int |Z|^2)^(p/2)`` by the sup of Y and the data."""
    _check(sol, forward)
    dt = forward.grid.dt
    lhs = lp_quadvar_norm(sol.Z, dt, p).value
    f_int, g_int = _baseline_integrals(sol, forward, driver)
    comps = {
        "sup_Y": float(np.mean(np.max(np.abs(sol.Y), axis=1) ** p)),
        "f0": float(np.mean(f_int**p)),
        "g0": float(np.mean(g_int**p)),
        "S_plus": float(np.mean(_sup_pos_p(sol.S, p))),
    }
    return _report("Z_control", lhs, comps, p, ceiling)


def audit_apriori_bound(
    sol: SolutionBundle, forward: ForwardBundle, driver: DriverSpec, p: float = 1.5, ceiling: float = 100.0
) -> AuditReport:
    """Bound of ``E[sup |Y|^p + (int |Z|^2)^(p/2)]`` by the data alone."""
    _check(sol, forward)
    dt = forward.grid.dt
    Zsq = np.sum(sol.Z**2, axis=2)
    lhs = float(np.mean(np.max(np.abs(sol.Y), axis=1) ** p + (np.sum(Zsq, axis=1) * dt) ** (p / 2.0)))
    f_int, g_int = _baseline_integrals(sol, forward, driver)
    comps = {
        "xi": float(np.mean(np.abs(sol.xi) ** p)),
        "f0": float(np.mean(f_int**p)),
        "g0": float(np.mean(g_int**p)),
        "S_plus": float(np.mean(_sup_pos_p(sol.S, p))),
    }
    return _report("apriori_bound", lhs, comps, p, ceiling)


def _barrier_gap(Sa, Sb):
    both_absent = np.isneginf(Sa) & np.isneginf(Sb)
    return np.abs(np.where(both_absent, 0.0, Sa) - np.where(both_absent, 0.0, Sb))


def _data_size(sol, forward, driver, p):
    f_int, g_int = _baseline_integrals(sol, forward, driver)
    return float(
        np.mean(np.abs(sol.xi) ** p + f_int**p + g_int**p + _sup_pos_p(sol.S, p))
    )


def audit_stability(
    solA: SolutionBundle,
    solB: SolutionBundle,
    forward: ForwardBundle,
    driverA: DriverSpec,
    driverB: DriverSpec,
    p: float = 1.5,
    ceiling: float = 100.0,
    sol_half: SolutionBundle | None = None,
    min_decay: float = 1.5,
) -> AuditReport:
    """Stability of Y under perturbation of the data.

    The right side collects ``E|dxi|^p``, ``E(int |df(Y_A, Z_A)| ds)^p``,
    ``E(int |dg(Y_A)| dG)^p`` and ``Psi^(1/p) (E sup |dS|^p)^((p-1)/p)``,
    with ``Psi`` the summed data sizes of both problems.  The same barrier
    term with exponent ``p/(p-1)`` is reported as ``dS_alt_exponent``.

    If ``sol_half`` (the solution with the perturbation halved) is given,
    ``decay_ratio = lhs / lhs_half`` is reported and must reach
    ``min_decay`` for the audit to pass.
    """
    for other in (solB,) + ((sol_half,) if sol_half is not None else ()):
        if other.Y.shape != solA.Y.shape or other.grid != solA.grid:
            raise MismatchedGrids("stability audit needs solutions on the same grid")
    _check(solA, forward)
    t = forward.grid.nodes
    dt = forward.grid.dt
    lhs = float(np.mean(np.max(np.abs(solA.Y - solB.Y), axis=1) ** p))
    df_int = np.zeros(forward.M)
    dg_int = np.zeros(forward.M)
    for i in range(forward.grid.N):
        x = forward.X[:, i, :]
        y = solA.Y[:, i]
        z = solA.Z[:, i, :]
        df = np.asarray(driverA.f(t[i], x, y, z), float) - np.asarray(driverB.f(t[i], x, y, z), float)
        df_int += np.abs(df) * dt
        if np.any(forward.G_increments[:, i]):
            dg = np.asarray(driverA.g(t[i], x, y), float) - np.asarray(driverB.g(t[i], x, y), float)
            dg_int += np.abs(dg) * forward.G_increments[:, i]
    psi = _data_size(solA, forward, driverA, p) + _data_size(solB, forward, driverB, p)
    dS = float(np.mean(np.max(_barrier_gap(solA.S, solB.S), axis=1) ** p))
    comps = {
        "dxi": float(np.mean(np.abs(solA.xi - solB.xi) ** p)),
        "df": float(np.mean(df_int**p)),
        "dg": float(np.mean(dg_int**p)),
        "dS": psi ** (1.0 / p) * dS ** ((p - 1.0) / p),
    }
    extra = {"Psi": psi, "dS_alt_exponent": psi ** (1.0 / p) * dS ** (p / (p - 1.0))}
    report = _report("stability", lhs, comps, p, ceiling, extra)
    if sol_half is None:
        return report
    lhs_half = float(np.mean(np.max(np.abs(solA.Y - sol_half.Y), axis=1) ** p))
    decay = lhs / lhs_half if lhs_half > 0 else (math.inf if lhs > 0 else 1.0)
    extra["decay_ratio"] = decay
    return AuditReport(
        report.lemma,
        report.lhs,
        report.rhs_components,
        report.ratio,
        p,
        report.constant_estimate,
        report.passed and decay >= min_decay,
        report.degenerate,
        report.c_p,
        extra,
    )


def audit_skorokhod(sol: SolutionBundle) -> float:
    """Max over paths of ``|sum_i (Y_i - S_i) dK_i|``; zero means K only acts at the barrier."""
    N = sol.K_increments.shape[1]
    dK = sol.K_increments
    active = dK > 0
    gap = np.where(active, sol.Y[:, :N] - np.where(active, sol.S[:, :N], 0.0), 0.0)
    terms = gap * np.where(active, dK, 0.0)
    return float(np.max(np.abs(np.sum(terms, axis=1)))) if terms.size else 0.0


@dataclass(frozen=True)
class ComparisonReport:
    violations: int
    total: int
    fraction: float
    passed: bool
    worst_gap: float


def audit_comparison(ladder, slack_se: float = 2.0, max_fraction: float = 1e-3) -> ComparisonReport:
    """Count nodes where a later rung of the ladder falls below an earlier one.

    The ladder is ordered by increasing index ``n``.  A node of rung ``n``
    violates the ordering against rung ``m < n`` when
    ``Y^n < Y^m - slack_se * SE``, where ``SE`` is the larger Monte Carlo
    standard error of the two node means.
    """
    ladder = list(ladder)
    if len(ladder) < 2:
        return ComparisonReport(0, 0, 0.0, True, 0.0)
    shape = ladder[0].Y.shape
    for sol in ladder:
        if sol.Y.shape != shape or sol.grid != ladder[0].grid:
            raise MismatchedGrids("ladder solutions live on different grids")
    M = shape[0]
    violations = total = 0
    worst = 0.0
    for a in range(len(ladder)):
        for b in range(a + 1, len(ladder)):
            lo, hi = ladder[a].Y, ladder[b].Y
            se = np.maximum(lo.std(axis=0), hi.std(axis=0)) / math.sqrt(M)
            gap = lo - hi - slack_se * se
            violations += int(np.count_nonzero(gap > 0))
            total += gap.size
            worst = max(worst, float(np.max(gap)))
    frac = violations / total
    return ComparisonReport(violations, total, frac, frac < max_fraction, max(worst, 0.0))
