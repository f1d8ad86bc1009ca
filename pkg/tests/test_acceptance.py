"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are written to
the terminal even when output capture is on.
"""

import math
import time

import numpy as np
import pytest

from rgbsde.approximation import candidate_grid, infconv
from rgbsde.backward_solver import SolverConfig, solve_penalized, solve_pipeline, solve_reflected
from rgbsde.catalog import get_problem, problem_names
from rgbsde.cli import main, strip_wall_clock
from rgbsde.estimates import audit_apriori_bound, audit_comparison, audit_skorokhod, audit_stability, audit_Z_control
from rgbsde.forward_sde import simulate_reflected
from rgbsde.models import DriverSpec, ObstacleSpec, TimeGrid, half_line_domain, whole_space
from rgbsde.pde_oracle import binomial_american_put
from rgbsde.runner import SolveSettings, pde_compare, simulate_problem, solve_problem

CFG = SolverConfig(check_driver=False)
PUT_BINOMIAL = 6.089595282977709  # 1000-step CRR tree, S = K = 100, r = 0.05, vol = 0.2, T = 1


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def put_run():
    problem = get_problem("american_put_analog")
    t0 = time.perf_counter()
    fw = simulate_problem(problem, 100_000, 128, seed=0)
    sol = solve_reflected(fw, problem.driver, problem.obstacle, problem.basis, CFG)
    runtime = time.perf_counter() - t0
    return problem, fw, sol, runtime


@pytest.fixture(scope="module")
def put_ladder(put_run):
    problem, fw, _, _ = put_run
    return [solve_penalized(fw, problem.driver, problem.obstacle, n, problem.basis, CFG) for n in (10, 50, 250)]


def test_criterion_01_trivial_solution(report):
    t0 = time.perf_counter()
    fw = simulate_reflected(whole_space(1), 0.0, 1.0, 0.0, TimeGrid(1.0, 64), 10_000, seed=1)
    drv = DriverSpec(f=lambda t, x, y, z: np.zeros_like(y))
    sol = solve_reflected(fw, drv, ObstacleSpec(l=lambda x: np.full(len(x), 0.7)), config=CFG)
    runtime = time.perf_counter() - t0
    y_err = float(np.max(np.abs(sol.Y - 0.7)))
    z_max = float(np.max(np.abs(sol.Z)))
    k_max = float(np.max(np.abs(sol.K)))
    ok = y_err == 0.0 and z_max < 1e-10 and k_max == 0.0 and runtime < 5.0
    report(1, ok, f"max|Y-c|={y_err:.1e} max|Z|={z_max:.1e} max|K|={k_max:.1e} runtime={runtime:.2f}s (<5s)")


def test_criterion_02_linear_driver(report):
    problem = get_problem("linear_discount")
    fw = simulate_problem(problem, 50_000, 64, seed=2)
    sol, _ = solve_problem(problem, fw, SolveSettings("reflected"))
    err = abs(sol.Y0 - math.exp(-0.05))
    report(2, err < 1e-3, f"Y0={sol.Y0:.6f} exp(-0.05)={math.exp(-0.05):.6f} err={err:.2e} (<1e-3)")


def test_criterion_03_american_put(report, put_run):
    _, _, sol, runtime = put_run
    ref = binomial_american_put(100.0, 100.0, 0.05, 0.2, 1.0, 1000)
    assert ref == pytest.approx(PUT_BINOMIAL, abs=1e-12)
    rel = abs(sol.Y0 / ref - 1.0)
    ok = rel < 5e-3 and runtime < 120.0
    report(3, ok, f"Y0={sol.Y0:.4f} binomial={ref:.4f} rel={rel:.2%} (<0.5%) runtime={runtime:.1f}s (<120s)")


def test_criterion_04_reflected_forward(report):
    target = math.sqrt(2.0 / math.pi)
    exact = simulate_reflected(half_line_domain(), 0.0, 1.0, 0.0, TimeGrid(1.0, 256), 100_000, seed=4,
                               scheme="skorokhod_explicit", bridge=True)
    xt = exact.X[:, -1, 0]
    se = xt.std(ddof=1) / math.sqrt(xt.size)
    ok_mean = abs(xt.mean() - target) <= 3 * se
    grid = TimeGrid(1.0, 256)
    a = simulate_reflected(half_line_domain(), 0.0, 1.0, 0.0, grid, 50_000, seed=5, scheme="skorokhod_explicit")
    b = simulate_reflected(half_line_domain(), 0.0, 1.0, 0.0, grid, 50_000, seed=6, scheme="projection")
    xa, xb = a.X[:, -1, 0], b.X[:, -1, 0]
    combined = math.sqrt(xa.var(ddof=1) / xa.size + xb.var(ddof=1) / xb.size)
    budget = 3 * combined + math.sqrt(grid.dt)
    gap = abs(xa.mean() - xb.mean())
    ok = ok_mean and gap <= budget and np.all(a.X >= 0) and np.all(b.X >= -b.tolerance)
    report(4, ok, f"E[X_1]={xt.mean():.4f}+-{se:.4f} vs {target:.4f} (3 SE); "
                  f"explicit-projection gap={gap:.4f} <= budget {budget:.4f}")


def test_criterion_05_skorokhod(report, put_ladder):
    scores = {}
    for name in problem_names():
        problem = get_problem(name)
        fw = simulate_problem(problem, 5000, None, seed=7)
        sol = solve_reflected(fw, problem.driver, problem.obstacle, problem.basis, CFG)
        scores[name] = audit_skorokhod(sol)
    pen = [audit_skorokhod(s) for s in put_ladder]
    ok = all(v == 0.0 for v in scores.values()) and pen[0] > pen[1] > pen[2]
    report(5, ok, f"reflected scores all zero: {all(v == 0.0 for v in scores.values())}; "
                  f"penalized n=10,50,250: {pen[0]:.3f} > {pen[1]:.3f} > {pen[2]:.3f}")


def test_criterion_06_comparison(report, put_ladder):
    rep = audit_comparison(put_ladder)
    y0 = [s.Y0 for s in put_ladder]
    ok = rep.passed and rep.fraction < 1e-3
    report(6, ok, f"violations {rep.violations}/{rep.total} = {rep.fraction:.2e} (<1e-3); "
                  f"Y0(n)={', '.join(f'{v:.4f}' for v in y0)}")


def test_criterion_07_inf_convolution(report):
    t0 = time.perf_counter()
    delta = 1e-3
    grid = candidate_grid(6.0, delta)
    base = lambda y: y**2
    x = np.linspace(-4.0, 4.0, 801)
    prev = None
    errs = []
    lipschitz = monotone = below = True
    for n in (4, 8, 16, 32):
        a = infconv(base, n, grid)
        v = a(x)
        slopes = np.abs(np.diff(v)) / np.diff(x)
        lipschitz &= bool(np.all(slopes <= n * (1 + 1e-12)))
        on_grid = a(grid[:, 0][::50])
        below &= bool(np.all(on_grid <= base(grid[:, 0][::50]))) and bool(np.all(v <= base(x) + n * delta))
        if prev is not None:
            monotone &= bool(np.all(v >= prev))
        prev = v
        inner = np.abs(x) <= 1.5
        errs.append(float(np.max(np.abs(a(x[inner] + 1.0 / n) - base(x[inner])))))
    ratios = [errs[k] / errs[k + 1] for k in range(len(errs) - 1)]
    halving = all(1.9 <= r <= 2.1 for r in ratios)
    runtime = time.perf_counter() - t0
    ok = lipschitz and monotone and below and halving and runtime < 10.0
    report(7, ok, f"n-Lipschitz={lipschitz} monotone={monotone} below={below} "
                  f"error ratios={', '.join(f'{r:.3f}' for r in ratios)} runtime={runtime:.2f}s (<10s)")


def test_criterion_08_cubic_pipeline(report):
    cubic = DriverSpec(f=lambda t, x, y, z: -(y * y * y), x_dependent=False)
    still = simulate_reflected(whole_space(1), 0.0, 0.0, 0.0, TimeGrid(0.25, 64), 100, seed=0)
    det, _ = solve_pipeline(still, cubic, ObstacleSpec(l=lambda x: np.ones(len(x))))
    ode = 1.0 / math.sqrt(1.0 + 2.0 * 0.25)
    err = abs(det.Y0 - ode)
    problem = get_problem("cubic_driver")
    fw = simulate_problem(problem, 20_000, 64, seed=0)
    _, trace = solve_problem(problem, fw, SolveSettings("pipeline"))
    d = trace.d_Y
    decreasing = len(d) >= 3 and all(b < a for a, b in zip(d, d[1:]))
    ok = err < 1e-3 and decreasing
    report(8, ok, f"deterministic Y0={det.Y0:.5f} vs {ode:.5f} err={err:.1e} (<1e-3); "
                  f"n={trace.ns} d_n={', '.join(f'{v:.2e}' for v in d)}")


def test_criterion_09_stability(report):
    problem = get_problem("linear_discount")
    fw = simulate_problem(problem, 10_000, 64, seed=9)
    drv = problem.driver
    base = solve_reflected(fw, drv, problem.obstacle, config=CFG)
    twin = solve_reflected(fw, drv, problem.obstacle, config=CFG)
    same = audit_stability(base, twin, fw, drv, drv, p=1.5)
    eps = 0.1
    shift = solve_reflected(fw, drv, (base.S, base.xi + eps), config=CFG)
    half = solve_reflected(fw, drv, (base.S, base.xi + eps / 2), config=CFG)
    need = 2**1.5 / 1.5
    rep = audit_stability(shift, base, fw, drv, drv, p=1.5, sol_half=half, min_decay=need)
    decay = rep.extra["decay_ratio"]
    ok = same.lhs == 0.0 and rep.passed and decay >= need
    report(9, ok, f"identical lhs={same.lhs:.1e}; halving ratio={decay:.4f} (>= {need:.4f}); ratio={rep.ratio:.3f}")


def test_criterion_10_pde_cross_validation(report):
    t0 = time.perf_counter()
    lines = []
    ok = True
    for name, M in (("trivial_constant", 10_000), ("reflected_bm_neumann", 50_000), ("american_put_analog", 100_000)):
        problem = get_problem(name)
        cv, _ = pde_compare(problem, SolveSettings("reflected"), M=M, seed=10)
        ok &= cv.within_budget
        worst = float(np.max(cv.abs_error / cv.budget))
        lines.append(f"{name}: max err/budget={worst:.2f} rel={cv.max_rel_error:.1e}")
    runtime = time.perf_counter() - t0
    ok = ok and runtime < 300.0
    report(10, ok, "; ".join(lines) + f"; runtime={runtime:.0f}s (<300s)")


def test_criterion_11_apriori_audits(report):
    worst = 0.0
    finite = True
    trivial_ratio = None
    for name in problem_names():
        problem = get_problem(name)
        ratios = []
        for M in (10_000, 40_000):
            fw = simulate_problem(problem, M, None, seed=11)
            sol, _ = solve_problem(problem, fw, SolveSettings(problem.method))
            z = audit_Z_control(sol, fw, problem.driver)
            a = audit_apriori_bound(sol, fw, problem.driver)
            ratios.append((z.ratio, a.ratio))
            finite &= z.passed and a.passed and math.isfinite(z.ratio) and math.isfinite(a.ratio)
            if name == "trivial_constant":
                trivial_ratio = a.ratio
        for k in range(2):
            small, large = ratios[0][k], ratios[1][k]
            if small > 0:
                worst = max(worst, abs(large / small - 1.0))
            elif large != 0:
                worst = math.inf
    ok = finite and worst <= 0.5 and trivial_ratio == 1.0
    report(11, ok, f"finite={finite} max relative drift 10k->40k={worst:.1%} (<=50%) trivial ratio={trivial_ratio}")


def test_criterion_12_determinism(report, tmp_path, monkeypatch):
    texts = {}
    for threads in ("1", "4"):
        monkeypatch.setenv("RGBSDE_THREADS", threads)
        for command in ("solve", "audit"):
            out = tmp_path / f"{command}{threads}"
            code = main([command, "--problem", "binding_obstacle", "--paths", "10000", "--steps", "32",
                         "--seed", "12345", "--out", str(out)])
            assert code == 0
            name = "solve.csv" if command == "solve" else "audit.csv"
            texts[(command, threads)] = strip_wall_clock((out / name).read_text())
    ok = texts[("solve", "1")] == texts[("solve", "4")] and texts[("audit", "1")] == texts[("audit", "4")]
    report(12, ok, "solve.csv and audit.csv byte-identical (wall-clock columns removed) for RGBSDE_THREADS=1 and 4")
