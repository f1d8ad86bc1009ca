import math

import numpy as np
import pytest

from rgbsde.backward_solver import (
    PipelineConfig,
    RegressionBasis,
    SolverConfig,
    extract_K,
    solve_penalized,
    solve_pipeline,
    solve_reflected,
)
from rgbsde.errors import MismatchedGrids, PipelineNotCauchy, RegressionSingular
from rgbsde.forward_sde import simulate_reflected
from rgbsde.models import DriverSpec, ObstacleSpec, TimeGrid, half_line_domain, whole_space

CFG = SolverConfig(check_driver=False)


def bm(M=5000, N=32, seed=0, x0=0.0, T=1.0):
    return simulate_reflected(whole_space(1), 0.0, 1.0, x0, TimeGrid(T, N), M, seed=seed)


def test_constant_terminal(zero_driver):
    fw = bm()
    sol = solve_reflected(fw, zero_driver, ObstacleSpec(l=lambda x: np.full(len(x), 2.5)), config=CFG)
    assert np.all(sol.Y == 2.5)
    assert np.max(np.abs(sol.Z)) < 1e-10
    assert np.all(sol.K_increments == 0)


def test_zero_driver_mean_consistency(zero_driver):
    fw = bm(M=4000)
    sol = solve_reflected(fw, zero_driver, ObstacleSpec(l=lambda x: np.sin(x[:, 0]) + x[:, 0] ** 2), config=CFG)
    assert sol.Y0 == pytest.approx(np.mean(sol.xi), abs=1e-12)


def test_linear_discount():
    drv = DriverSpec(f=lambda t, x, y, z: -0.05 * y, mu=-0.05, growth=0.05)
    sol = solve_reflected(bm(M=2000, N=64), drv, ObstacleSpec(l=lambda x: np.ones(len(x))), config=CFG)
    assert abs(sol.Y0 - math.exp(-0.05)) < 1e-3


def test_terminal_and_reflection_invariants():
    fw = bm(M=3000)
    drv = DriverSpec(f=lambda t, x, y, z: -0.1 * y, mu=-0.1, growth=0.1)
    ob = ObstacleSpec(h=lambda t, x: 0.5 - x[:, 0] ** 2, l=lambda x: np.maximum(0.5 - x[:, 0] ** 2, 0.0))
    sol = solve_reflected(fw, drv, ob, config=CFG)
    assert np.array_equal(sol.Y[:, -1], sol.xi)
    assert np.all(sol.Y >= sol.S)
    assert np.all(sol.K_increments >= 0)
    gap = (sol.Y[:, :-1] - sol.S[:, :-1]) * sol.K_increments
    assert np.all(gap == 0)
    assert sol.K[:, 0].tolist() == [0.0] * fw.M


def test_penalized_without_barrier_equals_reflected():
    fw = bm(M=2000)
    drv = DriverSpec(f=lambda t, x, y, z: -0.2 * y + 0.1 * z[:, 0], lam=0.1, mu=-0.2, growth=0.2)
    ob = ObstacleSpec(l=lambda x: np.cos(x[:, 0]))
    a = solve_reflected(fw, drv, ob, config=SolverConfig(check_driver=False, target="regressed"))
    b = solve_penalized(fw, drv, ob, 50, config=CFG)
    assert np.allclose(a.Y, b.Y, atol=1e-12)
    assert np.all(b.K_increments == 0)


def test_penalized_ladder_is_monotone_and_below_reflected():
    fw = bm(M=4000, N=32, seed=2)
    drv = DriverSpec(f=lambda t, x, y, z: -0.05 * y, mu=-0.05, growth=0.05)
    ob = ObstacleSpec(h=lambda t, x: np.maximum(1 - np.exp(x[:, 0] * 0.3), 0.0),
                      l=lambda x: np.maximum(1 - np.exp(x[:, 0] * 0.3), 0.0))
    basis = RegressionBasis("piecewise-linear", 8)
    y0 = [solve_penalized(fw, drv, ob, n, basis, CFG).Y0 for n in (0, 10, 50, 250)]
    assert all(b >= a - 1e-12 for a, b in zip(y0, y0[1:]))
    ref = solve_reflected(fw, drv, ob, basis, CFG)
    assert ref.Y0 >= y0[-1] - 2 * ref.Y0_se - 1e-3


def test_generalized_term_on_half_line():
    fw = simulate_reflected(half_line_domain(), 0.0, 1.0, 0.0, TimeGrid(1.0, 64), 20000, seed=3,
                            scheme="skorokhod_explicit")
    drv = DriverSpec(f=lambda t, x, y, z: np.zeros_like(y), g=lambda t, x, y: np.ones_like(y), beta=-1e-9)
    sol = solve_reflected(fw, drv, ObstacleSpec(l=lambda x: np.zeros(len(x))), config=CFG)
    # Y_0 = E[G_T] for g = 1
    assert sol.Y0 == pytest.approx(fw.G[:, -1].mean(), abs=0.02)


def test_mismatched_obstacle_shape():
    fw = bm(M=100)
    with pytest.raises(MismatchedGrids):
        solve_reflected(fw, DriverSpec(f=lambda t, x, y, z: y), (np.zeros((5, 3)), np.zeros(5)), config=CFG)


def test_regression_singular_without_ridge():
    fw = bm(M=3)
    basis = RegressionBasis("polynomial", 4, ridge=0.0)
    with pytest.raises(RegressionSingular):
        solve_reflected(fw, DriverSpec(f=lambda t, x, y, z: 0 * y), ObstacleSpec(l=lambda x: x[:, 0]), basis, CFG)


def test_extract_K_scores():
    from dataclasses import replace

    fw = bm(M=3000, N=32, seed=7)
    zero = DriverSpec(f=lambda t, x, y, z: np.zeros_like(y))
    const = solve_reflected(fw, zero, ObstacleSpec(l=lambda x: np.full(len(x), 1.0)), config=CFG)
    assert extract_K(const, fw, zero)[1] < 1e-10
    ob = ObstacleSpec(h=lambda t, x: 1.0 - x[:, 0] ** 2, l=lambda x: np.maximum(1.0 - x[:, 0] ** 2, 0.0))
    sol = solve_reflected(fw, zero, ob, config=SolverConfig(check_driver=False, target="regressed"))
    _, score = extract_K(sol, fw, zero)
    assert score < 0.02
    true_K = sol.Y0 - sol.xi.mean()
    tampered = replace(sol, K_increments=np.zeros_like(sol.K_increments))
    _, bad = extract_K(tampered, fw, zero)
    assert bad == pytest.approx(true_K, rel=0.05)
    assert extract_K(sol, fw, zero, pathwise=True)[1] >= score


def test_pipeline_inactive_for_tame_driver():
    fw = bm(M=2000, N=16)
    drv = DriverSpec(f=lambda t, x, y, z: -0.1 * y, mu=-0.1, growth=0.1, x_dependent=False)
    ob = ObstacleSpec(l=lambda x: 0.5 * np.tanh(x[:, 0]))
    sol, trace = solve_pipeline(fw, drv, ob, config=PipelineConfig())
    ref = solve_reflected(fw, drv, ob, config=CFG)
    assert trace.inactive and trace.ns == [8]
    assert np.max(np.abs(sol.Y - ref.Y)) < 1e-12


def test_pipeline_cubic_deterministic_ode():
    fw = simulate_reflected(whole_space(1), 0.0, 0.0, 0.0, TimeGrid(0.25, 64), 50, seed=0)
    drv = DriverSpec(f=lambda t, x, y, z: -(y * y * y), x_dependent=False)
    sol, trace = solve_pipeline(fw, drv, ObstacleSpec(l=lambda x: np.ones(len(x))))
    assert abs(sol.Y0 - 1 / math.sqrt(1.5)) < 1e-3
    assert np.all(sol.Z == 0)


def test_pipeline_not_cauchy_is_surfaced():
    fw = bm(M=2000, N=16)
    drv = DriverSpec(f=lambda t, x, y, z: -(y * y * y), x_dependent=False)
    # tiny tolerance and a growing truncation force a long trace; a data level
    # far above every n keeps the distances from shrinking
    ob = ObstacleSpec(l=lambda x: 40.0 * np.tanh(x[:, 0]))
    cfg = PipelineConfig(n_min=1, n_max=16, tol_cauchy=1e-12)
    with pytest.raises(PipelineNotCauchy):
        solve_pipeline(fw, drv, ob, config=cfg)
