import math

import numpy as np
import pytest

from rgbsde.errors import GridTooCoarse, LcpNotConverged, MismatchedProblem
from rgbsde.pde_oracle import binomial_american_put, cross_validate, solve_obstacle_pde, write_pde_csv

PUT_REF = 6.089595282977709  # 1000-step binomial tree, frozen


def test_binomial_reference_value():
    assert binomial_american_put(100, 100, 0.05, 0.2, 1.0, 1000) == pytest.approx(PUT_REF, abs=1e-12)


def test_constant_solution():
    u = solve_obstacle_pde(0.0, 1.0, None, l=lambda x: np.full(len(x), 3.0), x_min=0, x_max=1, J=40, Nt=20)
    assert np.max(np.abs(u.u - 3.0)) < 1e-12
    assert np.all(u.u[-1] == 3.0)


def test_binding_obstacle_everywhere():
    h = lambda t, x: 100.0 + 0 * x[:, 0]
    u = solve_obstacle_pde(0.0, 1.0, None, h=h, l=lambda x: np.full(len(x), 100.0), x_min=0, x_max=1, J=20, Nt=10)
    assert np.allclose(u.u, 100.0)


def put_pde(J, Nt):
    r, v = 0.05, 0.2
    x0 = math.log(100.0)
    payoff = lambda x: np.maximum(100 - np.exp(x[:, 0]), 0.0)
    return solve_obstacle_pde(r - v * v / 2, v, lambda t, x, y, z: -r * y, None, lambda t, x: payoff(x), payoff,
                              x0 - 3, x0 + 3, 1.0, J, Nt), x0


def test_american_put_matches_binomial():
    u, x0 = put_pde(400, 400)
    assert abs(u.at(x0) / PUT_REF - 1) < 5e-3
    assert np.all(u.u >= u.h - 1e-10)
    assert u.residual <= 1e-10


def test_grid_refinement_decreasing_changes():
    vals = [put_pde(J, J)[0].at(math.log(100.0)) for J in (50, 100, 200)]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])


def test_comparison_principle():
    l1 = lambda x: np.sin(x[:, 0])
    l2 = lambda x: np.sin(x[:, 0]) + 0.1 * (x[:, 0] > 0.5)
    kw = dict(x_min=0.0, x_max=1.0, J=50, Nt=50, h=lambda t, x: 0.2 + 0 * x[:, 0])
    a = solve_obstacle_pde(0.0, 1.0, None, l=lambda x: np.maximum(l1(x), 0.2), **kw)
    b = solve_obstacle_pde(0.0, 1.0, None, l=lambda x: np.maximum(l2(x), 0.2), **kw)
    assert np.all(b.u >= a.u - 1e-9)


def test_neumann_flux_sign():
    # g = -gamma at both ends: u_T = 0 and an inward flux condition lowers u near the boundary
    g = lambda t, x, y: -0.5 + 0 * y
    u = solve_obstacle_pde(0.0, 1.0, None, g=g, l=lambda x: np.zeros(len(x)), x_min=0, x_max=2, T=1.0, J=100, Nt=100)
    assert u.at(0.05) < u.at(1.0) < 0


def test_peclet_guard_and_lcp_cap():
    with pytest.raises(GridTooCoarse):
        solve_obstacle_pde(50.0, 0.1, None, l=lambda x: np.zeros(len(x)), x_min=0, x_max=1, J=10, Nt=10)
    h = lambda t, x: np.sin(10 * x[:, 0])
    with pytest.raises(LcpNotConverged):
        solve_obstacle_pde(0.0, 1.0, None, h=h, l=lambda x: np.maximum(np.sin(10 * x[:, 0]), 0.5),
                           x_min=0, x_max=1, J=200, Nt=5, max_iter=2, tol_lcp=1e-14)


def test_cross_validate(tmp_path):
    u = solve_obstacle_pde(0.0, 1.0, None, l=lambda x: np.full(len(x), 1.5), x_min=-2, x_max=2, J=40, Nt=10,
                           problem="trivial_constant")
    cv = cross_validate(u, [0.0, 1.0], [1.5, 1.5], 0.0, 0.01, problem="trivial_constant")
    assert cv.within_budget and cv.max_rel_error < 1e-12
    with pytest.raises(MismatchedProblem):
        cross_validate(u, [0.0], [1.5], 0.0, 0.01, problem="other")
    with pytest.raises(MismatchedProblem):
        cross_validate(u, [5.0], [1.5], 0.0, 0.01)
    path = tmp_path / "u.csv"
    write_pde_csv(path, u)
    rows = path.read_text().splitlines()
    assert len(rows) == u.t.size + 1
    assert rows[0].split(",")[0] == "t\\x" and len(rows[0].split(",")) == u.x.size + 1
