import numpy as np

from rgbsde.backward_solver import SolverConfig, solve_penalized, solve_reflected
from rgbsde.forward_sde import simulate_reflected
from rgbsde.models import DriverSpec, ObstacleSpec, TimeGrid, half_line_domain
from rgbsde.storage import load_forward, load_solution, save_forward, save_solution


def test_round_trip(tmp_path):
    fw = simulate_reflected(half_line_domain(), 0.0, 1.0, 0.0, TimeGrid(0.5, 8), 50, seed=3)
    save_forward(tmp_path / "f.bin", fw)
    back = load_forward(tmp_path / "f.bin")
    assert back.grid == fw.grid and back.seed == 3 and back.scheme == "projection"
    assert np.array_equal(back.X, fw.X) and np.array_equal(back.G_increments, fw.G_increments)
    assert np.array_equal(back.dW, fw.dW)

    drv = DriverSpec(f=lambda t, x, y, z: -y, g=lambda t, x, y: -y)
    ob = ObstacleSpec(l=lambda x: x[:, 0])
    for sol in (solve_reflected(fw, drv, ob, config=SolverConfig(check_driver=False)),
                solve_penalized(fw, drv, ob, 10, config=SolverConfig(check_driver=False))):
        save_solution(tmp_path / "s.bin", sol)
        got = load_solution(tmp_path / "s.bin")
        assert got.method == sol.method and got.penalty == sol.penalty
        for name in ("Y", "Z", "K_increments", "S", "xi"):
            assert np.array_equal(getattr(got, name), getattr(sol, name))
    assert not any(p.suffix == ".tmp" for p in tmp_path.iterdir())


def test_header_layout(tmp_path):
    fw = simulate_reflected(half_line_domain(), 0.0, 1.0, 0.0, TimeGrid(1.0, 4), 3, seed=1)
    save_forward(tmp_path / "f.bin", fw)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:8] == b"RGBSDE01" and raw[8:9] == b"F"
    T, N, M, d = np.frombuffer(raw[9:17], "<f8")[0], *np.frombuffer(raw[17:41], "<u8")
    assert (T, N, M, d) == (1.0, 4, 3, 1)
