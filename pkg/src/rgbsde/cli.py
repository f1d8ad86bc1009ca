"""Command-line front end.

Subcommands: ``catalog``, ``simulate``, ``solve``, ``audit``, ``converge``
and ``pde-compare``.  Problems come from the built-in catalog, optionally
reparametrised and tuned by a YAML config; command-line flags override the
config.  Exit codes: 0 success, 2 invalid input, 3 solver error, 4 failed
audit or cross-validation.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np
import yaml

from .backward_solver import PipelineConfig, RegressionBasis, SolverConfig, cauchy_distance
from .catalog import DESCRIPTIONS, get_problem
from .errors import AuditFailed, ConfigInvalid, RGBSDEError
from .forward_sde import SCHEMES, expected_local_time
from .runner import METHODS, SolveSettings, audit_problem, pde_compare, simulate_problem, solve_problem
from .pde_oracle import write_pde_csv
from .storage import atomic_write_bytes, save_forward, save_solution

log = logging.getLogger("rgbsde")

# columns that carry wall-clock information and are excluded from determinism checks
WALL_CLOCK_COLUMNS = ("timestamp", "runtime_s")

_SCHEMA = {
    "problem": str,
    "params": dict,
    "seed": int,
    "forward": {"paths": int, "steps": int, "scheme": str, "bridge": bool},
    "solver": {
        "method": str,
        "penalty": (int, float),
        "ladder": list,
        "picard_iters": int,
        "target": str,
        "basis": {"family": str, "degree": int, "ridge": (int, float)},
        "n_min": int,
        "n_max": int,
        "tol_cauchy": (int, float),
        "r_policy": str,
    },
    "audit": {"p": (int, float), "ceiling": (int, float), "perturbation": (int, float)},
    "pde": {"J": int, "Nt": int, "C_disc": (int, float), "starts": list},
    "output": {"dir": str},
}


@dataclass
class RunConfig:
    problem: str = "trivial_constant"
    params: dict = field(default_factory=dict)
    seed: int = 0
    paths: int | None = None
    steps: int | None = None
    scheme: str = "projection"
    bridge: bool = False
    method: str | None = None
    penalty: float = 50.0
    ladder: list = field(default_factory=lambda: [10, 50, 250])
    picard_iters: int = 2
    target: str = "auto"
    basis: dict | None = None
    n_min: int = 8
    n_max: int = 64
    tol_cauchy: float = 1e-3
    r_policy: str = "bound"
    p: float = 1.5
    ceiling: float = 100.0
    perturbation: float = 0.05
    J: int | None = None
    Nt: int | None = None
    C_disc: float = 1.0
    starts: list | None = None
    out: str = "rgbsde_out"


def _validate(data, schema, path=""):
    if not isinstance(data, dict):
        raise ConfigInvalid("expected a mapping", path or "<root>")
    for key, value in data.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in schema:
            raise ConfigInvalid("unknown key", where)
        kind = schema[key]
        if isinstance(kind, dict):
            _validate(value, kind, where)
        elif isinstance(value, bool) and kind is not bool:
            raise ConfigInvalid(f"expected {kind}, got a boolean", where)
        elif not isinstance(value, kind):
            raise ConfigInvalid(f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}", where)


def load_config(path) -> RunConfig:
    """Parse and validate a YAML run config."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigInvalid(str(exc), "--config") from exc
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"not valid YAML: {exc}", "--config") from exc
    _validate(data, _SCHEMA)
    cfg = RunConfig()
    flat = {k: v for k, v in data.items() if not isinstance(_SCHEMA[k], dict)}
    for section in ("forward", "solver", "audit", "pde"):
        flat.update(data.get(section, {}))
    if "output" in data and "dir" in data["output"]:
        flat["out"] = data["output"]["dir"]
    for key, value in flat.items():
        setattr(cfg, key, value)
    return cfg


def _check_config(cfg: RunConfig):
    if cfg.method is not None and cfg.method not in METHODS:
        raise ConfigInvalid(f"must be one of {METHODS}", "solver.method")
    if cfg.scheme not in SCHEMES:
        raise ConfigInvalid(f"must be one of {SCHEMES}", "forward.scheme")
    if cfg.paths is not None and cfg.paths < 2:
        raise ConfigInvalid("need at least 2 paths", "forward.paths")
    if cfg.steps is not None and cfg.steps < 1:
        raise ConfigInvalid("need at least 1 step", "forward.steps")
    if not 1.0 < cfg.p < 2.0:
        raise ConfigInvalid("p must lie in (1, 2)", "audit.p")
    if cfg.penalty < 0:
        raise ConfigInvalid("penalty must be nonnegative", "solver.penalty")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigInvalid("seed must be an unsigned 64-bit integer", "seed")
    if cfg.r_policy not in ("bound", "doubling"):
        raise ConfigInvalid("must be 'bound' or 'doubling'", "solver.r_policy")
    if cfg.target not in ("auto", "realised", "regressed"):
        raise ConfigInvalid("must be 'auto', 'realised' or 'regressed'", "solver.target")


def _settings(cfg: RunConfig, problem) -> SolveSettings:
    basis = None
    if cfg.basis:
        try:
            basis = RegressionBasis(**cfg.basis)
        except ValueError as exc:
            raise ConfigInvalid(str(exc), "solver.basis") from exc
    solver = SolverConfig(picard_iters=cfg.picard_iters, check_driver=False, target=cfg.target)
    try:
        pipeline = PipelineConfig(
            solver=solver, n_min=cfg.n_min, n_max=cfg.n_max, tol_cauchy=cfg.tol_cauchy, r_policy=cfg.r_policy
        )
    except ValueError as exc:
        raise ConfigInvalid(str(exc), "solver") from exc
    return SolveSettings(cfg.method or problem.method, cfg.penalty, basis, solver, pipeline)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17e}"
    return "" if value is None else str(value)


def write_csv(path, rows, columns=None) -> None:
    """Write dict rows with a header, full-precision floats, atomically."""
    if columns is None:
        columns = []
        for row in rows:
            columns.extend(k for k in row if k not in columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    atomic_write_bytes(path, [buf.getvalue().encode()])


def strip_wall_clock(text: str) -> str:
    """Drop wall-clock columns from CSV text, for determinism comparisons."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return text
    keep = [i for i, name in enumerate(rows[0]) if name not in WALL_CLOCK_COLUMNS]
    return "\n".join(",".join(r[i] for i in keep) for r in rows)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _print_table(rows, columns):
    widths = [max(len(c), *(len(_short(r.get(c))) for r in rows)) for c in columns]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        print("  ".join(_short(r.get(c)).ljust(w) for c, w in zip(columns, widths)))


def _short(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return _fmt(v)


# subcommands -----------------------------------------------------------------


def cmd_catalog(cfg, args):
    for name, text in DESCRIPTIONS.items():
        print(f"{name:22s} {text}")
    return 0


def _problem(cfg):
    return get_problem(cfg.problem, **cfg.params)


def cmd_simulate(cfg, args):
    problem = _problem(cfg)
    t0 = time.perf_counter()
    fw = simulate_problem(problem, cfg.paths, cfg.steps, cfg.seed, cfg.scheme, bridge=cfg.bridge)
    XT = fw.X[:, -1, 0]
    row = {
        "problem": problem.name,
        "scheme": fw.scheme,
        "M": fw.M,
        "N": fw.grid.N,
        "X_T_mean": float(XT.mean()),
        "X_T_se": float(XT.std(ddof=1) / math.sqrt(fw.M)) if fw.M > 1 else 0.0,
        "G_T_mean": expected_local_time(fw),
        "runtime_s": time.perf_counter() - t0,
        "timestamp": _now(),
    }
    save_forward(os.path.join(cfg.out, "forward.bin"), fw)
    write_csv(os.path.join(cfg.out, "simulate.csv"), [row])
    _print_table([row], ["problem", "scheme", "M", "N", "X_T_mean", "X_T_se", "G_T_mean"])
    return 0


def _solve(cfg, problem, settings):
    fw = simulate_problem(problem, cfg.paths, cfg.steps, cfg.seed, cfg.scheme, bridge=cfg.bridge)
    t0 = time.perf_counter()
    sol, trace = solve_problem(problem, fw, settings)
    return fw, sol, trace, time.perf_counter() - t0


def _n_of(sol, trace, settings):
    if trace is not None:
        return trace.ns[-1]
    return settings.penalty if settings.method == "penalized" else None


def cmd_solve(cfg, args):
    from .estimates import audit_skorokhod

    problem = _problem(cfg)
    settings = _settings(cfg, problem)
    fw, sol, trace, runtime = _solve(cfg, problem, settings)
    row = {
        "problem": problem.name,
        "method": settings.method,
        "n": _n_of(sol, trace, settings),
        "Y0_mean": sol.Y0,
        "Y0_se": sol.Y0_se,
        "K_T_mean": float(np.mean(sol.K[:, -1])),
        "skorokhod_score": audit_skorokhod(sol),
        "runtime_s": runtime,
        "timestamp": _now(),
    }
    save_solution(os.path.join(cfg.out, "solution.bin"), sol)
    write_csv(os.path.join(cfg.out, "solve.csv"), [row])
    _print_table([row], ["problem", "method", "n", "Y0_mean", "Y0_se", "K_T_mean", "skorokhod_score", "runtime_s"])
    return 0


_AUDIT_COLUMNS = [
    "problem",
    "lemma",
    "p",
    "lhs",
    "rhs",
    "rhs_sup_Y",
    "rhs_xi",
    "rhs_f0",
    "rhs_g0",
    "rhs_S_plus",
    "rhs_dxi",
    "rhs_df",
    "rhs_dg",
    "rhs_dS",
    "ratio",
    "pass",
    "degenerate",
    "Psi",
    "dS_alt_exponent",
    "decay_ratio",
]


def cmd_audit(cfg, args):
    problem = _problem(cfg)
    settings = _settings(cfg, problem)
    fw, sol, _, _ = _solve(cfg, problem, settings)
    reports = audit_problem(problem, fw, sol, settings, cfg.p, cfg.ceiling, cfg.perturbation)
    rows = [dict(problem=problem.name, **r.as_row()) for r in reports]
    write_csv(os.path.join(cfg.out, "audit.csv"), rows, _AUDIT_COLUMNS)
    _print_table(rows, ["lemma", "lhs", "rhs", "ratio", "pass"])
    failed = [r.lemma for r in reports if not r.passed]
    if failed:
        raise AuditFailed(f"audits failed: {', '.join(failed)}")
    return 0


def cmd_converge(cfg, args):
    problem = _problem(cfg)
    settings = _settings(cfg, problem)
    rows = []
    if settings.method == "pipeline":
        fw, sol, trace, runtime = _solve(cfg, problem, settings)
        for k, n in enumerate(trace.ns):
            rows.append(
                {
                    "problem": problem.name,
                    "method": "pipeline",
                    "N": fw.grid.N,
                    "M": fw.M,
                    "n": n,
                    "r": trace.radii[k],
                    "Y0": trace.Y0[k],
                    "d_Y": trace.d_Y[k - 1] if k > 0 else None,
                    "d_Z": trace.d_Z[k - 1] if k > 0 else None,
                }
            )
    elif settings.method == "penalized":
        fw = simulate_problem(problem, cfg.paths, cfg.steps, cfg.seed, cfg.scheme, bridge=cfg.bridge)
        prev = None
        for n in cfg.ladder:
            sol, _ = solve_problem(problem, fw, replace(settings, penalty=float(n)))
            d = cauchy_distance(sol, prev) if prev is not None else (None, None)
            rows.append(
                {"problem": problem.name, "method": "penalized", "N": fw.grid.N, "M": fw.M, "n": n,
                 "Y0": sol.Y0, "Y0_se": sol.Y0_se, "d_Y": d[0], "d_Z": d[1]}
            )
            prev = sol
    else:
        base = cfg.steps or problem.N
        prev_y0 = None
        for N in (base, 2 * base, 4 * base):
            fw = simulate_problem(problem, cfg.paths, N, cfg.seed, cfg.scheme, bridge=cfg.bridge)
            sol, _ = solve_problem(problem, fw, settings)
            rows.append(
                {"problem": problem.name, "method": "reflected", "N": N, "M": fw.M, "n": None, "Y0": sol.Y0,
                 "Y0_se": sol.Y0_se, "d_Y": abs(sol.Y0 - prev_y0) if prev_y0 is not None else None}
            )
            prev_y0 = sol.Y0
    write_csv(os.path.join(cfg.out, "converge.csv"), rows)
    _print_table(rows, list(rows[0]))
    return 0


def cmd_pde_compare(cfg, args):
    problem = _problem(cfg)
    settings = _settings(cfg, problem)
    cv, u = pde_compare(problem, settings, cfg.paths, cfg.steps, cfg.seed, cfg.starts, cfg.C_disc, cfg.J, cfg.Nt)
    rows = []
    for k, x0 in enumerate(cv.starts):
        rows.append(
            {
                "problem": problem.name,
                "x0": float(x0),
                "Y0_mean": float(cv.Y0[k]),
                "Y0_se": float(cv.se[k]),
                "u0": float(cv.u0[k]),
                "abs_error": float(cv.abs_error[k]),
                "budget": float(cv.budget[k]),
                "within_budget": bool(cv.abs_error[k] <= cv.budget[k]),
                "max_rel_error": cv.max_rel_error,
            }
        )
    write_csv(os.path.join(cfg.out, "pde_compare.csv"), rows)
    write_pde_csv(os.path.join(cfg.out, "pde_u.csv"), u)
    _print_table(rows, ["x0", "Y0_mean", "u0", "abs_error", "budget", "within_budget"])
    if not cv.within_budget:
        raise AuditFailed(f"Monte Carlo and PDE values differ by more than the budget for {problem.name}")
    return 0


COMMANDS = {
    "catalog": cmd_catalog,
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "audit": cmd_audit,
    "converge": cmd_converge,
    "pde-compare": cmd_pde_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbsde", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "catalog":
            continue
        sp.add_argument("--config", help="YAML run config")
        sp.add_argument("--problem", help="catalog problem name")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--paths", type=int, help="Monte Carlo path count M")
        sp.add_argument("--steps", type=int, help="time steps N")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--method", choices=METHODS)
        sp.add_argument("--penalty", type=float, help="penalty index n")
        sp.add_argument("--p", type=float, help="integrability exponent for audits")
    return parser


def _merge(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    for key in ("problem", "seed", "paths", "steps", "out", "method", "penalty", "p"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    _check_config(cfg)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _merge(args) if args.command != "catalog" else RunConfig()
        if args.command != "catalog":
            os.makedirs(cfg.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except RGBSDEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
