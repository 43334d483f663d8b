"""Command-line entry point: ``slowfast-lq <command> [flags]``.

Every run writes into ``<out>/<command>_<UTC timestamp>_<config hash>/`` a
``manifest.json`` echoing the resolved configuration plus the command's
CSV/JSON outputs.  Outputs depend only on the manifest, never on the time.

Exit codes: 0 success, 2 validation failure, 3 solver error, 4 bad arguments.
"""
import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .boundary_layer import composite_approximation, terminal_boundary_layer, write_boundary_csv
from .errors import EpsilonOutOfRange, NoiseFloor, SlowFastError, StepTooLarge
from .problem import check_epsilon, load_problem, validate
from .reduced_solver import solve_reduced_dre, write_reduced_csv
from .riccati_full import block_header, solve_full, write_trajectory_csv
from .sde_sim import (GainSchedule, cost_gap_experiment, mc_cost, simulate_paths,
                      write_path_csv, write_report_json)
from .tikhonov_harness import (fit_convergence_order, sweep_epsilon, write_error_table_csv,
                               write_slopes_json)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_ARGS = 4

COMMANDS = ("validate", "solve-full", "solve-reduced", "boundary", "composite",
            "sweep", "simulate", "cost-gap")


class BadArguments(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadArguments(message)


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}") from exc


def build_parser():
    parser = _Parser(prog="slowfast-lq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text, *extra):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--problem", required=True, help="problem JSON file")
        p.add_argument("--out", default="runs", help="base output directory")
        p.add_argument("--force", action="store_true",
                       help="run solvers even if validation fails")
        for flag in extra:
            flag(p)
        return p

    eps = lambda p: p.add_argument("--epsilon", type=float, default=0.1)
    grid = lambda p: p.add_argument("--grid", type=int, default=2001,
                                    help="points of the common time grid")
    sim = lambda p: (p.add_argument("--paths", type=int, default=1000),
                     p.add_argument("--step", type=float, default=None,
                                    help="Euler-Maruyama step (default epsilon/20)"),
                     p.add_argument("--seed", type=int, default=0),
                     p.add_argument("--x0", type=_float_list, default=None,
                                    help="initial state, comma-separated (default all ones)"),
                     p.add_argument("--workers", type=int, default=1))

    add("validate", "check the standing assumptions")
    add("solve-full", "solve the full Riccati system for one epsilon", eps)
    add("solve-reduced", "solve the reduced Riccati system")
    add("boundary", "solve the terminal boundary layer")
    add("composite", "reduced + boundary-layer composite on a grid", eps, grid)
    add("sweep", "epsilon ladder with convergence-order fit", grid,
        lambda p: p.add_argument("--epsilons", type=_float_list,
                                 default=[0.1, 0.05, 0.025, 0.0125]),
        lambda p: p.add_argument("--workers", type=int, default=1))
    add("simulate", "Monte Carlo cost under a feedback schedule", eps, sim,
        lambda p: p.add_argument("--gains", choices=("full", "reduced", "zero"),
                                 default="full"),
        lambda p: p.add_argument("--export-paths", type=int, default=1,
                                 help="number of paths written as CSV"))
    add("cost-gap", "optimal vs reduced feedback costs", eps, sim)
    return parser


def _config(args, data):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "force")}
    cfg["problem_data"] = data.to_dict()
    cfg["version"] = __version__
    if "x0" in cfg and cfg["x0"] is None:
        cfg["x0"] = [1.0] * data.n
    if "step" in cfg and cfg["step"] is None:
        cfg["step"] = cfg["epsilon"] / 20.0
    cfg["force"] = bool(args.force)
    return cfg


def _check_ranges(cfg):
    if "epsilon" in cfg:
        check_epsilon(cfg["epsilon"])
    if "epsilons" in cfg:
        if not cfg["epsilons"]:
            raise EpsilonOutOfRange("--epsilons is empty")
        for e in cfg["epsilons"]:
            check_epsilon(e)
    if cfg.get("step") is not None and "epsilon" in cfg:
        if not 0 < cfg["step"] <= cfg["epsilon"] / 10.0 * (1 + 1e-12):
            raise StepTooLarge(f"step {cfg['step']:g} must lie in (0, epsilon/10]")


def _run_dir(base, command, cfg):
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:8]
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    root = Path(base)
    path = root / f"{command}_{stamp}_{digest}"
    n = 1
    while path.exists():
        path = root / f"{command}_{stamp}_{digest}-{n}"
        n += 1
    path.mkdir(parents=True)
    return path


def _write_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _cmd_validate(data, cfg, out):
    report = validate(data)
    _write_json(report.to_dict(), out / "validation.json")
    if report.overall_pass:
        return EXIT_OK, "PASS"
    return EXIT_VALIDATION, ",".join(report.failed_checks())


def _cmd_solve_full(data, cfg, out):
    traj = solve_full(data, cfg["epsilon"])
    write_trajectory_csv(traj, out / "trajectory.csv")
    return EXIT_OK, f"solve-full OK steps={len(traj.grid) - 1} P11(0)={traj.P11[0].ravel().tolist()}"


def _cmd_solve_reduced(data, cfg, out):
    sol = solve_reduced_dre(data)
    write_reduced_csv(sol, out / "reduced.csv")
    return EXIT_OK, f"solve-reduced OK P11bar(0)={sol.P11bar[0].ravel().tolist()}"


def _cmd_boundary(data, cfg, out):
    sol = solve_reduced_dre(data)
    traj = terminal_boundary_layer(sol, data)
    write_boundary_csv(traj, out / "boundary.csv")
    _write_json({"tau_max": traj.tau_max, "gamma": traj.gamma,
                 "rate_12": traj.fitted_rate_12, "rate_22": traj.fitted_rate_22},
                out / "rates.json")
    return EXIT_OK, (f"boundary OK rate_12={traj.fitted_rate_12:.6g} "
                     f"rate_22={traj.fitted_rate_22:.6g}")


def _cmd_composite(data, cfg, out):
    sol = solve_reduced_dre(data)
    grid = np.linspace(0.0, data.T, cfg["grid"])
    P11, P12, P22 = composite_approximation(sol, data, cfg["epsilon"], grid)
    n1, n2 = data.n1, data.n2
    header = (["t"] + block_header("P11", n1, n1) + block_header("P12", n1, n2)
              + block_header("P22", n2, n2))
    lines = [",".join(header)]
    for i, t in enumerate(grid):
        vals = [t, *P11[i].ravel(), *P12[i].ravel(), *P22[i].ravel()]
        lines.append(",".join(f"{v:.17g}" for v in vals))
    (out / "composite.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK, f"composite OK points={len(grid)}"


def _cmd_sweep(data, cfg, out):
    table = sweep_epsilon(data, cfg["epsilons"], cfg["grid"], integral_js=(1, 2),
                          max_workers=cfg["workers"])
    write_error_table_csv(table, out / "error_table.csv")
    try:
        slopes = fit_convergence_order(table)
    except NoiseFloor as exc:
        slopes = (None, None, None)
        note = str(exc)
    else:
        note = None
    write_slopes_json(slopes, out / "slopes.json", {"note": note} if note else None)
    shown = " ".join(f"{n}={'nan' if s is None else f'{s:.4f}'}"
                     for n, s in zip(("slope_11", "slope_12", "slope_22"), slopes))
    return EXIT_OK, f"sweep OK {shown}"


def _gains(kind, data, eps):
    if kind == "full":
        return GainSchedule.from_full(solve_full(data, eps), data)
    if kind == "reduced":
        return GainSchedule.from_reduced(solve_reduced_dre(data))
    return GainSchedule.zero(data)


def _cmd_simulate(data, cfg, out):
    eps, step, seed = cfg["epsilon"], cfg["step"], cfg["seed"]
    gains = _gains(cfg["gains"], data, eps)
    est = mc_cost(data, eps, gains, cfg["x0"], cfg["paths"], step, seed,
                  max_workers=cfg["workers"])
    n_export = max(0, min(cfg["export_paths"], cfg["paths"]))
    for p in simulate_paths(data, eps, gains, cfg["x0"], step, seed, range(n_export)):
        write_path_csv(p, out / f"path_{p.path_index:05d}.csv")
    doc = {"epsilon": eps, "gains": gains.label, "J": est.to_dict(), "step": est.step,
           "seed": seed}
    write_report_json(doc, out / "cost.json")
    return EXIT_OK, f"simulate OK J={est.mean:.8g} se={est.std_error:.3g}"


def _cmd_cost_gap(data, cfg, out):
    rep = cost_gap_experiment(data, cfg["epsilon"], cfg["x0"], cfg["paths"], cfg["step"],
                              cfg["seed"], max_workers=cfg["workers"])
    write_report_json(rep, out / "report.json")
    g = rep["gaps"]
    return EXIT_OK, (f"cost-gap OK V_eps-V_bar={g['V_eps_minus_V_bar']:.6g} "
                     f"J_red-V_eps={g['J_reduced_minus_V_eps']:.6g}")


_HANDLERS = {
    "validate": _cmd_validate,
    "solve-full": _cmd_solve_full,
    "solve-reduced": _cmd_solve_reduced,
    "boundary": _cmd_boundary,
    "composite": _cmd_composite,
    "sweep": _cmd_sweep,
    "simulate": _cmd_simulate,
    "cost-gap": _cmd_cost_gap,
}


def _fail(code, kind, message):
    line = json.dumps({"exit_code": code, "error": kind, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def run(argv=None):
    """Parse ``argv``, run one command, return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except BadArguments as exc:
        return _fail(EXIT_ARGS, "BadArguments", exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    try:
        data = load_problem(args.problem)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        return _fail(EXIT_ARGS, type(exc).__name__, f"cannot load problem: {exc}")

    cfg = _config(args, data)
    for key in ("paths", "grid", "workers"):
        if key in cfg and cfg[key] is not None and cfg[key] < 1:
            return _fail(EXIT_ARGS, "BadArguments", f"--{key} must be positive")

    try:
        _check_ranges(cfg)
    except (EpsilonOutOfRange, StepTooLarge) as exc:
        return _fail(EXIT_ARGS, type(exc).__name__, exc)

    if args.command != "validate":
        report = validate(data)
        if not report.overall_pass and not args.force:
            return _fail(EXIT_VALIDATION, "ValidationFailed",
                         ",".join(report.failed_checks()))

    out = _run_dir(args.out, args.command, cfg)
    _write_json(cfg, out / "manifest.json")
    try:
        code, summary = _HANDLERS[args.command](data, cfg, out)
    except (EpsilonOutOfRange, StepTooLarge) as exc:
        return _fail(EXIT_ARGS, type(exc).__name__, exc)
    except (SlowFastError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_SOLVER, type(exc).__name__, exc)
    print(summary if args.command == "validate" else f"{summary} out={out}")
    return code


def main():
    sys.exit(run())
