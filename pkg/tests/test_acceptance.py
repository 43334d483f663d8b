"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the per-criterion
lines are repeated in the terminal summary.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import S2_COEF, SQRT2, h2_bisection, rk4_scalar, s1_p11bar_closed_form
from slowfast_lq.boundary_layer import solve_boundary_layer
from slowfast_lq.problem import canonical_case, save_problem
from slowfast_lq.reduced_solver import (h2_linear_bound, identity_residuals,
                                        lyapunov_iteration_check, residuals_reduced, solve_h2,
                                        solve_reduced_dre)
from slowfast_lq.riccati_full import assemble_P, eval_full_rhs, riccati_rhs, solve_full
from slowfast_lq.sde_sim import GainSchedule, expected_cost, mc_cost
from slowfast_lq.tikhonov_harness import fit_convergence_order, sweep_epsilon
from test_properties import random_problem

LADDER = [0.1, 0.05, 0.025, 0.0125]
RESULTS = {}


class Criterion:
    """Context manager recording and printing the outcome of one criterion."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.notes = []
        self.start = None

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.notes)
        if exc_type is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {exc}".splitlines()[0]
        line = f"[criterion {self.number:2d}] {status} {self.title} ({elapsed:.1f}s) {detail}"
        RESULTS[self.number] = line
        print(line)
        return False


@pytest.fixture(scope="module")
def cases():
    return {name: canonical_case(name) for name in ("S1", "S2")}


@pytest.fixture(scope="module")
def reduced(cases):
    return {name: solve_reduced_dre(d) for name, d in cases.items()}


def test_criterion_01_block_consistency(cases):
    with Criterion(1, "block consistency, 200 draws") as c:
        data = cases["S2"]
        rng = np.random.default_rng(20240101)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(200):
            eps = float(rng.uniform(1e-4, 1.0))
            P11, P22 = rng.uniform(0, 2, 2)
            P12 = rng.normal()
            compact = riccati_rhs(assemble_P(P11, P12, P22, eps), eps, data)
            f, g1, g2 = eval_full_rhs(P11, P12, P22, eps, data)
            err = np.max(np.abs(compact - np.block([[f, g1], [g1.T, g2]])))
            worst = max(worst, err / (1 + np.max(np.abs(compact))))
        runtime = time.perf_counter() - t0
        c.note(f"max rel err {worst:.2e}")
        assert worst <= 1e-10
        assert runtime < 5.0


def test_criterion_02_scalar_are(cases):
    with Criterion(2, "scalar ARE closed form") as c:
        t0 = time.perf_counter()
        are = solve_h2([[0.5]], cases["S1"])
        err_s1 = abs(are.P22[0, 0] - (SQRT2 - 1))
        err_ab = abs(are.closed_loop_abscissa + SQRT2)
        err_s2 = max(abs(solve_h2([[p]], cases["S2"]).P22[0, 0] - h2_bisection(S2_COEF, p))
                     for p in (0.0, 0.5, 1.0))
        runtime = time.perf_counter() - t0
        c.note(f"S1 err {err_s1:.1e}, abscissa err {err_ab:.1e}, S2 err {err_s2:.1e}")
        assert err_s1 <= 1e-11 and err_ab <= 1e-9 and err_s2 <= 1e-9
        assert runtime < 1.0


def test_criterion_03_reduced_dre(cases):
    with Criterion(3, "reduced DRE closed form") as c:
        t0 = time.perf_counter()
        sol = solve_reduced_dre(cases["S1"])
        runtime = time.perf_counter() - t0
        val = sol.P11bar[0, 0, 0]
        closed = s1_p11bar_closed_form(0.0)
        oracle = rk4_scalar(lambda p: 1.5 - 2 * p * p, 0.0, 1.0, 1e-5)
        c.note(f"P11bar(0)={val:.10f}, tanh err {abs(val - closed):.1e}, "
               f"RK4 err {abs(val - oracle):.1e}")
        assert abs(val - closed) <= 1e-6 and abs(val - oracle) <= 1e-6
        assert runtime < 5.0


def test_criterion_04_equivalence(cases, reduced):
    with Criterion(4, "equivalence residuals and identities") as c:
        worst_res, worst_id = 0.0, 0.0
        for name, data in cases.items():
            sol = reduced[name]
            worst_res = max(worst_res, *residuals_reduced(sol, data))
            for P11, P12, P22 in zip(sol.P11bar, sol.P12bar, sol.P22bar):
                r = identity_residuals(P11, P12, P22, data)
                worst_id = max(worst_id, r["inverse"], r["closed_loop_inverse"],
                               r["congruence"])
        c.note(f"max g residual {worst_res:.1e}, max identity residual {worst_id:.1e}")
        assert worst_res <= 1e-8 and worst_id <= 1e-10


def test_criterion_05_lyapunov_iteration(cases, reduced):
    with Criterion(5, "Lyapunov iteration agreement") as c:
        for name, data in cases.items():
            grid = np.linspace(0.0, data.T, 401)
            its = lyapunov_iteration_check(data, grid, max_iters=30)
            gap = float(np.max(np.abs(its[-1] - reduced[name].p11(grid))))
            mono = min(float(np.min([np.linalg.eigvalsh(M)[0] for M in a - b]))
                       for a, b in zip(its[:-1], its[1:]))
            c.note(f"{name}: {len(its) - 1} iters, gap {gap:.1e}, min eig diff {mono:.1e}")
            assert len(its) - 1 <= 30
            assert gap <= 1e-8
            assert mono >= -1e-9


def test_criterion_06_h2_monotone_bound(cases):
    with Criterion(6, "h2 monotonicity and linear bound") as c:
        rng = np.random.default_rng(6)
        problems = [cases["S2"], random_problem(12345, n1=2, n2=2, k=1)]
        worst_mono, worst_bound = np.inf, np.inf
        for i in range(100):
            data = problems[i % 2]
            n1 = data.n1
            M, N = rng.normal(size=(n1, n1)), rng.normal(size=(n1, n1))
            P = M @ M.T
            Pp = P + N @ N.T
            H, Hp = solve_h2(P, data).P22, solve_h2(Pp, data).P22
            worst_mono = min(worst_mono, np.linalg.eigvalsh(Hp - H)[0])
            worst_bound = min(worst_bound, np.linalg.eigvalsh(h2_linear_bound(P, data) - H)[0])
        c.note(f"min eig h2(P')-h2(P) {worst_mono:.1e}, min eig h2'(P)-h2(P) {worst_bound:.1e}")
        assert worst_mono >= -1e-9 and worst_bound >= -1e-9


def test_criterion_07_boundary_decay(cases):
    with Criterion(7, "boundary-layer decay") as c:
        data = cases["S1"]
        init = (-(1 - 1 / SQRT2), -(SQRT2 - 1))
        traj = solve_boundary_layer([[0.0]], *init, None, data)
        short = solve_boundary_layer([[0.0]], *init, 10.0, data)
        rate = traj.fitted_rate_22
        gamma = traj.gamma
        c.note(f"rate_22 {rate:.4f} (2*sqrt2={2 * SQRT2:.4f}), |P22hat(10)| {short.norm22[-1]:.1e}, "
               f"1.5*gamma {1.5 * gamma:.4f}")
        assert abs(rate - 2 * SQRT2) <= 0.05 * 2 * SQRT2
        assert short.norm22[-1] < 1e-8
        assert rate >= 0.95 * 1.5 * gamma


def test_criterion_08_tikhonov_order(cases, reduced):
    with Criterion(8, "Tikhonov O(eps) slopes") as c:
        t0 = time.perf_counter()
        for name, data in cases.items():
            table = sweep_epsilon(data, LADDER, reduced=reduced[name], max_workers=4)
            slopes = fit_convergence_order(table)
            c.note(f"{name} slopes " + ",".join(f"{s:.3f}" for s in slopes)
                   + f" terminal err {table.terminal_err.max():.1e}")
            assert all(0.8 <= s <= 1.2 for s in slopes)
            assert np.all(table.terminal_err == 0.0)
        assert time.perf_counter() - t0 < 120


def test_criterion_09_integral_bound(cases, reduced):
    with Criterion(9, "integral bound ratios") as c:
        for name, data in cases.items():
            table = sweep_epsilon(data, LADDER, integral_js=(1, 2), reduced=reduced[name],
                                  max_workers=4)
            for j in (1, 2):
                r = table.integral_ratios(j)
                spread = r.max(axis=0) / r.min(axis=0)
                c.note(f"{name} j={j} spread i=1 {spread[0]:.2f} i=2 {spread[1]:.2f}")
                assert np.all(spread < 2.0)


def test_criterion_10_value_identity(cases, reduced):
    with Criterion(10, "value identity and optimality") as c:
        t0 = time.perf_counter()
        data, eps, x0 = cases["S2"], 0.1, np.array([1.0, 1.0])
        full = solve_full(data, eps)
        V = full.value(x0)
        opt = mc_cost(data, eps, GainSchedule.from_full(full, data), x0, 10_000, eps / 20,
                      seed=2024)
        red = mc_cost(data, eps, GainSchedule.from_reduced(reduced["S2"]), x0, 10_000,
                      eps / 20, seed=2024)
        comb = float(np.hypot(opt.std_error, red.std_error))
        c.note(f"V={V:.6f} J_opt={opt.mean:.6f}+-{opt.std_error:.1e} "
               f"J_red={red.mean:.6f}+-{red.std_error:.1e}")
        assert abs(opt.mean - V) <= 3 * opt.std_error + 0.02 * V
        assert red.mean >= opt.mean - 3 * comb
        assert time.perf_counter() - t0 < 120


def test_criterion_11_cost_gaps(cases, reduced):
    with Criterion(11, "cost gaps O(eps)") as c:
        x0 = np.array([1.0, 1.0])
        for name, data in cases.items():
            vbar = reduced[name].value(x0[:1])
            gaps = np.array([solve_full(data, e).value(x0) - vbar for e in LADDER])
            ratios = gaps[1:] / gaps[:-1]
            c.note(f"{name} V gap ratios " + ",".join(f"{r:.3f}" for r in ratios))
            assert np.all((ratios >= 0.3) & (ratios <= 0.7))

        # C fitted from the exact (moment-equation) cost of the reduced feedback
        data = cases["S2"]
        g_red = GainSchedule.from_reduced(reduced["S2"])
        fits = []
        for e in LADDER:
            V = solve_full(data, e).value(x0)
            fits.append((expected_cost(data, e, g_red, x0) - V) / e)
        C = max(fits)
        c.note(f"fitted C {C:.4f}")
        for e in (0.1, 0.05):
            V = solve_full(data, e).value(x0)
            est = mc_cost(data, e, g_red, x0, 10_000, e / 20, seed=77)
            gap = est.mean - V
            c.note(f"eps={e} MC gap {gap:.2e} <= {3 * est.std_error + C * e:.2e}")
            assert gap <= 3 * est.std_error + C * e


def _run_cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "slowfast_lq", *args], cwd=cwd,
                          capture_output=True, text=True)


def _outputs(run_dir):
    return {p.name: p.read_bytes() for p in sorted(run_dir.iterdir())}


def test_criterion_12_reproducibility(tmp_path, cases, reduced):
    with Criterion(12, "reproducibility") as c:
        prob = tmp_path / "s2.json"
        save_problem(cases["S2"], prob)
        commands = [
            ["validate"],
            ["solve-full", "--epsilon", "0.1"],
            ["solve-reduced"],
            ["boundary"],
            ["composite", "--epsilon", "0.05", "--grid", "201"],
            ["sweep", "--epsilons", "0.1,0.05,0.025", "--grid", "501", "--workers", "2"],
            ["simulate", "--epsilon", "0.1", "--paths", "500", "--seed", "3", "--workers", "2"],
            ["cost-gap", "--epsilon", "0.1", "--paths", "500", "--seed", "3"],
        ]
        for cmd in commands:
            runs = []
            for rep in range(2):
                out = tmp_path / f"out_{cmd[0]}_{rep}"
                res = _run_cli([cmd[0], "--problem", str(prob), "--out", str(out), *cmd[1:]],
                               tmp_path)
                assert res.returncode == 0, res.stderr
                (run_dir,) = list(out.iterdir())
                runs.append(_outputs(run_dir))
            assert runs[0] == runs[1], cmd[0]
        c.note(f"{len(commands)} commands byte-identical")

        data = cases["S2"]
        g = GainSchedule.from_reduced(reduced["S2"])
        base = mc_cost(data, 0.1, g, [1, 1], 3000, 0.005, seed=9)
        for chunk, workers in ((1000, 1), (257, 4), (3000, 8)):
            other = mc_cost(data, 0.1, g, [1, 1], 3000, 0.005, seed=9, chunk_size=chunk,
                            max_workers=workers)
            assert (other.mean, other.std_error) == (base.mean, base.std_error)
        c.note("MC estimate invariant to chunking/threads")
