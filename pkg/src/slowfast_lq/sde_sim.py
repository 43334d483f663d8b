"""Euler-Maruyama simulation of the closed-loop slow-fast SDE and Monte Carlo costs.

Brownian increments for path ``i`` come from a Philox stream keyed by
``(seed, i)``, so any path can be regenerated alone and results do not
depend on how paths are batched or scheduled.  Per-path arithmetic avoids
BLAS calls (whose blocking may depend on batch shape); each path therefore
sees the same floating-point operations whatever its batch.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import AllPathsExploded, StepTooLarge
from .problem import check_epsilon, scaled_coefficients
from .reduced_solver import solve_reduced_dre
from .riccati_full import block_header, feedback_gains_full, solve_full

__all__ = [
    "GainSchedule",
    "StatePath",
    "CostEstimate",
    "simulate_path",
    "simulate_paths",
    "mc_cost",
    "expected_cost_em",
    "expected_cost",
    "cost_gap_experiment",
    "brownian_increments",
    "write_path_csv",
    "write_report_json",
    "EXPLOSION_LIMIT",
]

EXPLOSION_LIMIT = 1e8
DEFAULT_CHUNK = 2048


@dataclass(frozen=True)
class GainSchedule:
    """Piecewise-linear feedback gains u = F1(t) X1 + F2(t) X2."""
    grid: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        F1 = np.asarray(self.F1, dtype=float)
        F2 = np.asarray(self.F2, dtype=float)
        if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("gain grid must be strictly increasing with >= 2 nodes")
        if F1.shape[0] != len(grid) or F2.shape[0] != len(grid):
            raise ValueError("gain sequences must match the grid length")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "F1", F1)
        object.__setattr__(self, "F2", F2)

    @classmethod
    def from_full(cls, traj, data):
        F1, F2 = zip(*(feedback_gains_full(a, b, c, traj.epsilon, data)
                       for a, b, c in zip(traj.P11, traj.P12, traj.P22)))
        return cls(traj.grid, np.array(F1), np.array(F2), "full-optimal")

    @classmethod
    def from_reduced(cls, sol):
        return cls(sol.grid, sol.F1bar, sol.F2bar, "reduced")

    @classmethod
    def zero(cls, data):
        z1 = np.zeros((2, data.k, data.n1))
        z2 = np.zeros((2, data.k, data.n2))
        return cls(np.array([0.0, data.T]), z1, z2, "zero")

    def covers(self, T):
        return self.grid[0] <= 0.0 and self.grid[-1] >= T * (1 - 1e-12)

    def sample(self, times):
        """Stacked gain [F1 F2] at each time, shape (len(times), k, n1+n2)."""
        times = np.asarray(times, dtype=float)
        F = np.concatenate([self.F1, self.F2], axis=2)
        flat = F.reshape(len(self.grid), -1)
        out = np.empty((len(times), flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.interp(times, self.grid, flat[:, c])
        return out.reshape(len(times), *F.shape[1:])


@dataclass
class StatePath:
    times: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    U: np.ndarray
    seed: int
    path_index: int = 0
    exploded: bool = False


@dataclass
class CostEstimate:
    mean: float
    std_error: float
    n_paths: int
    step: float
    seed: int
    n_exploded: int = 0
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    mean_sq_norm: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self):
        return {"mean": self.mean, "se": self.std_error, "n_paths": self.n_paths,
                "n_exploded": self.n_exploded}


def _n_steps(T, step, epsilon):
    if not step > 0:
        raise StepTooLarge("step must be positive")
    if step > epsilon / 10.0 * (1 + 1e-12):
        raise StepTooLarge(f"step {step:g} exceeds epsilon/10 = {epsilon / 10.0:g}")
    n = int(np.ceil(T / step - 1e-9))
    return n, T / n


def brownian_increments(seed, path_index, n_steps, h):
    """N(0, h) increments of path ``path_index`` under ``seed``."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, path_index], dtype=np.uint64)))
    return gen.standard_normal(n_steps) * np.sqrt(h)


def _matvec(M, X):
    """Rows of X (P, b) times constant M (a, b) via per-entry ufuncs."""
    out = np.zeros((X.shape[0], M.shape[0]))
    for i in range(M.shape[0]):
        acc = out[:, i]
        for j in range(M.shape[1]):
            acc += M[i, j] * X[:, j]
    return out


def _quad(M, X):
    """x^T M x for each row of X, without BLAS."""
    return np.sum(X * _matvec(M, X), axis=1)


def _simulate_batch(data, epsilon, gains_on_grid, x0, h, n_steps, seed, indices,
                    keep_paths=False):
    """Simulate paths ``indices``; returns per-path costs and extras."""
    sc = scaled_coefficients(data, epsilon)
    A, B, C, D = sc.Aeps, sc.Beps, sc.Ceps, sc.Deps
    Q, R = np.asarray(data.Q), np.asarray(data.R)
    P = len(indices)
    dW = np.empty((P, n_steps))
    for r, i in enumerate(indices):
        dW[r] = brownian_increments(seed, i, n_steps, h)
    X = np.tile(np.asarray(x0, dtype=float), (P, 1))
    alive = np.ones(P, dtype=bool)
    running = np.zeros(P)
    sq = np.zeros(n_steps + 1)
    Xs = [X.copy()] if keep_paths else None
    Us = [] if keep_paths else None
    prev = None
    for n in range(n_steps + 1):
        F = gains_on_grid[n]
        U = _matvec(F, X)
        inst = 0.5 * (_quad(Q, X) + _quad(R, U))
        if prev is None:
            running += 0.5 * h * inst
        elif n == n_steps:
            running += 0.5 * h * inst
        else:
            running += h * inst
        prev = inst
        sq[n] = float(np.sum(np.where(alive, np.sum(X * X, axis=1), 0.0)))
        if keep_paths:
            Us.append(U.copy())
        if n == n_steps:
            break
        drift = _matvec(A, X) + _matvec(B, U)
        diff = _matvec(C, X) + _matvec(D, U)
        X = X + drift * h + diff * dW[:, n][:, None]
        blown = ~np.all(np.isfinite(X), axis=1) | (np.max(np.abs(X), axis=1) > EXPLOSION_LIMIT)
        if np.any(blown & alive):
            alive &= ~blown
            X[~alive] = 0.0
        if keep_paths:
            Xs.append(X.copy())
    running[~alive] = np.nan
    out = {"costs": running, "alive": alive, "sq": sq}
    if keep_paths:
        out["X"] = np.stack(Xs, axis=1)
        out["U"] = np.stack(Us, axis=1)
    return out


def _prepare(data, epsilon, gains, x0, step):
    eps = check_epsilon(epsilon)
    if not gains.covers(data.T):
        raise ValueError("gain schedule does not cover [0, T]")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (data.n,):
        raise ValueError(f"x0 must have length {data.n}")
    n_steps, h = _n_steps(data.T, step, eps)
    times = np.linspace(0.0, data.T, n_steps + 1)
    return eps, x0, n_steps, h, times, gains.sample(times)


def simulate_path(data, epsilon, gains, x0, step, seed, path_index=0):
    """One Euler-Maruyama path under the feedback schedule ``gains``.

    Paths whose state leaves the ball of radius 1e8 are flagged
    ``exploded`` and frozen at zero from then on.
    """
    eps, x0, n_steps, h, times, G = _prepare(data, epsilon, gains, x0, step)
    out = _simulate_batch(data, eps, G, x0, h, n_steps, int(seed), [int(path_index)],
                          keep_paths=True)
    X = out["X"][0]
    return StatePath(times, X[:, :data.n1], X[:, data.n1:], out["U"][0], int(seed),
                     int(path_index), exploded=not bool(out["alive"][0]))


def simulate_paths(data, epsilon, gains, x0, step, seed, indices):
    """Several paths at once; returns a list of :class:`StatePath`."""
    eps, x0, n_steps, h, times, G = _prepare(data, epsilon, gains, x0, step)
    out = _simulate_batch(data, eps, G, x0, h, n_steps, int(seed), list(indices),
                          keep_paths=True)
    return [StatePath(times, X[:, :data.n1], X[:, data.n1:], U, int(seed), int(i),
                      exploded=not bool(a))
            for i, X, U, a in zip(indices, out["X"], out["U"], out["alive"])]


def mc_cost(data, epsilon, gains, x0, n_paths, step, seed, chunk_size=DEFAULT_CHUNK,
            max_workers=None):
    """Monte Carlo estimate of the quadratic cost under ``gains``.

    Per-path costs are stored by path index and reduced once, so the
    estimate is bit-identical for any ``chunk_size`` or ``max_workers``.

    Raises
    ------
    StepTooLarge
    AllPathsExploded
    """
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    eps, x0, n_steps, h, times, G = _prepare(data, epsilon, gains, x0, step)
    chunks = [list(range(a, min(a + chunk_size, n_paths)))
              for a in range(0, n_paths, chunk_size)]

    def run(idx):
        return _simulate_batch(data, eps, G, x0, h, n_steps, int(seed), idx)

    if max_workers and max_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]

    costs = np.concatenate([r["costs"] for r in results])
    alive = np.concatenate([r["alive"] for r in results])
    n_alive = int(np.count_nonzero(alive))
    if n_alive == 0:
        raise AllPathsExploded(f"all {n_paths} paths exploded")
    good = costs[alive]
    mean = float(np.mean(good))
    se = float(np.std(good, ddof=1) / np.sqrt(n_alive)) if n_alive > 1 else 0.0
    sq = np.sum(np.stack([r["sq"] for r in results]), axis=0) / n_alive
    return CostEstimate(mean, se, n_paths, float(h), int(seed), n_paths - n_alive,
                        samples=costs, mean_sq_norm=sq)


def expected_cost_em(data, epsilon, gains, x0, step):
    """Exact expectation of the Euler-Maruyama cost estimator.

    Propagates the second moment S = E[X X^T] of the discrete scheme,
    S <- (I + h Acl) S (I + h Acl)^T + h Ccl S Ccl^T, and applies the same
    trapezoid rule as the simulator.
    """
    eps, x0, n_steps, h, times, G = _prepare(data, epsilon, gains, x0, step)
    sc = scaled_coefficients(data, eps)
    eye = np.eye(data.n)
    S = np.outer(x0, x0)
    total = 0.0
    for n in range(n_steps + 1):
        F = G[n]
        inst = 0.5 * np.trace((data.Q + F.T @ data.R @ F) @ S)
        total += (0.5 if n in (0, n_steps) else 1.0) * h * inst
        if n == n_steps:
            break
        M = eye + h * (sc.Aeps + sc.Beps @ F)
        Cc = sc.Ceps + sc.Deps @ F
        S = M @ S @ M.T + h * Cc @ S @ Cc.T
    return float(total)


def expected_cost(data, epsilon, gains, x0, rtol=1e-10):
    """Continuous-time cost of the linear feedback via the moment ODE.

    dS/dt = Acl S + S Acl^T + Ccl S Ccl^T, J = int 1/2 tr((Q + F^T R F) S) dt.
    """
    eps = check_epsilon(epsilon)
    sc = scaled_coefficients(data, eps)
    n = data.n
    x0 = np.asarray(x0, dtype=float).ravel()

    def gain(t):
        return gains.sample([t])[0]

    def fun(t, y):
        S = y[:-1].reshape(n, n)
        F = gain(t)
        Acl = sc.Aeps + sc.Beps @ F
        Ccl = sc.Ceps + sc.Deps @ F
        dS = Acl @ S + S @ Acl.T + Ccl @ S @ Ccl.T
        return np.append(dS.ravel(), 0.5 * np.trace((data.Q + F.T @ data.R @ F) @ S))

    # gains are piecewise linear: integrate node to node
    nodes = np.unique(np.concatenate([[0.0, data.T],
                                      gains.grid[(gains.grid > 0) & (gains.grid < data.T)]]))
    y = np.append(np.outer(x0, x0).ravel(), 0.0)
    for a, b in zip(nodes[:-1], nodes[1:]):
        sol = solve_ivp(fun, (a, b), y, method="RK45", rtol=rtol, atol=1e-13)
        y = sol.y[:, -1]
    return float(y[-1])


def cost_gap_experiment(data, epsilon, x0, n_paths, step, seed, max_workers=None,
                        full=None, reduced=None):
    """Compare optimal and reduced feedback for one epsilon.

    Both gain schedules are simulated with the same seed, so path i sees
    the same Brownian increments under each (common random numbers).
    """
    eps = check_epsilon(epsilon)
    x0 = np.asarray(x0, dtype=float).ravel()
    full = full or solve_full(data, eps)
    reduced = reduced or solve_reduced_dre(data)
    v_eps = full.value(x0)
    v_bar = reduced.value(x0[:data.n1])
    opt = mc_cost(data, eps, GainSchedule.from_full(full, data), x0, n_paths, step, seed,
                  max_workers=max_workers)
    red = mc_cost(data, eps, GainSchedule.from_reduced(reduced), x0, n_paths, step, seed,
                  max_workers=max_workers)
    both = ~np.isnan(opt.samples) & ~np.isnan(red.samples)
    diff = red.samples[both] - opt.samples[both]
    se_diff = float(np.std(diff, ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
    return {
        "epsilon": eps,
        "x0": x0.tolist(),
        "n_paths": int(n_paths),
        "step": opt.step,
        "seed": int(seed),
        "V_eps": v_eps,
        "V_bar": v_bar,
        "J_reduced": {"mean": red.mean, "se": red.std_error},
        "J_optimal": {"mean": opt.mean, "se": opt.std_error},
        "gaps": {
            "V_eps_minus_V_bar": v_eps - v_bar,
            "J_reduced_minus_V_eps": red.mean - v_eps,
            "J_reduced_minus_J_optimal": float(np.mean(diff)) if diff.size else 0.0,
            "J_reduced_minus_J_optimal_se": se_diff,
        },
    }


def write_path_csv(path_obj, path):
    n1 = path_obj.X1.shape[1]
    n2 = path_obj.X2.shape[1]
    k = path_obj.U.shape[1]
    header = (["t"] + [f"X1_{i}" for i in range(n1)] + [f"X2_{i}" for i in range(n2)]
              + [f"U_{i}" for i in range(k)])
    lines = [",".join(header)]
    for i, t in enumerate(path_obj.times):
        vals = [t, *path_obj.X1[i], *path_obj.X2[i], *path_obj.U[i]]
        lines.append(",".join(f"{v:.17g}" for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report_json(report, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
