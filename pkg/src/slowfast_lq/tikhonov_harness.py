"""Epsilon sweeps comparing full solutions with reduced + boundary-layer composites."""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .boundary_layer import composite_approximation, terminal_boundary_layer
from .errors import EpsilonOutOfRange, EpsilonSolveError, NoiseFloor
from .reduced_solver import solve_reduced_dre
from .riccati_full import solve_full

__all__ = [
    "ErrorTable",
    "EPSILON_FLOOR",
    "NOISE_FLOOR",
    "sweep_epsilon",
    "fit_convergence_order",
    "integral_error_check",
    "block_error",
    "write_error_table_csv",
    "write_slopes_json",
]

EPSILON_FLOOR = 1e-4
NOISE_FLOOR = 1e-13
DEFAULT_GRID = 2001


def block_error(X, Y):
    """Frobenius norm of X - Y along a leading time axis."""
    return np.linalg.norm(np.asarray(X) - np.asarray(Y), axis=(-2, -1))


@dataclass
class ErrorTable:
    """Sup-over-time block errors per epsilon (rows ordered by decreasing epsilon).

    ``raw_err_12`` / ``raw_err_22`` hold the same sup errors against the
    reduced solution without boundary correction.  ``integral_err`` maps
    j to an array of shape (len(epsilons), 2) holding the (i=1, i=2)
    integrals.
    """
    epsilons: np.ndarray
    sup_err_11: np.ndarray
    sup_err_12: np.ndarray
    sup_err_22: np.ndarray
    terminal_err: np.ndarray = None
    raw_err_12: np.ndarray = None
    raw_err_22: np.ndarray = None
    integral_err: Dict[int, np.ndarray] = field(default_factory=dict)
    grid_points: int = DEFAULT_GRID

    def __post_init__(self):
        self.epsilons = np.asarray(self.epsilons, dtype=float)
        for name in ("sup_err_11", "sup_err_12", "sup_err_22"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != self.epsilons.shape:
                raise ValueError(f"{name} length does not match epsilons")
            if not (np.all(np.isfinite(arr)) and np.all(arr >= 0)):
                raise ValueError(f"{name} must be finite and nonnegative")
            setattr(self, name, arr)
        _check_ladder(self.epsilons)

    def integral_ratios(self, j):
        """integral / epsilon for each epsilon, shape (len(epsilons), 2)."""
        return self.integral_err[j] / self.epsilons[:, None]


def _check_ladder(epsilons):
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size == 0:
        raise ValueError("epsilon ladder must be a non-empty 1-D sequence")
    if np.any(eps > 1.0) or np.any(eps < EPSILON_FLOOR):
        raise EpsilonOutOfRange(f"epsilons must lie in [{EPSILON_FLOOR:g}, 1]")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("epsilons must be strictly decreasing")
    return eps


def _integrals(grid, full_12, full_22, red_12, red_22, j):
    d12 = block_error(full_12, red_12) ** j
    d22 = block_error(full_22, red_22) ** j
    return float(np.trapezoid(d12, grid)), float(np.trapezoid(d22, grid))


def sweep_epsilon(data, epsilons, grid_points=DEFAULT_GRID, integral_js=(),
                  max_workers=None, reduced=None, step_control=None):
    """Solve the full system for each epsilon and compare with the composite.

    The reduced solution and the terminal boundary layer do not depend on
    epsilon and are computed once.  ``max_workers`` > 1 runs the full
    solves on a thread pool; the table does not depend on it.

    Raises
    ------
    EpsilonSolveError
        Wrapping any solver failure, with the offending epsilon attached.
    """
    eps = _check_ladder(epsilons)
    if int(grid_points) < 2:
        raise ValueError("grid_points must be at least 2")
    grid = np.linspace(0.0, data.T, int(grid_points))
    reduced = reduced or solve_reduced_dre(data)
    boundary = terminal_boundary_layer(reduced, data)
    red_blocks = reduced.at(grid)

    def one(e):
        try:
            full = solve_full(data, e, step_control)
        except Exception as exc:
            raise EpsilonSolveError(e, exc) from exc
        F11, F12, F22 = full.at(grid)
        C11, C12, C22 = composite_approximation(reduced, data, e, grid, boundary, red_blocks)
        errs = [block_error(F11, C11), block_error(F12, C12), block_error(F22, C22)]
        row = {
            "sup": [float(np.max(x)) for x in errs],
            "terminal": max(float(x[-1]) for x in errs),
            "raw12": float(np.max(block_error(F12, red_blocks[1]))),
            "raw22": float(np.max(block_error(F22, red_blocks[2]))),
            "integrals": {j: _integrals(grid, F12, F22, red_blocks[1], red_blocks[2], j)
                          for j in integral_js},
        }
        return row

    if max_workers and max_workers > 1 and len(eps) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(one, eps))
    else:
        rows = [one(e) for e in eps]

    return ErrorTable(
        epsilons=eps,
        sup_err_11=[r["sup"][0] for r in rows],
        sup_err_12=[r["sup"][1] for r in rows],
        sup_err_22=[r["sup"][2] for r in rows],
        terminal_err=np.array([r["terminal"] for r in rows]),
        raw_err_12=np.array([r["raw12"] for r in rows]),
        raw_err_22=np.array([r["raw22"] for r in rows]),
        integral_err={j: np.array([r["integrals"][j] for r in rows]) for j in integral_js},
        grid_points=int(grid_points),
    )


def _slope(eps, err, name):
    keep = err >= NOISE_FLOOR
    if np.count_nonzero(keep) < 3:
        raise NoiseFloor(f"{name}: fewer than 3 errors above the noise floor {NOISE_FLOOR:g}")
    return float(np.polyfit(np.log(eps[keep]), np.log(err[keep]), 1)[0])


def fit_convergence_order(table):
    """Least-squares slopes of log(error) against log(epsilon) per block.

    Errors below 1e-13 are dropped; a block with fewer than three usable
    points raises :class:`NoiseFloor`.
    """
    eps = table.epsilons
    return (_slope(eps, table.sup_err_11, "sup_err_11"),
            _slope(eps, table.sup_err_12, "sup_err_12"),
            _slope(eps, table.sup_err_22, "sup_err_22"))


def integral_error_check(data, epsilon, j, grid_points=DEFAULT_GRID, reduced=None,
                         step_control=None):
    """Trapezoid integrals over [0, T] of |P^eps_i2 - Pbar_i2|^j for i = 1, 2.

    No boundary correction is applied.  Returns the pair (i=1, i=2).
    """
    if int(j) != j or j < 1:
        raise ValueError("j must be a positive integer")
    e = _check_ladder([epsilon])[0]
    grid = np.linspace(0.0, data.T, int(grid_points))
    reduced = reduced or solve_reduced_dre(data)
    _, R12, R22 = reduced.at(grid)
    _, F12, F22 = solve_full(data, e, step_control).at(grid)
    return _integrals(grid, F12, F22, R12, R22, int(j))


def write_error_table_csv(table, path):
    header = ["epsilon", "sup_err_11", "sup_err_12", "sup_err_22"]
    js = sorted(table.integral_err)
    for j in js:
        header += [f"integral_j{j}_12", f"integral_j{j}_22"]
    lines = [",".join(header)]
    for i, e in enumerate(table.epsilons):
        vals = [e, table.sup_err_11[i], table.sup_err_12[i], table.sup_err_22[i]]
        for j in js:
            vals += list(table.integral_err[j][i])
        lines.append(",".join(f"{v:.17g}" for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_slopes_json(slopes, path, extra: Optional[dict] = None):
    doc = {"slope_11": slopes[0], "slope_12": slopes[1], "slope_22": slopes[2]}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
