"""Boundary-layer correction in stretched time tau = (T - t) / eps.

With the slow block frozen at P11, the deviations Y12 = P12 - h1(P11) and
Y22 = P22 - h2(P11) obey dY/dtau = g(P11, h1 + Y12, h2 + Y22, 0).  The
right-hand side is evaluated in deviation form, where the reduced root has
been subtracted analytically, so that tails far below the size of the
reduced blocks keep full relative accuracy.
"""
from dataclasses import dataclass, field

import numpy as np

from ._integrate import HermiteDense, StepControl, integrate
from .errors import DeltaNotPositive, Divergence, NonDecaying, ZeroDisplacement
from .reduced_solver import compute_p12, solve_h2
from .riccati_full import DELTA_FLOOR, block_header, eval_full_rhs
from .linalg_core import sym

__all__ = [
    "BoundaryTrajectory",
    "BoundaryField",
    "solve_boundary_layer",
    "estimate_decay_rate",
    "terminal_boundary_layer",
    "composite_approximation",
    "write_boundary_csv",
]

DIVERGENCE_LIMIT = 1e6
DEFAULT_CONTROL = StepControl(rtol=1e-10, atol=1e-30)


class BoundaryField:
    """Vector field of the boundary-layer system at a frozen P11."""

    def __init__(self, P11, data):
        d = data
        self.data = d
        self.P11 = np.atleast_2d(np.asarray(P11, dtype=float))
        are = solve_h2(self.P11, d)
        self.are = are
        self.h2 = are.P22
        self.h1 = compute_p12(self.P11, self.h2, d)
        self.F2 = are.F2
        P11, H1, H2 = self.P11, self.h1, self.h2
        self.delta = sym(d.R + d.D1.T @ P11 @ d.D1 + d.D2.T @ H2 @ d.D2)
        self.N1 = d.B1.T @ P11 + d.B2.T @ H1.T + d.D1.T @ P11 @ d.C11 + d.D2.T @ H2 @ d.C21
        self.Acl = d.A22 + d.B2 @ self.F2
        self.Ccl = d.C22 + d.D2 @ self.F2

    def delta_tilde(self, Y22):
        d = self.data
        return sym(self.delta + d.D2.T @ Y22 @ d.D2)

    def rhs(self, Y12, Y22):
        """(dY12/dtau, dY22/dtau) in deviation form."""
        d = self.data
        F2 = self.F2
        dt = self.delta_tilde(Y22)
        lam = float(np.linalg.eigvalsh(dt)[0])
        if not lam > DELTA_FLOOR:
            raise DeltaNotPositive(f"boundary-layer Delta lost positivity ({lam:.3e})",
                                   min_eigenvalue=lam)
        K = d.B2.T @ Y22 + d.D2.T @ Y22 @ self.Ccl
        dY22 = (self.Acl.T @ Y22 + Y22 @ self.Acl + self.Ccl.T @ Y22 @ self.Ccl
                - K.T @ np.linalg.solve(dt, K))

        dN1 = d.B2.T @ Y12.T + d.D2.T @ Y22 @ d.C21
        dN2 = d.B2.T @ Y22 + d.D2.T @ Y22 @ d.C22
        dF2 = -np.linalg.solve(dt, dN2 + d.D2.T @ Y22 @ d.D2 @ F2)
        N1t = self.N1 + dN1
        dY12 = (d.A21.T @ Y22 + Y12 @ d.A22 + d.C21.T @ Y22 @ d.C22
                + N1t.T @ dF2 + dN1.T @ F2)
        return dY12, sym(dY22)

    def rhs_plain(self, Y12, Y22):
        """Same field through eval_full_rhs (loses accuracy for tiny Y)."""
        _, g1, g2 = eval_full_rhs(self.P11, self.h1 + Y12, self.h2 + Y22, 0.0, self.data)
        return g1, g2


@dataclass
class BoundaryTrajectory:
    tau_grid: np.ndarray
    P12hat: np.ndarray
    P22hat: np.ndarray
    P11_fixed: np.ndarray
    init_12: np.ndarray
    init_22: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    gamma: float
    fitted_rate_12: float = float("nan")
    fitted_rate_22: float = float("nan")
    _dense: HermiteDense = field(repr=False, default=None)

    @property
    def tau_max(self):
        return float(self.tau_grid[-1])

    @property
    def norm12(self):
        return np.linalg.norm(self.P12hat, axis=(1, 2))

    @property
    def norm22(self):
        return np.linalg.norm(self.P22hat, axis=(1, 2))

    def at(self, tau):
        """(P12hat, P22hat) at stretched time(s) tau; zero beyond tau_max."""
        tau = np.asarray(tau, dtype=float)
        n1, n2 = self.P12hat.shape[1:]
        y = self._dense(tau)
        y = np.where((tau > self.tau_max)[..., None], 0.0, y) if tau.ndim else (
            np.zeros_like(y) if tau > self.tau_max else y)
        a = n1 * n2
        if tau.ndim == 0:
            return y[:a].reshape(n1, n2), sym(y[a:].reshape(n2, n2))
        Y12 = y[:, :a].reshape(-1, n1, n2)
        Y22 = y[:, a:].reshape(-1, n2, n2)
        return Y12, 0.5 * (Y22 + np.swapaxes(Y22, 1, 2))


def solve_boundary_layer(P11_fixed, init_12, init_22, tau_max, data, step_control=None):
    """Integrate the boundary-layer system forward in tau from the given start.

    ``tau_max`` of ``None`` selects 20 / gamma, gamma being the decay rate
    of the fast closed loop A22 + B2 F2 at ``P11_fixed``.

    Raises
    ------
    DeltaNotPositive
    Divergence
        If either block norm exceeds 1e6.
    """
    fld = BoundaryField(P11_fixed, data)
    n1, n2 = data.n1, data.n2
    Y12 = np.atleast_2d(np.asarray(init_12, dtype=float)).reshape(n1, n2)
    Y22 = np.atleast_2d(np.asarray(init_22, dtype=float)).reshape(n2, n2)
    if float(np.linalg.eigvalsh(sym(fld.h2 + Y22))[0]) < -1e-9:
        raise ValueError("h2(P11) + init_22 must be positive semidefinite")
    gamma = fld.are.gamma
    if tau_max is None:
        tau_max = 20.0 / gamma
    tau_max = float(tau_max)
    if not tau_max > 0:
        raise ValueError("tau_max must be positive")
    control = step_control or DEFAULT_CONTROL
    max_step = control.max_step or tau_max / 50.0
    a = n1 * n2

    def fun(tau, y):
        dY12, dY22 = fld.rhs(y[:a].reshape(n1, n2), y[a:].reshape(n2, n2))
        return np.concatenate([dY12.ravel(), dY22.ravel()])

    def on_step(tau, y):
        if np.max(np.abs(y)) > DIVERGENCE_LIMIT or not np.all(np.isfinite(y)):
            raise Divergence(f"boundary layer diverged at tau={tau:.6g}")
        lam = float(np.linalg.eigvalsh(fld.delta_tilde(y[a:].reshape(n2, n2)))[0])
        if not lam > DELTA_FLOOR:
            raise DeltaNotPositive(f"boundary-layer Delta lost positivity at tau={tau:.6g}",
                                   min_eigenvalue=lam)

    y0 = np.concatenate([Y12.ravel(), Y22.ravel()])
    tau, y, dy = integrate(fun, y0, tau_max, control, max_step, on_step)
    traj = BoundaryTrajectory(
        tau_grid=tau, P12hat=y[:, :a].reshape(-1, n1, n2),
        P22hat=y[:, a:].reshape(-1, n2, n2), P11_fixed=fld.P11,
        init_12=Y12, init_22=Y22, h1=fld.h1, h2=fld.h2, gamma=gamma,
        _dense=HermiteDense(tau, y, dy))
    if np.any(y0 != 0):
        try:
            traj.fitted_rate_12, traj.fitted_rate_22 = estimate_decay_rate(traj)
        except NonDecaying:
            pass
    return traj


def _tail_rate(tau, norms):
    keep = norms > 0
    if np.count_nonzero(keep) < 2:
        return float("inf")
    slope = np.polyfit(tau[keep], np.log(norms[keep]), 1)[0]
    return float(-slope)


def estimate_decay_rate(traj):
    """Exponential decay rates of |P12hat| and |P22hat| over [tau_max/2, tau_max].

    A block that is identically zero over the window reports ``inf``.

    Raises
    ------
    ZeroDisplacement
        If both initial values are zero.
    NonDecaying
        If a fitted tail slope is not negative.
    """
    if not (np.any(traj.init_12 != 0) or np.any(traj.init_22 != 0)):
        raise ZeroDisplacement("initial displacement is zero; decay rate undefined")
    tau = traj.tau_grid
    window = tau >= 0.5 * traj.tau_max
    rates = []
    for name, norms in (("P12hat", traj.norm12), ("P22hat", traj.norm22)):
        rate = _tail_rate(tau[window], norms[window])
        if not rate > 0:
            raise NonDecaying(f"{name} tail slope is not negative (rate {rate:.3e})")
        rates.append(rate)
    return rates[0], rates[1]


def terminal_boundary_layer(reduced, data, tau_max=None, step_control=None):
    """Boundary trajectory correcting the reduced solution at t = T.

    Frozen slow block P11bar(T) = 0; initial values cancel the reduced
    blocks at T, i.e. (-P12bar(T), -P22bar(T)).
    """
    P11T = reduced.P11bar[-1]
    return solve_boundary_layer(P11T, -reduced.P12bar[-1], -reduced.P22bar[-1],
                                tau_max, data, step_control)


def composite_approximation(reduced, data, epsilon, t, boundary=None, reduced_blocks=None):
    """Reduced solution plus the boundary correction at (T - t) / epsilon.

    ``boundary`` defaults to :func:`terminal_boundary_layer`;
    ``reduced_blocks`` optionally supplies precomputed (P11, P12, P22) at
    ``t`` (as returned by ``reduced.at(t)``) to avoid recomputing them in
    epsilon sweeps.
    """
    eps = float(epsilon)
    if boundary is None:
        boundary = terminal_boundary_layer(reduced, data)
    P11, P12, P22 = reduced_blocks if reduced_blocks is not None else reduced.at(t)
    tau = (data.T - np.asarray(t, dtype=float)) / eps
    Y12, Y22 = boundary.at(tau)
    return P11, P12 + Y12, P22 + Y22


def write_boundary_csv(traj, path):
    n1, n2 = traj.P12hat.shape[1:]
    header = (["tau"] + block_header("P12hat", n1, n2) + block_header("P22hat", n2, n2)
              + ["norm12", "norm22"])
    lines = [",".join(header)]
    n12, n22 = traj.norm12, traj.norm22
    for i, tau in enumerate(traj.tau_grid):
        vals = ([tau] + list(traj.P12hat[i].ravel()) + list(traj.P22hat[i].ravel())
                + [n12[i], n22[i]])
        lines.append(",".join(f"{v:.17g}" for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
