"""The epsilon-dependent Riccati system in partitioned (first-order) form.

The full Riccati solution is written as

    P = [[P11,        eps * P12],
         [eps * P12^T, eps * P22]]

which turns the terminal-value Riccati equation into

    dP11/dt + f = 0,   eps dP12/dt + g1 = 0,   eps dP22/dt + g2 = 0,

all with zero terminal data.  Integration runs in reversed time s = T - t.
"""
from dataclasses import dataclass, field

import numpy as np

from ._integrate import HermiteDense, StepControl, integrate
from .errors import DeltaNotPositive
from .linalg_core import sym
from .problem import check_epsilon, scaled_coefficients

__all__ = [
    "RiccatiTrajectory",
    "eval_full_rhs",
    "full_delta",
    "riccati_rhs",
    "solve_full",
    "assemble_P",
    "split_P",
    "feedback_gains_full",
    "compact_feedback",
    "write_trajectory_csv",
]

DELTA_FLOOR = 1e-12


def _blocks(P11, P12, P22):
    return (np.atleast_2d(np.asarray(P11, dtype=float)),
            np.atleast_2d(np.asarray(P12, dtype=float)),
            np.atleast_2d(np.asarray(P22, dtype=float)))


def _full_terms(P11, P12, P22, epsilon, data):
    """Delta and the two k-row factors N1 (k x n1), N2 (k x n2)."""
    d = data
    se = np.sqrt(epsilon)
    P12T = P12.T
    delta = (d.R + d.D1.T @ P11 @ d.D1
             + se * (d.D2.T @ P12T @ d.D1 + d.D1.T @ P12 @ d.D2)
             + d.D2.T @ P22 @ d.D2)
    N1 = (d.B1.T @ P11 + d.B2.T @ P12T + d.D1.T @ P11 @ d.C11
          + se * (d.D2.T @ P12T @ d.C11 + d.D1.T @ P12 @ d.C21)
          + d.D2.T @ P22 @ d.C21)
    N2 = (epsilon * d.B1.T @ P12 + d.B2.T @ P22 + d.D1.T @ P11 @ d.C12
          + se * (d.D2.T @ P12T @ d.C12 + d.D1.T @ P12 @ d.C22)
          + d.D2.T @ P22 @ d.C22)
    return sym(delta), N1, N2


def full_delta(P11, P12, P22, epsilon, data):
    """R + (D^eps)^T P D^eps in block form."""
    P11, P12, P22 = _blocks(P11, P12, P22)
    return _full_terms(P11, P12, P22, epsilon, data)[0]


def _checked_solve(delta, rhs, time=None):
    lam = np.linalg.eigvalsh(delta)[0]
    if not lam > DELTA_FLOOR:
        raise DeltaNotPositive(
            f"Delta lost positivity (min eigenvalue {lam:.3e})",
            time=time, min_eigenvalue=float(lam))
    return np.linalg.solve(delta, rhs)


def eval_full_rhs(P11, P12, P22, epsilon, data):
    """Evaluate ``(f, g1, g2)`` of the partitioned Riccati system.

    ``epsilon = 0`` is allowed and gives the reduced-system functions.
    """
    P11, P12, P22 = _blocks(P11, P12, P22)
    eps = float(epsilon)
    d = data
    se = np.sqrt(eps)
    P12T = P12.T
    delta, N1, N2 = _full_terms(P11, P12, P22, eps, d)
    X1 = _checked_solve(delta, N1)
    X2 = _checked_solve(delta, N2)

    f = (d.A11.T @ P11 + P11 @ d.A11 + d.A21.T @ P12T + P12 @ d.A21
         + d.C11.T @ P11 @ d.C11
         + se * (d.C21.T @ P12T @ d.C11 + d.C11.T @ P12 @ d.C21)
         + d.C21.T @ P22 @ d.C21 + d.Q11 - N1.T @ X1)
    g1 = (eps * d.A11.T @ P12 + P11 @ d.A12 + d.A21.T @ P22 + P12 @ d.A22
          + d.C11.T @ P11 @ d.C12
          + se * (d.C21.T @ P12T @ d.C12 + d.C11.T @ P12 @ d.C22)
          + d.C21.T @ P22 @ d.C22 + d.Q12 - N1.T @ X2)
    g2 = (d.A22.T @ P22 + P22 @ d.A22 + eps * (d.A12.T @ P12 + P12T @ d.A12)
          + d.C12.T @ P11 @ d.C12
          + se * (d.C22.T @ P12T @ d.C12 + d.C12.T @ P12 @ d.C22)
          + d.C22.T @ P22 @ d.C22 + d.Q22 - N2.T @ X2)
    return sym(f), g1, sym(g2)


def riccati_rhs(P, epsilon, data):
    """Unpartitioned Riccati map: A^T P + P A + C^T P C + Q - N^T Delta^-1 N."""
    sc = scaled_coefficients(data, epsilon)
    P = np.asarray(P, dtype=float)
    A, B, C, D = sc.Aeps, sc.Beps, sc.Ceps, sc.Deps
    N = B.T @ P + D.T @ P @ C
    delta = sym(data.R + D.T @ P @ D)
    return sym(A.T @ P + P @ A + C.T @ P @ C + data.Q - N.T @ _checked_solve(delta, N))


def compact_feedback(P, epsilon, data):
    """Gain -(R + D^T P D)^-1 (B^T P + D^T P C) from the stacked matrices."""
    sc = scaled_coefficients(data, epsilon)
    P = np.asarray(P, dtype=float)
    N = sc.Beps.T @ P + sc.Deps.T @ P @ sc.Ceps
    return -_checked_solve(sym(data.R + sc.Deps.T @ P @ sc.Deps), N)


def assemble_P(P11, P12, P22, epsilon):
    """Stack blocks into [[P11, eps P12], [eps P12^T, eps P22]]."""
    P11, P12, P22 = _blocks(P11, P12, P22)
    e = float(epsilon)
    return np.block([[P11, e * P12], [e * P12.T, e * P22]])


def split_P(P, n1, epsilon):
    """Inverse of :func:`assemble_P` (requires epsilon > 0)."""
    P = np.asarray(P, dtype=float)
    e = float(epsilon)
    return P[:n1, :n1], P[:n1, n1:] / e, P[n1:, n1:] / e


def feedback_gains_full(P11, P12, P22, epsilon, data):
    """Optimal gains (F1, F2) for the slow and fast states."""
    P11, P12, P22 = _blocks(P11, P12, P22)
    delta, N1, N2 = _full_terms(P11, P12, P22, float(epsilon), data)
    return -_checked_solve(delta, N1), -_checked_solve(delta, N2)


def _pack(P11, P12, P22):
    return np.concatenate([P11.ravel(), P12.ravel(), P22.ravel()])


def _unpack(y, n1, n2):
    a = n1 * n1
    b = a + n1 * n2
    return (y[:a].reshape(n1, n1), y[a:b].reshape(n1, n2),
            y[b:].reshape(n2, n2))


@dataclass
class RiccatiTrajectory:
    """Full solution on the accepted-step grid (ascending time).

    Arrays are stacked along axis 0: ``P11`` is (M, n1, n1), etc.
    Between grid points, :meth:`at` evaluates a cubic Hermite interpolant
    built from the stored right-hand-side values.
    """
    epsilon: float
    grid: np.ndarray
    P11: np.ndarray
    P12: np.ndarray
    P22: np.ndarray
    delta_min: np.ndarray
    n1: int
    n2: int
    _dense: HermiteDense = field(repr=False, default=None)

    def at(self, t):
        """Blocks at time(s) ``t``; returns arrays with a leading axis if t is."""
        y = self._dense(t)
        if np.ndim(t) == 0:
            P11, P12, P22 = _unpack(y, self.n1, self.n2)
            return sym(P11), P12, sym(P22)
        out = [_unpack(row, self.n1, self.n2) for row in y]
        return (np.array([sym(o[0]) for o in out]), np.array([o[1] for o in out]),
                np.array([sym(o[2]) for o in out]))

    def derivative(self, t):
        return _unpack(self._dense.derivative(t), self.n1, self.n2)

    def P(self, t):
        return assemble_P(*self.at(t), self.epsilon)

    @property
    def step_sizes(self):
        """Accepted step sizes ordered from t = T backwards."""
        return np.diff(self.grid)[::-1]

    def value(self, x):
        """Optimal cost 1/2 <P(0) x, x>."""
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ self.P(0.0) @ x)


def solve_full(data, epsilon, step_control=None):
    """Integrate the full partitioned Riccati system backward from P(T)=0.

    Raises
    ------
    DeltaNotPositive
        With ``.time`` set to the first grid time where Delta lost positivity.
    StepSizeUnderflow
        If the adaptive stepper would need a step below 1e-14 T.
    """
    eps = check_epsilon(epsilon)
    control = step_control or StepControl()
    n1, n2, T = data.n1, data.n2, data.T
    max_step = control.max_step or min(T / 100.0, eps / 2.0)

    def fun(s, y):
        P11, P12, P22 = _unpack(y, n1, n2)
        f, g1, g2 = eval_full_rhs(P11, P12, P22, eps, data)
        return _pack(f, g1 / eps, g2 / eps)

    dmins = []

    def on_step(s, y):
        delta = full_delta(*_unpack(y, n1, n2), eps, data)
        lam = float(np.linalg.eigvalsh(delta)[0])
        if not lam > DELTA_FLOOR:
            raise DeltaNotPositive(f"Delta lost positivity at t={T - s:.6g}",
                                   time=T - s, min_eigenvalue=lam)
        dmins.append(lam)

    def guarded(s, y):
        try:
            return fun(s, y)
        except DeltaNotPositive as exc:
            exc.time = T - s
            raise

    s, y, dy = integrate(guarded, _pack(np.zeros((n1, n1)), np.zeros((n1, n2)),
                                        np.zeros((n2, n2))),
                         T, control, max_step, on_step)
    t = (T - s)[::-1]
    t[0] = 0.0
    y = y[::-1]
    dydt = -dy[::-1]
    blocks = [_unpack(row, n1, n2) for row in y]
    return RiccatiTrajectory(
        epsilon=eps, grid=t,
        P11=np.array([sym(b[0]) for b in blocks]),
        P12=np.array([b[1] for b in blocks]),
        P22=np.array([sym(b[2]) for b in blocks]),
        delta_min=np.array(dmins[::-1]), n1=n1, n2=n2,
        _dense=HermiteDense(t, y, dydt),
    )


def _fmt(x):
    return f"{x:.17g}"


def block_header(prefix, rows, cols):
    return [f"{prefix}_{i}{j}" for i in range(rows) for j in range(cols)]


def write_trajectory_csv(traj, path):
    """One row per grid point: t, P11_ij..., P12_ij..., P22_ij..., delta_min."""
    n1, n2 = traj.n1, traj.n2
    header = (["t"] + block_header("P11", n1, n1) + block_header("P12", n1, n2)
              + block_header("P22", n2, n2) + ["delta_min"])
    lines = [",".join(header)]
    for i, t in enumerate(traj.grid):
        vals = ([t] + list(traj.P11[i].ravel()) + list(traj.P12[i].ravel())
                + list(traj.P22[i].ravel()) + [traj.delta_min[i]])
        lines.append(",".join(_fmt(v) for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
