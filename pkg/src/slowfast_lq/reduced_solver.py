"""Reduced (epsilon -> 0) Riccati system.

The fast algebraic Riccati equation is solved pointwise by Newton-Kleinman
(``solve_h2``); its solution map P11 -> P22 feeds the slow differential
Riccati equation, which is integrated backward in time
(``solve_reduced_dre``).  The off-diagonal block follows in closed form
(``compute_p12``).  ``lyapunov_iteration_check`` runs the independent
monotone Lyapunov iteration as a cross-check.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._integrate import HermiteDense, StepControl, integrate
from .errors import (DeltaNotPositive, MaxItersExceeded, NoStabilizingSolution,
                     SingularClosedLoop, SingularOperator)
from .linalg_core import (is_l2_stable, lyapunov_operator, solve_stochastic_lyapunov,
                          spectral_abscissa, sym)
from .problem import A22_COND_LIMIT, reduced_coefficients
from .riccati_full import DELTA_FLOOR, block_header, eval_full_rhs

__all__ = [
    "AreSolution",
    "ReducedSolution",
    "solve_h2",
    "are_residual",
    "h2_linear_bound",
    "reduced_dre_rhs",
    "reduced_dre_rhs_raw",
    "solve_reduced_dre",
    "compute_p12",
    "reduced_gains",
    "reduced_deltas",
    "lyapunov_iteration_check",
    "residuals_reduced",
    "identity_residuals",
    "are_forward_flow",
    "write_reduced_csv",
]

NK_TOL = 1e-13
NK_MAX_ITER = 60


def _as2d(x):
    return np.atleast_2d(np.asarray(x, dtype=float))


def _min_eig(M):
    return float(np.linalg.eigvalsh(sym(M))[0])


@dataclass(frozen=True)
class AreSolution:
    P22: np.ndarray
    F2: np.ndarray
    closed_loop_abscissa: float
    newton_iters: int

    @property
    def gamma(self):
        """Decay rate |closed-loop abscissa| of A22 + B2 F2."""
        return -self.closed_loop_abscissa


def _are_parts(P11, data):
    """Fixed-P11 data of the fast ARE: (Q~, S, R~)."""
    Qt = data.Q22 + data.C12.T @ P11 @ data.C12
    S = data.D1.T @ P11 @ data.C12
    Rt = data.R + data.D1.T @ P11 @ data.D1
    return sym(Qt), S, sym(Rt)


def _are_gain(P22, S, Rt, data, check=True):
    delta = sym(Rt + data.D2.T @ P22 @ data.D2)
    if check:
        lam = _min_eig(delta)
        if not lam > DELTA_FLOOR:
            raise DeltaNotPositive(
                f"R + D1' P11 D1 + D2' P22 D2 lost positivity ({lam:.3e})",
                min_eigenvalue=lam)
    N = data.B2.T @ P22 + data.D2.T @ P22 @ data.C22 + S
    return -np.linalg.solve(delta, N)


def are_residual(P22, P11, data):
    """Left-hand side of the fast ARE at (P11, P22)."""
    P11, P22 = _as2d(P11), _as2d(P22)
    Qt, S, Rt = _are_parts(P11, data)
    A, C = data.A22, data.C22
    delta = sym(Rt + data.D2.T @ P22 @ data.D2)
    N = data.B2.T @ P22 + data.D2.T @ P22 @ C + S
    return sym(A.T @ P22 + P22 @ A + C.T @ P22 @ C + Qt
               - N.T @ np.linalg.solve(delta, N))


def _l2_stable_pair(A, C):
    L = lyapunov_operator(A, C)
    return float(np.max(np.linalg.eigvals(L).real)) < -1e-10


def solve_h2(P11, data, F0=None):
    """Stabilizing PSD solution of the fast ARE with P11 frozen.

    Newton-Kleinman from gain ``F0`` (default zero, admissible because
    [A22, C22] is mean-square stable); each step is one stochastic Lyapunov
    solve on the closed loop (A22 + B2 F, C22 + D2 F).  A warm-start gain
    that is not stabilizing is silently replaced by zero.

    Raises
    ------
    NoStabilizingSolution
        If no stabilizing start exists, the iteration diverges, or the
        converged closed loop is not Hurwitz.
    DeltaNotPositive
    """
    P11 = _as2d(P11)
    Qt, S, Rt = _are_parts(P11, data)
    A, B, C, D = data.A22, data.B2, data.C22, data.D2
    n2, k = data.n2, data.k

    F = np.zeros((k, n2)) if F0 is None else _as2d(F0)
    if not _l2_stable_pair(A + B @ F, C + D @ F):
        F = np.zeros((k, n2))
        if not _l2_stable_pair(A, C):
            raise NoStabilizingSolution(
                "zero gain does not stabilize [A22, C22] in mean square")

    P_prev = None
    prev_diff = np.inf
    for it in range(1, NK_MAX_ITER + 1):
        Acl, Ccl = A + B @ F, C + D @ F
        W = sym(F.T @ Rt @ F + S.T @ F + F.T @ S + Qt)
        try:
            P = solve_stochastic_lyapunov(Acl, Ccl, W)
        except SingularOperator as exc:
            raise NoStabilizingSolution(str(exc)) from exc
        # iterates from a stabilizing start stay PSD and decrease; anything
        # else means the closed loop lost mean-square stability
        if not np.all(np.isfinite(P)) or _min_eig(P) < -1e-9 * (1.0 + np.max(np.abs(P))):
            raise NoStabilizingSolution(f"Newton iterate {it} left the stabilizing set")
        F = _are_gain(P, S, Rt, data)
        if P_prev is not None:
            diff = np.max(np.abs(P - P_prev))
            scale = 1.0 + np.max(np.abs(P))
            if diff <= NK_TOL * scale or (diff <= 1e-9 * scale and diff >= prev_diff):
                break
            prev_diff = diff
        P_prev = P
    else:
        raise NoStabilizingSolution(f"Newton-Kleinman did not converge in {NK_MAX_ITER} steps")

    abscissa = spectral_abscissa(A + B @ F)
    if not abscissa < 0:
        raise NoStabilizingSolution(
            f"closed loop A22 + B2 F2 not Hurwitz (abscissa {abscissa:.3e})")
    if not _min_eig(P) > 1e-10:
        raise NoStabilizingSolution("ARE solution is not positive definite")
    return AreSolution(P, F, abscissa, it)


def h2_linear_bound(P11, data):
    """Solution X of A22' X + X A22 + C22' X C22 + Q22 + C12' P11 C12 = 0."""
    P11 = _as2d(P11)
    return solve_stochastic_lyapunov(data.A22, data.C22,
                                     data.Q22 + data.C12.T @ P11 @ data.C12)


def reduced_deltas(P11, P22, data, rc=None):
    """(Delta_bar, Delta_bar_s) at the given reduced blocks."""
    rc = rc or reduced_coefficients(data)
    P11, P22 = _as2d(P11), _as2d(P22)
    dbar = sym(data.R + data.D1.T @ P11 @ data.D1 + data.D2.T @ P22 @ data.D2)
    ds = sym(rc.Rs + rc.D1s.T @ P11 @ rc.D1s + rc.D2s.T @ P22 @ rc.D2s)
    return dbar, ds


def reduced_dre_rhs(P11, P22, rc):
    """Right-hand side of dP11/ds (s = T - t) in reduced-coefficient form."""
    H = P22
    ds = sym(rc.Rs + rc.D1s.T @ P11 @ rc.D1s + rc.D2s.T @ H @ rc.D2s)
    lam = _min_eig(ds)
    if not lam > DELTA_FLOOR:
        raise DeltaNotPositive(f"Delta_s lost positivity ({lam:.3e})", min_eigenvalue=lam)
    Ms = rc.Bs.T @ P11 + rc.D1s.T @ P11 @ rc.C1s + rc.D2s.T @ H @ rc.C2s + rc.Ls
    return sym(rc.As.T @ P11 + P11 @ rc.As + rc.C1s.T @ P11 @ rc.C1s
               + rc.C2s.T @ H @ rc.C2s + rc.Qs - Ms.T @ np.linalg.solve(ds, Ms))


def reduced_dre_rhs_raw(P11, data):
    """Same quantity through f(P11, P12, P22, 0) with P12, P22 reconstructed."""
    P11 = _as2d(P11)
    P22 = solve_h2(P11, data).P22
    P12 = compute_p12(P11, P22, data)
    return eval_full_rhs(P11, P12, P22, 0.0, data)[0]


def _bar_F2(P11, P22, data):
    dbar = sym(data.R + data.D1.T @ P11 @ data.D1 + data.D2.T @ P22 @ data.D2)
    N2 = data.B2.T @ P22 + data.D1.T @ P11 @ data.C12 + data.D2.T @ P22 @ data.C22
    return -np.linalg.solve(dbar, N2)


def compute_p12(P11, P22, data):
    """Off-diagonal reduced block that zeroes g1 at epsilon = 0."""
    P11, P22 = _as2d(P11), _as2d(P22)
    d = data
    F2 = _bar_F2(P11, P22, d)
    G = d.A22 + d.B2 @ F2
    with np.errstate(divide="ignore"):
        cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > A22_COND_LIMIT:
        raise SingularClosedLoop(f"A22 + B2 F2 is singular (cond={cond:.3e})")
    num = (P11 @ d.A12 + d.A21.T @ P22 + d.C11.T @ P11 @ d.C12
           + d.C21.T @ P22 @ d.C22 + d.Q12
           + (P11 @ d.B1 + d.C11.T @ P11 @ d.D1 + d.C21.T @ P22 @ d.D2) @ F2)
    # P12 = -num G^{-1}
    return -np.linalg.solve(G.T, num.T).T


def reduced_gains(P11, P12, P22, data):
    """(F1bar, F2bar) built from the reduced blocks."""
    P11, P12, P22 = _as2d(P11), _as2d(P12), _as2d(P22)
    d = data
    dbar = sym(d.R + d.D1.T @ P11 @ d.D1 + d.D2.T @ P22 @ d.D2)
    lam = _min_eig(dbar)
    if not lam > DELTA_FLOOR:
        raise DeltaNotPositive(f"Delta_bar lost positivity ({lam:.3e})", min_eigenvalue=lam)
    N1 = d.B1.T @ P11 + d.B2.T @ P12.T + d.D1.T @ P11 @ d.C11 + d.D2.T @ P22 @ d.C21
    N2 = d.B2.T @ P22 + d.D1.T @ P11 @ d.C12 + d.D2.T @ P22 @ d.C22
    return -np.linalg.solve(dbar, N1), -np.linalg.solve(dbar, N2)


@dataclass
class ReducedSolution:
    """Reduced solution sampled on the accepted-step grid (ascending time)."""
    grid: np.ndarray
    P11bar: np.ndarray
    P22bar: np.ndarray
    P12bar: np.ndarray
    F1bar: np.ndarray
    F2bar: np.ndarray
    delta_bar_min: np.ndarray
    delta_s_min: np.ndarray
    closed_loop_abscissa: np.ndarray
    data: object = field(repr=False, default=None)
    _dense: HermiteDense = field(repr=False, default=None)

    def p11(self, t):
        n1 = self.data.n1
        y = self._dense(t)
        if np.ndim(t) == 0:
            return sym(y.reshape(n1, n1))
        return np.array([sym(row.reshape(n1, n1)) for row in y])

    def at(self, t):
        """(P11, P12, P22) at time(s) t; P22 and P12 are recomputed exactly."""
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        P11s = self.p11(ts)
        idx = np.clip(np.searchsorted(self.grid, ts), 0, len(self.grid) - 1)
        P12s, P22s = [], []
        F0 = None
        for j, P11 in enumerate(P11s):
            if self.grid[idx[j]] == ts[j]:
                # stored nodal values keep t = T bit-exact
                P22s.append(self.P22bar[idx[j]])
                P12s.append(self.P12bar[idx[j]])
                continue
            are = solve_h2(P11, self.data, F0)
            F0 = are.F2
            P22s.append(are.P22)
            P12s.append(compute_p12(P11, are.P22, self.data))
        if scalar:
            return P11s[0], P12s[0], P22s[0]
        return P11s, np.array(P12s), np.array(P22s)

    def gains(self, t):
        """(F1bar, F2bar) at time(s) t."""
        P11, P12, P22 = self.at(t)
        if np.ndim(t) == 0:
            return reduced_gains(P11, P12, P22, self.data)
        pairs = [reduced_gains(a, b, c, self.data) for a, b, c in zip(P11, P12, P22)]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def value(self, x1):
        """Limiting value 1/2 <P11bar(0) x1, x1>."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        return 0.5 * float(x1 @ self.P11bar[0] @ x1)


def solve_reduced_dre(data, step_control=None):
    """Integrate the reduced slow Riccati equation backward from P11(T)=0.

    Every right-hand-side evaluation solves the fast ARE, warm-started
    from the most recent gain.
    """
    control = step_control or StepControl()
    rc = reduced_coefficients(data)
    n1, T = data.n1, data.T
    max_step = control.max_step or T / 100.0
    cache = {"F": None}

    def h2(P11):
        are = solve_h2(P11, data, cache["F"])
        cache["F"] = are.F2
        return are

    def fun(s, y):
        P11 = sym(y.reshape(n1, n1))
        try:
            return reduced_dre_rhs(P11, h2(P11).P22, rc).ravel()
        except DeltaNotPositive as exc:
            exc.time = T - s
            raise

    def on_step(s, y):
        P11 = sym(y.reshape(n1, n1))
        dbar, ds = reduced_deltas(P11, h2(P11).P22, data, rc)
        for name, M in (("Delta_bar", dbar), ("Delta_s", ds)):
            lam = _min_eig(M)
            if not lam > DELTA_FLOOR:
                raise DeltaNotPositive(f"{name} lost positivity at t={T - s:.6g}",
                                       time=T - s, min_eigenvalue=lam)

    s, y, dy = integrate(fun, np.zeros(n1 * n1), T, control, max_step, on_step)
    t = (T - s)[::-1]
    t[0] = 0.0
    y = y[::-1]
    dydt = -dy[::-1]

    P11s, P12s, P22s, F1s, F2s, dbars, dss, absc = [], [], [], [], [], [], [], []
    F0 = None
    for row in y:
        P11 = sym(row.reshape(n1, n1))
        are = solve_h2(P11, data, F0)
        F0 = are.F2
        P22 = are.P22
        P12 = compute_p12(P11, P22, data)
        F1, F2 = reduced_gains(P11, P12, P22, data)
        dbar, ds = reduced_deltas(P11, P22, data, rc)
        P11s.append(P11)
        P12s.append(P12)
        P22s.append(P22)
        F1s.append(F1)
        F2s.append(F2)
        dbars.append(_min_eig(dbar))
        dss.append(_min_eig(ds))
        absc.append(are.closed_loop_abscissa)
    return ReducedSolution(
        grid=t, P11bar=np.array(P11s), P22bar=np.array(P22s), P12bar=np.array(P12s),
        F1bar=np.array(F1s), F2bar=np.array(F2s), delta_bar_min=np.array(dbars),
        delta_s_min=np.array(dss), closed_loop_abscissa=np.array(absc),
        data=data, _dense=HermiteDense(t, y, dydt))


def residuals_reduced(sol, data):
    """Max norms of g1 and g2 at epsilon = 0 over the solution grid."""
    r1 = r2 = 0.0
    for P11, P12, P22 in zip(sol.P11bar, sol.P12bar, sol.P22bar):
        _, g1, g2 = eval_full_rhs(P11, P12, P22, 0.0, data)
        r1 = max(r1, float(np.max(np.abs(g1))))
        r2 = max(r2, float(np.max(np.abs(g2))))
    return r1, r2


def identity_residuals(P11, P12, P22, data, rc=None):
    """Max-abs residuals of the inverse, congruence and M_s identities.

    Keys: ``inverse`` for (I + F2 A22^-1 B2)^-1 = I - F2 (A22 + B2 F2)^-1 B2,
    ``closed_loop_inverse`` for the matching expansion of (A22 + B2 F2)^-1,
    ``congruence`` for J^T Delta_bar J = Delta_s with J = I + F2 A22^-1 B2,
    ``ms`` for Delta_s J^-1 (F1 - F2 A22^-1 A21) = -M_s.
    """
    rc = rc or reduced_coefficients(data)
    P11, P12, P22 = _as2d(P11), _as2d(P12), _as2d(P22)
    d = data
    F1, F2 = reduced_gains(P11, P12, P22, d)
    Ai = np.linalg.inv(d.A22)
    G = d.A22 + d.B2 @ F2
    Gi = np.linalg.inv(G)
    eye = np.eye(d.k)
    J = eye + F2 @ Ai @ d.B2
    Ji = np.linalg.inv(J)
    dbar, ds = reduced_deltas(P11, P22, d, rc)
    Ms = (rc.Bs.T @ P11 + rc.D1s.T @ P11 @ rc.C1s + rc.D2s.T @ P22 @ rc.C2s + rc.Ls)
    return {
        "inverse": float(np.max(np.abs(Ji - (eye - F2 @ Gi @ d.B2)))),
        "closed_loop_inverse": float(np.max(np.abs(
            Gi - (Ai - Ai @ d.B2 @ Ji @ F2 @ Ai)))),
        "congruence": float(np.max(np.abs(J.T @ dbar @ J - ds))),
        "ms": float(np.max(np.abs(ds @ Ji @ (F1 - F2 @ Ai @ d.A21) + Ms))),
    }


def are_forward_flow(P11, data, t_max, n_points=201):
    """Integrate dP22/dt = ARE(P11, P22) forward from P22(0) = 0.

    Returns (times, P22 samples).  Used as an independent oracle for h2.
    """
    from scipy.integrate import solve_ivp

    P11 = _as2d(P11)
    n2 = data.n2

    def fun(t, y):
        return are_residual(y.reshape(n2, n2), P11, data).ravel()

    ts = np.linspace(0.0, t_max, n_points)
    out = solve_ivp(fun, (0.0, t_max), np.zeros(n2 * n2), method="RK45",
                    t_eval=ts, rtol=1e-11, atol=1e-14)
    return out.t, out.y.T.reshape(-1, n2, n2)


# ----------------------------------------------------------------------
# Monotone Lyapunov iteration
# ----------------------------------------------------------------------

class _Iterate:
    """One iterate on the node grid plus midpoint samples and cached h2."""

    def __init__(self, nodes, mids, data):
        self.nodes = nodes
        self.mids = mids
        F0 = None
        self.h2_nodes, self.h2_mids = [], []
        for P in nodes:
            are = solve_h2(P, data, F0)
            F0 = are.F2
            self.h2_nodes.append(are.P22)
        for P in mids:
            are = solve_h2(P, data, F0)
            F0 = are.F2
            self.h2_mids.append(are.P22)


def _rk4_backward(grid, rhs_at, n1):
    """Classical RK4 for dP/ds = rhs(j, stage, P) on a descending-t grid.

    ``rhs_at(j, where, P)`` evaluates the right-hand side on interval j
    (between node j+1 and node j in ascending index) at ``where`` in
    {"start", "mid", "end"}.  Returns node values and node slopes (d/ds).
    """
    M = len(grid)
    vals = np.zeros((M, n1, n1))
    slopes = np.zeros((M, n1, n1))
    P = np.zeros((n1, n1))
    vals[-1] = P
    for j in range(M - 2, -1, -1):
        h = grid[j + 1] - grid[j]
        k1 = rhs_at(j, "start", P)
        slopes[j + 1] = k1
        k2 = rhs_at(j, "mid", P + 0.5 * h * k1)
        k3 = rhs_at(j, "mid", P + 0.5 * h * k2)
        k4 = rhs_at(j, "end", P + h * k3)
        P = sym(P + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
        vals[j] = P
    slopes[0] = rhs_at(0, "end", P)
    return vals, slopes


def _midpoints(grid, vals, slopes):
    """Cubic Hermite values at interval midpoints (slopes are d/ds)."""
    h = np.diff(grid)[:, None, None]
    # in t, dP/dt = -dP/ds
    d0, d1 = -slopes[:-1], -slopes[1:]
    return 0.5 * (vals[:-1] + vals[1:]) + h / 8.0 * (d0 - d1)


def lyapunov_iteration_check(data, grid=None, max_iters=30, tol=1e-10):
    """Run the monotone Lyapunov iteration for the reduced slow equation.

    Iterate 0 solves the linear equation in which h2 is replaced by its
    linear upper bound; iterate i+1 solves a differential Lyapunov
    equation whose feedback Theta_i and weights use h2 evaluated at the
    previous iterates.  Each equation is integrated by RK4 on ``grid``.

    Returns the list of iterates, each an array (M, n1, n1) on ``grid``.

    Raises
    ------
    MaxItersExceeded
        If the sup-norm gap between consecutive iterates is still above
        ``tol`` after ``max_iters`` iterations.
    """
    if grid is None:
        grid = np.linspace(0.0, data.T, 401)
    grid = np.asarray(grid, dtype=float)
    rc = reduced_coefficients(data)
    n1 = data.n1

    def lin_rhs(P):
        hb = h2_linear_bound(P, data)
        return sym(rc.As.T @ P + P @ rc.As + rc.C1s.T @ P @ rc.C1s + rc.Qs
                   + rc.C2s.T @ hb @ rc.C2s)

    vals, slopes = _rk4_backward(grid, lambda j, w, P: lin_rhs(P), n1)
    current = _Iterate(vals, _midpoints(grid, vals, slopes), data)
    iterates = [vals]
    previous = None

    for i in range(max_iters):
        # H_i = h2(P^i) + Gamma_i = h2(P^{i-1}) (i >= 1), h2(P^0) (i = 0)
        src = current if previous is None else previous
        Pi = current

        def coeffs(j, where):
            if where == "start":
                return Pi.nodes[j + 1], src.h2_nodes[j + 1]
            if where == "end":
                return Pi.nodes[j], src.h2_nodes[j]
            return Pi.mids[j], src.h2_mids[j]

        def rhs_at(j, where, P):
            P_i, H = coeffs(j, where)
            R_i = sym(rc.Rs + rc.D2s.T @ H @ rc.D2s)
            S_i = rc.Ls + rc.D2s.T @ H @ rc.C2s
            Q_i = sym(rc.Qs + rc.C2s.T @ H @ rc.C2s)
            W = sym(R_i + rc.D1s.T @ P_i @ rc.D1s)
            Theta = -np.linalg.solve(W, rc.Bs.T @ P_i + rc.D1s.T @ P_i @ rc.C1s + S_i)
            A_i = rc.As + rc.Bs @ Theta
            C_i = rc.C1s + rc.D1s @ Theta
            return sym(A_i.T @ P + P @ A_i + C_i.T @ P @ C_i + Theta.T @ R_i @ Theta
                       + S_i.T @ Theta + Theta.T @ S_i + Q_i)

        vals, slopes = _rk4_backward(grid, rhs_at, n1)
        gap = float(np.max(np.abs(vals - iterates[-1])))
        iterates.append(vals)
        if gap <= tol:
            return iterates
        previous, current = current, _Iterate(vals, _midpoints(grid, vals, slopes), data)
    raise MaxItersExceeded(f"Lyapunov iteration gap {gap:.3e} after {max_iters} iterations",
                           last_gap=gap)


def write_reduced_csv(sol, path):
    d = sol.data
    n1, n2, k = d.n1, d.n2, d.k
    header = (["t"] + block_header("P11", n1, n1) + block_header("P12", n1, n2)
              + block_header("P22", n2, n2) + ["delta_min", "delta_s_min"]
              + block_header("F1bar", k, n1) + block_header("F2bar", k, n2))
    lines = [",".join(header)]
    for i, t in enumerate(sol.grid):
        vals = ([t] + list(sol.P11bar[i].ravel()) + list(sol.P12bar[i].ravel())
                + list(sol.P22bar[i].ravel()) + [sol.delta_bar_min[i], sol.delta_s_min[i]]
                + list(sol.F1bar[i].ravel()) + list(sol.F2bar[i].ravel()))
        lines.append(",".join(f"{v:.17g}" for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
