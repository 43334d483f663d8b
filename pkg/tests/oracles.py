"""Independent reference computations used by the tests.

Nothing here imports the package's solvers.  Scalar cases are done in
plain Python floats so that a shared bug in array code cannot hide.
"""
import math

import numpy as np
from scipy.linalg import expm

SQRT2 = math.sqrt(2.0)


def s1_p11bar_closed_form(t, T=1.0):
    """Reduced slow block for S1: dP/ds = 1.5 - 2 P^2, P(0) = 0, s = T - t."""
    return math.sqrt(0.75) * math.tanh(math.sqrt(3.0) * (T - t))


def s1_p12bar(p):
    return (p * (2.0 - SQRT2) + SQRT2 - 1.0) / SQRT2


def s1_boundary_p22(tau):
    return SQRT2 * math.tanh(SQRT2 * tau + math.atanh(1.0 / SQRT2)) - 1.0 - (SQRT2 - 1.0)


def rk4_scalar(f, y0, length, h):
    """Classical RK4 for dy/ds = f(y) on [0, length] with fixed step h."""
    n = int(round(length / h))
    h = length / n
    y = float(y0)
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def bisect(fun, lo, hi, tol=1e-15, max_iter=200):
    flo = fun(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def scalar_are(c):
    """Scalar fast ARE residual as a function of p, for coefficient dict c."""
    def g(p, P11):
        num = c["B2"] * p + c["D2"] * p * c["C22"] + c["D1"] * P11 * c["C12"]
        den = c["R"] + c["D1"] ** 2 * P11 + c["D2"] ** 2 * p
        return (2 * c["A22"] * p + c["C22"] ** 2 * p + c["C12"] ** 2 * P11 + c["Q22"]
                - num * num / den)
    return g


S1_COEF = dict(A11=0.0, A12=1.0, A21=1.0, A22=-1.0, B1=1.0, B2=1.0, C11=0.0, C12=0.0,
               C21=0.0, C22=0.0, D1=0.0, D2=0.0, Q11=1.0, Q12=0.0, Q22=1.0, R=1.0)
S2_COEF = dict(S1_COEF, C11=0.2, C12=0.1, C21=0.1, C22=0.5, D1=0.1, D2=0.2)


def h2_bisection(c, P11):
    """Positive root of the scalar fast ARE by bisection on [0, 10]."""
    g = scalar_are(c)
    return bisect(lambda p: g(p, P11), 0.0, 10.0)


def scalar_f(c, P11, P12, P22):
    """Slow right-hand side f of the partitioned system at epsilon = 0."""
    delta = c["R"] + c["D1"] ** 2 * P11 + c["D2"] ** 2 * P22
    N1 = (c["B1"] * P11 + c["B2"] * P12 + c["D1"] * P11 * c["C11"]
          + c["D2"] * P22 * c["C21"])
    return (2 * c["A11"] * P11 + 2 * c["A21"] * P12 + c["C11"] ** 2 * P11
            + c["C21"] ** 2 * P22 + c["Q11"] - N1 * N1 / delta)


def scalar_p12(c, P11, P22):
    delta = c["R"] + c["D1"] ** 2 * P11 + c["D2"] ** 2 * P22
    F2 = -(c["B2"] * P22 + c["D1"] * P11 * c["C12"] + c["D2"] * P22 * c["C22"]) / delta
    num = (P11 * c["A12"] + c["A21"] * P22 + c["C11"] * P11 * c["C12"]
           + c["C21"] * P22 * c["C22"] + c["Q12"]
           + (P11 * c["B1"] + c["C11"] * P11 * c["D1"] + c["C21"] * P22 * c["D2"]) * F2)
    return -num / (c["A22"] + c["B2"] * F2)


def reduced_p11_oracle(c, T=1.0, h=1e-3):
    """P11bar(0) for a scalar case: RK4 on f(P11, p12(P11), h2(P11), 0),
    with h2 by bisection and p12 by the scalar closed form."""
    def rhs(P11):
        P22 = h2_bisection(c, P11)
        return scalar_f(c, P11, scalar_p12(c, P11, P22), P22)
    return rk4_scalar(rhs, 0.0, T, h)


def full_value_oracle(c, eps, T=1.0, h=None):
    """P^eps(0) for a scalar-block case via RK4 on the unpartitioned 2x2
    Riccati equation, written out entry by entry in floats."""
    h = h or min(1e-3, eps / 50.0)
    a = 1.0 / eps
    b = 1.0 / math.sqrt(eps)
    A = [[c["A11"], c["A12"]], [a * c["A21"], a * c["A22"]]]
    B = [c["B1"], a * c["B2"]]
    C = [[c["C11"], c["C12"]], [b * c["C21"], b * c["C22"]]]
    D = [c["D1"], b * c["D2"]]
    Q = [[c["Q11"], c["Q12"]], [c["Q12"], c["Q22"]]]

    def mm(X, Y):
        return [[sum(X[i][k] * Y[k][j] for k in range(2)) for j in range(2)] for i in range(2)]

    def tr(X):
        return [[X[j][i] for j in range(2)] for i in range(2)]

    def rhs(P):
        AtP = mm(tr(A), P)
        CtPC = mm(mm(tr(C), P), C)
        N = [sum(B[k] * P[k][j] for k in range(2))
             + sum(D[k] * sum(P[k][m] * C[m][j] for m in range(2)) for k in range(2))
             for j in range(2)]
        delta = c["R"] + sum(D[i] * P[i][j] * D[j] for i in range(2) for j in range(2))
        return [[AtP[i][j] + AtP[j][i] + CtPC[i][j] + Q[i][j] - N[i] * N[j] / delta
                 for j in range(2)] for i in range(2)]

    def axpy(P, K, s):
        return [[P[i][j] + s * K[i][j] for j in range(2)] for i in range(2)]

    n = int(round(T / h))
    h = T / n
    P = [[0.0, 0.0], [0.0, 0.0]]
    for _ in range(n):
        k1 = rhs(P)
        k2 = rhs(axpy(P, k1, h / 2))
        k3 = rhs(axpy(P, k2, h / 2))
        k4 = rhs(axpy(P, k3, h))
        P = [[P[i][j] + h / 6 * (k1[i][j] + 2 * k2[i][j] + 2 * k3[i][j] + k4[i][j])
              for j in range(2)] for i in range(2)]
    return np.array(P)


def linear_path(A, x0, times):
    """x(t) = expm(A t) x0 at the requested times."""
    return np.array([expm(A * t) @ x0 for t in times])


def linear_cost(A, Q, x0, T, n=4001):
    """1/2 int_0^T x^T Q x dt for x' = A x by composite Simpson."""
    times = np.linspace(0.0, T, n)
    X = linear_path(A, x0, times)
    vals = 0.5 * np.einsum("ti,ij,tj->t", X, Q, X)
    h = times[1] - times[0]
    return h / 3 * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum() + 2 * vals[2:-1:2].sum())
