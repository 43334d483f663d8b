"""Dense kernels for small symmetric matrix problems.

Everything here works on plain ``numpy`` arrays.  Matrices are small
(n <= ~30), so Lyapunov-type equations are solved by assembling the
n^2 x n^2 vectorized operator and doing one dense solve.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, SingularOperator

__all__ = [
    "StabilityReport",
    "sym",
    "as_square",
    "lyapunov_operator",
    "apply_lyapunov_operator",
    "solve_stochastic_lyapunov",
    "spectral_abscissa",
    "is_l2_stable",
    "assert_psd",
    "is_psd",
    "is_symmetric",
    "PSD_TOL",
]

PSD_TOL = 1e-9
_STABILITY_MARGIN = 1e-10


def sym(M):
    """Return the symmetric part (M + M^T) / 2."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def as_square(M, name="matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def is_symmetric(M, rtol=1e-12):
    M = np.asarray(M, dtype=float)
    return bool(np.max(np.abs(M - M.T), initial=0.0) <= rtol * (1.0 + np.max(np.abs(M), initial=0.0)))


def lyapunov_operator(A, C):
    """Matrix of X -> A^T X + X A + C^T X C acting on column-major vec(X)."""
    A = as_square(A, "A")
    C = as_square(C, "C")
    if A.shape != C.shape:
        raise DimensionMismatch(f"A {A.shape} and C {C.shape} differ")
    n = A.shape[0]
    eye = np.eye(n)
    return _kron(eye, A.T) + _kron(A.T, eye) + _kron(C.T, C.T)


def _kron(X, Y):
    # np.kron has heavy per-call overhead for the tiny matrices used here
    p, q = X.shape
    r, s = Y.shape
    return (X[:, None, :, None] * Y[None, :, None, :]).reshape(p * r, q * s)


def apply_lyapunov_operator(A, C, X):
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    X = np.asarray(X, dtype=float)
    return A.T @ X + X @ A + C.T @ X @ C


def solve_stochastic_lyapunov(A, C, Q):
    """Solve ``A^T X + X A + C^T X C + Q = 0`` for symmetric X.

    Parameters
    ----------
    A, C : (n, n) array_like
    Q : (n, n) array_like, symmetric

    Returns
    -------
    X : (n, n) ndarray, symmetrized.

    Raises
    ------
    SingularOperator
        If the vectorized operator has a (numerically) zero singular value.
    DimensionMismatch
        If the shapes disagree.
    """
    A = as_square(A, "A")
    C = as_square(C, "C")
    Q = as_square(Q, "Q")
    if not (A.shape == C.shape == Q.shape):
        raise DimensionMismatch(
            f"shapes A{A.shape}, C{C.shape}, Q{Q.shape} are inconsistent")
    n = A.shape[0]
    L = lyapunov_operator(A, C)
    s = np.linalg.svd(L, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= s[0] * n * n * np.finfo(float).eps * 10:
        raise SingularOperator(
            "Lyapunov operator is singular "
            f"(sigma_min={s[-1]:.3e}, sigma_max={s[0]:.3e})")
    rhs = -Q.reshape(-1, order="F")
    lu = sla.lu_factor(L, check_finite=False)
    x = sla.lu_solve(lu, rhs, check_finite=False)
    # one step of iterative refinement
    x = x + sla.lu_solve(lu, rhs - L @ x, check_finite=False)
    return sym(x.reshape(n, n, order="F"))


def spectral_abscissa(A):
    """Largest real part over the eigenvalues of ``A``."""
    A = as_square(A, "A")
    return float(np.max(np.linalg.eigvals(A).real))


@dataclass(frozen=True)
class StabilityReport:
    spectral_abscissa: float
    l2_stable: bool
    lyapunov_witness: Optional[np.ndarray] = None


def is_l2_stable(A, C):
    """Mean-square stability of dX = A X dt + C X dW.

    Decided by the spectrum of the vectorized Lyapunov operator; when
    stable, the certificate Y solving A^T Y + Y A + C^T Y C + I = 0 is
    attached.
    """
    L = lyapunov_operator(A, C)
    abscissa = float(np.max(np.linalg.eigvals(L).real))
    stable = abscissa < -_STABILITY_MARGIN
    witness = None
    if stable:
        n = np.atleast_2d(A).shape[0]
        witness = solve_stochastic_lyapunov(A, C, np.eye(n))
    return StabilityReport(abscissa, stable, witness)


def assert_psd(M, tol=PSD_TOL):
    """Smallest eigenvalue of symmetric ``M``.

    The caller treats M as PSD iff the result is >= -tol * (1 + |M|);
    see :func:`is_psd`.  ``tol`` is accepted for signature symmetry with
    that convention and does not change the returned value.
    """
    M = as_square(M, "M")
    return float(np.linalg.eigvalsh(sym(M))[0])


def is_psd(M, tol=PSD_TOL):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    scale = 1.0 + np.max(np.abs(M), initial=0.0)
    return assert_psd(M) >= -tol * scale
