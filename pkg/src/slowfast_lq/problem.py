"""Problem instances: coefficient blocks, assumption checks, derived matrices."""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EpsilonOutOfRange, SingularA22
from .linalg_core import StabilityReport, is_l2_stable, sym

__all__ = [
    "ProblemData",
    "ScaledCoefficients",
    "ReducedCoefficients",
    "ValidationReport",
    "validate",
    "scaled_coefficients",
    "reduced_coefficients",
    "load_problem",
    "save_problem",
    "canonical_case",
    "MATRIX_KEYS",
]

MATRIX_KEYS = ("A11", "A12", "A21", "A22", "B1", "B2",
               "C11", "C12", "C21", "C22", "D1", "D2", "Q", "R")
_SCALAR_KEYS = ("n1", "n2", "k", "T")

Q_THRESHOLD = 1e-10
A22_COND_LIMIT = 1e12


def _mat(x):
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ProblemData:
    """All coefficients of one slow-fast LQ instance.

    Slow state has dimension ``n1``, fast state ``n2``, control ``k``.
    ``Q`` is the full (n1+n2)-square state weight; its blocks are exposed
    as ``Q11``, ``Q12``, ``Q22``.
    """
    n1: int
    n2: int
    k: int
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C11: np.ndarray
    C12: np.ndarray
    C21: np.ndarray
    C22: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    T: float = 1.0

    def __post_init__(self):
        for key in MATRIX_KEYS:
            arr = _mat(getattr(self, key))
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        object.__setattr__(self, "T", float(self.T))
        self._check_shapes()

    def _check_shapes(self):
        n1, n2, k = self.n1, self.n2, self.k
        if min(n1, n2, k) < 1:
            raise DimensionMismatch("n1, n2 and k must be positive")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        expected = {
            "A11": (n1, n1), "A12": (n1, n2), "A21": (n2, n1), "A22": (n2, n2),
            "B1": (n1, k), "B2": (n2, k),
            "C11": (n1, n1), "C12": (n1, n2), "C21": (n2, n1), "C22": (n2, n2),
            "D1": (n1, k), "D2": (n2, k),
            "Q": (n1 + n2, n1 + n2), "R": (k, k),
        }
        for key, shape in expected.items():
            got = getattr(self, key).shape
            if got != shape:
                raise DimensionMismatch(f"{key} has shape {got}, expected {shape}")
            if not np.all(np.isfinite(getattr(self, key))):
                raise ValueError(f"{key} has non-finite entries")

    @property
    def n(self):
        return self.n1 + self.n2

    @property
    def Q11(self):
        return self.Q[: self.n1, : self.n1]

    @property
    def Q12(self):
        return self.Q[: self.n1, self.n1:]

    @property
    def Q22(self):
        return self.Q[self.n1:, self.n1:]

    def replace(self, **changes):
        """Copy with some blocks replaced (``Q11``/``Q12``/``Q22`` allowed)."""
        Q = np.array(changes.pop("Q", self.Q), dtype=float)
        n1 = self.n1
        if "Q11" in changes:
            Q[:n1, :n1] = changes.pop("Q11")
        if "Q12" in changes:
            q12 = _mat(changes.pop("Q12"))
            Q[:n1, n1:] = q12
            Q[n1:, :n1] = q12.T
        if "Q22" in changes:
            Q[n1:, n1:] = changes.pop("Q22")
        return replace(self, Q=Q, **changes)

    def to_dict(self):
        out = {"n1": self.n1, "n2": self.n2, "k": self.k, "T": self.T}
        for key in MATRIX_KEYS:
            out[key] = getattr(self, key).tolist()
        return out

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(MATRIX_KEYS) - set(_SCALAR_KEYS)
        if unknown:
            raise ValueError(f"unknown keys in problem document: {sorted(unknown)}")
        missing = (set(MATRIX_KEYS) | set(_SCALAR_KEYS)) - set(doc)
        if missing:
            raise ValueError(f"missing keys in problem document: {sorted(missing)}")
        for key in ("n1", "n2", "k"):
            if not isinstance(doc[key], int) or isinstance(doc[key], bool):
                raise ValueError(f"{key} must be an integer")
        mats = {}
        for key in MATRIX_KEYS:
            value = doc[key]
            if not (isinstance(value, list) and all(isinstance(r, list) for r in value)):
                raise ValueError(f"{key} must be a nested row-major array")
            mats[key] = np.array(value, dtype=float)
        return cls(n1=doc["n1"], n2=doc["n2"], k=doc["k"], T=doc["T"], **mats)


def load_problem(path):
    with open(path) as fh:
        return ProblemData.from_dict(json.load(fh))


def save_problem(data, path):
    Path(path).write_text(json.dumps(data.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class ValidationReport:
    q_positive: bool
    q_min_eigenvalue: float
    r_positive: bool
    r_min_eigenvalue: float
    a22_invertible: bool
    a22_condition: float
    fast_pair_l2_stable: StabilityReport
    overall_pass: bool = field(init=False)

    def __post_init__(self):
        ok = (self.q_positive and self.r_positive and self.a22_invertible
              and self.fast_pair_l2_stable.l2_stable)
        object.__setattr__(self, "overall_pass", bool(ok))

    def failed_checks(self):
        names = []
        if not self.q_positive:
            names.append("q_positive")
        if not self.r_positive:
            names.append("r_positive")
        if not self.a22_invertible:
            names.append("a22_invertible")
        if not self.fast_pair_l2_stable.l2_stable:
            names.append("fast_pair_l2_stable")
        return names

    def to_dict(self):
        return {
            "q_positive": self.q_positive,
            "q_min_eigenvalue": self.q_min_eigenvalue,
            "r_positive": self.r_positive,
            "r_min_eigenvalue": self.r_min_eigenvalue,
            "a22_invertible": self.a22_invertible,
            "a22_condition": self.a22_condition,
            "fast_pair_l2_stable": self.fast_pair_l2_stable.l2_stable,
            "fast_pair_spectral_abscissa": self.fast_pair_l2_stable.spectral_abscissa,
            "overall_pass": self.overall_pass,
        }


def validate(data):
    """Check positivity of Q and R, invertibility of A22, stability of [A22, C22]."""
    if not isinstance(data, ProblemData):
        raise DimensionMismatch("validate expects a ProblemData instance")
    q_min = float(np.linalg.eigvalsh(sym(data.Q))[0])
    r_min = float(np.linalg.eigvalsh(sym(data.R))[0])
    with np.errstate(divide="ignore"):
        cond = float(np.linalg.cond(data.A22))
    if not np.isfinite(cond):
        cond = float("inf")
    return ValidationReport(
        q_positive=q_min > Q_THRESHOLD,
        q_min_eigenvalue=q_min,
        r_positive=r_min > Q_THRESHOLD,
        r_min_eigenvalue=r_min,
        a22_invertible=cond <= A22_COND_LIMIT,
        a22_condition=cond,
        fast_pair_l2_stable=is_l2_stable(data.A22, data.C22),
    )


@dataclass(frozen=True)
class ScaledCoefficients:
    epsilon: float
    Aeps: np.ndarray
    Beps: np.ndarray
    Ceps: np.ndarray
    Deps: np.ndarray


def check_epsilon(epsilon, allow_zero=False):
    eps = float(epsilon)
    lo_ok = eps >= 0.0 if allow_zero else eps > 0.0
    if not (lo_ok and eps <= 1.0):
        raise EpsilonOutOfRange(f"epsilon={epsilon!r} outside (0, 1]")
    return eps


def scaled_coefficients(data, epsilon):
    """Stack the blocks into the compact ``A^eps, B^eps, C^eps, D^eps``.

    The fast drift row is divided by epsilon, the fast diffusion row by
    sqrt(epsilon).
    """
    eps = check_epsilon(epsilon)
    a, b = 1.0 / eps, 1.0 / np.sqrt(eps)
    Aeps = np.block([[data.A11, data.A12], [a * data.A21, a * data.A22]])
    Beps = np.vstack([data.B1, a * data.B2])
    Ceps = np.block([[data.C11, data.C12], [b * data.C21, b * data.C22]])
    Deps = np.vstack([data.D1, b * data.D2])
    return ScaledCoefficients(eps, Aeps, Beps, Ceps, Deps)


@dataclass(frozen=True)
class ReducedCoefficients:
    As: np.ndarray
    Bs: np.ndarray
    C1s: np.ndarray
    C2s: np.ndarray
    D1s: np.ndarray
    D2s: np.ndarray
    Qs: np.ndarray
    Ls: np.ndarray
    Rs: np.ndarray


def a22_inverse(data):
    with np.errstate(divide="ignore"):
        cond = np.linalg.cond(data.A22)
    if not np.isfinite(cond) or cond > A22_COND_LIMIT:
        raise SingularA22(f"A22 is singular or ill-conditioned (cond={cond:.3e})")
    return np.linalg.inv(data.A22)


def reduced_coefficients(data):
    """Coefficients of the reduced (epsilon = 0) slow problem."""
    Ai = a22_inverse(data)
    AiA21 = Ai @ data.A21
    AiB2 = Ai @ data.B2
    Q12, Q22 = data.Q12, data.Q22
    As = data.A11 - data.A12 @ AiA21
    Bs = data.B1 - data.A12 @ AiB2
    C1s = data.C11 - data.C12 @ AiA21
    C2s = data.C21 - data.C22 @ AiA21
    D1s = data.D1 - data.C12 @ AiB2
    D2s = data.D2 - data.C22 @ AiB2
    Qs = (data.Q11 - Q12 @ AiA21 - AiA21.T @ Q12.T
          + AiA21.T @ Q22 @ AiA21)
    Ls = AiB2.T @ (Q22 @ AiA21 - Q12.T)
    Rs = data.R + AiB2.T @ Q22 @ AiB2
    return ReducedCoefficients(As, Bs, C1s, C2s, D1s, D2s, sym(Qs), Ls, sym(Rs))


def canonical_case(name="S1"):
    """Reference scalar instances used throughout the tests and docs.

    ``S1``: A11=0, A12=A21=1, A22=-1, B1=B2=1, no noise, Q=I, R=1, T=1.
    ``S2``: S1 with multiplicative noise C11=0.2, C12=0.1, C21=0.1,
    C22=0.5, D1=0.1, D2=0.2.
    """
    name = name.upper()
    one = [[1.0]]
    zero = [[0.0]]
    base = dict(n1=1, n2=1, k=1, A11=zero, A12=one, A21=one, A22=[[-1.0]],
                B1=one, B2=one, C11=zero, C12=zero, C21=zero, C22=zero,
                D1=zero, D2=zero, Q=np.eye(2), R=one, T=1.0)
    if name == "S1":
        return ProblemData(**base)
    if name == "S2":
        base.update(C11=[[0.2]], C12=[[0.1]], C21=[[0.1]], C22=[[0.5]],
                    D1=[[0.1]], D2=[[0.2]])
        return ProblemData(**base)
    raise KeyError(f"unknown canonical case {name!r}")
