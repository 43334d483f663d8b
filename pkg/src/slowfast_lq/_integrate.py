"""Adaptive RK45 stepping with per-step hooks and cubic Hermite dense output."""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import RK45
from scipy.interpolate import CubicHermiteSpline

from .errors import StepSizeUnderflow

MIN_STEP_FRACTION = 1e-14


@dataclass(frozen=True)
class StepControl:
    """Tolerances for the adaptive stepper.

    ``max_step`` of ``None`` lets each solver pick its own cap.
    """
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: Optional[float] = None


def integrate(fun, y0, length, control, max_step, on_step=None):
    """Integrate ``dy/ds = fun(s, y)`` from s=0 to s=length.

    ``on_step(s, y)`` is called after every accepted step (and at s=0) and
    may raise to abort.  Returns arrays ``s`` (M,), ``y`` (M, d) and the
    derivative ``dy`` (M, d) at every accepted point.
    """
    y0 = np.asarray(y0, dtype=float)
    solver = RK45(fun, 0.0, y0, length, max_step=max_step,
                  rtol=control.rtol, atol=control.atol)
    ss, ys, fs = [0.0], [y0.copy()], [np.asarray(fun(0.0, y0), dtype=float)]
    if on_step is not None:
        on_step(0.0, y0)
    min_step = MIN_STEP_FRACTION * length
    while solver.status == "running":
        message = solver.step()
        if solver.status == "failed":
            raise StepSizeUnderflow(f"stepper failed at s={solver.t:.6g}: {message}",
                                    time=solver.t)
        if solver.t < length and solver.step_size < min_step:
            raise StepSizeUnderflow(
                f"step size {solver.step_size:.3e} below {min_step:.3e}", time=solver.t)
        ss.append(solver.t)
        ys.append(solver.y.copy())
        fs.append(solver.f.copy())
        if on_step is not None:
            on_step(solver.t, solver.y)
    return np.asarray(ss), np.vstack(ys), np.vstack(fs)


class HermiteDense:
    """Piecewise cubic Hermite interpolant over stored samples and slopes."""

    def __init__(self, x, y, dydx):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self._spline = CubicHermiteSpline(self.x, self.y, dydx, axis=0)

    def __call__(self, x):
        """Interpolated values; stored samples are returned exactly at knots."""
        x = np.clip(np.asarray(x, dtype=float), self.x[0], self.x[-1])
        out = self._spline(x)
        idx = np.clip(np.searchsorted(self.x, x), 0, len(self.x) - 1)
        hit = self.x[idx] == x
        if np.ndim(x) == 0:
            return self.y[idx].copy() if hit else out
        out[hit] = self.y[idx[hit]]
        return out

    def derivative(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.x[0], self.x[-1])
        return self._spline(x, 1)
