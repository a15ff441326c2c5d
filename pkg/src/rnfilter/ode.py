"""Adaptive Dormand-Prince 5(4) integration with Hermite dense output.

Every deterministic evolution in the package (rate equations, truncated
master equations, filter prediction steps) goes through :func:`integrate`,
so all filters share the same error control.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# Dormand-Prince coefficients
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_A_MAT = np.zeros((7, 7))
for _s, _row in enumerate(_A):
    _A_MAT[_s, :len(_row)] = _row
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

_SAFETY = 0.9
_ALPHA = 0.7 / 5  # PI controller exponents (Gustafsson)
_BETA = 0.4 / 5
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


class IntegrationError(RuntimeError):
    """Integration could not reach the requested end time."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t:.17g}")
        self.t = t


class StepUnderflowError(IntegrationError):
    pass


class MaxStepsError(IntegrationError):
    pass


class NonFiniteError(IntegrationError):
    pass


@dataclass(frozen=True)
class StepControl:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    h_init: float | None = None
    h_min: float = 1e-12
    max_steps: int = 1_000_000
    h_max: float = np.inf

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.h_init is not None and not self.h_min < self.h_init:
            raise ValueError("h_min must be smaller than h_init")

    def tightened(self, factor: float = 0.5) -> StepControl:
        return StepControl(self.abs_tol * factor, self.rel_tol * factor, self.h_init,
                           self.h_min, self.max_steps, self.h_max)


@dataclass
class DenseTrail:
    """Solution sampled on a caller-supplied output grid."""

    times: np.ndarray
    states: np.ndarray
    n_accepted: int = 0
    n_rejected: int = 0


def _stages(rhs, t, y, h, k0):
    """All seven stage derivatives as rows of a 7 x n array (FSAL: row 6 is f(t + h, y5))."""
    K = np.empty((7, y.size))
    K[0] = k0
    # overflow in a trial stage surfaces as a non-finite error estimate
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(1, 7):
            K[s] = rhs(t + _C[s] * h, y + h * (_A_MAT[s, :s] @ K[:s]))
    return K


def _initial_step(rhs, t0, y0, f0, direction_span, ctrl, order=5):
    scale = ctrl.abs_tol + ctrl.rel_tol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    f1 = rhs(t0 + h0, y0 + h0 * f0)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1, direction_span)


def _hermite(t, t_a, t_b, y_a, y_b, f_a, f_b):
    h = t_b - t_a
    s = (np.asarray(t) - t_a) / h
    s = s[:, None]
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y_a + h10 * h * f_a + h01 * y_b + h11 * h * f_b


def integrate(rhs: Callable[[float, np.ndarray], np.ndarray], y0, t0: float, t1: float,
              ctrl: StepControl | None = None, out_grid: Sequence[float] | None = None):
    """Integrate ``dy/dt = rhs(t, y)`` from ``t0`` to ``t1``.

    Returns ``(y(t1), DenseTrail)``; the trail holds the solution at every
    ``out_grid`` time inside ``[t0, t1]``.

    Raises:
        StepUnderflowError: step size fell below ``ctrl.h_min``.
        MaxStepsError: more than ``ctrl.max_steps`` steps attempted.
        NonFiniteError: ``rhs`` returned NaN or infinity.
    """
    ctrl = ctrl or StepControl()
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    y = np.array(y0, dtype=float)
    grid = np.asarray(out_grid if out_grid is not None else [], dtype=float)
    grid = grid[(grid >= t0) & (grid <= t1)]
    trail_t, trail_y = [], []
    if grid.size and grid[0] == t0:
        trail_t.append(grid[:1])
        trail_y.append(y[None, :].copy())
        grid = grid[1:]
    gi = 0

    t = float(t0)
    f = np.asarray(rhs(t, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise NonFiniteError("non-finite derivative", t)
    span = t1 - t0
    if span == 0:
        return y, _trail(trail_t, trail_y, y.size, 0, 0)

    h = ctrl.h_init if ctrl.h_init is not None else _initial_step(rhs, t, y, f, span, ctrl)
    h = min(h, ctrl.h_max)
    err_prev = 1e-4
    steps = 0
    rejected = 0
    while t < t1:
        if steps >= ctrl.max_steps:
            raise MaxStepsError("maximum number of steps exceeded", t)
        last = t + h >= t1 - 1e-14 * max(1.0, abs(t1))
        if last:
            h = t1 - t
        k = _stages(rhs, t, y, h, f)
        steps += 1
        with np.errstate(over="ignore", invalid="ignore"):
            y_new = y + h * (_B5 @ k)
        f_new = k[6]
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
            err = np.inf
        else:
            err_vec = h * (_E @ k)
            scale = ctrl.abs_tol + ctrl.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.max(np.abs(err_vec) / scale))
        if err <= 1.0:
            t_new = t1 if last else t + h
            if gi < grid.size:
                hi = np.searchsorted(grid, t_new, side="right")
                if hi > gi:
                    pts = grid[gi:hi]
                    trail_t.append(pts)
                    trail_y.append(_hermite(pts, t, t_new, y, y_new, f, f_new))
                    gi = hi
            t, y, f = t_new, y_new, f_new
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * err ** -_ALPHA * err_prev ** _BETA
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = max(err, 1e-4)
            h = min(h * factor, ctrl.h_max)
        else:
            rejected += 1
            finite = np.isfinite(err)
            factor = max(_MIN_FACTOR, _SAFETY * err ** -_ALPHA) if finite else _MIN_FACTOR
            h *= factor
            if h < ctrl.h_min:
                if not finite:
                    raise NonFiniteError("non-finite derivative", t)
                raise StepUnderflowError("step size underflow", t)
    return y, _trail(trail_t, trail_y, y.size, steps - rejected, rejected)


def _trail(times, states, dim, accepted, rejected):
    if not times:
        return DenseTrail(np.empty(0), np.empty((0, dim)), accepted, rejected)
    return DenseTrail(np.concatenate(times), np.vstack(states), accepted, rejected)


def integrate_fixed(rhs, y0, t0: float, t1: float, n_steps: int) -> np.ndarray:
    """Fixed-step fifth-order Dormand-Prince propagation (for order checks)."""
    y = np.array(y0, dtype=float)
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k = _stages(rhs, t, y, h, np.asarray(rhs(t, y), dtype=float))
        y = y + h * (_B5 @ k)
        t += h
    return y
