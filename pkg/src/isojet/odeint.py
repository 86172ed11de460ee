"""Adaptive explicit Runge-Kutta integration (Dormand-Prince 5(4)).

The stepper is shape-agnostic: the state may be a float vector (point
geodesics) or a 2-D array of truncated power-series coefficients (jet
transport); only elementwise arithmetic and max-abs norms are used.
"""

import numpy as np


class IntegrationError(RuntimeError):
    pass


class StepUnderflow(IntegrationError):
    pass


class RegionExit(IntegrationError):
    def __init__(self, message, state=None, s=None):
        super().__init__(message)
        self.state = state
        self.s = s


# Dormand-Prince 5(4) tableau; row 7 equals the 5th order weights (FSAL).
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
])
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])
_ERR = _B5 - _B4


def rk45(rhs, y0, s0, s1, rtol=1e-10, atol=1e-12, max_steps=100_000,
         guard=None, checkpoints=None, first_step=None):
    """Integrate dy/ds = rhs(s, y) from s0 to s1 (s1 > s0).

    guard(y) may raise RegionExit to abort (checked on accepted steps).
    If ``checkpoints`` is given (sorted interior values of s), the solver
    lands on each exactly and returns (y_final, [y at each checkpoint]).
    """
    y = np.array(y0, dtype=float)
    s = float(s0)
    span = float(s1) - s
    if span <= 0.0:
        raise IntegrationError("rk45 requires s1 > s0")
    targets = list(checkpoints) if checkpoints is not None else []
    captured = []
    h = first_step if first_step is not None else span / 16.0
    k = [None] * 7
    k[0] = rhs(s, y)
    scale_floor = atol
    for _ in range(max_steps):
        remaining = float(s1) - s
        if remaining <= 1e-14 * span:
            break
        next_stop = targets[len(captured)] if len(captured) < len(targets) else s1
        h = min(h, next_stop - s) if next_stop - s > 0 else remaining
        h = min(h, remaining)
        if h < 1e-15 * span:
            raise StepUnderflow(f"step size underflow at s={s:.6g}")
        for i in range(1, 6):
            yi = y + h * np.tensordot(_A[i, :i], np.stack(k[:i]), axes=1)
            k[i] = rhs(s + _C[i] * h, yi)
        ynew = y + h * np.tensordot(_B5[:6], np.stack(k[:6]), axes=1)
        k[6] = rhs(s + h, ynew)
        err_vec = h * np.tensordot(_ERR, np.stack(k), axes=1)
        tol = scale_floor + rtol * np.maximum(np.abs(y), np.abs(ynew))
        err = float(np.max(np.abs(err_vec) / tol))
        if err <= 1.0:
            s += h
            y = ynew
            k[0] = k[6]  # FSAL
            if guard is not None:
                guard(y)
            while len(captured) < len(targets) and s >= targets[len(captured)] - 1e-13 * span:
                captured.append(y.copy())
        factor = 0.9 * err ** -0.2 if err > 0.0 else 5.0
        h *= min(5.0, max(0.2, factor))
    else:
        raise IntegrationError("rk45 exceeded max_steps")
    if checkpoints is not None:
        while len(captured) < len(targets):
            captured.append(y.copy())
        return y, captured
    return y
