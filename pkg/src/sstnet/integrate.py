"""Fixed-step explicit Runge-Kutta integration."""

from __future__ import annotations

from typing import Callable

import numpy as np


def rk4_step(f: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step of ``dy/dt = f(t, y)``."""
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4(f: Callable, y0, t0: float, dt: float, steps: int, every: int = 1):
    """Integrate ``steps`` RK4 steps; returns sample times and states.

    Every ``every``-th state is recorded, always including the first.
    """
    y = np.array(y0, dtype=float)
    ts, ys = [t0], [y.copy()]
    t = t0
    for k in range(1, steps + 1):
        y = rk4_step(f, t, y, dt)
        t = t0 + k * dt
        if k % every == 0 or k == steps:
            ts.append(t)
            ys.append(y.copy())
    return np.array(ts), np.array(ys)
