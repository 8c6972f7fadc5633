"""Shared explicit time-stepping helpers and solver error types."""

from __future__ import annotations

from typing import Callable

import numpy as np


class StepSizeError(ValueError):
    """Step rejected; carries a suggested stable step size."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class BlowUpError(RuntimeError):
    """Sup-norm growth exceeded the blow-up threshold mid-run."""


State = tuple[np.ndarray, ...]


def rk4_step(y: State, dt: float, rhs: Callable[[State], State]) -> State:
    """One classical Runge-Kutta step on a tuple of arrays."""
    k1 = rhs(y)
    k2 = rhs(tuple(a + 0.5 * dt * b for a, b in zip(y, k1)))
    k3 = rhs(tuple(a + 0.5 * dt * b for a, b in zip(y, k2)))
    k4 = rhs(tuple(a + dt * b for a, b in zip(y, k3)))
    return tuple(a + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))


def check_blowup(sup_now: float, sup_initial: float, factor: float = 10.0,
                 context: str = "run") -> None:
    limit = factor * max(sup_initial, 1.0)
    if sup_now > limit:
        raise BlowUpError(
            f"{context}: sup norm {sup_now:.6g} exceeded {factor:g}x the "
            f"initial scale {sup_initial:.6g}; terminating")
