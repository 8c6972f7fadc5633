"""Darcy-MHD solver: induction equation with a generalized Darcy closure.

The evolved pair is (h > 0, B div-free); displacement and momentum are
derived by the constitutive laws

    D = curl(B / h),     P = div(B (x) B / h) + grad(1 / h),

and the dynamics is

    dt h = -div P,       dt B = -curl(B x (P/h) + D/h).

B is updated through the curl, so div B = 0 is preserved structurally.
The energy integral((B^2 + 1) / (2h)) decreases along smooth runs with
dissipation rate integral((D^2 + P^2) / h); `energy_balance_residual`
monitors the discrete defect of that identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abi import cross3, vec_norm
from .fields import (
    DEFAULT_H_FLOOR,
    GridSpec,
    ScalarField,
    VectorField3,
    guarded_reciprocal,
)
from .stepping import StepSizeError, check_blowup, rk4_step

__all__ = [
    "DmhdState",
    "DmhdTrajectory",
    "constitutive",
    "dmhd_rhs",
    "dmhd_step",
    "dmhd_cfl_dt",
    "dmhd_run",
    "energy",
    "dissipation",
    "energy_balance_residual",
]

PARABOLIC_SAFETY = 0.1


@dataclass(frozen=True)
class DmhdState:
    h: ScalarField
    B: VectorField3

    def __post_init__(self):
        if self.B.grid != self.h.grid:
            raise ValueError("h and B must share one grid")

    @property
    def grid(self) -> GridSpec:
        return self.h.grid

    def div_B_sup(self) -> float:
        return float(np.abs(self.grid.div_arr(self.B.values)).max())

    def sup_scale(self) -> float:
        return max(self.h.sup_norm(), self.B.sup_norm())


def _constitutive_arrays(g: GridSpec, h: np.ndarray, B: np.ndarray,
                         h_floor: float) -> tuple[np.ndarray, np.ndarray]:
    r = guarded_reciprocal(h, h_floor)
    da = g.dealias_arr
    D = g.curl_arr(da(B * r))
    rd = da(r)
    P = g.grad_arr(rd)
    for i in range(3):
        P[i] += g.div_arr(da(B[i] * B * r))
    return D, P


def constitutive(s: DmhdState,
                 h_floor: float = DEFAULT_H_FLOOR) -> tuple[VectorField3, VectorField3]:
    D, P = _constitutive_arrays(s.grid, s.h.values, s.B.values, h_floor)
    return VectorField3(s.grid, D), VectorField3(s.grid, P)


def _rhs_arrays(g: GridSpec, h: np.ndarray, B: np.ndarray,
                h_floor: float) -> tuple[np.ndarray, np.ndarray]:
    D, P = _constitutive_arrays(g, h, B, h_floor)
    r = guarded_reciprocal(h, h_floor)
    da = g.dealias_arr
    v = da(P * r)
    d = da(D * r)
    dh = -g.div_arr(P)
    dB = -g.curl_arr(da(cross3(B, v)) + d)
    return dh, dB


def dmhd_rhs(s: DmhdState,
             h_floor: float = DEFAULT_H_FLOOR) -> tuple[ScalarField, VectorField3]:
    dh, dB = _rhs_arrays(s.grid, s.h.values, s.B.values, h_floor)
    return ScalarField(s.grid, dh), VectorField3(s.grid, dB)


def dmhd_cfl_dt(s: DmhdState, h_floor: float = DEFAULT_H_FLOOR) -> float:
    """Parabolic step bound c dx^2 min(h)^2 / (1 + max|B/h|)^2.

    The induction diffusivity scales like 1/h^2 and the spectral cutoff
    like 1/dx, hence the quadratic dependence on both.
    """
    h = s.h.values
    r = guarded_reciprocal(h, h_floor)
    bmax = float((vec_norm(s.B.values) * r).max())
    hmin = float(h.min())
    return (PARABOLIC_SAFETY * s.grid.spacing ** 2 * hmin ** 2
            / (1.0 + bmax) ** 2)


def dmhd_step(s: DmhdState, dt: float,
              h_floor: float = DEFAULT_H_FLOOR) -> DmhdState:
    dt_max = dmhd_cfl_dt(s, h_floor)
    if dt > dt_max * (1.0 + 1e-12):
        raise StepSizeError(
            f"dt={dt:g} violates the parabolic step bound {dt_max:g}", dt_max)
    g = s.grid

    def rhs(y):
        return _rhs_arrays(g, y[0], y[1], h_floor)

    h, B = rk4_step((s.h.values, s.B.values), dt, rhs)
    if h.min() <= 0.0:
        raise StepSizeError(
            f"h lost positivity after a step of dt={dt:g}", dt / 2.0)
    return DmhdState(ScalarField(g, h), VectorField3(g, B))


def energy(s: DmhdState, h_floor: float = DEFAULT_H_FLOOR) -> float:
    r = guarded_reciprocal(s.h.values, h_floor)
    return float((((s.B.values ** 2).sum(0) + 1.0) * r * 0.5).mean())


def dissipation(s: DmhdState, h_floor: float = DEFAULT_H_FLOOR) -> float:
    D, P = _constitutive_arrays(s.grid, s.h.values, s.B.values, h_floor)
    r = guarded_reciprocal(s.h.values, h_floor)
    return float((((D ** 2).sum(0) + (P ** 2).sum(0)) * r).mean())


@dataclass
class DmhdTrajectory:
    times: list[float]
    states: list[DmhdState]
    diagnostics: list[tuple[float, ...]]  # t, energy, dissipation, mass, divB, min h

    DIAG_HEADER = ("t", "energy", "dissipation", "mass", "div_B", "min_h")

    def energies(self) -> np.ndarray:
        return np.array([row[1] for row in self.diagnostics])


def dmhd_run(s0: DmhdState, dt: float, n_steps: int,
             h_floor: float = DEFAULT_H_FLOOR, save_every: int = 1,
             blowup_factor: float = 10.0) -> DmhdTrajectory:
    scale0 = s0.sup_scale()

    def diag_row(t: float, s: DmhdState) -> tuple[float, ...]:
        return (t, energy(s, h_floor), dissipation(s, h_floor),
                float(s.h.values.mean()), s.div_B_sup(),
                float(s.h.values.min()))

    times = [0.0]
    states = [s0]
    diags = [diag_row(0.0, s0)]
    s = s0
    for k in range(1, n_steps + 1):
        s = dmhd_step(s, dt, h_floor)
        check_blowup(s.sup_scale(), scale0, blowup_factor, "dmhd_run")
        t = k * dt
        diags.append(diag_row(t, s))
        if k % save_every == 0 or k == n_steps:
            times.append(t)
            states.append(s)
    return DmhdTrajectory(times, states, diags)


def energy_balance_residual(traj: DmhdTrajectory, dt: float,
                            h_floor: float = DEFAULT_H_FLOOR) -> np.ndarray:
    """Per-step defect of the discrete energy identity.

    r_k = (E_{k+1} - E_k)/dt + (dissipation_k + dissipation_{k+1})/2, using
    the endpoint average as the second-order midpoint dissipation quadrature.
    Requires a trajectory saved at every step (uniform dt).
    """
    diags = traj.diagnostics
    e = np.array([row[1] for row in diags])
    q = np.array([row[2] for row in diags])
    return (e[1:] - e[:-1]) / dt + 0.5 * (q[1:] + q[:-1])
