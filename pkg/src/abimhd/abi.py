"""Solver and diagnostics for the augmented 10x10 Born-Infeld system.

State is the conservative tuple (h, B, D, P) on the torus grid: energy
density h > 0, magnetic induction B, electric displacement D and momentum
(Poynting) P, with fluxes

    dt h = -div P
    dt B = -curl((B x P + D) / h)
    dt D = -curl((D x P - B) / h)
    dt P = -div((P (x) P - B (x) B - D (x) D - I) / h)

The algebraic relations P = D x B and h = sqrt(1 + B^2 + D^2 + P^2) are
propagated invariants of smooth solutions: they are monitored, never
projected. The symmetric quadratic form in the variables
(tau, b, d, v) = (1/h, B/h, D/h, P/h) is available as `nc_rhs`, together
with its string (tau = d = 0) and inviscid Burgers (tau = b = d = 0)
reductions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .fields import (
    DEFAULT_H_FLOOR,
    GridSpec,
    ScalarField,
    VectorField3,
    guarded_reciprocal,
    require_positive,
)
from .stepping import StepSizeError, check_blowup, rk4_step

__all__ = [
    "AbiState",
    "AbiTendency",
    "ConstraintNorms",
    "NonConsState",
    "NcTendency",
    "abi_rhs",
    "abi_step",
    "abi_cfl_dt",
    "abi_run",
    "abi_constraints",
    "abi_entropy",
    "galilean_boost",
    "nc_rhs",
    "nc_from_abi",
    "abi_tendency_from_nc",
    "AbiTrajectory",
]

CFL_SAFETY = 0.4


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def vec_norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(a[0] ** 2 + a[1] ** 2 + a[2] ** 2)


@dataclass(frozen=True)
class AbiState:
    h: ScalarField
    B: VectorField3
    D: VectorField3
    P: VectorField3

    def __post_init__(self):
        g = self.h.grid
        if not (self.B.grid == g and self.D.grid == g and self.P.grid == g):
            raise ValueError("all state fields must share one grid")
        require_positive(self.h.values, 0.0, "h")

    @property
    def grid(self) -> GridSpec:
        return self.h.grid

    @classmethod
    def consistent(cls, B: VectorField3, D: VectorField3) -> "AbiState":
        """Build the state satisfying both algebraic constraints exactly."""
        P = cross3(D.values, B.values)
        nsq = (B.values ** 2).sum(0) + (D.values ** 2).sum(0) + (P ** 2).sum(0)
        h = np.sqrt(1.0 + nsq)
        g = B.grid
        return cls(ScalarField(g, h), B, D, VectorField3(g, P))

    def sup_scale(self) -> float:
        return max(self.h.sup_norm(), self.B.sup_norm(),
                   self.D.sup_norm(), self.P.sup_norm())


@dataclass(frozen=True)
class AbiTendency:
    dh: np.ndarray
    dB: np.ndarray
    dD: np.ndarray
    dP: np.ndarray


def _rhs_arrays(g: GridSpec, h: np.ndarray, B: np.ndarray, D: np.ndarray,
                P: np.ndarray, h_floor: float) -> tuple[np.ndarray, ...]:
    r = guarded_reciprocal(h, h_floor)
    da = g.dealias_arr
    flux_B = da((cross3(B, P) + D) * r)
    flux_D = da((cross3(D, P) - B) * r)
    dh = -g.div_arr(P)
    dB = -g.curl_arr(flux_B)
    dD = -g.curl_arr(flux_D)
    grad_r = g.grad_arr(da(r))
    dP = np.empty_like(P)
    for i in range(3):
        row = da((P[i] * P - B[i] * B - D[i] * D) * r)
        dP[i] = -g.div_arr(row) + grad_r[i]
    return dh, dB, dD, dP


def abi_rhs(s: AbiState, h_floor: float = DEFAULT_H_FLOOR) -> AbiTendency:
    g = s.grid
    dh, dB, dD, dP = _rhs_arrays(g, s.h.values, s.B.values, s.D.values,
                                 s.P.values, h_floor)
    return AbiTendency(dh, dB, dD, dP)


def abi_cfl_dt(s: AbiState, h_floor: float = DEFAULT_H_FLOOR) -> float:
    """Step bound 0.4 dx / (1 + max(|P/h| + |B/h| + |D/h| + 1/h))."""
    r = guarded_reciprocal(s.h.values, h_floor)
    speed = (vec_norm(s.P.values) + vec_norm(s.B.values)
             + vec_norm(s.D.values)) * r + r
    return CFL_SAFETY * s.grid.spacing / (1.0 + float(speed.max()))


def abi_step(s: AbiState, dt: float, h_floor: float = DEFAULT_H_FLOOR) -> AbiState:
    dt_max = abi_cfl_dt(s, h_floor)
    if dt > dt_max * (1.0 + 1e-12):
        raise StepSizeError(
            f"dt={dt:g} violates the advective step bound {dt_max:g}", dt_max)
    g = s.grid

    def rhs(y):
        return _rhs_arrays(g, *y, h_floor)

    h, B, D, P = rk4_step((s.h.values, s.B.values, s.D.values, s.P.values),
                          dt, rhs)
    if h.min() <= 0.0:
        raise StepSizeError(
            f"h lost positivity after a step of dt={dt:g}", dt / 2.0)
    return AbiState(ScalarField(g, h), VectorField3(g, B),
                    VectorField3(g, D), VectorField3(g, P))


@dataclass(frozen=True)
class ConstraintNorms:
    """Sup norms of the four monitored algebraic/differential constraints."""

    poynting: float       # || P - D x B ||_inf
    energy_density: float  # || h - sqrt(1 + B^2 + D^2 + P^2) ||_inf
    div_B: float
    div_D: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.poynting, self.energy_density, self.div_B, self.div_D)


def abi_constraints(s: AbiState) -> ConstraintNorms:
    g = s.grid
    B, D, P = s.B.values, s.D.values, s.P.values
    nsq = (B ** 2).sum(0) + (D ** 2).sum(0) + (P ** 2).sum(0)
    return ConstraintNorms(
        poynting=float(np.abs(P - cross3(D, B)).max()),
        energy_density=float(np.abs(s.h.values - np.sqrt(1.0 + nsq)).max()),
        div_B=float(np.abs(g.div_arr(B)).max()),
        div_D=float(np.abs(g.div_arr(D)).max()),
    )


def abi_entropy(s: AbiState, h_floor: float = DEFAULT_H_FLOOR) -> float:
    """Conserved convex entropy integral((1 + B^2 + D^2 + P^2) / (2h))."""
    r = guarded_reciprocal(s.h.values, h_floor)
    nsq = ((s.B.values ** 2).sum(0) + (s.D.values ** 2).sum(0)
           + (s.P.values ** 2).sum(0))
    return float(((1.0 + nsq) * r * 0.5).mean())


def galilean_boost(s: AbiState, V, t: float) -> AbiState:
    """Boost by constant velocity V: sample at x + V t and shift P by -V h."""
    g = s.grid
    delta = np.asarray(V, dtype=float) * t
    h = g.shift_arr(s.h.values, delta)
    B = g.shift_arr(s.B.values, delta)
    D = g.shift_arr(s.D.values, delta)
    P = g.shift_arr(s.P.values, delta)
    for i in range(3):
        P[i] -= float(V[i]) * h
    return AbiState(ScalarField(g, h), VectorField3(g, B),
                    VectorField3(g, D), VectorField3(g, P))


@dataclass
class AbiTrajectory:
    times: list[float]
    states: list[AbiState]
    diagnostics: list[tuple[float, ...]]  # rows: t, entropy, 4 norms, min h, max |v|

    DIAG_HEADER = ("t", "entropy", "poynting_defect", "energy_defect",
                   "div_B", "div_D", "min_h", "max_v")


def abi_run(s0: AbiState, dt: float, n_steps: int,
            h_floor: float = DEFAULT_H_FLOOR, save_every: int = 1,
            blowup_factor: float = 10.0) -> AbiTrajectory:
    """March n_steps of RK4, saving states every `save_every` steps.

    A blow-up detector terminates the run (with a diagnostic) as soon as any
    field's sup norm exceeds `blowup_factor` times the initial scale.
    """
    scale0 = s0.sup_scale()

    def diag_row(t: float, s: AbiState) -> tuple[float, ...]:
        c = abi_constraints(s)
        vmax = float((vec_norm(s.P.values)
                      * guarded_reciprocal(s.h.values, h_floor)).max())
        return (t, abi_entropy(s, h_floor), *c.as_tuple(),
                float(s.h.values.min()), vmax)

    times = [0.0]
    states = [s0]
    diags = [diag_row(0.0, s0)]
    s = s0
    for k in range(1, n_steps + 1):
        s = abi_step(s, dt, h_floor)
        check_blowup(s.sup_scale(), scale0, blowup_factor, "abi_run")
        t = k * dt
        diags.append(diag_row(t, s))
        if k % save_every == 0 or k == n_steps:
            times.append(t)
            states.append(s)
    return AbiTrajectory(times, states, diags)


# ----------------------------------------------------------------------
# Non-conservative symmetric form and its reductions.
# ----------------------------------------------------------------------

Reduction = Literal["none", "string", "burgers"]


@dataclass(frozen=True)
class NonConsState:
    tau: ScalarField
    b: VectorField3
    d: VectorField3
    v: VectorField3

    @property
    def grid(self) -> GridSpec:
        return self.tau.grid


@dataclass(frozen=True)
class NcTendency:
    dtau: np.ndarray
    db: np.ndarray
    dd: np.ndarray
    dv: np.ndarray


def _advect(g: GridSpec, vel: np.ndarray, f: np.ndarray) -> np.ndarray:
    """(vel . grad) f for a vector field f, dealiased."""
    jac = g.jacobian_arr(f)
    out = np.einsum("jxyz,ijxyz->ixyz", vel, jac)
    return g.dealias_arr(out)


def nc_rhs(s: NonConsState, reduction: Reduction = "none") -> NcTendency:
    g = s.grid
    da = g.dealias_arr
    v = s.v.values
    zeros_s = np.zeros(g.shape)
    zeros_v = np.zeros((3, *g.shape))
    if reduction == "burgers":
        return NcTendency(zeros_s, zeros_v, zeros_v, -_advect(g, v, v))
    b = s.b.values
    if reduction == "string":
        db = -_advect(g, v, b) + _advect(g, b, v)
        dv = -_advect(g, v, v) + _advect(g, b, b)
        return NcTendency(zeros_s, db, zeros_v, dv)
    if reduction != "none":
        raise ValueError(f"unknown reduction {reduction!r}")
    tau = s.tau.values
    d = s.d.values
    grad_tau = g.grad_arr(tau)
    db = -_advect(g, v, b) + _advect(g, b, v) - da(tau * g.curl_arr(d))
    dd = -_advect(g, v, d) + _advect(g, d, v) + da(tau * g.curl_arr(b))
    dtau = -da((v * grad_tau).sum(0)) + da(tau * g.div_arr(v))
    dv = (-_advect(g, v, v) + _advect(g, b, b) + _advect(g, d, d)
          + da(tau * grad_tau))
    return NcTendency(dtau, db, dd, dv)


def nc_from_abi(s: AbiState, h_floor: float = DEFAULT_H_FLOOR) -> NonConsState:
    g = s.grid
    r = guarded_reciprocal(s.h.values, h_floor)
    return NonConsState(ScalarField(g, r),
                        VectorField3(g, s.B.values * r),
                        VectorField3(g, s.D.values * r),
                        VectorField3(g, s.P.values * r))


def abi_tendency_from_nc(s: NonConsState, t: NcTendency,
                         tau_floor: float = DEFAULT_H_FLOOR) -> AbiTendency:
    """Chain rule back to conservative tendencies: h = 1/tau, B = b/tau, ..."""
    tau = s.tau.values
    require_positive(tau, tau_floor, "tau")
    inv = 1.0 / tau
    inv2 = inv * inv
    dh = -t.dtau * inv2
    dB = t.db * inv - s.b.values * (t.dtau * inv2)
    dD = t.dd * inv - s.d.values * (t.dtau * inv2)
    dP = t.dv * inv - s.v.values * (t.dtau * inv2)
    return AbiTendency(dh, dB, dD, dP)
