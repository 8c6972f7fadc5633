"""Finite-dimensional approximation: momentum relaxation on a trigonometric
space coupled with exact transport of the scalar density and induction field.

The velocity-like pair (d, v) lives in X_N, the 6N-dimensional span of
sqrt(2) sin(2 pi k.x) and sqrt(2) cos(2 pi k.x) over the first N wavevectors
of the positive half-lattice, ordered by (|k|^2, lexicographic). Their
momentum coefficients chi = <h d, basis> evolve by the projected relaxation
system

    eps [ dt(h d) + div(h (d (x) v - v (x) d)) + (-Lap)^l d ] + h d = curl(B/h)
    eps [ dt(h v) + div(h v (x) v) - (h d . grad) d + (-Lap)^l v ] + h v
        = div(B (x) B / h) + grad(1/h)

while (h, B) advance classically by the continuity and induction equations.
Recovering d and v from their momentum coefficients requires the weighted
Gram (mass) operator <rho . , .> on X_N, which is block-diagonal over the
three components with a single symmetric positive-definite 2N x 2N block.

Two drivers are provided: `galerkin_run` (method-of-lines RK4 on the
coefficient system, the default) and `picard_iterate` (the fixed-point map
z -> K[z] over subintervals, with characteristics transport of (h, B) and
time-quadrature of the sources; kept for small N where it mirrors the
constructive existence argument). The energy

    Lambda_n = integral((1 + B^2)/(2h) + eps h (v^2 + d^2)/2)

decays with dissipation integral(h(v^2 + d^2)) plus the hyperviscous
integrals, and is monitored every step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .abi import cross3
from .dmhd import _constitutive_arrays
from .fields import (
    DEFAULT_H_FLOOR,
    FieldDataError,
    GridSpec,
    PositivityError,
    ScalarField,
    VectorField3,
    guarded_reciprocal,
)
from .stepping import BlowUpError, StepSizeError, check_blowup, rk4_step

logger = logging.getLogger(__name__)

__all__ = [
    "BasisSpec",
    "TrigBasis",
    "GalerkinConfig",
    "GalerkinState",
    "GalerkinTrajectory",
    "CoefficientTrajectory",
    "BasisField",
    "UniformField",
    "ModalScalar",
    "ModalVector",
    "positive_wavevectors",
    "mass_apply",
    "mass_solve",
    "flow_map",
    "transport_h",
    "transport_B",
    "galerkin_rhs",
    "galerkin_stable_dt",
    "galerkin_run",
    "picard_iterate",
]


def positive_wavevectors(count: int) -> np.ndarray:
    """First `count` wavevectors of the positive half-lattice.

    The half-lattice keeps one of each +/-k pair: n1 > 0, or n1 = 0 and
    n2 > 0, or n1 = n2 = 0 and n3 > 0. Enumeration is by |k|^2 then
    lexicographic order, which fixes the basis deterministically.
    """
    radius = 1
    while True:
        cands = []
        for n1 in range(0, radius + 1):
            for n2 in range(-radius, radius + 1):
                for n3 in range(-radius, radius + 1):
                    if n1 == 0 and (n2 < 0 or (n2 == 0 and n3 <= 0)):
                        continue
                    if n1 * n1 + n2 * n2 + n3 * n3 <= radius * radius:
                        cands.append((n1, n2, n3))
        if len(cands) >= count:
            cands.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2 + k[2] ** 2, k))
            return np.array(cands[:count], dtype=int)
        radius += 1


@dataclass(frozen=True)
class BasisSpec:
    """N wavevectors from the positive half-lattice; 2N scalar functions."""

    N: int

    def __post_init__(self):
        if self.N < 1:
            raise FieldDataError("basis needs at least one wavevector")

    @cached_property
    def wavevectors(self) -> np.ndarray:
        return positive_wavevectors(self.N)

    @property
    def num_functions(self) -> int:
        return 2 * self.N

    @property
    def dim(self) -> int:
        return 6 * self.N


class TrigBasis:
    """BasisSpec bound to a grid: tables, quadrature and point evaluation."""

    def __init__(self, basis: BasisSpec, grid: GridSpec):
        self.basis = basis
        self.grid = grid
        k = basis.wavevectors
        if np.abs(k).max() >= grid.n // 2:
            raise FieldDataError(
                f"basis wavevectors reach |k_i|={np.abs(k).max()} which the "
                f"n={grid.n} grid cannot carry exactly")
        self.kvecs = k.astype(float)
        pts = np.stack([m.ravel() for m in grid.mesh], axis=1)   # (n^3, 3)
        phase = 2.0 * np.pi * (pts @ self.kvecs.T)               # (n^3, N)
        rt2 = math.sqrt(2.0)
        self.table = np.concatenate([rt2 * np.sin(phase),
                                     rt2 * np.cos(phase)], axis=1)  # (n^3, 2N)
        ksq = (self.kvecs ** 2).sum(1)
        self.lam = np.concatenate([ksq, ksq]) * (2.0 * np.pi) ** 2  # -Lap eigenvalues

    # -- grid-side operations ------------------------------------------------

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients (..., 2N) -> grid samples (..., n, n, n)."""
        vals = coeffs @ self.table.T
        return vals.reshape(*coeffs.shape[:-1], *self.grid.shape)

    def project(self, fields: np.ndarray) -> np.ndarray:
        """Dual (moment) coefficients <f, basis>: (..., n,n,n) -> (..., 2N)."""
        flat = fields.reshape(*fields.shape[:-3], self.grid.num_points)
        return (flat @ self.table) / self.grid.num_points

    def gram(self, rho: np.ndarray) -> np.ndarray:
        """Weighted Gram block <rho basis_i, basis_j>, shape (2N, 2N)."""
        w = rho.reshape(-1, 1) * self.table
        return (self.table.T @ w) / self.grid.num_points

    def orthonormality_defect(self) -> float:
        G = self.gram(np.ones(self.grid.shape))
        return float(np.abs(G - np.eye(self.basis.num_functions)).max())

    # -- point-side evaluation (exact trigonometric sums) ---------------------

    def _angles(self, points: np.ndarray) -> np.ndarray:
        return 2.0 * np.pi * (np.asarray(points, dtype=float) @ self.kvecs.T)

    def eval(self, points: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """Evaluate a vector field in X_N at points: (M,3),(3,2N)->(M,3)."""
        ang = self._angles(points)
        rt2 = math.sqrt(2.0)
        tab = np.concatenate([rt2 * np.sin(ang), rt2 * np.cos(ang)], axis=1)
        return tab @ coeffs.T

    def eval_jacobian(self, points: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """Jacobian d_j v_i at points, shape (M, 3, 3)."""
        ang = self._angles(points)
        rt2 = math.sqrt(2.0)
        dsin = rt2 * np.cos(ang)          # d/dangle of the sin table
        dcos = -rt2 * np.sin(ang)
        N = self.basis.N
        cs = coeffs[:, :N]
        cc = coeffs[:, N:]
        out = np.empty((points.shape[0], 3, 3))
        for j in range(3):
            wsin = dsin * (2.0 * np.pi * self.kvecs[:, j])
            wcos = dcos * (2.0 * np.pi * self.kvecs[:, j])
            out[:, :, j] = wsin @ cs.T + wcos @ cc.T
        return out

    def eval_div(self, points: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        jac = self.eval_jacobian(points, coeffs)
        return jac[:, 0, 0] + jac[:, 1, 1] + jac[:, 2, 2]

    def eval_curl(self, points: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        jac = self.eval_jacobian(points, coeffs)
        return np.stack([jac[:, 2, 1] - jac[:, 1, 2],
                         jac[:, 0, 2] - jac[:, 2, 0],
                         jac[:, 1, 0] - jac[:, 0, 1]], axis=1)


# ----------------------------------------------------------------------
# Weighted mass operator.
# ----------------------------------------------------------------------

def _gram_cho(tb: TrigBasis, rho: np.ndarray, rho_floor: float):
    if rho.min() <= rho_floor:
        raise PositivityError(
            f"mass operator needs rho > {rho_floor:g}, got min {rho.min():g}")
    G = tb.gram(rho)
    try:
        return cho_factor(G, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded above
        raise PositivityError(
            f"weighted Gram factorization failed (loss of positivity): {exc}")


def mass_apply(tb: TrigBasis, rho: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Momentum (dual) coefficients <rho v, basis> of v with coefficients."""
    G = tb.gram(rho)
    return coeffs @ G.T


def mass_solve(tb: TrigBasis, rho: np.ndarray, chi: np.ndarray,
               rho_floor: float = 0.0) -> np.ndarray:
    """Invert the weighted Gram operator componentwise (SPD Cholesky)."""
    cho = _gram_cho(tb, rho, rho_floor)
    return cho_solve(cho, np.atleast_2d(chi).T).T.reshape(chi.shape)


# ----------------------------------------------------------------------
# Exact evaluation of initial fields at characturistic feet.
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ModalScalar:
    """Explicit mode list (k, coefficient) of a band-limited scalar field."""

    kvecs: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def from_field(cls, f: ScalarField, rel_tol: float = 1e-14) -> "ModalScalar":
        g = f.grid
        ch = np.fft.fftn(f.values) / g.num_points
        k1 = np.fft.fftfreq(g.n, d=1.0 / g.n)
        kx, ky, kz = np.meshgrid(k1, k1, k1, indexing="ij")
        kv = np.stack([kx.ravel(), ky.ravel(), kz.ravel()], axis=1)
        c = ch.ravel()
        keep = np.abs(c) > rel_tol * np.abs(c).max()
        return cls(kv[keep], c[keep])

    def eval(self, points: np.ndarray) -> np.ndarray:
        phases = np.exp(2j * np.pi * (np.asarray(points) @ self.kvecs.T))
        return (phases @ self.coeffs).real


@dataclass(frozen=True)
class ModalVector:
    components: tuple[ModalScalar, ModalScalar, ModalScalar]

    @classmethod
    def from_field(cls, v: VectorField3, rel_tol: float = 1e-14) -> "ModalVector":
        g = v.grid
        return cls(tuple(ModalScalar.from_field(ScalarField(g, v.values[i]),
                                                rel_tol) for i in range(3)))

    def eval(self, points: np.ndarray) -> np.ndarray:
        return np.stack([c.eval(points) for c in self.components], axis=1)


# ----------------------------------------------------------------------
# Coefficient trajectories and characteristics.
# ----------------------------------------------------------------------

@dataclass
class CoefficientTrajectory:
    """Time samples of X_N coefficients with linear interpolation."""

    times: np.ndarray            # (T,), increasing
    coeffs: np.ndarray           # (T, 3, 2N)

    @classmethod
    def constant(cls, span: tuple[float, float], coeffs: np.ndarray):
        t0, t1 = span
        return cls(np.array([t0, t1]), np.stack([coeffs, coeffs]))

    def at(self, t: float) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            return self.coeffs[0]
        if t >= ts[-1]:
            return self.coeffs[-1]
        j = int(np.searchsorted(ts, t)) - 1
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1.0 - w) * self.coeffs[j] + w * self.coeffs[j + 1]


class BasisField:
    """A time-interpolated X_N field exposing exact point evaluation."""

    def __init__(self, tb: TrigBasis, traj: CoefficientTrajectory):
        self.tb = tb
        self.traj = traj

    def eval(self, t: float, pts: np.ndarray) -> np.ndarray:
        return self.tb.eval(pts, self.traj.at(t))

    def div(self, t: float, pts: np.ndarray) -> np.ndarray:
        return self.tb.eval_div(pts, self.traj.at(t))

    def jacobian(self, t: float, pts: np.ndarray) -> np.ndarray:
        return self.tb.eval_jacobian(pts, self.traj.at(t))

    def curl(self, t: float, pts: np.ndarray) -> np.ndarray:
        return self.tb.eval_curl(pts, self.traj.at(t))


class UniformField:
    """Constant drift; divergence-free with zero Jacobian and curl."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    def eval(self, t: float, pts: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.c, pts.shape).copy()

    def div(self, t: float, pts: np.ndarray) -> np.ndarray:
        return np.zeros(pts.shape[0])

    def jacobian(self, t: float, pts: np.ndarray) -> np.ndarray:
        return np.zeros((pts.shape[0], 3, 3))

    def curl(self, t: float, pts: np.ndarray) -> np.ndarray:
        return np.zeros_like(pts)


def _as_model(tb: TrigBasis, field_like):
    if isinstance(field_like, CoefficientTrajectory):
        return BasisField(tb, field_like)
    return field_like


def _flow_substeps(t: float, s: float, dt_flow: float) -> int:
    return max(1, int(math.ceil(abs(t - s) / dt_flow)))


def flow_map(tb: TrigBasis, vtraj, t: float, s: float,
             x: np.ndarray, dt_flow: float = 1e-3) -> np.ndarray:
    """Characteristic end points Phi(t, s, x) of dx/dt = v(t, x).

    `vtraj` is a CoefficientTrajectory (evaluated exactly through the
    basis) or a callable (time, points) -> velocities, e.g. for constant
    drifts outside the span. Integrates with RK4; results are wrapped
    into [0,1)^3.
    """
    if isinstance(vtraj, CoefficientTrajectory):
        model = BasisField(tb, vtraj)

        def vel(tt, p):
            return model.eval(tt, p)
    elif hasattr(vtraj, "eval"):
        def vel(tt, p):
            return vtraj.eval(tt, p)
    else:
        vel = vtraj
    pts = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    nsub = _flow_substeps(t, s, dt_flow)
    dt = (t - s) / nsub
    time = s
    for _ in range(nsub):
        k1 = vel(time, pts)
        k2 = vel(time + 0.5 * dt, pts + 0.5 * dt * k1)
        k3 = vel(time + 0.5 * dt, pts + 0.5 * dt * k2)
        k4 = vel(time + dt, pts + dt * k3)
        pts += (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        time += dt
    return pts % 1.0


def _back_characteristics(tb: TrigBasis, vtraj, t: float, pts: np.ndarray,
                          dt_flow: float):
    """March (position, J) from time t back to 0 with dJ/ds = div v.

    On return J = -integral_0^t div v(s, Phi(s, t, x)) ds, so the transported
    density is h0(pos) * exp(J).
    """
    vm = _as_model(tb, vtraj)
    y_pos = np.array(pts, dtype=float)
    J = np.zeros(len(y_pos))
    nsub = _flow_substeps(0.0, t, dt_flow)
    dt = (0.0 - t) / nsub
    time = t

    def stage(p, tt):
        return vm.eval(tt, p), vm.div(tt, p)

    for _ in range(nsub):
        v1, g1 = stage(y_pos, time)
        v2, g2 = stage(y_pos + 0.5 * dt * v1, time + 0.5 * dt)
        v3, g3 = stage(y_pos + 0.5 * dt * v2, time + 0.5 * dt)
        v4, g4 = stage(y_pos + dt * v3, time + dt)
        y_pos += (dt / 6.0) * (v1 + 2 * v2 + 2 * v3 + v4)
        J += (dt / 6.0) * (g1 + 2 * g2 + 2 * g3 + g4)
        time += dt
    return y_pos % 1.0, J


def transport_h(tb: TrigBasis, vtraj, h0: ModalScalar,
                t: float, grid: GridSpec, dt_flow: float = 1e-3) -> ScalarField:
    """Exact-characteristics solution of dt h + div(h v) = 0 at time t.

    h(t, x) = h0(Phi(0,t,x)) exp(-integral_0^t div v(s, Phi(s,t,x)) ds).
    """
    pts = np.stack([m.ravel() for m in grid.mesh], axis=1)
    feet, J = _back_characteristics(tb, vtraj, t, pts, dt_flow)
    vals = h0.eval(feet) * np.exp(J)
    return ScalarField(grid, vals.reshape(grid.shape))


def transport_B(tb: TrigBasis, vtraj, dtraj, B0: ModalVector, t: float,
                grid: GridSpec, dt_flow: float = 1e-3) -> VectorField3:
    """Characteristics representation of dt B + curl(B x v + d) = 0.

    Along each characteristic the auxiliary G solves
        dG/ds = (grad v) G - (curl d) exp(+I(s)),   G(0) = B0(foot),
    with I(s) the accumulated divergence, and B(t,x) = G(t) exp(-I(t)).
    """
    vm = _as_model(tb, vtraj)
    dm = _as_model(tb, dtraj)
    pts = np.stack([m.ravel() for m in grid.mesh], axis=1)
    feet, _ = _back_characteristics(tb, vm, t, pts, dt_flow)

    pos = feet.copy()
    I = np.zeros(len(pos))
    G = B0.eval(feet)
    nsub = _flow_substeps(t, 0.0, dt_flow)
    dt = t / nsub
    time = 0.0

    def stage(p, i_acc, g_val, tt):
        vel = vm.eval(tt, p)
        dv = vm.div(tt, p)
        jac = vm.jacobian(tt, p)
        curld = dm.curl(tt, p)
        dG = np.einsum("mij,mj->mi", jac, g_val) - curld * np.exp(i_acc)[:, None]
        return vel, dv, dG

    for _ in range(nsub):
        v1, i1, g1 = stage(pos, I, G, time)
        v2, i2, g2 = stage(pos + 0.5 * dt * v1, I + 0.5 * dt * i1,
                           G + 0.5 * dt * g1, time + 0.5 * dt)
        v3, i3, g3 = stage(pos + 0.5 * dt * v2, I + 0.5 * dt * i2,
                           G + 0.5 * dt * g2, time + 0.5 * dt)
        v4, i4, g4 = stage(pos + dt * v3, I + dt * i3, G + dt * g3, time + dt)
        pos += (dt / 6.0) * (v1 + 2 * v2 + 2 * v3 + v4)
        I += (dt / 6.0) * (i1 + 2 * i2 + 2 * i3 + i4)
        G += (dt / 6.0) * (g1 + 2 * g2 + 2 * g3 + g4)
        time += dt
    vals = G * np.exp(-I)[:, None]
    return VectorField3(grid, vals.T.reshape(3, *grid.shape))


# ----------------------------------------------------------------------
# Configuration, state, method-of-lines driver.
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class GalerkinConfig:
    N: int = 7
    eps: float = 0.1
    l: int = 8
    dt: float = 1e-3
    T: float = 0.05
    picard: bool = False
    picard_tol: float = 1e-10
    picard_max_iter: int = 60
    sigma: float = 0.01
    h_floor: float = DEFAULT_H_FLOOR
    dt_flow: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise FieldDataError(f"eps must lie in (0,1), got {self.eps}")
        if self.l < 1:
            raise FieldDataError(f"hyperviscosity order must be >= 1, got {self.l}")
        if self.l < 8:
            logger.warning(
                "hyperviscosity order l=%d below the analysis regime (l >= 8); "
                "runs remain well-defined but lack the embedding margin", self.l)


@dataclass(frozen=True)
class GalerkinState:
    t: float
    h: ScalarField
    B: VectorField3
    d_coeffs: np.ndarray    # primal coefficients (3, 2N)
    v_coeffs: np.ndarray

    def d_field(self, tb: TrigBasis) -> VectorField3:
        return VectorField3(self.h.grid, tb.synthesize(self.d_coeffs))

    def v_field(self, tb: TrigBasis) -> VectorField3:
        return VectorField3(self.h.grid, tb.synthesize(self.v_coeffs))


@dataclass
class GalerkinTrajectory:
    times: list[float]
    states: list[GalerkinState]
    diagnostics: list[tuple[float, ...]]   # t, Lambda_n, dissipation, hyper, min h

    DIAG_HEADER = ("t", "lambda_n", "dissipation", "hyperviscous", "min_h")

    def lambda_series(self) -> np.ndarray:
        return np.array([row[1] for row in self.diagnostics])


def _grid_sources(g: GridSpec, tb: TrigBasis, h, B, d, v, eps, h_floor):
    """Grid parts of the projected sources (hyper and h d / h v terms excluded)."""
    da = g.dealias_arr
    r = guarded_reciprocal(h, h_floor)
    b = da(B * r)
    inv_eps = 1.0 / eps

    S = inv_eps * g.curl_arr(b)
    for i in range(3):
        row = da(h * (d[i] * v - v[i] * d))
        S[i] -= g.div_arr(row)

    _, P_const = _constitutive_arrays(g, h, B, h_floor)
    jac_d = g.jacobian_arr(d)
    Ngrid = inv_eps * P_const
    Ngrid += da(h * np.einsum("jxyz,ijxyz->ixyz", d, jac_d))
    for i in range(3):
        Ngrid[i] -= g.div_arr(da(h * v[i] * v))
    return S, Ngrid


def _galerkin_rhs_arrays(g: GridSpec, tb: TrigBasis, y, cfg: GalerkinConfig):
    h, B, chi_d, chi_v = y
    cho = _gram_cho(tb, h, 0.0)
    cd = cho_solve(cho, chi_d.T).T
    cv = cho_solve(cho, chi_v.T).T
    d = tb.synthesize(cd)
    v = tb.synthesize(cv)
    da = g.dealias_arr

    dh = -g.div_arr(da(h * v))
    dB = -g.curl_arr(da(cross3(B, v)) + d)

    S, Ngrid = _grid_sources(g, tb, h, B, d, v, cfg.eps, cfg.h_floor)
    lam_l = tb.lam ** cfg.l
    s_d = tb.project(S) - lam_l * cd - chi_d / cfg.eps
    s_v = tb.project(Ngrid) - lam_l * cv - chi_v / cfg.eps
    return dh, dB, s_d, s_v


def galerkin_rhs(state: GalerkinState, tb: TrigBasis,
                 cfg: GalerkinConfig):
    """Tendencies of (h, B) and of the primal (d, v) coefficients.

    The momentum form evolves the dual coefficients chi = M[h] c; the primal
    tendency returned here is M[h]^{-1}(source - M[dt h] c), equivalent to
    that dual evolution.
    """
    g = state.h.grid
    chi_d = mass_apply(tb, state.h.values, state.d_coeffs)
    chi_v = mass_apply(tb, state.h.values, state.v_coeffs)
    dh, dB, s_d, s_v = _galerkin_rhs_arrays(
        g, tb, (state.h.values, state.B.values, chi_d, chi_v), cfg)
    Gdot = tb.gram(dh)
    cho = _gram_cho(tb, state.h.values, 0.0)
    cd_dot = cho_solve(cho, (s_d - state.d_coeffs @ Gdot.T).T).T
    cv_dot = cho_solve(cho, (s_v - state.v_coeffs @ Gdot.T).T).T
    return (ScalarField(g, dh), VectorField3(g, dB), cd_dot, cv_dot)


def galerkin_stable_dt(state: GalerkinState, tb: TrigBasis,
                       cfg: GalerkinConfig) -> float:
    """Explicit stability bound: hyperviscous, relaxation and advective rates."""
    hmin = float(state.h.values.min())
    lam_max = float(tb.lam.max())
    rate = lam_max ** cfg.l / max(hmin, 1e-30) + 1.0 / cfg.eps
    vmax = float(np.abs(tb.synthesize(state.v_coeffs)).max())
    adv = vmax / state.h.grid.spacing
    return 0.5 * 2.8 / (rate + adv + 1.0)


def _energy_parts(g, tb, h, B, chi_d, chi_v, cd, cv, eps, l, h_floor):
    r = guarded_reciprocal(h, h_floor)
    lam_en = float((((B ** 2).sum(0) + 1.0) * r * 0.5).mean())
    kinetic = float((cd * chi_d).sum() + (cv * chi_v).sum())
    diss = kinetic
    lam_n = lam_en + 0.5 * eps * kinetic
    lam_l = tb.lam ** l
    hyper = eps * float((lam_l * cd ** 2).sum() + (lam_l * cv ** 2).sum())
    return lam_n, diss, hyper


def galerkin_run(h0: ScalarField, B0: VectorField3, D0: VectorField3,
                 P0: VectorField3, cfg: GalerkinConfig,
                 basis: BasisSpec | None = None,
                 blowup_factor: float = 10.0) -> GalerkinTrajectory:
    """Method-of-lines RK4 on (h, B, chi_d, chi_v) up to time T.

    Initial momentum coefficients are the dual projections of D0 and P0, so
    d(0) and v(0) carry the mass-operator-inverted structure of the data.
    """
    g = h0.grid
    tb = TrigBasis(basis or BasisSpec(cfg.N), g)
    chi_d = tb.project(D0.values)
    chi_v = tb.project(P0.values)

    def rhs(y):
        return _galerkin_rhs_arrays(g, tb, y, cfg)

    def make_state(t, y):
        h, B, xd, xv = y
        cho = _gram_cho(tb, h, 0.0)
        cd = cho_solve(cho, xd.T).T
        cv = cho_solve(cho, xv.T).T
        return GalerkinState(t, ScalarField(g, h), VectorField3(g, B), cd, cv)

    y = (h0.values.copy(), B0.values.copy(), chi_d, chi_v)
    state0 = make_state(0.0, y)
    dt_max = galerkin_stable_dt(state0, tb, cfg)
    if cfg.dt > dt_max * (1.0 + 1e-12):
        raise StepSizeError(
            f"dt={cfg.dt:g} exceeds the stability bound {dt_max:g} "
            f"(hyperviscous order l={cfg.l}, eps={cfg.eps:g})", dt_max)

    n_steps = max(1, int(round(cfg.T / cfg.dt)))
    scale0 = max(float(np.abs(h0.values).max()), float(np.abs(B0.values).max()), 1.0)

    def diag(t, y):
        h, B, xd, xv = y
        cho = _gram_cho(tb, h, 0.0)
        cd = cho_solve(cho, xd.T).T
        cv = cho_solve(cho, xv.T).T
        lam_n, diss, hyper = _energy_parts(g, tb, h, B, xd, xv, cd, cv,
                                           cfg.eps, cfg.l, cfg.h_floor)
        return (t, lam_n, diss, hyper, float(h.min()))

    times = [0.0]
    states = [state0]
    diags = [diag(0.0, y)]
    for k in range(1, n_steps + 1):
        y = rk4_step(y, cfg.dt, rhs)
        if y[0].min() <= 0.0:
            raise StepSizeError(
                f"h lost positivity at step {k} (dt={cfg.dt:g})", cfg.dt / 2)
        check_blowup(max(float(np.abs(y[0]).max()), float(np.abs(y[1]).max())),
                     scale0, blowup_factor, "galerkin_run")
        t = k * cfg.dt
        times.append(t)
        states.append(make_state(t, y))
        diags.append(diag(t, y))
    return GalerkinTrajectory(times, states, diags)


# ----------------------------------------------------------------------
# Picard fixed-point mode.
# ----------------------------------------------------------------------

def _k_operator(g, tb, cfg, quad_times, h0_modal, B0_modal, chi_d0, chi_v0,
                z: CoefficientTrajectory):
    """One application of the integral fixed-point map on a subinterval.

    Transports (h, B) along the current iterate's velocity, quadratures the
    projected sources in time, and mass-solves back to primal coefficients.
    """
    m = len(quad_times)
    cd_traj = CoefficientTrajectory(z.times, z.coeffs[:, 0])
    cv_traj = CoefficientTrajectory(z.times, z.coeffs[:, 1])
    hs, Bs = [], []
    for t in quad_times:
        hf = transport_h(tb, cv_traj, h0_modal, t, g, cfg.dt_flow)
        Bf = transport_B(tb, cv_traj, cd_traj, B0_modal, t, g, cfg.dt_flow)
        if hf.values.min() <= cfg.h_floor:
            raise PositivityError(
                f"transported density hit the floor at t={t:g}")
        hs.append(hf.values)
        Bs.append(Bf.values)

    lam_l = tb.lam ** cfg.l
    s_d = np.empty((m, 3, tb.basis.num_functions))
    s_v = np.empty_like(s_d)
    for i, t in enumerate(quad_times):
        cd = cd_traj.at(t)
        cv = cv_traj.at(t)
        d = tb.synthesize(cd)
        v = tb.synthesize(cv)
        S, Ngrid = _grid_sources(g, tb, hs[i], Bs[i], d, v, cfg.eps,
                                 cfg.h_floor)
        hd = tb.project(g.dealias_arr(hs[i] * d))
        hv = tb.project(g.dealias_arr(hs[i] * v))
        s_d[i] = tb.project(S) - lam_l * cd - hd / cfg.eps
        s_v[i] = tb.project(Ngrid) - lam_l * cv - hv / cfg.eps

    new_coeffs = np.empty((m, 2, 3, tb.basis.num_functions))
    chi_d = chi_d0.copy()
    chi_v = chi_v0.copy()
    for i, t in enumerate(quad_times):
        if i > 0:
            dt_seg = quad_times[i] - quad_times[i - 1]
            chi_d = chi_d + 0.5 * dt_seg * (s_d[i - 1] + s_d[i])
            chi_v = chi_v + 0.5 * dt_seg * (s_v[i - 1] + s_v[i])
        cho = _gram_cho(tb, hs[i], 0.0)
        new_coeffs[i, 0] = cho_solve(cho, chi_d.T).T
        new_coeffs[i, 1] = cho_solve(cho, chi_v.T).T
    return (CoefficientTrajectory(np.asarray(quad_times), new_coeffs),
            hs, Bs)


def picard_iterate(h0: ScalarField, B0: VectorField3, D0: VectorField3,
                   P0: VectorField3, cfg: GalerkinConfig,
                   basis: BasisSpec | None = None) -> GalerkinTrajectory:
    """Fixed-point construction of the relaxation system on [0, T].

    Works subinterval by subinterval: on each [t0, t0 + sigma] the map
    z -> K[z] is iterated from the frozen-coefficient guess until the sup
    coefficient change drops below picard_tol; if the change grows three
    times in a row the subinterval is halved (more than 20 halvings aborts).
    The next subinterval restarts from the transported end state.
    """
    g = h0.grid
    tb = TrigBasis(basis or BasisSpec(cfg.N), g)

    h_cur = h0
    B_cur = B0
    chi_d = tb.project(D0.values)
    chi_v = tb.project(P0.values)

    times: list[float] = []
    states: list[GalerkinState] = []
    diags: list[tuple[float, ...]] = []

    def record(t_abs, h, B, cd, cv, xd, xv):
        lam_n, diss, hyper = _energy_parts(g, tb, h, B, xd, xv, cd, cv,
                                           cfg.eps, cfg.l, cfg.h_floor)
        times.append(t_abs)
        states.append(GalerkinState(t_abs, ScalarField(g, h),
                                    VectorField3(g, B), cd, cv))
        diags.append((t_abs, lam_n, diss, hyper, float(h.min())))

    t_base = 0.0
    sigma = cfg.sigma
    halvings = 0
    cd0 = mass_solve(tb, h_cur.values, chi_d)
    cv0 = mass_solve(tb, h_cur.values, chi_v)
    record(0.0, h_cur.values, B_cur.values, cd0, cv0, chi_d, chi_v)

    while t_base < cfg.T - 1e-14:
        sigma_eff = min(sigma, cfg.T - t_base)
        m = max(3, int(math.ceil(sigma_eff / cfg.dt)) + 1)
        quad_times = np.linspace(0.0, sigma_eff, m)
        h0_modal = ModalScalar.from_field(h_cur)
        B0_modal = ModalVector.from_field(B_cur)

        z = CoefficientTrajectory(
            np.array([0.0, sigma_eff]),
            np.stack([np.stack([cd0, cv0])] * 2))
        residuals: list[float] = []
        converged = False
        z_final = z
        hs = Bs = None
        for _ in range(cfg.picard_max_iter):
            z_new, hs, Bs = _k_operator(g, tb, cfg, quad_times, h0_modal,
                                        B0_modal, chi_d, chi_v, z)
            res = max(float(np.abs(z_new.at(t) - z.at(t)).max())
                      for t in quad_times)
            residuals.append(res)
            z = z_final = z_new
            if res <= cfg.picard_tol:
                converged = True
                break
            if len(residuals) >= 4 and all(
                    residuals[-j] > residuals[-j - 1] for j in (1, 2, 3)):
                break
        if not converged:
            halvings += 1
            if halvings > 20:
                raise BlowUpError(
                    "picard iteration failed to contract after 20 subinterval "
                    "halvings")
            sigma = sigma_eff / 2.0
            logger.info("picard: halving subinterval to sigma=%g", sigma)
            continue

        # accept the subinterval; record interior samples and restart data
        for i, t in enumerate(quad_times[1:], start=1):
            cd_i = z_final.coeffs[i, 0]
            cv_i = z_final.coeffs[i, 1]
            xd_i = mass_apply(tb, hs[i], cd_i)
            xv_i = mass_apply(tb, hs[i], cv_i)
            record(t_base + t, hs[i], Bs[i], cd_i, cv_i, xd_i, xv_i)
        h_cur = ScalarField(g, hs[-1])
        B_cur = VectorField3(g, Bs[-1])
        cd0 = z_final.coeffs[-1, 0]
        cv0 = z_final.coeffs[-1, 1]
        chi_d = mass_apply(tb, hs[-1], cd0)
        chi_v = mass_apply(tb, hs[-1], cv0)
        t_base += sigma_eff
    return GalerkinTrajectory(times, states, diags)
