"""Relative-entropy machinery and the dissipative-solution certificate.

Given a smooth test-field frame w* = (1/h*, b*, d*, v*), the growth of the
modulated energy integral(|U~|^2 / 2h) of a state (h, B, D, P) against the
frame is controlled by a pointwise symmetric 10x10 weight matrix Q(w*)
(slots ordered scalar, B, D, P) and a linear forcing term L(w*):

    d/dt integral(|U~|^2/2h) + integral(W~^T Q W~ / 2h)
        + integral(W~ . L(w*)) = residual terms,

with U~ = (1 - h/h*, B - h b*) and W~ = (U~, D - h d*, P - h v*). Shifting
Q by r on the first four diagonal slots (r at least the certified r0) makes
the weight uniformly positive definite, and exponential weighting turns the
identity into the inequality certified here: for genuine dissipative
solutions the slack

    e^{-rt} Lambda(h(t), U~(t)) + Lambda~(h, W~, e^{-rs} Q_r; 0, t)
        + R(t) - Lambda(h(0), U~(0))

is nonpositive up to quadrature error. Lambda and Lambda~ are the convex
functionals extending integral(|U|^2 / 2 rho) and its Q-weighted space-time
analogue; on this grid all measures are represented by densities, so the
dual supremum is available only as a finite-family lower bound
(`lambda_dual_lower_bound`) next to the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._jacobi import jacobi_eigenvalues, jacobi_min_eigenvalue
from .dmhd import DmhdTrajectory, _constitutive_arrays, _rhs_arrays
from .fields import (
    DEFAULT_H_FLOOR,
    FieldDataError,
    GridSpec,
    ScalarField,
    VectorField3,
    guarded_reciprocal,
    require_positive,
)
from .snapshots import format_float, write_csv

__all__ = [
    "TestFieldFrame",
    "QMatrixField",
    "EntropyReport",
    "SampleTrajectory",
    "q_matrix",
    "r0",
    "l_operator",
    "lambda_functional",
    "lambda_dual_lower_bound",
    "lambda_tilde",
    "dissipative_slack",
    "identity_residual_check",
    "q_decomposition_defect",
    "frames_from_dmhd",
    "constant_frame",
    "random_frame",
    "convex_combination",
    "holder_half_quotient",
    "DEFAULT_U_FLOOR",
]

DEFAULT_U_FLOOR = 1e-8
R0_TOL = 1e-10


@dataclass(frozen=True)
class TestFieldFrame:
    """One time sample of a test field w* = (1/h*, b*, d*, v*).

    Carries the values of 1/h* (strictly positive), the three vector parts,
    and the time derivatives of 1/h* and b* needed by the forcing term.
    """

    __test__ = False          # bare data, despite the Test* name

    t: float
    h_star_inv: ScalarField
    b_star: VectorField3
    d_star: VectorField3
    v_star: VectorField3
    dt_h_star_inv: ScalarField
    dt_b_star: VectorField3

    def __post_init__(self):
        g = self.h_star_inv.grid
        for f in (self.b_star, self.d_star, self.v_star,
                  self.dt_h_star_inv, self.dt_b_star):
            if f.grid != g:
                raise FieldDataError("frame fields must share one grid")
        require_positive(self.h_star_inv.values, 0.0, "1/h*")

    @property
    def grid(self) -> GridSpec:
        return self.h_star_inv.grid


def constant_frame(grid: GridSpec, t: float = 0.0, h_star: float = 1.0,
                   b=(0.0, 0.0, 0.0), d=(0.0, 0.0, 0.0),
                   v=(0.0, 0.0, 0.0)) -> TestFieldFrame:
    return TestFieldFrame(
        t,
        ScalarField.constant(grid, 1.0 / h_star),
        VectorField3.constant(grid, b),
        VectorField3.constant(grid, d),
        VectorField3.constant(grid, v),
        ScalarField.constant(grid, 0.0),
        VectorField3.constant(grid, (0.0, 0.0, 0.0)),
    )


def random_frame(grid: GridSpec, rng: np.random.Generator, t: float = 0.0,
                 kmax: int = 2, amplitude: float = 0.1) -> TestFieldFrame:
    """Random smooth frame, band-limited to |k_i| <= kmax, with 1/h* > 0."""
    from .fields import random_band_limited, random_vector

    base = random_band_limited(grid, rng, kmax, amplitude).values
    return TestFieldFrame(
        t,
        ScalarField(grid, 1.0 + base - base.min() + 0.5),
        random_vector(grid, rng, kmax, amplitude),
        random_vector(grid, rng, kmax, amplitude),
        random_vector(grid, rng, kmax, amplitude),
        random_band_limited(grid, rng, kmax, amplitude),
        random_vector(grid, rng, kmax, amplitude),
    )


def frames_from_dmhd(traj: DmhdTrajectory,
                     h_floor: float = DEFAULT_H_FLOOR) -> list[TestFieldFrame]:
    """Convert a solver trajectory into frames (1/h, B/h, D/h, P/h).

    The time derivatives are assembled analytically from the equations of
    motion, so the frames inherit the solution property L(w*) ~ 0 up to
    the spatial discretization floor.
    """
    frames = []
    for t, s in zip(traj.times, traj.states):
        g = s.grid
        h = s.h.values
        B = s.B.values
        r = guarded_reciprocal(h, h_floor)
        D, P = _constitutive_arrays(g, h, B, h_floor)
        dh, dB = _rhs_arrays(g, h, B, h_floor)
        frames.append(TestFieldFrame(
            t,
            ScalarField(g, r),
            VectorField3(g, B * r),
            VectorField3(g, D * r),
            VectorField3(g, P * r),
            ScalarField(g, -dh * r * r),
            VectorField3(g, dB * r - B * (dh * r * r)),
        ))
    return frames


# ----------------------------------------------------------------------
# The weight matrix Q(w*) and forcing term L(w*).
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class QMatrixField:
    """Pointwise symmetric 10x10 weight matrices, shape (n, n, n, 10, 10).

    Slot order: scalar, B (3), D (3), P (3). The lower-right 6x6 block is
    exactly twice the identity by construction.
    """

    grid: GridSpec
    values: np.ndarray

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, 10, 10)

    def symmetry_defect(self) -> float:
        return float(np.abs(self.values - self.values.swapaxes(-1, -2)).max())

    def shifted(self, r: float) -> np.ndarray:
        """Q + r on the first four diagonal slots (Q_r), as a new array."""
        out = self.values.copy()
        for i in range(4):
            out[..., i, i] += r
        return out


def q_matrix(frame: TestFieldFrame) -> QMatrixField:
    """Assemble Q(w*) from spectral derivatives of the frame.

    Vector gradients use the Jacobian convention (grad v)_{ij} = d_j v_i;
    blocks: -2 div v* (scalar), curl d* coupling scalar<->B, -curl b*
    coupling scalar<->D, -(grad v* + grad v*^T) on B, grad b* - grad b*^T
    coupling B<->P, and 2 I_3 on the D and P diagonals.
    """
    g = frame.grid
    v = frame.v_star.values
    b = frame.b_star.values
    d = frame.d_star.values
    jac_v = g.jacobian_arr(v)                      # [i, j] = d_j v_i
    jac_b = g.jacobian_arr(b)
    curl_d = g.curl_arr(d)
    curl_b = g.curl_arr(b)
    div_v = jac_v[0, 0] + jac_v[1, 1] + jac_v[2, 2]

    M = np.zeros((*g.shape, 10, 10))
    M[..., 0, 0] = -2.0 * div_v
    cd = np.moveaxis(curl_d, 0, -1)
    cb = np.moveaxis(curl_b, 0, -1)
    M[..., 0, 1:4] = cd
    M[..., 1:4, 0] = cd
    M[..., 0, 4:7] = -cb
    M[..., 4:7, 0] = -cb
    jv = np.moveaxis(jac_v, (0, 1), (-2, -1))
    jb = np.moveaxis(jac_b, (0, 1), (-2, -1))
    M[..., 1:4, 1:4] = -(jv + jv.swapaxes(-1, -2))
    anti_b = jb - jb.swapaxes(-1, -2)
    M[..., 1:4, 7:10] = anti_b
    M[..., 7:10, 1:4] = -anti_b
    for i in range(4, 10):
        M[..., i, i] = 2.0
    return QMatrixField(g, M)


def l_operator(frame: TestFieldFrame) -> np.ndarray:
    """Forcing term L(w*) as a 10-component field, shape (10, n, n, n).

    L vanishes (to the discretization floor) exactly when the frame is the
    non-conservative image of a smooth solution of the diffusion system.
    """
    g = frame.grid
    da = g.dealias_arr
    tau = frame.h_star_inv.values
    b = frame.b_star.values
    d = frame.d_star.values
    v = frame.v_star.values
    grad_tau = g.grad_arr(tau)
    jac_b = g.jacobian_arr(b)
    jac_v = g.jacobian_arr(v)
    div_v = jac_v[0, 0] + jac_v[1, 1] + jac_v[2, 2]

    L_h = (frame.dt_h_star_inv.values - da(tau * div_v)
           + da((v * grad_tau).sum(0)))
    adv_vb = da(np.einsum("jxyz,ijxyz->ixyz", v, jac_b))
    adv_bv = da(np.einsum("jxyz,ijxyz->ixyz", b, jac_v))
    L_B = frame.dt_b_star.values + adv_vb - adv_bv + da(tau * g.curl_arr(d))
    L_D = d - da(tau * g.curl_arr(b))
    adv_bb = da(np.einsum("jxyz,ijxyz->ixyz", b, jac_b))
    L_P = v - adv_bb - da(tau * grad_tau)
    return np.concatenate([L_h[None], L_B, L_D, L_P])


def q_decomposition_defect(frame: TestFieldFrame) -> float:
    """Sup-norm defect of the algebraic identity for Q(w*) w*.

    Q(w*) w* must equal L(w*) - (dt(1/h*), dt b*, 0, 0) plus the exchange
    vector (div(d* x b* - v*/h*), -grad(b* . v*), d*, v* + grad|u*|^2 / 2),
    where u* = (1/h*, b*). Both sides are assembled independently; the check
    is exact for frames whose products stay below the dealiasing cutoff.
    """
    g = frame.grid
    da = g.dealias_arr
    tau = frame.h_star_inv.values
    b = frame.b_star.values
    d = frame.d_star.values
    v = frame.v_star.values
    w = np.concatenate([tau[None], b, d, v])
    Q = q_matrix(frame).values
    qw = np.einsum("xyzij,jxyz->ixyz", Q, w)

    L = l_operator(frame)
    rhs = L.copy()
    rhs[0] -= frame.dt_h_star_inv.values
    rhs[1:4] -= frame.dt_b_star.values
    from .abi import cross3

    rhs[0] += g.div_arr(da(cross3(d, b) - tau * v))
    rhs[1:4] -= g.grad_arr(da((b * v).sum(0)))
    rhs[4:7] += d
    u_sq = da(tau * tau + (b * b).sum(0))
    rhs[7:10] += v + 0.5 * g.grad_arr(u_sq)
    return float(np.abs(qw - rhs).max())


# ----------------------------------------------------------------------
# The convex functionals.
# ----------------------------------------------------------------------

def lambda_functional(rho: ScalarField, U: np.ndarray,
                      h_floor: float = DEFAULT_H_FLOOR,
                      u_floor: float = DEFAULT_U_FLOOR) -> float:
    """Closed form of the modulated-energy functional on densities.

    Returns integral(|U|^2 / (2 rho)) when rho stays above the floor; if
    rho vanishes (below the floor) on a set where |U| exceeds u_floor the
    functional is +infinity. Negative rho is rejected.
    """
    rv = rho.values
    if rv.min() < 0.0:
        raise FieldDataError("lambda_functional requires rho >= 0")
    U = np.asarray(U, dtype=float)
    usq = (U ** 2).sum(0)
    ok = rv > h_floor
    if not ok.all():
        if np.any(np.sqrt(usq[~ok]) > u_floor):
            return math.inf
        return float(np.where(ok, usq / np.where(ok, 2.0 * rv, 1.0), 0.0).mean())
    return float((usq / (2.0 * rv)).mean())


def lambda_dual_lower_bound(rho: ScalarField, U: np.ndarray,
                            pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                            feas_tol: float = 1e-12) -> float:
    """Best lower bound from a finite family of dual test pairs (a, A).

    Each pair must satisfy a + |A|^2 / 2 <= 0 pointwise; the returned value
    max over pairs of integral(a rho + A . U) never exceeds the closed form.
    """
    if not pairs:
        raise FieldDataError("at least one dual test pair is required")
    rv = rho.values
    best = -math.inf
    for j, (a, A) in enumerate(pairs):
        a = np.asarray(a, dtype=float)
        A = np.asarray(A, dtype=float)
        slackv = a + 0.5 * (A ** 2).sum(0)
        worst = slackv.max()
        if worst > feas_tol:
            flat = int(np.argmax(slackv))
            idx = tuple(int(i) for i in np.unravel_index(flat, slackv.shape))
            raise FieldDataError(
                f"dual pair {j} infeasible: a + |A|^2/2 = {worst:g} > 0 "
                f"at index {idx}")
        best = max(best, float((a * rv).mean() + (A * U).sum(0).mean()))
    return best


def _q_form_integral(h: np.ndarray, W: np.ndarray, Q: np.ndarray,
                     h_floor: float, u_floor: float) -> float:
    """integral(W^T Q W / (2 h)); +inf marker on positivity loss."""
    ok = h > h_floor
    quad = np.einsum("xyzij,ixyz,jxyz->xyz", Q, W, W)
    if not ok.all():
        wnorm = np.sqrt((W ** 2).sum(0))
        if np.any(wnorm[~ok] > u_floor):
            return math.inf
        return float(np.where(ok, quad / np.where(ok, 2.0 * h, 1.0), 0.0).mean())
    return float((quad / (2.0 * h)).mean())


def lambda_tilde(times: Sequence[float], rho_list: Sequence[np.ndarray],
                 W_list: Sequence[np.ndarray], Q_list: Sequence[np.ndarray],
                 s: float, t: float, h_floor: float = DEFAULT_H_FLOOR,
                 u_floor: float = DEFAULT_U_FLOOR) -> float:
    """Time-quadrature (trapezoidal) of integral(W^T Q W / (2 rho)) on [s, t].

    The three lists share the time axis `times`; s and t must be sample
    points. Q carries any exponential weighting the caller wants.
    """
    times = np.asarray(times, dtype=float)
    i0 = int(np.argmin(np.abs(times - s)))
    i1 = int(np.argmin(np.abs(times - t)))
    if not (math.isclose(times[i0], s, abs_tol=1e-12)
            and math.isclose(times[i1], t, abs_tol=1e-12)):
        raise FieldDataError("s and t must lie on the trajectory time axis")
    if i1 < i0:
        raise FieldDataError("need s <= t")
    vals = []
    for k in range(i0, i1 + 1):
        v = _q_form_integral(np.asarray(rho_list[k]), np.asarray(W_list[k]),
                             np.asarray(Q_list[k]), h_floor, u_floor)
        if math.isinf(v):
            return math.inf
        vals.append(v)
    if len(vals) == 1:
        return 0.0
    return float(np.trapezoid(vals, times[i0:i1 + 1]))


# ----------------------------------------------------------------------
# Certified shift r0 by bisection.
# ----------------------------------------------------------------------

def _as_target(target) -> float:
    if target == "identity":
        return 1.0
    t = float(target)
    if not 0.0 < t < 2.0:
        raise FieldDataError(
            f"target multiple must lie in (0, 2) so the fixed lower-right "
            f"block stays definite, got {t}")
    return t


def _schur_threshold(Qflat: np.ndarray, t: float) -> np.ndarray:
    """Exact per-point minimal shift via the 4x4 Schur complement."""
    A = Qflat[:, :4, :4]
    C = Qflat[:, :4, 4:]
    S = np.einsum("mij,mkj->mik", C, C) / (2.0 - t) - A
    lam_max = jacobi_eigenvalues(S)[:, -1]
    return t + lam_max


def r0(frames: Sequence[TestFieldFrame], target="identity",
       tol: float = R0_TOL, max_candidates: int = 4096) -> float:
    """Smallest shift r with Q(w*) + r I_{10:4} - target I_10 >= 0 everywhere.

    Certified by bisection on [0, r_max] with the batched Jacobi eigensolver;
    the result is rounded up to the feasible bracket endpoint so the shifted
    matrix is guaranteed positive semidefinite at every sampled (t, x). A
    Schur-complement prefilter selects the pointwise-worst candidates so the
    bisection only eigensolves where it matters.
    """
    if not frames:
        raise FieldDataError("r0 requires at least one frame")
    tval = _as_target(target)

    thresholds = []
    max_entry = 0.0
    for f in frames:
        Qf = q_matrix(f).flat()
        max_entry = max(max_entry, float(np.abs(Qf).max()))
        thresholds.append(_schur_threshold(Qf, tval))
    global_max = max(float(th.max()) for th in thresholds)
    slack = 1e-6 * (1.0 + abs(global_max))

    cands = []
    for f, th in zip(frames, thresholds):
        idx = np.nonzero(th >= global_max - slack)[0]
        if idx.size:
            cands.append(q_matrix(f).flat()[idx])
    C = np.concatenate(cands, axis=0)
    if C.shape[0] > max_candidates:
        # keep the worst points only
        th_all = _schur_threshold(C, tval)
        order = np.argsort(th_all)[::-1][:max_candidates]
        C = C[order]

    shift_slots = np.zeros((10, 10))
    for i in range(4):
        shift_slots[i, i] = 1.0
    target_eye = tval * np.eye(10)

    def feasible(r: float) -> bool:
        mats = C + r * shift_slots - target_eye
        return bool(jacobi_min_eigenvalue(mats).min() >= 0.0)

    if feasible(0.0):
        return 0.0
    r_max = 1.0 + 10.0 * max_entry
    if not feasible(r_max):
        raise FieldDataError(
            f"no shift up to r_max={r_max:g} makes the weight matrix "
            f"positive semidefinite; Q assembly is corrupted")
    lo, hi = 0.0, r_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ----------------------------------------------------------------------
# Sampled trajectories and the certificate.
# ----------------------------------------------------------------------

@dataclass
class SampleTrajectory:
    """Time-indexed samples of the full 10-component state (h, B, D, P)."""

    grid: GridSpec
    times: np.ndarray
    h: np.ndarray   # (T, n, n, n)
    B: np.ndarray   # (T, 3, n, n, n)
    D: np.ndarray
    P: np.ndarray

    @classmethod
    def manufactured(cls, h0: ScalarField, B0: VectorField3, dt: float,
                     n_steps: int, psi: np.ndarray | None = None,
                     varphi: np.ndarray | None = None,
                     curl_source: np.ndarray | None = None,
                     h_floor: float = DEFAULT_H_FLOOR) -> "SampleTrajectory":
        """Trajectory with prescribed defect residuals for identity tests.

        h is evolved by -div P and B through a curl (so the continuity
        equation and div B = 0 hold by construction), while D and P are
        offset from the constitutive values by `psi` and `varphi` and the
        induction flux gains curl(curl_source). The recovered residuals are
        then psi, varphi and curl(curl_source) up to time-difference error.
        """
        from .abi import cross3
        from .stepping import rk4_step

        g = h0.grid
        da = g.dealias_arr
        z = np.zeros((3, *g.shape))
        psi = z if psi is None else np.asarray(psi, dtype=float)
        varphi = z if varphi is None else np.asarray(varphi, dtype=float)

        def derived(h, B):
            D, P = _constitutive_arrays(g, h, B, h_floor)
            return D + psi, P + varphi

        def rhs(y):
            h, B = y
            D, P = derived(h, B)
            r = guarded_reciprocal(h, h_floor)
            dB = -g.curl_arr(da((D + cross3(B, P)) * r))
            if curl_source is not None:
                dB = dB + g.curl_arr(np.asarray(curl_source, dtype=float))
            return -g.div_arr(P), dB

        times, hs, Bs, Ds, Ps = [], [], [], [], []
        h, B = h0.values, B0.values
        for k in range(n_steps + 1):
            D, P = derived(h, B)
            times.append(k * dt)
            hs.append(h)
            Bs.append(B)
            Ds.append(D)
            Ps.append(P)
            if k < n_steps:
                h, B = rk4_step((h, B), dt, rhs)
        return cls(g, np.asarray(times), np.stack(hs), np.stack(Bs),
                   np.stack(Ds), np.stack(Ps))

    @classmethod
    def from_dmhd(cls, traj: DmhdTrajectory,
                  h_floor: float = DEFAULT_H_FLOOR) -> "SampleTrajectory":
        g = traj.states[0].grid
        hs, Bs, Ds, Ps = [], [], [], []
        for s in traj.states:
            D, P = _constitutive_arrays(g, s.h.values, s.B.values, h_floor)
            hs.append(s.h.values)
            Bs.append(s.B.values)
            Ds.append(D)
            Ps.append(P)
        return cls(g, np.asarray(traj.times, dtype=float), np.stack(hs),
                   np.stack(Bs), np.stack(Ds), np.stack(Ps))

    def with_momentum_offset(self, delta: float) -> "SampleTrajectory":
        """Corrupted copy with `delta` added to every momentum component."""
        return SampleTrajectory(self.grid, self.times.copy(), self.h.copy(),
                                self.B.copy(), self.D.copy(), self.P + delta)

    def __len__(self) -> int:
        return len(self.times)


def holder_half_quotient(sol: SampleTrajectory, kmax: int = 2) -> float:
    """Empirical Hoelder-1/2 quotient of t -> (h, B) in the weak topology.

    Pairs the increments against the low trigonometric modes (|k_i| <= kmax)
    and returns max over sample pairs of that defect divided by
    sqrt(|t - s|). Reported for diagnostics; the theory bounds it by a
    constant depending only on the horizon and the initial data, which is
    not computable here.
    """
    g = sol.grid
    x, y, z = g.mesh
    tests = [np.ones(g.shape)]
    for k in range(1, kmax + 1):
        for axis in (x, y, z):
            tests.append(np.sin(2 * np.pi * k * axis))
            tests.append(np.cos(2 * np.pi * k * axis))
    tests = np.stack(tests)
    ph = np.einsum("mxyz,txyz->tm", tests, sol.h) / g.num_points
    pB = np.einsum("mxyz,tixyz->tim", tests, sol.B) / g.num_points
    worst = 0.0
    T = len(sol)
    for i in range(T - 1):
        for j in range(i + 1, T):
            gap = math.sqrt(sol.times[j] - sol.times[i])
            if gap == 0.0:
                continue
            diff = max(np.abs(ph[j] - ph[i]).max(),
                       np.abs(pB[j] - pB[i]).max())
            worst = max(worst, diff / gap)
    return worst


def convex_combination(a: SampleTrajectory, b: SampleTrajectory,
                       alpha: float) -> SampleTrajectory:
    if len(a) != len(b) or not np.allclose(a.times, b.times):
        raise FieldDataError("trajectories must share the time axis")
    w = float(alpha)
    return SampleTrajectory(a.grid, a.times.copy(),
                            w * a.h + (1 - w) * b.h,
                            w * a.B + (1 - w) * b.B,
                            w * a.D + (1 - w) * b.D,
                            w * a.P + (1 - w) * b.P)


def _modulated_fields(h, B, D, P, frame: TestFieldFrame):
    """U~ = (1 - h/h*, B - h b*) and W~ = (U~, D - h d*, P - h v*)."""
    tau = frame.h_star_inv.values
    U = np.concatenate([(1.0 - h * tau)[None], B - h * frame.b_star.values])
    W = np.concatenate([U, D - h * frame.d_star.values,
                        P - h * frame.v_star.values])
    return U, W


@dataclass
class EntropyReport:
    """Certificate time series for one (trajectory, test-field) pair."""

    r_used: float
    r0: float
    times: np.ndarray
    lambda_t: np.ndarray
    lambda_tilde_cum: np.ndarray
    R_t: np.ndarray
    slack_t: np.ndarray

    def max_slack(self) -> float:
        return float(self.slack_t.max())

    def write_csv(self, path) -> None:
        rows = zip(self.times, self.lambda_t, self.lambda_tilde_cum,
                   self.R_t, self.slack_t)
        footer = (f"# r_used={format_float(self.r_used)}"
                  f" r0={format_float(self.r0)}",)
        write_csv(path, ("t", "lambda", "lambda_tilde_cum", "R", "slack"),
                  rows, footer)


def dissipative_slack(sol: SampleTrajectory, frames: Sequence[TestFieldFrame],
                      r: float, h_floor: float = DEFAULT_H_FLOOR,
                      u_floor: float = DEFAULT_U_FLOOR,
                      r0_value: float | None = None) -> EntropyReport:
    """Evaluate the dissipative-solution inequality along a trajectory.

    The slack series is e^{-rt} Lambda(t) + Lambda~(0, t) + R(t) - Lambda(0);
    it starts at exactly zero, stays below the quadrature floor for genuine
    solutions, and turns positive when the trajectory violates the
    inequality. Requires r >= r0 of the frames (recomputed here unless the
    caller supplies a certified value).
    """
    ftimes = np.array([f.t for f in frames], dtype=float)
    if len(frames) != len(sol) or not np.allclose(ftimes, sol.times,
                                                  atol=1e-12):
        raise FieldDataError("frames and trajectory must share the time axis")
    r0_val = r0(frames) if r0_value is None else float(r0_value)
    if r < r0_val - 1e-12:
        raise FieldDataError(
            f"r={r:g} is below the certified shift r0={r0_val:g}")

    T = len(sol)
    lam = np.empty(T)
    q_int = np.empty(T)
    r_int = np.empty(T)
    for k in range(T):
        frame = frames[k]
        h = sol.h[k]
        U, W = _modulated_fields(h, sol.B[k], sol.D[k], sol.P[k], frame)
        lam[k] = lambda_functional(ScalarField(sol.grid, h), U,
                                   h_floor, u_floor)
        Qr = q_matrix(frame).shifted(r)
        wt = math.exp(-r * sol.times[k])
        q_int[k] = wt * _q_form_integral(h, W, Qr, h_floor, u_floor)
        r_int[k] = wt * float((W * l_operator(frame)).sum(0).mean())

    dt_seg = np.diff(sol.times)
    lam_tilde = np.concatenate([[0.0],
                                np.cumsum(0.5 * dt_seg * (q_int[1:] + q_int[:-1]))])
    R_t = np.concatenate([[0.0],
                          np.cumsum(0.5 * dt_seg * (r_int[1:] + r_int[:-1]))])
    slack = np.exp(-r * sol.times) * lam + lam_tilde + R_t - lam[0]
    return EntropyReport(r, r0_val, sol.times.copy(), lam, lam_tilde, R_t,
                         slack)


# ----------------------------------------------------------------------
# The general identity with residuals.
# ----------------------------------------------------------------------

@dataclass
class IdentityCheck:
    times: np.ndarray  # interior sample times
    lhs: np.ndarray
    rhs: np.ndarray
    term_scale: float  # largest constituent term, for relative comparisons

    def max_defect(self) -> float:
        return float(np.abs(self.lhs - self.rhs).max())

    def relative_defect(self) -> float:
        scale = max(np.abs(self.lhs).max(), np.abs(self.rhs).max(),
                    self.term_scale)
        return self.max_defect() / max(scale, 1e-300)


def identity_residual_check(sol: SampleTrajectory,
                            frames: Sequence[TestFieldFrame],
                            h_floor: float = DEFAULT_H_FLOOR) -> IdentityCheck:
    """Evaluate both sides of the modulated-energy identity with residuals.

    For fields that satisfy the continuity equation and div B = 0 (by
    construction of the trajectory) but are otherwise arbitrary, the defect
    residuals

        phi    = dt B + curl((D + B x P)/h)
        psi    = D - curl(B/h)
        varphi = P - div(B (x) B / h) - grad(1/h)

    satisfy  d/dt integral(|U~|^2/2h) + integral(W~^T Q W~ / 2h)
    + integral(W~ . L) = integral(phi.(b - b*) + psi.(d - d*)
    + varphi.(v - v*)).  Time derivatives are centered differences on the
    sample grid, so both sides are reported at interior times only.
    """
    from .abi import cross3

    g = sol.grid
    da = g.dealias_arr
    T = len(sol)
    if T < 3:
        raise FieldDataError("identity check needs at least three samples")

    ent = np.empty(T)
    for k in range(T):
        U, _ = _modulated_fields(sol.h[k], sol.B[k], sol.D[k], sol.P[k],
                                 frames[k])
        ent[k] = float(((U ** 2).sum(0) / (2.0 * sol.h[k])).mean())

    times = sol.times
    lhs = np.empty(T - 2)
    rhs = np.empty(T - 2)
    term_scale = 0.0
    for k in range(1, T - 1):
        h = sol.h[k]
        B, D, P = sol.B[k], sol.D[k], sol.P[k]
        frame = frames[k]
        r = guarded_reciprocal(h, h_floor)
        dt_span = times[k + 1] - times[k - 1]
        dent = (ent[k + 1] - ent[k - 1]) / dt_span
        dB = (sol.B[k + 1] - sol.B[k - 1]) / dt_span

        phi = dB + g.curl_arr(da((D + cross3(B, P)) * r))
        psi = D - g.curl_arr(da(B * r))
        varphi = P - g.grad_arr(da(r))
        for i in range(3):
            varphi[i] -= g.div_arr(da(B[i] * B * r))

        _, W = _modulated_fields(h, B, D, P, frame)
        Q = q_matrix(frame).values
        quad = float((np.einsum("xyzij,ixyz,jxyz->xyz", Q, W, W)
                      / (2.0 * h)).mean())
        lin = float((W * l_operator(frame)).sum(0).mean())
        lhs[k - 1] = dent + quad + lin
        term_scale = max(term_scale, abs(dent), abs(quad), abs(lin))

        b, d, v = B * r, D * r, P * r
        rhs[k - 1] = float((
            (phi * (b - frame.b_star.values)).sum(0)
            + (psi * (d - frame.d_star.values)).sum(0)
            + (varphi * (v - frame.v_star.values)).sum(0)).mean())
    return IdentityCheck(times[1:-1].copy(), lhs, rhs, term_scale)
