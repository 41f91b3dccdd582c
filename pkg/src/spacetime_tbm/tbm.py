"""Timelike Brunn-Minkowski checks and the counterexample pipeline.

The pipeline follows one construction: a transport potential with prescribed
gradient and Hessian at ``x0``, the maps ``T_s(x) = exp_x(s V(x))``, a small
eigen-cube ``A`` and its image ``B = T_lam(A)``.  Volumes of ``A``, ``B`` and
of the geodesic interpolant between them are then compared against the
distortion-coefficient combination.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import distortion as dist
from . import geodesics as gd
from . import geometry as geo
from . import jacobi as jc
from . import regions as rg
from .errors import (
    ContainmentFailure,
    DualizabilityUnverified,
    InvariantFailure,
    PreconditionFailed,
    TbmError,
    TooManyAtoms,
)
from .geometry import WeightedSpacetime

BAND = 1e-6
UNIT_TOL = 1e-8
DV_TOL = 1e-6


# ---------------------------------------------------------------------------
# transport field

@dataclass(frozen=True)
class TransportField:
    """``V = grad phi`` for ``phi(y) = g0(v0, Y) + alpha/2 g0(Y, Y)``, ``Y = log_{x0} y``.

    Callable on one point or a stack of points.  ``steps`` fixes the RK4
    resolution of the normal-coordinate map so that ``V`` is smooth.
    """

    st: WeightedSpacetime
    x0: np.ndarray
    v0: np.ndarray
    alpha: float
    g0: np.ndarray
    steps: int
    deviations: dict = field(default_factory=dict, compare=False)

    @property
    def dv0(self) -> np.ndarray:
        """Analytic ``DV(x0) = alpha Id``."""
        return self.alpha * np.eye(self.st.n)

    def normal_coords(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return gd.log_fixed(self.st, np.broadcast_to(self.x0, y.shape), y, steps=self.steps,
                            tol=rg.PULLBACK_TOL)

    def with_reach(self, reach: float) -> "TransportField":
        """Same field with the RK4 resolution sized for normal radius ``reach``."""
        return replace(self, steps=gd.rk4_steps(np.array([reach])))

    def potential(self, y):
        Y = self.normal_coords(y)
        val = Y @ self.g0 @ self.v0 + 0.5 * self.alpha * np.einsum("bi,ij,bj->b", Y, self.g0, Y)
        return float(val[0]) if np.ndim(y) == 1 else val

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        pts = np.atleast_2d(y)
        st = self.st
        Y = self.normal_coords(pts)
        cov = (self.v0 + self.alpha * Y) @ self.g0       # d phi in normal coordinates
        if st.metric_constant:
            dphi = cov
        else:
            _, J = gd.exp_fixed(st, np.broadcast_to(self.x0, Y.shape), Y, 1.0, self.steps,
                                jacobian=True)
            dphi = np.linalg.solve(np.swapaxes(J, 1, 2), cov[..., None])[..., 0]
        V = np.linalg.solve(geo.metric_array(st, pts), dphi[..., None])[..., 0]
        return V[0] if y.ndim == 1 else V


def build_transport_field(st: WeightedSpacetime, x0, v0, reach: float = 0.3) -> TransportField:
    """Potential with ``V(x0) = v0`` and ``DV(x0) = alpha Id``, ``alpha = -D psi(v0) / (N - n)``.

    ``reach`` is the largest normal-coordinate radius the field is used at; it
    only sets the RK4 step count.
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    g0 = geo.metric_at(st, x0)
    q = float(v0 @ g0 @ v0)
    if abs(q - 1.0) > UNIT_TOL or not geo.is_future_causal(st, x0, v0):
        raise PreconditionFailed(f"v0 must be future unit timelike (g(v0,v0)={q:.12g})")
    if st.weight_constant:
        alpha = 0.0
    else:
        alpha = -float(geo.psi_gradient(st, x0) @ v0) / (st.N - st.n)
    tf = TransportField(st, x0, v0, alpha, g0, gd.rk4_steps(np.array([reach])))
    dev_v = float(np.max(np.abs(tf(x0) - v0)))
    dv = jc.covariant_derivative(st, tf, x0)
    dev_dv = float(np.max(np.abs(dv - tf.dv0)))
    tf.deviations.update(v=dev_v, dv=dev_dv)
    if dev_v > UNIT_TOL or dev_dv > DV_TOL * (1 + abs(alpha)):
        raise InvariantFailure(f"transport field invariants off: |V(x0)-v0|={dev_v:.3e}, "
                               f"|DV(x0)-alpha Id|={dev_dv:.3e}")
    return tf


def transport_map(tf: TransportField, s: float) -> rg.RegionMap:
    """``T_s(x) = exp_x(s V(x))`` with a chord-iteration inverse."""
    st = tf.st
    steps = gd.rk4_steps(np.array([1.25 * abs(s) * max(1.0, float(np.linalg.norm(tf.v0)))]))

    def fwd(x):
        x = np.atleast_2d(x)
        if s == 0:
            return x.copy()
        return gd.exp_fixed(st, x, s * tf(x), 1.0, steps)

    jac = rg.fd_jacobian(fwd, tf.x0, 1e-4 * st.scale)
    x_shift = fwd(tf.x0)[0] - tf.x0

    def inv(y):
        y = np.atleast_2d(y)
        return rg.chord_inverse(fwd, y, y - x_shift, jac)

    return rg.RegionMap(fwd, inv, f"T_{s:g}")


# ---------------------------------------------------------------------------
# volume-distortion ODE

@dataclass(frozen=True)
class DistortionOdeReport:
    lam: float
    K: float
    eps: float
    t: np.ndarray
    D: np.ndarray
    residual: np.ndarray          # D'' + (K - eps)/N lam^2 D at interior samples
    min_residual: float
    certified: bool
    error_formula: np.ndarray     # error term from the Riccati data, against s = lam t
    error_fd: np.ndarray          # from second differences of D
    sup_error: float
    error_at_zero: float

    def as_record(self) -> dict:
        return {"lam": self.lam, "K": self.K, "eps": self.eps,
                "min_residual": self.min_residual, "certified": self.certified,
                "sup_error": self.sup_error, "error_at_zero": self.error_at_zero,
                "fd_formula_gap": float(np.max(np.abs(self.error_fd - self.error_formula[2:-2])))}


def error_term(trL, trL2, dpsi, N: float, n: int):
    """``(tr L - psi')^2 / N - tr L^2 - psi'^2 / (N - n)`` (last term dropped when ``N = n``)."""
    out = (trL - dpsi) ** 2 / N - trL2
    if N > n:
        out = out - dpsi ** 2 / (N - n)
    return out


def check_distortion_ode(st: WeightedSpacetime, tf: TransportField, lam: float, K: float,
                         eps: float, t_grid=None) -> DistortionOdeReport:
    """Second-difference check of ``D'' + (K - eps)/N lam^2 D >= 0`` plus the error term."""
    t = np.linspace(0.0, 1.0, 257) if t_grid is None else np.asarray(t_grid, dtype=float)
    ds = jc.volume_distortion(st, tf.x0, tf, lam, t, dv=tf.dv0)
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9):
        raise ValueError("t grid must be uniform")
    D = ds.D
    N, n = st.N, st.n
    dd = (-D[4:] + 16 * D[3:-1] - 30 * D[2:-2] + 16 * D[1:-3] - D[:-4]) / (12 * dt * dt)
    res = dd + (K - eps) / N * lam ** 2 * D[2:-2]
    scale = lam ** 2 * np.max(np.abs(D))
    certified = bool(np.min(res) >= -BAND * (1 + scale))
    # Riccati data are per unit t; divide by lam for the s = lam t parametrization
    L = ds.state.L / lam
    trL = np.trace(L, axis1=-2, axis2=-1)
    trL2 = np.einsum("tij,tji->t", L, L)
    dpsi = ds.dpsi / lam
    E_formula = error_term(trL, trL2, dpsi, N, n)
    vel = ds.state.velocities / lam
    ric = geo.bakry_emery_ricci(st, ds.state.positions, vel)
    E_fd = N * dd / (lam ** 2 * D[2:-2]) + ric[2:-2]
    return DistortionOdeReport(lam, K, eps, t, D, res, float(np.min(res)), certified,
                               E_formula, E_fd, float(np.max(np.abs(E_formula))),
                               float(E_formula[0]))


# ---------------------------------------------------------------------------
# region pipeline pieces

def pipeline_regions(st: WeightedSpacetime, tf: TransportField, lam: float, delta: float, t: float):
    """``A``, ``B = T_lam(A)`` and the optimal interpolant ``T_{lam t}(A)``."""
    reach = 1.25 * (lam * float(np.linalg.norm(tf.v0)) + 2 * delta * math.sqrt(st.n))
    tf = tf.with_reach(min(reach, 1.0))
    A = rg.eigen_cube(st, tf.x0, tf.v0, delta)
    B = rg.map_region(st, A, transport_map(tf, lam))
    T = rg.map_region(st, A, transport_map(tf, lam * t))
    if st.metric_constant:
        return A, B, T
    # curved case: the RK4-backed parametrizations are replaced by verified polynomial patches
    return rg.PatchedRegion(A), rg.PatchedRegion(B), rg.PatchedRegion(T)


def _tau_pair(K, N, t, theta):
    a = dist.tau(K, N, 1 - t, theta)
    b = dist.tau(K, N, t, theta)
    return a, b


@dataclass(frozen=True)
class IntegratedReport:
    lam: float
    delta: float
    t: float
    theta: float
    volumes: dict
    lhs: float
    rhs: float
    residual: float
    quadrature: dict

    def as_record(self) -> dict:
        return {"lam": self.lam, "delta": self.delta, "t": self.t, "theta": self.theta,
                "lhs": self.lhs, "rhs": self.rhs, "residual": self.residual}


def check_integrated_inequality(st: WeightedSpacetime, tf: TransportField, lam: float, delta: float,
                                K: float, N: float | None = None, t: float = 0.5,
                                voxel_side: float | None = None, theta_samples: int = 1024,
                                seed: int = 0) -> IntegratedReport:
    """``m^(1/N)(T_{lam t} A)`` against the tau-combination of ``m^(1/N)(A)``, ``m^(1/N)(T_lam A)``."""
    N = st.N if N is None else N
    A, B, T = pipeline_regions(st, tf, lam, delta, t)
    side = delta / 64 if voxel_side is None else voxel_side
    vol = {k: rg.measure(st, R, side).value for k, R in (("A", A), ("B", B), ("T", T))}
    quad = {k: rg.quadrature_measure(st, R) for k, R in (("A", A), ("B", B), ("T", T))}
    theta = gd.theta_statistic(st, A, B, K, theta_samples, seed).value
    ta, tb = _tau_pair(K, N, t, theta)
    if dist.is_inf(ta) or dist.is_inf(tb):
        raise PreconditionFailed("distortion coefficient is infinite at this theta")
    src = quad if not st.metric_constant else vol
    lhs = src["T"] ** (1 / N)
    rhs = ta * src["A"] ** (1 / N) + tb * src["B"] ** (1 / N)
    return IntegratedReport(lam, delta, t, theta, vol, lhs, rhs, lhs - rhs, quad)


def fit_integrated_model(reports: Sequence[IntegratedReport], n: int, N: float):
    """Least-squares ``C1, C2`` in ``r = (C1 (delta + lam^4) - C2 lam^2) delta^(n/N)``."""
    lam = np.array([r.lam for r in reports])
    dl = np.array([r.delta for r in reports])
    r = np.array([r.residual for r in reports])
    w = dl ** (n / N)
    X = np.stack([(dl + lam ** 4) * w, -lam ** 2 * w], axis=1)
    # scale rows so that every grid point counts equally
    s = 1.0 / np.maximum(np.abs(r), 1e-300)
    coef, *_ = np.linalg.lstsq(X * s[:, None], r * s, rcond=None)
    return float(coef[0]), float(coef[1])


def pipeline_consistency(st: WeightedSpacetime, tf: TransportField, lam: float, t: float,
                         deltas: Sequence[float]) -> dict:
    """``m^(1/N)(T_{lam t} A_delta) / m^(1/N)(A_delta)`` against ``D(t)`` as delta shrinks."""
    D = float(jc.volume_distortion(st, tf.x0, tf, lam, [0.0, t], dv=tf.dv0).D[-1])
    ratios = []
    for d in deltas:
        A, _, T = pipeline_regions(st, tf, lam, d, t)
        ratios.append((rg.quadrature_measure(st, T) / rg.quadrature_measure(st, A)) ** (1 / st.N))
    gaps = np.abs(np.array(ratios) - D)
    orders = [float(np.log2(gaps[i] / gaps[i + 1])) if gaps[i + 1] > 0 else math.inf
              for i in range(len(gaps) - 1)]
    return {"D": D, "ratios": ratios, "gaps": gaps.tolist(), "orders": orders}


# ---------------------------------------------------------------------------
# optimal versus geodesic interpolation

class _Pullback:
    """Unit-cube parameters of points of an image region ``map(A)``."""

    def __init__(self, region: rg.RegionSpec):
        self.region = region
        n = region.n
        self.jac = rg.fd_jacobian(region.points, np.full(n, 0.5), 1e-4)

    def __call__(self, y):
        y = np.atleast_2d(y)
        if hasattr(self.region, "parameters"):
            return self.region.parameters(y)
        return rg.chord_inverse(self.region.points, y, np.full(y.shape[-1], 0.5), self.jac)

    def distance(self, y):
        """Upper bound on the Euclidean chart distance from ``y`` to the region."""
        u = self(y)
        uc = np.clip(u, 0.0, 1.0)
        out = np.zeros(len(u))
        off = np.any(u != uc, axis=-1)
        if np.any(off):
            out[off] = np.linalg.norm(np.atleast_2d(y)[off] - self.region.points(uc[off]), axis=-1)
        return out, u


def interpolant_excess(st: WeightedSpacetime, A: rg.RegionSpec, B: rg.ImageRegion,
                       T: rg.ImageRegion, t: float, s_nodes: int = 24, r_nodes: int = 33) -> float:
    """m-volume of ``F_t(A x B)`` outside ``T``, from the outer envelope on each face.

    Works in the parameters ``c`` of ``T``: a pair ``(a, b)`` of cube
    parameters maps to ``c = T^-1(F_t(A(a), B(b)))``.  On the face
    ``c_k = sigma`` the outermost reach of pairs with both ``a_k = b_k = sigma``
    is maximized along the constraint lines of the linearized map; the excess
    is the face integral of the positive overshoot times the density in ``c``.
    Corner overlaps are second order in the overshoot and are ignored.
    """
    n = st.n
    pull = _Pullback(T)

    def G(ua, ub):
        x = A.points(ua)
        y = B.points(ub)
        v = gd.log_fixed(st, x, y, steps=gd.rk4_steps(y - x))
        p = gd.exp_fixed(st, x, v, t, gd.rk4_steps(v, t))
        return pull(p)

    # weights of the linearization c ~ (I - W) a + W b at the centre
    h = 1e-4
    c = np.full((1, n), 0.5)
    W = np.empty(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        W[k] = (G(c, c + e)[0, k] - G(c, c - e)[0, k]) / (2 * h)
    W = np.clip(W, 1e-6, 1 - 1e-6)

    xs, ws = np.polynomial.legendre.leggauss(s_nodes)
    xs, ws = 0.5 * (xs + 1), 0.5 * ws
    total = 0.0
    for k in range(n):
        tang = [j for j in range(n) if j != k]
        S = np.stack(np.meshgrid(*([xs] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1)
        SW = np.prod(np.stack(np.meshgrid(*([ws] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1), axis=1)
        r1 = np.linspace(-1.0, 1.0, r_nodes if n == 2 else 9)
        R = np.stack(np.meshgrid(*([r1] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1)
        for sigma in (0.0, 1.0):
            sign = 1.0 if sigma == 1.0 else -1.0
            # r in [-1,1] scaled to the admissible range per node and axis
            wj = W[tang]
            lo = np.maximum(-S / wj, (S - 1) / (1 - wj))
            hi = np.minimum((1 - S) / wj, S / (1 - wj))
            rr = lo[:, None, :] + (R[None] + 1) / 2 * (hi - lo)[:, None, :]
            ua = np.empty(rr.shape[:2] + (n,))
            ub = np.empty_like(ua)
            ua[..., tang] = S[:, None, :] + wj * rr
            ub[..., tang] = S[:, None, :] - (1 - wj) * rr
            ua[..., k] = sigma
            ub[..., k] = sigma
            cc = G(ua.reshape(-1, n), ub.reshape(-1, n)).reshape(ua.shape)
            over = sign * (cc[..., k] - sigma)
            best = np.max(over, axis=1)
            if n == 2:
                # parabolic refinement around the grid maximum
                i = np.clip(np.argmax(over, axis=1), 1, over.shape[1] - 2)
                rows = np.arange(len(over))
                f0, f1, f2 = over[rows, i - 1], over[rows, i], over[rows, i + 1]
                den = f0 - 2 * f1 + f2
                with np.errstate(divide="ignore", invalid="ignore"):
                    peak = np.where(den < 0, f1 - (f2 - f0) ** 2 / (8 * den), f1)
                best = np.maximum(best, np.minimum(peak, f1 + np.abs(f2 - f0)))
            e = np.maximum(best, 0.0)
            face = np.empty((len(S), n))
            face[:, tang] = S
            face[:, k] = sigma
            dens = _param_density(st, T, face)
            total += float(np.sum(SW * e * dens))
    return total


def _param_density(st, R: rg.RegionSpec, u: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Density of m in the unit-cube parameters of ``R`` at ``u``."""
    n = st.n
    offs = np.concatenate([h * np.eye(n), -h * np.eye(n)])
    pts = R.points(np.concatenate([u, (u[:, None, :] + offs[None]).reshape(-1, n)]))
    centre = pts[: len(u)]
    sh = pts[len(u):].reshape(len(u), 2 * n, n)
    J = np.swapaxes((sh[:, :n] - sh[:, n:]) / (2 * h), 1, 2)
    return geo.measure_density(st, centre) * np.abs(np.linalg.det(J))


@dataclass(frozen=True)
class OptimalGeodesicReport:
    lam: float
    delta: float
    t: float
    m_interpolant: float          # voxel inner estimate
    m_optimal: float              # voxel, exact membership
    m_optimal_quadrature: float
    excess: float                 # m(F_t(A x B)) - m(T_{lam t} A) from face envelopes
    gap_voxel: float              # m^(1/N) differences
    gap: float
    fitted_c: float
    max_distance: float
    containment_holds: bool
    samples: int
    skipped: int
    offenders: int

    def as_record(self) -> dict:
        return {"lam": self.lam, "delta": self.delta, "t": self.t, "gap": self.gap,
                "gap_voxel": self.gap_voxel, "fitted_c": self.fitted_c,
                "max_distance": self.max_distance, "containment": self.containment_holds,
                "samples": self.samples, "skipped": self.skipped}


CONTAINMENT_SAFETY = 1.25
ROUNDOFF = 1e-12


def compare_optimal_geodesic(st: WeightedSpacetime, tf: TransportField, lam: float, delta: float,
                             t: float = 0.5, samples: int | None = None, voxel_side: float | None = None,
                             seed: int = 0, threads: int = 1, raise_on_failure: bool = True,
                             envelope: bool = True) -> OptimalGeodesicReport:
    """Interpolant ``F_t(A x T_lam A)`` against the optimal image ``T_{lam t}(A)``.

    Containment: every sampled interpolant point must lie within
    ``delta rho``, ``rho = C (delta + lam^3)``, of ``T_{lam t}(A)``.  ``C`` is
    fitted on the even-indexed hits (times a safety factor) and checked on
    the odd-indexed ones.
    """
    A, B, T = pipeline_regions(st, tf, lam, delta, t)
    I = rg.interpolant_region(st, A, B, t, samples, seed, threads)
    side = delta / 64 if voxel_side is None else voxel_side
    mI = rg.measure(st, I, side).value
    mT = rg.measure(st, T, side).value
    mTq = rg.quadrature_measure(st, T)
    N = st.N

    pull = _Pullback(T)
    d, _ = pull.distance(I.hits)
    scale = delta * (delta + lam ** 3)
    calib, valid = d[0::2], d[1::2]
    C = CONTAINMENT_SAFETY * float(np.max(calib)) / scale
    limit = C * scale * (1 + 1e-9) + 1e-15 * (1 + np.abs(I.hits).max())
    bad = np.flatnonzero(valid > limit)
    offenders = I.hits[1::2][bad]

    excess = interpolant_excess(st, A, B, T, t) if envelope and t not in (0.0, 1.0) else 0.0
    mref = mTq if not st.metric_constant else mT
    report = OptimalGeodesicReport(
        lam, delta, t, mI, mT, mTq, excess,
        mI ** (1 / N) - mT ** (1 / N),
        (mref + excess) ** (1 / N) - mref ** (1 / N),
        C, float(np.max(d)), bad.size == 0, I.pairs, I.skipped, int(bad.size))
    if bad.size and raise_on_failure:
        raise ContainmentFailure(f"{bad.size} interpolant point(s) beyond delta*rho", offenders, C)
    return report


def scaling_exponents(xs, ys) -> tuple[list, float]:
    """Successive log-log slopes and the least-squares slope of ``ys`` against ``xs``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    steps = [float(np.log(ys[i] / ys[i + 1]) / np.log(xs[i] / xs[i + 1]))
             for i in range(len(xs) - 1)]
    slope = float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
    return steps, slope


# ---------------------------------------------------------------------------
# TBM(K, N)

@dataclass(frozen=True)
class TbmCheckResult:
    t: float
    K: float
    N: float
    theta: float
    theta_samples: int
    theta_effect: float
    volumes: dict             # A, B, G -> VolumeEstimate
    left: float
    right: float
    left_error: float
    right_error: float
    tolerance: float
    verdict: str              # holds | violated | inconclusive
    min_ell: float
    dualizability_pairs: int

    @property
    def margin(self) -> float:
        return self.left - self.right

    @property
    def certified_margin(self) -> float:
        """Violation margin after every error allowance (negative means certified)."""
        return self.left + self.left_error - (self.right - self.right_error) + self.tolerance

    def as_record(self) -> dict:
        return {"t": self.t, "K": self.K, "N": self.N, "theta": self.theta,
                "left": self.left, "right": self.right, "left_error": self.left_error,
                "right_error": self.right_error, "tolerance": self.tolerance,
                "margin": self.margin, "verdict": self.verdict,
                "theta_samples": self.theta_samples, "min_ell": self.min_ell}


def _dualizability(st, A, B, samples, seed):
    ca, cb = A.corners(), B.corners()
    xs = [np.repeat(ca, len(cb), axis=0)]
    ys = [np.tile(cb, (len(ca), 1))]
    u = gd.sobol(2 * st.n, samples, seed + 1)
    xs.append(A.points(u[:, :st.n]))
    ys.append(B.points(u[:, st.n:]))
    x, y = np.concatenate(xs), np.concatenate(ys)
    ell, _ = gd.separation_from_velocity(st, x, gd.log_fixed(st, x, y))
    return float(np.min(ell)), len(ell)


def verdict_of(left, right, left_error, right_error, tolerance) -> str:
    """``holds`` when the error bars overlap; a violation must clear them by ``tolerance``."""
    floor = ROUNDOFF * (1 + abs(right))
    if left + left_error >= right - right_error - floor:
        return "holds"
    if left + left_error < right - right_error - max(tolerance, floor):
        return "violated"
    return "inconclusive"


def check_tbm(st: WeightedSpacetime, A: rg.RegionSpec, B: rg.RegionSpec, K: float,
              N: float | None = None, ts: Sequence[float] = (0.5,), voxel_side: float | None = None,
              pair_samples: int | None = None, theta_samples: int = 4096, seed: int = 0,
              threads: int = 1, band: float = BAND) -> list[TbmCheckResult]:
    """Both sides of the timelike Brunn-Minkowski inequality at each ``t``."""
    N = st.N if N is None else N
    if not N > 1:
        raise PreconditionFailed("N must exceed 1")
    min_ell, npairs = _dualizability(st, A, B, theta_samples, seed)
    if not min_ell > 0:
        raise DualizabilityUnverified(
            f"sampled pair with ell+ = {min_ell:.3e} <= 0 among {npairs} pairs")
    side = (min(A.scale, B.scale) / 64) if voxel_side is None else voxel_side
    mA = rg.measure(st, A, side)
    mB = rg.measure(st, B, side)
    th_full = gd.theta_statistic(st, A, B, K, theta_samples, seed)
    th_half = gd.theta_statistic(st, A, B, K, theta_samples // 2, seed)
    theta = th_full.value
    theta_res = abs(th_full.value - th_half.value)
    out = []
    for t in ts:
        I = rg.interpolant_region(st, A, B, t, pair_samples, seed, threads)
        mI = rg.measure(st, I, side)
        ta, tb = _tau_pair(K, N, t, theta)
        if dist.is_inf(ta) or dist.is_inf(tb):
            raise PreconditionFailed("infinite distortion coefficient; Theta beyond the diameter bound")
        left = mI.value ** (1 / N)
        right = ta * mA.value ** (1 / N) + tb * mB.value ** (1 / N)
        left_err = (mI.value + mI.error_bound) ** (1 / N) - left
        r_hi = ta * (mA.value + mA.refinement_gap) ** (1 / N) + tb * (mB.value + mB.refinement_gap) ** (1 / N)
        r_lo = ta * max(mA.value - mA.refinement_gap, 0) ** (1 / N) + tb * max(mB.value - mB.refinement_gap, 0) ** (1 / N)
        slope = (dist.tau_theta_slope(K, N, 1 - t, theta) * mA.value ** (1 / N)
                 + dist.tau_theta_slope(K, N, t, theta) * mB.value ** (1 / N))
        theta_effect = slope * theta_res
        right_err = max(r_hi - right, right - r_lo) + theta_effect
        tol = band * (1 + abs(right))
        out.append(TbmCheckResult(float(t), K, N, theta, th_full.samples, theta_effect,
                                  {"A": mA, "B": mB, "G": mI}, left, right, left_err, right_err,
                                  tol, verdict_of(left, right, left_err, right_err, tol),
                                  min_ell, npairs))
    return out


# ---------------------------------------------------------------------------
# counterexample search

@dataclass(frozen=True)
class Candidate:
    x0: np.ndarray
    v0: np.ndarray
    ricci: float
    rapidity: float = 0.0


@dataclass(frozen=True)
class CounterexampleReport:
    status: str                       # violation | none | inconclusive
    candidate: Optional[Candidate]
    result: Optional[TbmCheckResult]
    lam: Optional[float]
    delta: Optional[float]
    best_margin: float
    trials: list

    @property
    def exit_code(self) -> int:
        return {"violation": 0, "none": 1, "inconclusive": 2}[self.status]


def _unit_timelike(st, x, dirs, rapidity):
    """Future unit timelike vectors at ``x``: rapidity along spatial frame directions."""
    E = geo.orthonormal_frame(geo.metric_at(st, x), geo.future_vector(st, x))
    out = []
    for d, z in zip(dirs, rapidity):
        w = math.cosh(z) * E[:, 0] + math.sinh(z) * (E[:, 1:] @ d)
        out.append(w)
    return np.array(out)


def scan_curvature(st: WeightedSpacetime, search_box, points: int = 32, directions: int = 8,
                   max_rapidity: float = 1.0, seed: int = 0) -> list[Candidate]:
    """``Ric^{N,m}(v, v)`` over quasi-random points and unit timelike directions.

    Directions are boosts of the chart's future frame leg by rapidities in
    ``[0, max_rapidity]``; every point also gets the unboosted leg.
    Returns candidates in scan order (chart centre first).
    """
    lo, hi = (np.asarray(b, dtype=float) for b in search_box)
    n = st.n
    pts = np.concatenate([((lo + hi) / 2)[None], lo + (hi - lo) * gd.sobol(n, points, seed)])
    u = gd.sobol(n, directions, seed + 7)
    dirs, raps = [np.eye(n - 1)[0]], [0.0]
    for r in u:
        if n > 2:
            w = 2 * r[1:] - 1
            nw = np.linalg.norm(w)
            dirs.append(w / nw if nw > 0 else np.eye(n - 1)[0])
        else:
            dirs.append(np.array([1.0 if r[1] >= 0.5 else -1.0]))
        raps.append(max_rapidity * float(r[0]))
    out = []
    for x in pts:
        vs = _unit_timelike(st, x, dirs, raps)
        ric = np.atleast_1d(geo.bakry_emery_ricci(st, np.broadcast_to(x, vs.shape), vs))
        out.extend(Candidate(x.copy(), v, float(c), z) for v, c, z in zip(vs, ric, raps))
    return out


def pick_candidate(cands: Sequence[Candidate], threshold: float) -> Optional[Candidate]:
    """Least boosted candidate with curvature at or below ``threshold``.

    Unboosted directions keep the eigen-cubes aligned with the chart axes,
    where voxel measures are exact.
    """
    ok = [c for c in cands if c.ricci <= threshold]
    if not ok:
        return None
    return min(ok, key=lambda c: (round(c.rapidity, 12), round(c.ricci, 9)))


def find_counterexample(st: WeightedSpacetime, K: float, N: float | None = None, search_box=None,
                        eps_floor: float = 0.4, lam0: float = 0.2, levels: int = 5, t: float = 0.5,
                        pair_samples: int | None = None, theta_samples: int = 4096,
                        scan_points: int = 32, seed: int = 0, threads: int = 1) -> CounterexampleReport:
    """Scan for negative Bakry-Emery curvature, then test TBM on shrinking cube pairs.

    ``lam = lam0 2^-j`` for ``j < levels`` with ``delta = lam^3``; stops at the
    first certified violation.
    """
    N = st.N if N is None else N
    if search_box is None:
        c = (np.asarray(st.chart_lo) + np.asarray(st.chart_hi)) / 2
        search_box = (c - 0.5, c + 0.5)
    scanned = scan_curvature(st, search_box, scan_points, seed=seed)
    cand = pick_candidate(scanned, K - 2 * eps_floor)
    if cand is None:
        return CounterexampleReport("none", min(scanned, key=lambda c: c.ricci), None, None, None,
                                    math.inf, [])
    tf = build_transport_field(st, cand.x0, cand.v0, reach=1.5 * lam0)
    trials = []
    best = math.inf
    inconclusive = False
    for j in range(levels):
        lam = lam0 * 2.0 ** -j
        delta = lam ** 3
        try:
            A = rg.eigen_cube(st, tf.x0, tf.v0, delta)
            B = rg.map_region(st, A, transport_map(tf, lam))
            res = check_tbm(st, A, B, K, N, (t,), None, pair_samples, theta_samples, seed, threads)[0]
        except TbmError as exc:
            inconclusive = True
            trials.append({"lam": lam, "delta": delta, "error": type(exc).__name__, "message": str(exc)})
            continue
        trials.append({"lam": lam, "delta": delta, "verdict": res.verdict,
                       "certified_margin": res.certified_margin})
        best = min(best, res.certified_margin)
        if res.verdict == "violated":
            return CounterexampleReport("violation", cand, res, lam, delta, best, trials)
        if res.verdict == "inconclusive":
            inconclusive = True
    return CounterexampleReport("inconclusive" if inconclusive else "none", cand, None, None, None,
                                best, trials)


# ---------------------------------------------------------------------------
# discrete q-Lorentz-Wasserstein

@dataclass(frozen=True)
class CouplingProblem:
    mu: np.ndarray
    nu: np.ndarray
    q: float
    ell: np.ndarray                  # pairwise ell, NaN where minus infinity
    assignment: Optional[tuple]      # nu index for each mu atom
    value: Optional[float]           # None is minus infinity

    @property
    def minus_infinity(self) -> bool:
        return self.value is None


def pairwise_ell(st: WeightedSpacetime, mu, nu) -> np.ndarray:
    """``ell(x_i, y_j)`` with NaN for pairs that are not timelike (minus infinity)."""
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    nu = np.atleast_2d(np.asarray(nu, dtype=float))
    x = np.repeat(mu, len(nu), axis=0)
    y = np.tile(nu, (len(mu), 1))
    ell, kind = gd.separation_batch(st, x, y)
    out = np.where(kind == 2, ell, np.nan)
    return out.reshape(len(mu), len(nu))


def coupling_value(w: np.ndarray, perm, q: float) -> Optional[float]:
    """Mean of ``ell_{i, perm(i)}^q``, or None if a pair is not timelike."""
    vals = [w[i, j] for i, j in enumerate(perm)]
    if any(not np.isfinite(v) for v in vals):
        return None
    return math.fsum(v ** q for v in vals) / len(vals)


def lw_distance_discrete(st: WeightedSpacetime, mu, nu, q: float) -> CouplingProblem:
    """Optimal coupling between uniform measures with equally many atoms."""
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    nu = np.atleast_2d(np.asarray(nu, dtype=float))
    m = len(mu)
    if len(nu) != m:
        raise ValueError("measures must have equally many atoms")
    if m > 10:
        raise TooManyAtoms(f"{m} atoms; at most 10 are supported")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    ell = pairwise_ell(st, mu, nu)
    best, best_perm = None, None
    if m <= 8:
        for perm in itertools.permutations(range(m)):
            val = coupling_value(ell, perm, q)
            if val is not None and (best is None or val > best):
                best, best_perm = val, perm
    else:
        finite = np.isfinite(ell)
        gain = np.where(finite, np.where(finite, ell, 0.0) ** q, -1e6 * (1 + m))
        rows, cols = linear_sum_assignment(gain, maximize=True)
        perm = tuple(int(c) for c in cols[np.argsort(rows)])
        val = coupling_value(ell, perm, q)
        if val is not None:
            best, best_perm = val, perm
    value = None if best is None else best ** (1.0 / q)
    return CouplingProblem(mu, nu, q, ell, best_perm, value)
