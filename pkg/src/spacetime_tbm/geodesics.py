"""Geodesic initial and boundary value problems, time separation and Theta.

All solvers are batched: base points and vectors may carry a leading batch
axis and are integrated as one stacked ODE.  Constant metrics take the
straight-line closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import qmc

from . import geometry as geo
from .errors import (
    AmbiguousGeodesic,
    EmptyRegion,
    LeftChart,
    NoConvergence,
    StepFailure,
)
from .geometry import WeightedSpacetime

ODE_RTOL = 1e-10
ODE_ATOL = 1e-12
LOG_TOL = 1e-12


@dataclass(frozen=True)
class TangentPoint:
    x: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class GeodesicSolution:
    t: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    frames: Optional[np.ndarray] = None
    order: int = 5
    affine: bool = True

    def residual(self, st: WeightedSpacetime) -> np.ndarray:
        """|gamma'' + Gamma(gamma', gamma')| at interior samples (acceleration by differences of velocity)."""
        t, x, v = self.t, self.positions, self.velocities
        acc = np.gradient(v, t, axis=0, edge_order=2)
        gam = geo.christoffels(st, x, check=False)
        r = acc + np.einsum("...kij,...i,...j->...k", gam, v, v)
        return np.linalg.norm(r[1:-1], axis=-1)

    def lagrangian(self, st: WeightedSpacetime) -> np.ndarray:
        return geo.inner(geo.metric_array(st, self.positions), self.velocities, self.velocities)


# ---------------------------------------------------------------------------
# stacked geodesic flow

class _Flow:
    """Right-hand side for geodesics with optional frame and variational blocks."""

    def __init__(self, st, batch, frame, variational, h):
        self.st = st
        self.n = st.n
        self.batch = batch
        self.frame = frame
        self.variational = variational
        self.h = h
        self.h_var = st.curvature_h()

    def pack(self, x, v, E=None, dx=None, dv=None):
        parts = [x.ravel(), v.ravel()]
        if self.frame:
            parts.append(E.ravel())
        if self.variational:
            parts += [dx.ravel(), dv.ravel()]
        return np.concatenate(parts)

    def unpack(self, y):
        b, n = self.batch, self.n
        i = 0
        x = y[i:i + b * n].reshape(b, n)
        i += b * n
        v = y[i:i + b * n].reshape(b, n)
        i += b * n
        E = dx = dv = None
        if self.frame:
            E = y[i:i + b * n * n].reshape(b, n, n)
            i += b * n * n
        if self.variational:
            dx = y[i:i + b * n * n].reshape(b, n, n)
            i += b * n * n
            dv = y[i:i + b * n * n].reshape(b, n, n)
        return x, v, E, dx, dv

    def __call__(self, t, y):
        st = self.st
        x, v, E, dx, dv = self.unpack(y)
        if not np.all(st.in_chart(x, 2 * self.h)):
            raise LeftChart(f"geodesic left the chart near t={t:.6g}")
        gam = geo._christoffels_raw(st, x, self.h)
        gv = np.sum(gam * v[:, None, :, None], axis=2)
        acc = -np.sum(gv * v[:, None, :], axis=-1)
        dE = ddx = ddv = None
        if self.frame:
            dE = -geo.small_matmul(gv, E)
        if self.variational:
            dgam = geo.christoffel_derivative(st, x, self.h_var)
            dgv = np.sum(dgam * v[:, None, None, :, None], axis=3)
            dgvv = np.moveaxis(np.sum(dgv * v[:, None, None, :], axis=-1), 1, 2)
            ddx = dv
            ddv = -geo.small_matmul(dgvv, dx) - 2.0 * geo.small_matmul(gv, dv)
        return self.pack(v, acc, dE, ddx, ddv)


def integrate(st: WeightedSpacetime, x, v, t_eval, frame=None, variational=False,
              h: float | None = None, rtol: float = ODE_RTOL, atol: float = ODE_ATOL):
    """Integrate stacked geodesics from parameter 0 to the values in ``t_eval``.

    Returns arrays with a leading axis over ``t_eval`` and a batch axis:
    positions ``(T, B, n)``, velocities, frames ``(T, B, n, n)`` and the
    variational pair ``(dx, dv)`` started at ``dx = 0, dv = Id``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    x, v = np.broadcast_arrays(x, v)
    b, n = x.shape
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    h = st.default_h() if h is None else h
    if not np.all(st.in_chart(x)):
        raise LeftChart("initial point outside the chart")

    if frame is not None:
        frame = np.broadcast_to(np.asarray(frame, dtype=float), (b, n, n)).copy()
    if st.metric_constant:
        pos = x[None] + t_eval[:, None, None] * v[None]
        if not np.all(st.in_chart(pos)):
            raise LeftChart("geodesic left the chart")
        vel = np.broadcast_to(v[None], pos.shape).copy()
        out = {"x": pos, "v": vel}
        if frame is not None:
            out["E"] = np.broadcast_to(frame[None], (len(t_eval), b, n, n)).copy()
        if variational:
            eye = np.broadcast_to(np.eye(n), (b, n, n))
            out["dx"] = t_eval[:, None, None, None] * eye[None]
            out["dv"] = np.broadcast_to(eye[None], (len(t_eval), b, n, n)).copy()
        return out

    flow = _Flow(st, b, frame is not None, variational, h)
    eye = np.broadcast_to(np.eye(n), (b, n, n))
    y0 = flow.pack(x, v, frame, np.zeros((b, n, n)) if variational else None,
                   eye if variational else None)
    t_end = float(t_eval[np.argmax(np.abs(t_eval))])
    results = np.empty((len(t_eval), y0.size))
    zero = t_eval == 0.0
    results[zero] = y0
    if t_end != 0.0:
        order = np.argsort(np.abs(t_eval))
        nonzero = [k for k in order if t_eval[k] != 0.0]
        sol = solve_ivp(flow, (0.0, t_end), y0, method="RK45", t_eval=t_eval[nonzero],
                        rtol=rtol, atol=atol)
        if sol.status != 0:
            raise StepFailure(f"geodesic integration failed: {sol.message}")
        results[nonzero] = sol.y.T
    out = {"x": [], "v": [], "E": [], "dx": [], "dv": []}
    for row in results:
        px, pv, E, dx, dv = flow.unpack(row)
        out["x"].append(px)
        out["v"].append(pv)
        out["E"].append(E)
        out["dx"].append(dx)
        out["dv"].append(dv)
    res = {"x": np.array(out["x"]), "v": np.array(out["v"])}
    if frame is not None:
        res["E"] = np.array(out["E"])
    if variational:
        res["dx"] = np.array(out["dx"])
        res["dv"] = np.array(out["dv"])
    return res


def exp_map(st: WeightedSpacetime, x, v, t: float = 1.0) -> np.ndarray:
    """Position at parameter ``t`` of the geodesic with gamma(0)=x, gamma'(0)=v."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if t == 0.0:
        return np.broadcast_to(x, np.broadcast_shapes(x.shape, v.shape)).copy()
    single = x.ndim == 1 and v.ndim == 1
    res = integrate(st, x, v, [t])["x"][0]
    return res[0] if single else res


def exp_with_jacobian(st: WeightedSpacetime, x, v):
    """``exp_x(v)`` and its derivative in ``v`` (coordinate Jacobi fields at time 1)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    res = integrate(st, x, v, [1.0], variational=True)
    y, J = res["x"][0], res["dx"][0]
    if x.ndim == 1 and v.ndim == 1:
        return y[0], J[0]
    return y, J


def geodesic(st: WeightedSpacetime, x, v, samples: int | np.ndarray = 33,
             frame=None) -> GeodesicSolution:
    """Sampled geodesic on [0, 1] (or on the given parameter samples)."""
    t = np.linspace(0.0, 1.0, samples) if np.isscalar(samples) else np.asarray(samples, float)
    res = integrate(st, x, v, t, frame=frame)
    E = res["E"][:, 0] if frame is not None else None
    return GeodesicSolution(t, res["x"][:, 0], res["v"][:, 0], E)


# ---------------------------------------------------------------------------
# boundary value problem

def _newton_log(st, x, y, v0, max_iter, tol):
    b, n = x.shape
    v = v0.copy()
    J_out = np.zeros((b, n, n))
    done = np.zeros(b, dtype=bool)
    res_norm = np.full(b, np.inf)
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        ya, Ja = exp_with_jacobian(st, x[act], v[act])
        r = ya - y[act]
        rn = np.linalg.norm(r, axis=-1)
        scale = 1.0 + np.linalg.norm(y[act], axis=-1)
        conv = rn <= tol * scale
        J_out[act] = Ja
        res_norm[act] = rn
        done[act[conv]] = True
        todo = ~conv
        if not np.any(todo):
            break
        step = np.linalg.solve(Ja[todo], r[todo][..., None])[..., 0]
        # damp overly long steps
        vn = 1.0 + np.linalg.norm(v[act[todo]], axis=-1)
        sn = np.linalg.norm(step, axis=-1)
        fac = np.minimum(1.0, 0.5 * vn / np.maximum(sn, 1e-300))
        v[act[todo]] -= fac[:, None] * step
    return v, J_out, done, res_norm


def log_map(st: WeightedSpacetime, x, y, max_iter: int = 40, tol: float = LOG_TOL,
            return_jacobian: bool = False, check_unique: bool = False):
    """Initial velocity of the geodesic joining ``x`` to ``y`` on [0, 1].

    Single shooting with Newton; the shot derivative comes from the
    variational (Jacobi) equations, started at ``y - x``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = x.ndim == 1 and y.ndim == 1
    xb, yb = np.broadcast_arrays(np.atleast_2d(x), np.atleast_2d(y))
    xb, yb = xb.copy(), yb.copy()
    if st.metric_constant:
        v = yb - xb
        J = np.broadcast_to(np.eye(st.n), (len(v), st.n, st.n)).copy()
    else:
        v, J, done, rn = _newton_log(st, xb, yb, yb - xb, max_iter, tol)
        if not np.all(done):
            raise NoConvergence(f"shooting did not converge for {np.sum(~done)} pair(s); "
                                f"max residual {np.max(rn[~done]):.3e}")
        same = np.all(xb == yb, axis=-1)
        v[same] = 0.0
        if check_unique:
            for s in (0.5, 1.5):
                v2, _, done2, _ = _newton_log(st, xb, yb, s * (yb - xb), max_iter, tol)
                far = done2 & (np.linalg.norm(v2 - v, axis=-1) > 1e-6 * (1 + np.linalg.norm(v, axis=-1)))
                if np.any(far):
                    raise AmbiguousGeodesic("distinct connecting geodesics found from different starts")
    if single:
        v, J = v[0], J[0]
    if return_jacobian:
        return v, J
    return v


def log_tangent(st: WeightedSpacetime, x, y) -> TangentPoint:
    return TangentPoint(np.asarray(x, dtype=float), log_map(st, x, y))


def interpolate_F(st: WeightedSpacetime, x, y, t: float) -> np.ndarray:
    """``F_t(x, y) = exp_x(t log_x y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if t == 0.0:
        return np.broadcast_to(x, np.broadcast_shapes(x.shape, y.shape)).copy()
    v = log_map(st, x, y)
    return exp_map(st, x, v, t)


# ---------------------------------------------------------------------------
# time separation

@dataclass(frozen=True)
class SeparationValue:
    """ell(x, y): a non-negative real, or the minus-infinity marker (``value is None``)."""

    value: Optional[float]
    classification: str  # "timelike" | "lightlike" | "spacelike-or-acausal"

    @property
    def is_minus_infinity(self) -> bool:
        return self.value is None

    @property
    def plus(self) -> float:
        """ell^+ = max(ell, 0)."""
        return 0.0 if self.value is None else max(self.value, 0.0)


def separation_from_velocity(st: WeightedSpacetime, x, v):
    """Batch classification: returns ``(ell_plus, kind)``; ``kind`` is 2 timelike, 1 lightlike, 0 otherwise."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    gm = geo.metric_array(st, x)
    q = geo.inner(gm, v, v)
    fut = geo.inner(gm, v, geo.future_vector(st, x)) > 0
    kind = np.zeros(q.shape, dtype=int)
    kind[fut & (np.abs(q) <= geo.LIGHTLIKE_TOL)] = 1
    kind[fut & (q > geo.LIGHTLIKE_TOL)] = 2
    ell = np.where(kind == 2, np.sqrt(np.maximum(q, 0.0)), 0.0)
    return ell, kind


def time_separation(st: WeightedSpacetime, x, y) -> SeparationValue:
    """ell(x, y) = |log_x y|_g for future causal log, else minus infinity."""
    v = log_map(st, x, y)
    ell, kind = separation_from_velocity(st, x, v)
    k = int(kind[0])
    if k == 2:
        return SeparationValue(float(ell[0]), "timelike")
    if k == 1:
        return SeparationValue(0.0, "lightlike")
    return SeparationValue(None, "spacelike-or-acausal")


def separation_batch(st: WeightedSpacetime, x, y):
    """Vectorised ell^+ and causal kind for stacked pairs."""
    v = log_map(st, np.atleast_2d(x), np.atleast_2d(y))
    return separation_from_velocity(st, np.atleast_2d(x), v)


# ---------------------------------------------------------------------------
# Theta

def sobol(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """``count`` scrambled Sobol points in [0,1)^dim (count rounded up to a power of two)."""
    m = max(0, math.ceil(math.log2(max(count, 1))))
    return qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)[:count]


@dataclass(frozen=True)
class ThetaResult:
    value: float
    samples: int
    argpair: tuple


def theta_statistic(st: WeightedSpacetime, A, B, K: float, samples: int = 4096,
                    seed: int = 0) -> ThetaResult:
    """inf (K >= 0) or sup (K < 0) of ell^+ over corner pairs and quasi-random pairs.

    ``A`` and ``B`` need ``corners()`` and ``points(u)`` mapping unit-cube
    parameters to chart points (see :class:`regions.RegionSpec`).
    """
    ca, cb = A.corners(), B.corners()
    if len(ca) == 0 or len(cb) == 0:
        raise EmptyRegion("Theta needs non-empty regions")
    xs = [np.repeat(ca, len(cb), axis=0)]
    ys = [np.tile(cb, (len(ca), 1))]
    if samples > 0:
        u = sobol(2 * st.n, samples, seed)
        xs.append(A.points(u[:, :st.n]))
        ys.append(B.points(u[:, st.n:]))
    xs = np.concatenate(xs)
    ys = np.concatenate(ys)
    ell, _ = separation_batch(st, xs, ys)
    k = int(np.argmin(ell)) if K >= 0 else int(np.argmax(ell))
    return ThetaResult(float(ell[k]), len(ell), (xs[k], ys[k]))


# ---------------------------------------------------------------------------
# fixed-step maps
#
# Region maps need exp/log that are smooth functions of their inputs (finite
# difference Jacobians of composite maps) and cheap on large batches of nearby
# geodesics.  Classical RK4 with a step count fixed per call does both.

RK4_STEP = 4e-3


def rk4_steps(v, t: float = 1.0, step: float = RK4_STEP) -> int:
    """Step count keeping the coordinate increment per step near ``step``."""
    vmax = float(np.max(np.linalg.norm(np.atleast_2d(v), axis=-1))) if np.size(v) else 0.0
    return int(min(4096, max(8, math.ceil(vmax * abs(t) / step))))


def _rk4(flow, y, t, steps):
    dt = t / steps
    for k in range(steps):
        s = k * dt
        k1 = flow(s, y)
        k2 = flow(s + dt / 2, y + dt / 2 * k1)
        k3 = flow(s + dt / 2, y + dt / 2 * k2)
        k4 = flow(s + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def exp_fixed(st: WeightedSpacetime, x, v, t: float = 1.0, steps: int | None = None,
              jacobian: bool = False):
    """Batched ``exp_x(t v)`` by classical RK4; optionally with ``d/dv`` at parameter ``t``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    x, v = np.broadcast_arrays(x, v)
    b, n = x.shape
    if st.metric_constant or t == 0.0:
        y = x + t * v
        if not np.all(st.in_chart(y)):
            raise LeftChart("geodesic left the chart")
        J = np.broadcast_to(t * np.eye(n), (b, n, n)).copy()
        return (y, J) if jacobian else y
    steps = rk4_steps(v, t) if steps is None else steps
    flow = _Flow(st, b, False, jacobian, st.default_h())
    z0 = flow.pack(x, v, None, np.zeros((b, n, n)) if jacobian else None,
                   np.broadcast_to(np.eye(n), (b, n, n)) if jacobian else None)
    y, _, _, dx, _ = flow.unpack(_rk4(flow, z0, t, steps))
    return (y, dx) if jacobian else y


def log_fixed(st: WeightedSpacetime, x, y, v0=None, steps: int | None = None,
              max_iter: int = 30, tol: float = LOG_TOL) -> np.ndarray:
    """Inverse of :func:`exp_fixed` at ``t = 1``.

    Chord iteration from ``v0`` (default: second-order Taylor guess): the shot Jacobian is
    refreshed every fourth sweep and reused in between.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    if st.metric_constant:
        return y - x
    if v0 is None:
        # second-order start: x(1) ~ x + v - Gamma(v, v) / 2
        d = y - x
        gam = geo._christoffels_raw(st, x, st.default_h())
        v = d + 0.5 * np.sum(gam * d[:, None, :, None] * d[:, None, None, :], axis=(2, 3))
    else:
        v = np.broadcast_to(v0, x.shape).astype(float, copy=True)
    steps = rk4_steps(v) if steps is None else steps
    scale = 1.0 + np.linalg.norm(y, axis=-1)
    act = np.arange(len(x))
    Jinv = None
    for it in range(max_iter):
        if it % 4 == 0:
            ya, J = exp_fixed(st, x[act], v[act], 1.0, steps, jacobian=True)
            Jinv = np.linalg.inv(J)
        else:
            ya = exp_fixed(st, x[act], v[act], 1.0, steps)
        r = ya - y[act]
        conv = np.linalg.norm(r, axis=-1) <= tol * scale[act]
        if np.all(conv):
            return v
        keep = ~conv
        Jinv = Jinv[keep]
        v[act[keep]] -= np.sum(Jinv * r[keep][:, None, :], axis=-1)
        act = act[keep]
    raise NoConvergence(f"fixed-step shooting did not converge for {act.size} pair(s)")
