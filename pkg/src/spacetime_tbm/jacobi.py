"""Matrix Jacobi fields and Riccati states along geodesics.

All matrices live in a parallel-transported g-orthonormal frame ``E`` (columns
are frame legs in coordinates, ``E.T g E = eta``).  The tidal operator is
``R_v w = Riem(w, v) v`` so that Jacobi fields obey ``J'' + R_v J = 0`` and
``tr R_v = Ric(v, v)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import geometry as geo
from .errors import ConjugatePoints, EigenFailure, LeftChart, SingularM, StepFailure
from .geodesics import ODE_ATOL, ODE_RTOL, GeodesicSolution, exp_map, log_map
from .geometry import WeightedSpacetime

EIGEN_TOL = 1e-8
SINGULAR_TOL = 1e-12

Field = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# frames and the tidal operator

def frame_inverse(gm: np.ndarray, E: np.ndarray) -> np.ndarray:
    """``E^{-1} = eta E^T g`` for an orthonormal frame."""
    n = gm.shape[-1]
    return geo.eta(n) @ np.swapaxes(E, -1, -2) @ gm


def adapted_frame(st: WeightedSpacetime, x, v=None) -> np.ndarray:
    """Orthonormal frame at ``x`` whose first leg is along ``v`` when ``v`` is timelike."""
    gm = geo.metric_at(st, x)
    if v is not None:
        v = np.asarray(v, dtype=float)
        if geo.inner(gm, v, v) <= geo.LIGHTLIKE_TOL:
            v = None
    return geo.orthonormal_frame(gm, v)


def tidal_in_frame(st: WeightedSpacetime, x, v, E: np.ndarray) -> np.ndarray:
    """Frame matrix of ``w -> Riem(w, v) v`` (batched over leading axes)."""
    x = np.asarray(x, dtype=float)
    n = st.n
    if st.metric_constant:
        return np.zeros(x.shape[:-1] + (n, n))
    A = geo.tidal_matrix(geo.riemann(st, x, check=False), v)
    return frame_inverse(geo.metric_array(st, x), E) @ A @ E


@dataclass(frozen=True)
class TidalOperator:
    x: np.ndarray
    v: np.ndarray
    frame: np.ndarray
    matrix: np.ndarray          # in the frame
    eigenvalues: np.ndarray     # eigenvalues[0] belongs to v
    eigenvectors: np.ndarray    # frame components, columns

    @property
    def coordinate_eigenvectors(self) -> np.ndarray:
        return self.frame @ self.eigenvectors

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))


def tidal_operator(st: WeightedSpacetime, x, v) -> TidalOperator:
    """Eigen-decomposition of ``R_v`` in an orthonormal frame with first leg along ``v``.

    ``R_v`` kills ``v`` and is self-adjoint, so in that frame it is
    ``0 (+) S`` with ``S`` symmetric.  Any visible departure from this block
    form beyond tolerance is reported as :class:`EigenFailure`.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    gm = geo.metric_at(st, x)
    if not geo.inner(gm, v, v) > geo.LIGHTLIKE_TOL:
        raise EigenFailure("tidal operator needs a timelike generator")
    E = geo.orthonormal_frame(gm, v)
    R = tidal_in_frame(st, x, v, E)
    n = st.n
    scale = 1.0 + np.max(np.abs(R))
    S = R[1:, 1:]
    leak = max(np.max(np.abs(R[:, 0])), np.max(np.abs(R[0, :])), np.max(np.abs(S - S.T)))
    if leak > EIGEN_TOL * scale * 1e2:
        raise EigenFailure(f"tidal operator not block symmetric (defect {leak:.2e})")
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    vals = np.concatenate([[0.0], w])
    vecs = np.zeros((n, n))
    vecs[0, 0] = 1.0
    vecs[1:, 1:] = U
    return TidalOperator(x, v, E, R, vals, vecs)


# ---------------------------------------------------------------------------
# propagation

@dataclass
class JacobiState:
    """Samples of ``M`` and ``M'`` along a geodesic, frame components.

    ``M`` may be rectangular (``n x m``) when several Jacobi families are
    propagated together.
    """

    t: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    frames: np.ndarray
    M: np.ndarray
    Mdot: np.ndarray
    R: np.ndarray
    L: Optional[np.ndarray] = None

    def residual(self) -> np.ndarray:
        """Max-norm of ``M'' + R M`` at interior samples (fourth-order differences)."""
        t = self.t
        dt = np.diff(t)
        if len(t) < 5 or not np.allclose(dt, dt[0], rtol=1e-9):
            raise ValueError("residual needs at least 5 uniform samples")
        h = dt[0]
        M = self.M
        dd = (-M[4:] + 16 * M[3:-1] - 30 * M[2:-2] + 16 * M[1:-3] - M[:-4]) / (12 * h * h)
        res = dd + self.R[2:-2] @ M[2:-2]
        return np.max(np.abs(res), axis=(-2, -1))

    def riccati_residual(self) -> np.ndarray:
        """Max-norm of ``L' + R + L^2`` at interior samples (fourth-order differences)."""
        if self.L is None:
            raise ValueError("riccati_state has not been computed")
        t = self.t
        h = t[1] - t[0]
        L = self.L
        d = (-L[4:] + 8 * L[3:-1] - 8 * L[1:-3] + L[:-4]) / (12 * h)
        res = d + self.R[2:-2] + L[2:-2] @ L[2:-2]
        return np.max(np.abs(res), axis=(-2, -1))


def _jacobi_rhs(st: WeightedSpacetime, n: int, m: int, margin: float):
    nn, nm = n * n, n * m

    def rhs(t, y):
        x, v = y[:n], y[n:2 * n]
        E = y[2 * n:2 * n + nn].reshape(n, n)
        M = y[2 * n + nn:2 * n + nn + nm].reshape(n, m)
        P = y[2 * n + nn + nm:].reshape(n, m)
        if not st.in_chart(x, margin):
            raise LeftChart(f"geodesic left the chart near t={t:.6g}")
        gam = geo._christoffels_raw(st, x[None], st.default_h())[0]
        gv = np.einsum("kij,i->kj", gam, v)
        R = tidal_in_frame(st, x, v, E)
        return np.concatenate([v, -gv @ v, (-gv @ E).ravel(), P.ravel(), (-R @ M).ravel()])
    return rhs


def propagate(st: WeightedSpacetime, x, v, M0, Mdot0, t_eval, frame=None,
              rtol: float = ODE_RTOL, atol: float = ODE_ATOL) -> JacobiState:
    """Integrate the geodesic ``(x, v)`` with its frame and ``M'' + R M = 0``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n = st.n
    M0 = np.asarray(M0, dtype=float).reshape(n, -1)
    Mdot0 = np.asarray(Mdot0, dtype=float).reshape(n, -1)
    m = M0.shape[1]
    t_eval = np.asarray(t_eval, dtype=float)
    E0 = adapted_frame(st, x, v) if frame is None else np.asarray(frame, dtype=float)
    if not st.in_chart(x):
        raise LeftChart("initial point outside the chart")

    if st.metric_constant:
        T = t_eval[:, None]
        pos = x[None] + T * v[None]
        if not np.all(st.in_chart(pos)):
            raise LeftChart("geodesic left the chart")
        M = M0[None] + t_eval[:, None, None] * Mdot0[None]
        k = len(t_eval)
        return JacobiState(t_eval, pos, np.broadcast_to(v, (k, n)).copy(),
                           np.broadcast_to(E0, (k, n, n)).copy(), M,
                           np.broadcast_to(Mdot0, (k, n, m)).copy(), np.zeros((k, n, n)))

    margin = 4 * st.curvature_h()
    y0 = np.concatenate([x, v, E0.ravel(), M0.ravel(), Mdot0.ravel()])
    t_end = float(t_eval[-1])
    sol = solve_ivp(_jacobi_rhs(st, n, m, margin), (float(t_eval[0]), t_end), y0,
                    method="RK45", t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StepFailure(f"Jacobi integration failed: {sol.message}")
    Y = sol.y.T
    nn, nm = n * n, n * m
    pos = Y[:, :n]
    vel = Y[:, n:2 * n]
    E = Y[:, 2 * n:2 * n + nn].reshape(-1, n, n)
    M = Y[:, 2 * n + nn:2 * n + nn + nm].reshape(-1, n, m)
    P = Y[:, 2 * n + nn + nm:].reshape(-1, n, m)
    R = tidal_in_frame(st, pos, vel, E)
    return JacobiState(t_eval, pos, vel, E, M, P, R)


def propagate_jacobi_ivp(st: WeightedSpacetime, geod: GeodesicSolution, M0, Mdot0) -> JacobiState:
    """Jacobi matrix along ``geod`` (re-integrated jointly) at its sample times."""
    frame = geod.frames[0] if geod.frames is not None else None
    return propagate(st, geod.positions[0], geod.velocities[0], M0, Mdot0, geod.t, frame)


def riccati_state(js: JacobiState, tol: float = SINGULAR_TOL) -> JacobiState:
    """Fill ``L = M' M^{-1}``; raises :class:`SingularM` at the first degenerate sample."""
    M = js.M
    if M.shape[-1] != M.shape[-2]:
        raise ValueError("Riccati state needs square M")
    det = np.linalg.det(M)
    scale = np.maximum(1.0, np.max(np.abs(M), axis=(-2, -1))) ** M.shape[-1]
    bad = np.flatnonzero(np.abs(det) <= tol * scale)
    if bad.size:
        k = int(bad[0])
        raise SingularM(f"M is singular at t={js.t[k]:.6g}", t=float(js.t[k]))
    L = js.Mdot @ np.linalg.inv(M)
    return JacobiState(js.t, js.positions, js.velocities, js.frames, js.M, js.Mdot, js.R, L)


# ---------------------------------------------------------------------------
# boundary problem and Taylor models

@dataclass(frozen=True)
class BoundaryJacobi:
    """``J(t) = P(t) u + Q(t) w`` for ``J(0) = u``, ``J(1) = w`` (frame components)."""

    t: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    frames: np.ndarray
    velocity: np.ndarray

    def apply(self, u, w) -> np.ndarray:
        return self.P @ np.asarray(u, float) + self.Q @ np.asarray(w, float)


def boundary_jacobi(st: WeightedSpacetime, x, y, t_eval=None, frame=None,
                    velocity=None) -> BoundaryJacobi:
    """Solution operator of the two-point Jacobi problem on the geodesic from ``x`` to ``y``.

    Propagates the ``(J(0), J'(0))`` fundamental system once and solves the
    ``2n x 2n`` boundary system.
    """
    n = st.n
    x = np.asarray(x, dtype=float)
    v = log_map(st, x, y) if velocity is None else np.asarray(velocity, dtype=float)
    t_eval = np.linspace(0.0, 1.0, 9) if t_eval is None else np.asarray(t_eval, dtype=float)
    grid = np.union1d(t_eval, [0.0, 1.0])
    E0 = adapted_frame(st, x, v) if frame is None else frame
    Id, Z = np.eye(n), np.zeros((n, n))
    js = propagate(st, x, v, np.hstack([Id, Z]), np.hstack([Z, Id]), grid, E0)
    C1, S1 = js.M[-1][:, :n], js.M[-1][:, n:]
    block = np.block([[Id, Z], [C1, S1]])
    if np.linalg.cond(block) > 1e12:
        raise ConjugatePoints("endpoints are conjugate along the connecting geodesic")
    inv = np.linalg.solve(block, np.eye(2 * n))
    idx = np.searchsorted(grid, t_eval)
    D = js.M[idx] @ inv
    return BoundaryJacobi(t_eval, D[..., :n], D[..., n:], js.frames[idx], v)


def df_model(R0: np.ndarray, lam: float, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Second-order model of the boundary operator: ``(P, Q)`` with ``R0 = R_{v0}``."""
    n = R0.shape[-1]
    c = lam ** 2 * t * (1 - t) / 6.0
    return (1 - t) * np.eye(n) + c * (2 - t) * R0, t * np.eye(n) + c * (1 + t) * R0


@dataclass(frozen=True)
class TaylorCheck:
    lam: float
    t: float
    numeric: np.ndarray
    model: np.ndarray
    error: float


def df_taylor_check(st: WeightedSpacetime, x0, v0, lam: float, t: float) -> TaylorCheck:
    """Compare the boundary operator along ``s -> exp(s lam v0)`` with its quadratic model."""
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    E0 = adapted_frame(st, x0, v0)
    R0 = tidal_in_frame(st, x0, v0, E0)
    vel = lam * v0
    y = exp_map(st, x0, vel)
    bj = boundary_jacobi(st, x0, y, [t], frame=E0, velocity=vel)
    numeric = np.hstack([bj.P[0], bj.Q[0]])
    model = np.hstack(df_model(R0, lam, t))
    return TaylorCheck(lam, t, numeric, model, float(np.linalg.norm(numeric - model, 2)))


def first_order_component(st: WeightedSpacetime, x0, v0, lam0: float, t: float) -> tuple[float, float]:
    """Linear-in-``lam`` part of ``DF_t`` and the scale of its fit residual.

    Regresses the difference quotient ``(DF(lam) - DF(0)) / lam = a + b lam``
    over ``lam0 * (1, 1/2, 1/4)``.  Returns ``(max|a|, max residual)``; a
    vanishing first-order term shows up as ``a`` at the residual level.
    """
    lams = lam0 * np.array([1.0, 0.5, 0.25])
    n = st.n
    flat = np.hstack([(1 - t) * np.eye(n), t * np.eye(n)])
    data = np.stack([(df_taylor_check(st, x0, v0, lam, t).numeric - flat).ravel() / lam
                     for lam in lams])
    A = np.stack([np.ones(3), lams], axis=1)
    coef, *_ = np.linalg.lstsq(A, data, rcond=None)
    resid = data - A @ coef
    return float(np.max(np.abs(coef[0]))), float(np.max(np.abs(resid)))


# ---------------------------------------------------------------------------
# transport maps

def covariant_derivative(st: WeightedSpacetime, field: Field, x, h: float | None = None) -> np.ndarray:
    """``(nabla V)^i_j = d_j V^i + gamma^i_jk V^k`` by Richardson central differences."""
    x = np.asarray(x, dtype=float)
    n = st.n
    h = st.curvature_h() if h is None else h

    def jac(step):
        cols = []
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            cols.append((np.asarray(field(x + e)) - np.asarray(field(x - e))) / (2 * step))
        return np.stack(cols, axis=1)

    dV = (4 * jac(h) - jac(2 * h)) / 3
    if st.metric_constant:
        return dV
    gam = geo.christoffels(st, x)
    return dV + np.einsum("ijk,k->ij", gam, np.asarray(field(x)))


@dataclass(frozen=True)
class TransportDerivative:
    exact: np.ndarray
    model: np.ndarray
    error: float
    image: np.ndarray
    frames: tuple


def _transport_setup(st, x, field, dv):
    x = np.asarray(x, dtype=float)
    V = np.asarray(field(x), dtype=float)
    DV = covariant_derivative(st, field, x) if dv is None else np.asarray(dv, dtype=float)
    E0 = adapted_frame(st, x, V)
    Einv = frame_inverse(geo.metric_array(st, x), E0)
    return x, V, Einv @ DV @ E0, E0


def transport_derivative(st: WeightedSpacetime, x, field: Field, lam: float,
                         dv=None) -> TransportDerivative:
    """``D T_lam`` at ``x`` for ``T_lam(y) = exp_y(lam V(y))`` in parallel frames.

    The model is ``Id + lam DV - lam^2/2 R_V``.
    """
    x, V, DVf, E0 = _transport_setup(st, x, field, dv)
    n = st.n
    js = propagate(st, x, lam * V, np.eye(n), lam * DVf, [0.0, 1.0], E0)
    R0 = tidal_in_frame(st, x, V, E0)
    model = np.eye(n) + lam * DVf - 0.5 * lam ** 2 * R0
    exact = js.M[-1]
    return TransportDerivative(exact, model, float(np.linalg.norm(exact - model, 2)),
                               js.positions[-1], (E0, js.frames[-1]))


@dataclass
class DistortionSamples:
    """Infinitesimal volume distortion along ``t -> T_{lam t}(x)``."""

    t: np.ndarray
    D: np.ndarray
    J: np.ndarray
    lam: float
    N: float
    state: JacobiState
    psi: np.ndarray = field(repr=False, default=None)
    dpsi: np.ndarray = field(repr=False, default=None)


def volume_distortion(st: WeightedSpacetime, x, field: Field, lam: float, t_grid,
                      dv=None) -> DistortionSamples:
    """``D(t) = (exp(psi(x) - psi(T_{lam t} x)) det D T_{lam t})^{1/N}`` on ``t_grid``."""
    x, V, DVf, E0 = _transport_setup(st, x, field, dv)
    n = st.n
    t_grid = np.asarray(t_grid, dtype=float)
    js = propagate(st, x, lam * V, np.eye(n), lam * DVf, t_grid, E0)
    js = riccati_state(js)
    det = np.linalg.det(js.M)
    if np.any(det <= 0):
        k = int(np.flatnonzero(det <= 0)[0])
        raise SingularM(f"det DT vanishes at t={t_grid[k]:.6g}", t=float(t_grid[k]))
    psi = np.asarray(geo.psi_value(st, js.positions), dtype=float)
    psi0 = float(geo.psi_value(st, x))
    Jac = np.exp(psi0 - psi) * det
    # d/dt psi(gamma(t)) = dpsi(gamma') with gamma' = lam * V-geodesic velocity
    dpsi = np.einsum("ti,ti->t", geo.psi_gradient(st, js.positions), js.velocities)
    return DistortionSamples(t_grid, Jac ** (1.0 / st.N), Jac, lam, st.N, js, psi, dpsi)
