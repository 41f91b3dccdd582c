"""Weighted Lorentzian spacetimes and their curvature.

Signature is (+, -, ..., -).  Everything here works on stacked points: a
point array of shape ``(..., n)`` produces tensors with the same leading
shape.  Derivatives of the metric are central finite differences; curvature
uses nested differences with a second-order Richardson step.

Index conventions
-----------------
``gamma[..., k, i, j]`` is the Christoffel symbol with upper index ``k``.
``riem[..., l, i, j, k]`` is the ``l`` component of ``Riem(d_i, d_j) d_k``
with ``Riem(X, Y)Z = [D_X, D_Y]Z - D_[X,Y] Z``.  The Ricci tensor is the
trace ``Ric(Y, Z) = tr(X -> Riem(X, Y)Z)``, so timelike Ricci is negative on
expanding (de Sitter-like) metrics and Jacobi fields obey
``J'' + Riem(J, v)v = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional, Sequence

import numpy as np

from . import exprparse as ep
from .errors import (
    DomainError,
    InvalidDimensionParam,
    SignatureError,
    SingularMetric,
)

LIGHTLIKE_TOL = 1e-12


@dataclass(frozen=True)
class WeightedSpacetime:
    """The triple (M, g, m) on a single chart.

    ``g`` is a symmetric ``n x n`` tuple of expressions, ``psi`` the weight in
    ``dm = exp(-psi) dvol_g`` and ``N`` the synthetic dimension.
    """

    n: int
    g: tuple
    psi: ep.Expr
    N: float
    chart_lo: tuple
    chart_hi: tuple
    name: str = "custom"
    scale: float = 1.0
    future: Optional[tuple] = None
    sources: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise InvalidDimensionParam(f"dimension n={self.n} must be >= 2")
        if len(self.g) != self.n or any(len(row) != self.n for row in self.g):
            raise InvalidDimensionParam("metric must be n x n")
        for i in range(self.n):
            for j in range(i):
                if self.g[i][j] != self.g[j][i]:
                    raise SignatureError(f"metric not symmetric at ({i},{j})")
        for e in [c for row in self.g for c in row] + [self.psi]:
            if ep.max_coord(e) >= self.n:
                raise InvalidDimensionParam("expression references a coordinate >= n")
        if not self.N > 1:
            raise InvalidDimensionParam(f"N={self.N} must exceed 1")
        if not self.weight_constant and not self.N > self.n:
            raise InvalidDimensionParam(
                f"non-constant weight requires N > n (N={self.N}, n={self.n})")
        if len(self.chart_lo) != self.n or len(self.chart_hi) != self.n:
            raise InvalidDimensionParam("chart bounds must have n entries")
        if any(not lo < hi for lo, hi in zip(self.chart_lo, self.chart_hi)):
            raise InvalidDimensionParam("chart bounds must satisfy lo < hi")

    @cached_property
    def metric_constant(self) -> bool:
        """True when every metric component is a constant (flat chart)."""
        return all(ep.is_constant(c) for row in self.g for c in row)

    @cached_property
    def weight_constant(self) -> bool:
        return ep.is_constant(self.psi)

    @cached_property
    def _metric_fns(self):
        return [(i, j, ep.compile_array(self.g[i][j]))
                for i in range(self.n) for j in range(i, self.n)]

    def default_h(self) -> float:
        return 1e-5 * self.scale

    def curvature_h(self) -> float:
        return 1e-3 * self.scale

    def in_chart(self, x, margin: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.chart_lo) + margin
        hi = np.asarray(self.chart_hi) - margin
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def with_weight_shift(self, shift: float) -> "WeightedSpacetime":
        """Same spacetime with ``psi -> psi + shift`` (m scaled by exp(-shift))."""
        psi = ep.Binary("+", self.psi, ep.Const(float(shift))) if shift >= 0 else \
            ep.Binary("-", self.psi, ep.Const(float(-shift)))
        return WeightedSpacetime(self.n, self.g, psi, self.N, self.chart_lo, self.chart_hi,
                                 self.name, self.scale, self.future, dict(self.sources))


# ---------------------------------------------------------------------------
# metric

def _as_points(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def metric_array(st: WeightedSpacetime, x) -> np.ndarray:
    """Metric components at stacked points, no validation."""
    x = _as_points(x)
    pts = x if x.ndim > 1 else x[None, :]
    out = np.empty(pts.shape[:-1] + (st.n, st.n))
    for i, j, fn in st._metric_fns:
        val = fn(pts)
        out[..., i, j] = val
        out[..., j, i] = val
    if not np.all(np.isfinite(out)):
        raise DomainError("non-finite metric component")
    return out if x.ndim > 1 else out[0]


def check_signature(gm: np.ndarray, where="") -> None:
    eig = np.linalg.eigvalsh(gm)
    scale = 1.0 + np.max(np.abs(eig), axis=-1, keepdims=True)
    tol = 1e-12 * scale
    pos = np.sum(eig > tol, axis=-1)
    neg = np.sum(eig < -tol, axis=-1)
    n = gm.shape[-1]
    if np.any(pos != 1) or np.any(neg != n - 1):
        raise SignatureError(f"metric signature is not (+,-,...,-){where}")


def metric_at(st: WeightedSpacetime, x) -> np.ndarray:
    """Validated metric at one or more points."""
    gm = metric_array(st, x)
    check_signature(gm)
    return gm


def inner(gm: np.ndarray, v, w) -> np.ndarray:
    return np.einsum("...i,...ij,...j->...", v, gm, w)


def _small_inverse(gm: np.ndarray):
    # adjugate formulas; numpy's stacked inv/det loop is slow for tiny matrices
    n = gm.shape[-1]
    if n == 2:
        a, b, c, d = gm[..., 0, 0], gm[..., 0, 1], gm[..., 1, 0], gm[..., 1, 1]
        det = a * d - b * c
        adj = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2)
        return det, adj
    g = [[gm[..., i, j] for j in range(3)] for i in range(3)]

    def cof(i, j):
        r = [k for k in range(3) if k != i]
        c = [k for k in range(3) if k != j]
        m = g[r[0]][c[0]] * g[r[1]][c[1]] - g[r[0]][c[1]] * g[r[1]][c[0]]
        return m if (i + j) % 2 == 0 else -m
    C = [[cof(i, j) for j in range(3)] for i in range(3)]
    det = g[0][0] * C[0][0] + g[0][1] * C[0][1] + g[0][2] * C[0][2]
    adj = np.stack([np.stack([C[j][i] for j in range(3)], -1) for i in range(3)], -2)
    return det, adj


def inverse_metric(gm: np.ndarray) -> np.ndarray:
    if gm.shape[-1] in (2, 3):
        det, adj = _small_inverse(gm)
        if np.any(np.abs(det) < 1e-300) or not np.all(np.isfinite(det)):
            raise SingularMetric("metric is not invertible")
        return adj / det[..., None, None]
    det = np.linalg.det(gm)
    if np.any(np.abs(det) < 1e-300) or not np.all(np.isfinite(det)):
        raise SingularMetric("metric is not invertible")
    return np.linalg.inv(gm)


def small_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stacked ``a @ b`` as a sum of broadcast products (fast for tiny inner size)."""
    out = a[..., :, 0, None] * b[..., 0, None, :]
    for l in range(1, a.shape[-1]):
        out = out + a[..., :, l, None] * b[..., l, None, :]
    return out


def future_vector(st: WeightedSpacetime, x) -> np.ndarray:
    x = _as_points(x)
    if st.future is None:
        T = np.zeros(x.shape)
        T[..., 0] = 1.0
        return T
    pts = x if x.ndim > 1 else x[None, :]
    T = np.stack([ep.evaluate(c, pts) for c in st.future], axis=-1)
    return T if x.ndim > 1 else T[0]


def causal_type(st: WeightedSpacetime, x, v) -> tuple[str, str]:
    """Classify ``v`` at ``x`` as timelike/lightlike/spacelike and its time orientation."""
    gm = metric_array(st, x)
    v = np.asarray(v, dtype=float)
    q = float(inner(gm, v, v))
    if abs(q) <= LIGHTLIKE_TOL:
        kind = "lightlike"
    elif q > 0:
        kind = "timelike"
    else:
        return "spacelike", "none"
    if not np.any(v):
        return kind, "none"
    s = float(inner(gm, v, future_vector(st, x)))
    if s > 0:
        return kind, "future"
    if s < 0:
        return kind, "past"
    return kind, "none"


def is_future_causal(st: WeightedSpacetime, x, v, gm=None) -> np.ndarray:
    """Vectorised: g(v,v) >= -tol and g(v, T) > 0."""
    if gm is None:
        gm = metric_array(st, x)
    q = inner(gm, v, v)
    s = inner(gm, v, future_vector(st, x))
    return (q >= -LIGHTLIKE_TOL) & (s > 0)


# ---------------------------------------------------------------------------
# finite differences

def _check_margin(st: WeightedSpacetime, x: np.ndarray, margin: float) -> None:
    if not np.all(st.in_chart(x, margin)):
        raise DomainError(f"point closer than {margin:g} to the chart boundary")


@lru_cache(maxsize=64)
def _stencil(n: int, h: float, order: int) -> np.ndarray:
    offs = [np.zeros(n)]
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        offs += [e, -e]
    if order >= 2:
        for a in range(n):
            for b in range(a + 1, n):
                for sa in (1, -1):
                    for sb in (1, -1):
                        e = np.zeros(n)
                        e[a] = sa * h
                        e[b] = sb * h
                        offs.append(e)
    return np.array(offs)


def metric_jet(st: WeightedSpacetime, x, h: float, order: int = 1):
    """Metric and its coordinate derivatives from one stacked stencil evaluation.

    Returns ``(g, dg, ddg)`` with ``dg[..., l, i, j] = d_l g_ij`` and
    ``ddg[..., a, b, i, j] = d_a d_b g_ij`` (``None`` when ``order == 1``).
    """
    x = _as_points(x)
    n = st.n
    lead = x.shape[:-1]
    if st.metric_constant:
        g = metric_array(st, x)
        dg = np.zeros(lead + (n, n, n))
        return g, dg, (np.zeros(lead + (n, n, n, n)) if order >= 2 else None)
    offs = _stencil(n, h, order)
    pts = x[None, ...] + offs.reshape((len(offs),) + (1,) * len(lead) + (n,))
    vals = metric_array(st, pts.reshape(-1, n)).reshape((len(offs),) + lead + (n, n))
    g0 = vals[0]
    plus = vals[1:2 * n + 1:2]
    minus = vals[2:2 * n + 1:2]
    dg = np.moveaxis((plus - minus) / (2 * h), 0, -3)
    if order < 2:
        return g0, dg, None
    ddg = np.zeros(lead + (n, n, n, n))
    for a in range(n):
        ddg[..., a, a, :, :] = (plus[a] - 2 * g0 + minus[a]) / h ** 2
    k = 2 * n + 1
    for a in range(n):
        for b in range(a + 1, n):
            pp, pm, mp, mm = vals[k:k + 4]
            k += 4
            val = (pp - pm - mp + mm) / (4 * h ** 2)
            ddg[..., a, b, :, :] = val
            ddg[..., b, a, :, :] = val
    return g0, dg, ddg


def metric_derivative(st: WeightedSpacetime, x, h: float) -> np.ndarray:
    """``dg[..., l, i, j] = d_l g_ij`` by central differences."""
    return metric_jet(st, x, h, 1)[1]


def _lower_gamma(dg: np.ndarray) -> np.ndarray:
    # L[..., l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    return 0.5 * (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)


def _raise_first(ginv: np.ndarray, low: np.ndarray) -> np.ndarray:
    # contract ginv[..., k, l] with low[..., l, i, j] as one matmul
    n = low.shape[-1]
    flat = low.reshape(low.shape[:-2] + (n * n,))
    return small_matmul(ginv, flat).reshape(np.broadcast_shapes(ginv.shape[:-2], low.shape[:-3]) + (n, n, n))


def _christoffels_raw(st: WeightedSpacetime, x: np.ndarray, h: float) -> np.ndarray:
    n = st.n
    if st.metric_constant:
        return np.zeros(x.shape[:-1] + (n, n, n))
    g, dg, _ = metric_jet(st, x, h, 1)
    return _raise_first(inverse_metric(g), _lower_gamma(dg))


def christoffels(st: WeightedSpacetime, x, h: float | None = None,
                 check: bool = True) -> np.ndarray:
    """Christoffel symbols ``gamma[..., k, i, j]`` of the Levi-Civita connection."""
    x = _as_points(x)
    h = st.default_h() if h is None else h
    if check:
        _check_margin(st, x, 2 * h)
    return _christoffels_raw(st, x, h)


def _connection_jet(st: WeightedSpacetime, x: np.ndarray, h: float):
    """Christoffels and their derivatives ``dgam[..., m, k, i, j] = d_m gamma^k_ij``."""
    g, dg, ddg = metric_jet(st, x, h, 2)
    ginv = inverse_metric(g)
    low = _lower_gamma(dg)
    gam = _raise_first(ginv, low)
    # d_m g^kl = -g^ka d_m g_ab g^bl
    gi = ginv[..., None, :, :]
    dginv = -small_matmul(small_matmul(gi, dg), gi)
    dlow = 0.5 * (np.einsum("...mijl->...mlij", ddg) + np.einsum("...mjil->...mlij", ddg) - ddg)
    dgam = (_raise_first(dginv, low[..., None, :, :, :])
            + _raise_first(ginv[..., None, :, :], dlow))
    return gam, dgam


def christoffel_derivative(st: WeightedSpacetime, x, h: float) -> np.ndarray:
    """``dgam[..., m, k, i, j] = d_m gamma^k_ij`` from second differences of the metric."""
    x = _as_points(x)
    n = st.n
    if st.metric_constant:
        return np.zeros(x.shape[:-1] + (n, n, n, n))
    return _connection_jet(st, x, h)[1]


def _riemann_from(gam: np.ndarray, dgam: np.ndarray) -> np.ndarray:
    # R^l_ijk = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik
    d1 = np.einsum("...iljk->...lijk", dgam)
    d2 = np.einsum("...jlik->...lijk", dgam)
    q1 = np.einsum("...lim,...mjk->...lijk", gam, gam)
    q2 = np.einsum("...ljm,...mik->...lijk", gam, gam)
    return d1 - d2 + q1 - q2


def _riemann_at_step(st, x, h):
    return _riemann_from(*_connection_jet(st, x, h))


def riemann(st: WeightedSpacetime, x, h: float | None = None,
            richardson: bool = True, check: bool = True) -> np.ndarray:
    """Riemann tensor ``riem[..., l, i, j, k]``.

    With ``richardson`` the value at step ``h`` is combined with the one at
    ``2h`` to cancel the leading ``h**2`` error.
    """
    x = _as_points(x)
    n = st.n
    if st.metric_constant:
        return np.zeros(x.shape[:-1] + (n,) * 4)
    h = st.curvature_h() if h is None else h
    if check:
        _check_margin(st, x, (2 if richardson else 1) * h)
    r1 = _riemann_at_step(st, x, h)
    if not richardson:
        return r1
    r2 = _riemann_at_step(st, x, 2 * h)
    return (4.0 * r1 - r2) / 3.0


def ricci(st: WeightedSpacetime, x, h: float | None = None, richardson: bool = True,
          check: bool = True) -> np.ndarray:
    """Ricci matrix ``Ric_jk = R^i_ijk``."""
    riem = riemann(st, x, h, richardson, check)
    return np.einsum("...iijk->...jk", riem)


def lower_riemann(st: WeightedSpacetime, x, riem: np.ndarray) -> np.ndarray:
    """``R_lijk = g_lm R^m_ijk``."""
    return np.einsum("...lm,...mijk->...lijk", metric_array(st, x), riem)


def tidal_matrix(riem: np.ndarray, v) -> np.ndarray:
    """Coordinate matrix of ``w -> Riem(w, v) v``: ``A[..., l, i] = R^l_{i j k} v^j v^k``."""
    return np.einsum("...lijk,...j,...k->...li", riem, v, v)


# ---------------------------------------------------------------------------
# weight

def psi_value(st: WeightedSpacetime, x) -> np.ndarray | float:
    x = _as_points(x)
    if ep.is_constant(st.psi):
        val = st.psi.value if isinstance(st.psi, ep.Const) else ep.evaluate(st.psi, np.zeros(st.n))
        return np.full(x.shape[:-1], float(val)) if x.ndim > 1 else float(val)
    return ep.evaluate(st.psi, x)


def psi_gradient(st: WeightedSpacetime, x, h: float | None = None) -> np.ndarray:
    x = _as_points(x)
    n = st.n
    out = np.zeros(x.shape)
    if st.weight_constant:
        return out
    h = st.curvature_h() if h is None else h

    def grad(step):
        g = np.zeros(x.shape)
        for i in range(n):
            e = np.zeros(n)
            e[i] = step
            g[..., i] = (np.asarray(psi_value(st, x + e)) - np.asarray(psi_value(st, x - e))) / (2 * step)
        return g

    return (4.0 * grad(h) - grad(2 * h)) / 3.0


def psi_hessian(st: WeightedSpacetime, x, h: float | None = None) -> np.ndarray:
    """Coordinate second derivatives ``d_i d_j psi`` (Richardson-extrapolated)."""
    x = _as_points(x)
    n = st.n
    out = np.zeros(x.shape + (n,))
    if st.weight_constant:
        return out
    h = st.curvature_h() if h is None else h

    def hess(step):
        H = np.zeros(x.shape + (n,))
        f0 = np.asarray(psi_value(st, x))
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = step
            H[..., i, i] = (np.asarray(psi_value(st, x + ei)) - 2 * f0
                            + np.asarray(psi_value(st, x - ei))) / step ** 2
            for j in range(i + 1, n):
                ej = np.zeros(n)
                ej[j] = step
                val = (np.asarray(psi_value(st, x + ei + ej)) - np.asarray(psi_value(st, x + ei - ej))
                       - np.asarray(psi_value(st, x - ei + ej))
                       + np.asarray(psi_value(st, x - ei - ej))) / (4 * step ** 2)
                H[..., i, j] = val
                H[..., j, i] = val
        return H

    return (4.0 * hess(h) - hess(2 * h)) / 3.0


def covariant_hessian_psi(st: WeightedSpacetime, x, h: float | None = None) -> np.ndarray:
    """``Hess psi_ij = d_i d_j psi - gamma^k_ij d_k psi``."""
    x = _as_points(x)
    H = psi_hessian(st, x, h)
    if st.weight_constant or st.metric_constant:
        return H
    gam = _christoffels_raw(st, x, st.default_h())
    return H - np.einsum("...kij,...k->...ij", gam, psi_gradient(st, x, h))


def bakry_emery_ricci_matrix(st: WeightedSpacetime, x, h: float | None = None) -> np.ndarray:
    """Matrix of ``Ric + Hess psi - dpsi (x) dpsi / (N - n)``."""
    x = _as_points(x)
    ric = ricci(st, x, h)
    if st.weight_constant:
        return ric
    if not st.N > st.n:
        raise InvalidDimensionParam(f"N={st.N} must exceed n={st.n} for a non-constant weight")
    dpsi = psi_gradient(st, x, h)
    return ric + covariant_hessian_psi(st, x, h) - np.einsum("...i,...j->...ij", dpsi, dpsi) / (st.N - st.n)


def bakry_emery_ricci(st: WeightedSpacetime, x, v, h: float | None = None) -> np.ndarray | float:
    """``Ric^{N,m}(v, v)`` at ``x``."""
    v = np.asarray(v, dtype=float)
    val = np.einsum("...i,...ij,...j->...", v, bakry_emery_ricci_matrix(st, x, h), v)
    return float(val) if np.ndim(val) == 0 else val


def measure_density(st: WeightedSpacetime, x) -> np.ndarray | float:
    """Density of m with respect to coordinate Lebesgue measure."""
    x = _as_points(x)
    det = np.linalg.det(metric_array(st, x))
    if np.any(np.abs(det) < 1e-300):
        raise SingularMetric("metric is not invertible")
    out = np.exp(-np.asarray(psi_value(st, x))) * np.sqrt(np.abs(det))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# frames

def orthonormal_frame(gm: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
    """g-orthonormal frame as columns, first leg along the timelike ``v``.

    Gram-Schmidt over ``v`` and the coordinate basis; returns ``E`` with
    ``E.T @ gm @ E = diag(1, -1, ..., -1)``.
    """
    n = gm.shape[-1]
    cands = []
    if v is not None:
        cands.append(np.asarray(v, dtype=float))
    cands.extend(np.eye(n))
    legs, signs = [], []
    for u in cands:
        w = u.copy()
        for e, s in zip(legs, signs):
            w = w - s * (e @ gm @ w) * e
        q = w @ gm @ w
        if abs(q) < 1e-10 * max(1.0, u @ u):
            continue
        if not legs and q <= 0:
            continue
        legs.append(w / np.sqrt(abs(q)))
        signs.append(np.sign(q))
        if len(legs) == n:
            break
    E = np.stack(legs, axis=1)
    eta = E.T @ gm @ E
    if not np.allclose(eta, np.diag([1.0] + [-1.0] * (n - 1)), atol=1e-9):
        raise SignatureError("could not build a (+,-,...,-) orthonormal frame")
    return E


ETA_CACHE: dict[int, np.ndarray] = {}


def eta(n: int) -> np.ndarray:
    if n not in ETA_CACHE:
        ETA_CACHE[n] = np.diag([1.0] + [-1.0] * (n - 1))
    return ETA_CACHE[n]


@dataclass
class CurvatureReport:
    x: np.ndarray
    christoffels: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    be_ricci: np.ndarray
    h: float


def curvature_report(st: WeightedSpacetime, x: Sequence[float], h: float | None = None) -> CurvatureReport:
    x = _as_points(x)
    metric_at(st, x)
    h = st.curvature_h() if h is None else h
    riem = riemann(st, x, h)
    ric = np.einsum("iijk->jk", riem)
    be = bakry_emery_ricci_matrix(st, x, h)
    return CurvatureReport(x, christoffels(st, x), riem, ric, be, h)
