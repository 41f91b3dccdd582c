"""Generalized sines and distortion coefficients.

``sigma_k^(t)(theta) = sin_k(t theta) / sin_k(theta)`` while ``k theta^2 < pi^2``
and ``+inf`` beyond; ``tau_{K,N}^(t) = t^(1/N) sigma_{K/(N-1)}^(t)^(1-1/N)``.
Infinite coefficients are returned as the :data:`INF` tag rather than an IEEE
infinity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import GridTooCoarse, InvalidDimensionParam, PreconditionFailed

SERIES_CUTOFF = 1e-6
BAND = 1e-6


class _PlusInfinity:
    """Tag for an infinite distortion coefficient; compares above every real."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INF"

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __float__(self):
        return math.inf


INF = _PlusInfinity()
Extended = Union[float, _PlusInfinity]


def is_inf(x) -> bool:
    return x is INF


@dataclass(frozen=True)
class DistortionParams:
    K: float
    N: float
    t: float
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"t={self.t} outside [0, 1]")
        if not self.N > 1:
            raise InvalidDimensionParam(f"N={self.N} must exceed 1")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")


# ---------------------------------------------------------------------------
# scalar and vector kernels

def sin_k(k, t):
    """Solution of ``f'' + k f = 0``, ``f(0) = 0``, ``f'(0) = 1``."""
    k_arr = np.asarray(k, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    k_b, t_b = np.broadcast_arrays(k_arr, t_arr)
    out = np.empty(k_b.shape)
    z = k_b * t_b * t_b
    small = np.abs(z) < SERIES_CUTOFF
    # t (1 - z/6 + z^2/120 - z^3/5040)
    out[small] = t_b[small] * (1 - z[small] / 6 * (1 - z[small] / 20 * (1 - z[small] / 42)))
    pos = ~small & (k_b > 0)
    neg = ~small & (k_b < 0)
    if np.any(pos):
        r = np.sqrt(k_b[pos])
        out[pos] = np.sin(r * t_b[pos]) / r
    if np.any(neg):
        r = np.sqrt(-k_b[neg])
        out[neg] = np.sinh(r * t_b[neg]) / r
    return float(out) if out.ndim == 0 else out


def sigma_values(k, t, theta):
    """Vectorised sigma: ``(values, finite)``, values are NaN where infinite."""
    k, t, theta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (k, t, theta)))
    finite = k * theta * theta < math.pi ** 2
    out = np.full(k.shape, np.nan)
    zero = finite & (theta == 0)
    out[zero] = t[zero]
    reg = finite & (theta != 0)
    if np.any(reg):
        out[reg] = sin_k(k[reg], t[reg] * theta[reg]) / sin_k(k[reg], theta[reg])
    ends0 = finite & (t == 0)
    ends1 = finite & (t == 1)
    out[ends0] = 0.0
    out[ends1] = 1.0
    return out, finite


def sigma(k: float, t: float, theta: float) -> Extended:
    """Reduced distortion coefficient; :data:`INF` when ``k theta^2 >= pi^2``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    val, fin = sigma_values(k, t, theta)
    return float(val) if bool(fin) else INF


def tau_values(K, N, t, theta):
    """Vectorised tau: ``(values, finite)``; ``N`` may be an array."""
    N = np.asarray(N, dtype=float)
    if not np.all(N > 1):
        raise InvalidDimensionParam(f"N={N} must exceed 1")
    s, fin = sigma_values(np.asarray(K, float) / (N - 1), t, theta)
    t = np.broadcast_to(np.asarray(t, float), s.shape)
    return t ** (1.0 / N) * np.abs(s) ** (1.0 - 1.0 / N) * np.sign(s), fin


def tau(K: float, N: float, t: float, theta: float) -> Extended:
    """Distortion coefficient ``tau_{K,N}^(t)(theta)``."""
    if not N > 1:
        raise InvalidDimensionParam(f"N={N} must exceed 1")
    s = sigma(K / (N - 1), t, theta)
    if is_inf(s):
        return INF
    return t ** (1.0 / N) * s ** (1.0 - 1.0 / N)


def tau_theta_slope(K: float, N: float, t: float, theta: float, rel: float = 1e-4) -> float:
    """``|d tau / d theta|`` by a central difference."""
    h = rel * max(theta, 1e-3)
    lo, hi = tau(K, N, t, max(theta - h, 0.0)), tau(K, N, t, theta + h)
    if is_inf(lo) or is_inf(hi):
        return math.inf
    return abs(hi - lo) / (theta + h - max(theta - h, 0.0))


def sigma_series(k, t, theta):
    """Second-order small-theta expansion ``t + t(1-t)(1+t) k theta^2 / 6``."""
    t = np.asarray(t, dtype=float)
    return t + t * (1 - t) * (1 + t) * np.asarray(k) * np.asarray(theta) ** 2 / 6.0


def bvp_residual(k: float, theta: float, samples: int = 1001) -> float:
    """Max residual of ``f'' + k theta^2 f`` for ``f = sigma_k^(.)(theta)``.

    Fourth-order central differences on a uniform grid of ``[0, 1]``.
    """
    t = np.linspace(0.0, 1.0, samples)
    f, fin = sigma_values(k, t, theta)
    if not np.all(fin):
        return math.inf
    h = t[1] - t[0]
    dd = (-f[4:] + 16 * f[3:-1] - 30 * f[2:-2] + 16 * f[1:-3] - f[:-4]) / (12 * h * h)
    return float(np.max(np.abs(dd + k * theta ** 2 * f[2:-2])))


# ---------------------------------------------------------------------------
# Theorem-style checks on sampled functions

@dataclass(frozen=True)
class ConvexityReport:
    ode_holds: bool
    sigma_concavity_holds: bool
    ode_margin: float
    sigma_margin: float


def _uniform(grid: np.ndarray) -> float:
    d = np.diff(grid)
    if len(grid) < 64:
        raise GridTooCoarse(f"{len(grid)} samples; at least 64 are needed")
    if not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise GridTooCoarse("grid must be uniform")
    return float(d[0])


def _triples(G: int):
    i, m, j = np.meshgrid(np.arange(G), np.arange(G), np.arange(G), indexing="ij")
    keep = (i < m) & (m < j)
    return i[keep], m[keep], j[keep]


def check_convexity_equivalence(grid, f, k: float, band: float = BAND) -> ConvexityReport:
    """Evaluate both sides of the ``f'' + k f >= 0`` / sigma-chord equivalence on samples.

    The differential side uses second differences; the chord side runs over
    every grid triple ``a' < x < b'``.  Margins are the worst values of
    ``f'' + k f`` and of ``rhs - lhs``.
    """
    grid = np.asarray(grid, dtype=float)
    f = np.asarray(f, dtype=float)
    h = _uniform(grid)
    scale = 1.0 + np.max(np.abs(f))
    dd = (f[2:] - 2 * f[1:-1] + f[:-2]) / h ** 2
    ode = dd + k * f[1:-1]
    ode_margin = float(np.min(ode))

    i, m, j = _triples(len(grid))
    theta = grid[j] - grid[i]
    t = (grid[m] - grid[i]) / theta
    s1, fin1 = sigma_values(k, 1 - t, theta)
    s2, fin2 = sigma_values(k, t, theta)
    fin = fin1 & fin2
    gap = s1[fin] * f[i[fin]] + s2[fin] * f[j[fin]] - f[m[fin]]
    sigma_margin = float(np.min(gap)) if gap.size else math.inf
    tol = band * scale
    return ConvexityReport(bool(ode_margin >= -tol), bool(sigma_margin >= -tol), ode_margin, sigma_margin)


@dataclass(frozen=True)
class MixedReport:
    holds: bool
    margin: float


def check_mixed_distortion(grid, f_par, f_perp, k1: float, n1: float, k2: float, n2: float,
                           band: float = BAND) -> MixedReport:
    """Grid check of the split inequality for ``f = f_par f_perp`` with ``N = n1 + n2``.

    Both factors must satisfy ``(g^(1/n))'' + (k/n) g^(1/n) <= 0`` on the grid.
    """
    grid = np.asarray(grid, dtype=float)
    fp = np.asarray(f_par, dtype=float)
    fq = np.asarray(f_perp, dtype=float)
    h = _uniform(grid)
    if np.any(fp <= 0) or np.any(fq <= 0):
        raise PreconditionFailed("factors must be positive on the grid")
    for name, g, k, n in (("f_par", fp, k1, n1), ("f_perp", fq, k2, n2)):
        r = g ** (1.0 / n)
        val = (r[2:] - 2 * r[1:-1] + r[:-2]) / h ** 2 + (k / n) * r[1:-1]
        if np.max(val) > band * (1 + np.max(np.abs(r))):
            raise PreconditionFailed(f"{name} violates the concavity precondition "
                                     f"(worst {np.max(val):.3e})")
    N = n1 + n2
    F = (fp * fq) ** (1.0 / N)
    i, m, j = _triples(len(grid))
    theta = grid[j] - grid[i]
    t = (grid[m] - grid[i]) / theta

    def coeff(tt):
        a, fa = sigma_values(k1 / n1, tt, theta)
        b, fb = sigma_values(k2 / n2, tt, theta)
        return np.where(fa & fb, a ** (n1 / N) * b ** (n2 / N), np.nan)

    rhs = coeff(1 - t) * F[i] + coeff(t) * F[j]
    ok = np.isfinite(rhs)
    gap = F[m[ok]] - rhs[ok]
    margin = float(np.min(gap)) if gap.size else math.inf
    return MixedReport(bool(margin >= -band * (1 + np.max(F))), margin)


def log_convexity_gap(K, N, kappa, nu, t, theta):
    """``rhs - lhs`` of ``sigma_{K/N} <= sigma_{(K-kappa)/(N-nu)}^(1-nu/N) sigma_{kappa/nu}^(nu/N)``.

    NaN where any coefficient is infinite.
    """
    lhs, f0 = sigma_values(np.asarray(K) / N, t, theta)
    a, f1 = sigma_values((np.asarray(K) - kappa) / (N - nu), t, theta)
    b, f2 = sigma_values(np.asarray(kappa) / nu, t, theta)
    rhs = a ** (1 - np.asarray(nu) / N) * b ** (np.asarray(nu) / N)
    return np.where(f0 & f1 & f2, rhs - lhs, np.nan)


def distortion_table(K: float, N: float, theta: float, ts) -> list[dict]:
    rows = []
    for t in ts:
        s = sigma(K / N, t, theta)
        tv = tau(K, N, t, theta)
        rows.append({"t": float(t), "sigma": s, "tau": tv})
    return rows
