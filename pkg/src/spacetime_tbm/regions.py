"""Compact regions of a chart and their m-volumes by voxel rasterization.

Analytic regions (eigen-cubes and their images under invertible maps) know
membership exactly: voxel centres are pulled back through the generator.
Interpolant regions only know sampled points and are rasterized from hits,
which under-estimates their volume.

Grids are anchored to the region's bounding box: the box is split into an
integer number of cells per axis, so a coordinate box is resolved exactly.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from . import geodesics as gd
from . import geometry as geo
from .errors import EmptyRegion, LeftChart, NonTimelikePair
from .geometry import WeightedSpacetime

PAIR_SAMPLES_2D = 2 ** 18
MEMBER_TOL = 1e-12
PULLBACK_TOL = 1e-14


# ---------------------------------------------------------------------------
# grids

@dataclass(frozen=True)
class VoxelGrid:
    lo: np.ndarray
    side: np.ndarray
    shape: tuple

    @classmethod
    def anchored(cls, lo, hi, side: float, pad: int = 2) -> "VoxelGrid":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        ext = hi - lo
        cells = np.maximum(1, np.round(ext / side)).astype(int)
        sides = np.where(ext > 0, ext / cells, side)
        return cls(lo - pad * sides, sides, tuple(int(c) + 2 * pad for c in cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.side))

    def centers(self, index=None) -> np.ndarray:
        if index is None:
            axes = [self.lo[k] + (np.arange(m) + 0.5) * self.side[k] for k, m in enumerate(self.shape)]
            mesh = np.meshgrid(*axes, indexing="ij")
            return np.stack(mesh, axis=-1).reshape(-1, len(self.shape))
        return self.lo + (np.asarray(index) + 0.5) * self.side

    def index_of(self, pts: np.ndarray):
        """Integer cell indices and a mask of points falling inside the grid."""
        idx = np.floor((pts - self.lo) / self.side).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=-1)
        return idx, ok


@dataclass(frozen=True)
class Voxelization:
    grid: VoxelGrid
    mask: np.ndarray   # bool, grid.shape

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def occupied_centers(self) -> np.ndarray:
        return self.grid.centers(np.argwhere(self.mask))

    def contains(self, y) -> np.ndarray:
        y = np.atleast_2d(y)
        idx, ok = self.grid.index_of(y)
        out = np.zeros(len(y), dtype=bool)
        out[ok] = self.mask[tuple(idx[ok].T)]
        return out


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    voxel_side: float
    voxel_count: int
    history: tuple          # values at 4x, 2x coarser and at the requested side
    monotone: bool
    bias: str               # "exact-membership" | "inner"
    sampling_gap: float = 0.0

    @property
    def refinement_gap(self) -> float:
        return abs(self.history[-1] - self.history[-2])

    @property
    def error_bound(self) -> float:
        return self.refinement_gap + self.sampling_gap


# ---------------------------------------------------------------------------
# maps

@dataclass(frozen=True)
class RegionMap:
    """Batched chart map with an optional inverse."""

    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = "map"

    def __call__(self, x):
        return self.forward(np.atleast_2d(x))


def identity_map() -> RegionMap:
    return RegionMap(lambda x: np.array(x, dtype=float), lambda y: np.array(y, dtype=float), "identity")


def affine_map(A, b) -> RegionMap:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    Ainv = np.linalg.inv(A)
    return RegionMap(lambda x: x @ A.T + b, lambda y: (y - b) @ Ainv.T, "affine")


def translation(z) -> RegionMap:
    z = np.asarray(z, dtype=float)
    return affine_map(np.eye(len(z)), z)


def chord_inverse(forward, y, x_guess, jac, tol: float = PULLBACK_TOL, max_iter: int = 60):
    """Solve ``forward(x) = y`` by chord iteration with a fixed Jacobian."""
    y = np.atleast_2d(y)
    x = np.array(np.broadcast_to(x_guess, y.shape), dtype=float)
    jinv = np.linalg.inv(jac)
    scale = 1.0 + np.abs(y).max(axis=-1)
    act = np.arange(len(y))
    for _ in range(max_iter):
        r = forward(x[act]) - y[act]
        conv = np.linalg.norm(r, axis=-1) <= tol * scale[act]
        x[act] -= r @ jinv.T
        act = act[~conv]
        if act.size == 0:
            return x
    raise LeftChart(f"map inversion stalled for {act.size} point(s)")


def fd_jacobian(fn, x, h: float) -> np.ndarray:
    """Central-difference Jacobian of a batched map at one point."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    pts = np.concatenate([x + h * np.eye(n), x - h * np.eye(n)])
    vals = fn(pts)
    return ((vals[:n] - vals[n:]) / (2 * h)).T


# ---------------------------------------------------------------------------
# regions

class RegionSpec:
    """Compact region with a unit-cube parametrization ``points(u)``."""

    kind = "region"

    def __init__(self, st: WeightedSpacetime, x0):
        self.st = st
        self.x0 = np.asarray(x0, dtype=float)
        self._vox: dict = {}

    @property
    def n(self) -> int:
        return self.st.n

    def points(self, u) -> np.ndarray:
        raise NotImplementedError

    def corners(self) -> np.ndarray:
        return self.points(np.array(list(itertools.product((0.0, 1.0), repeat=self.n))))

    def contains(self, y) -> np.ndarray:
        raise NotImplementedError

    @property
    def exact(self) -> bool:
        return True

    @property
    def scale(self) -> float:
        return 1.0

    def boundary_samples(self, per_edge: int = 17) -> np.ndarray:
        n = self.n
        g = np.linspace(0.0, 1.0, per_edge)
        faces = []
        for k in range(n):
            rest = np.stack(np.meshgrid(*([g] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1)
            for val in (0.0, 1.0):
                u = np.insert(rest, k, val, axis=1)
                faces.append(u)
        return self.points(np.concatenate(faces))

    def bbox(self):
        pts = self.boundary_samples()
        return pts.min(axis=0), pts.max(axis=0)

    def voxelize(self, side: float) -> Voxelization:
        key = float(side)
        if key not in self._vox:
            self._vox[key] = self._voxelize(side)
        return self._vox[key]

    def _voxelize(self, side: float) -> Voxelization:
        lo, hi = self.bbox()
        grid = VoxelGrid.anchored(lo, hi, side)
        mask = self.contains(grid.centers()).reshape(grid.shape)
        return Voxelization(grid, mask)


class EigenCube(RegionSpec):
    """``exp_{x0}`` of the cube of side ``delta`` centred at 0 in a frame ``basis`` (columns)."""

    kind = "eigen_cube"

    def __init__(self, st, x0, basis, delta: float, v0=None, eigenvalues=None):
        super().__init__(st, x0)
        self.basis = np.asarray(basis, dtype=float)
        self.delta = float(delta)
        self.v0 = None if v0 is None else np.asarray(v0, dtype=float)
        self.eigenvalues = eigenvalues
        self._binv = np.linalg.inv(self.basis)
        self.steps = gd.rk4_steps(self.basis.sum(axis=1) * self.delta)

    @property
    def scale(self) -> float:
        return self.delta

    def tangent(self, u) -> np.ndarray:
        return (np.atleast_2d(u) - 0.5) * self.delta @ self.basis.T

    def points(self, u) -> np.ndarray:
        w = self.tangent(u)
        return gd.exp_fixed(self.st, np.broadcast_to(self.x0, w.shape), w, 1.0, self.steps)

    def parameters(self, y) -> np.ndarray:
        y = np.atleast_2d(y)
        if self.delta == 0:
            raise EmptyRegion("degenerate cube")
        w = gd.log_fixed(self.st, np.broadcast_to(self.x0, y.shape), y, steps=self.steps,
                         tol=PULLBACK_TOL)
        return w @ self._binv.T / self.delta + 0.5

    def contains(self, y) -> np.ndarray:
        u = self.parameters(y)
        return np.all((u >= -MEMBER_TOL) & (u <= 1 + MEMBER_TOL), axis=-1)


class ImageRegion(RegionSpec):
    kind = "image"

    def __init__(self, base: RegionSpec, fmap: RegionMap):
        super().__init__(base.st, fmap(base.x0)[0])
        self.base = base
        self.map = fmap

    @property
    def scale(self) -> float:
        return self.base.scale

    @property
    def exact(self) -> bool:
        return self.map.inverse is not None and self.base.exact

    def points(self, u) -> np.ndarray:
        return self.map(self.base.points(u))

    def contains(self, y) -> np.ndarray:
        if self.map.inverse is None:
            raise NotImplementedError("map has no inverse")
        return self.base.contains(self.map.inverse(np.atleast_2d(y)))

    def _voxelize(self, side):
        if self.exact:
            return super()._voxelize(side)
        return _rasterize(self.points, self.n, self.corners(), side, _default_pairs(self.n))[0]


class ChebyshevPatch:
    """Tensor Chebyshev interpolant of a batched map ``[lo, hi]^n -> R^n``."""

    def __init__(self, fn, n: int, order: int = 14, lo: float = -0.25, hi: float = 1.25):
        self.n, self.order, self.lo, self.hi = n, order, lo, hi
        z = np.cos(np.pi * (np.arange(order) + 0.5) / order)
        u = lo + (z + 1) * (hi - lo) / 2
        grid = np.stack(np.meshgrid(*([u] * n), indexing="ij"), -1).reshape(-1, n)
        C = np.asarray(fn(grid), dtype=float).reshape((order,) * n + (-1,))
        vinv = np.linalg.inv(np.polynomial.chebyshev.chebvander(z, order - 1))
        for ax in range(n):
            C = np.moveaxis(np.tensordot(vinv, C, axes=(1, ax)), 0, ax)
        self.coef = C

    def __call__(self, u) -> np.ndarray:
        u = np.atleast_2d(u)
        z = (2 * u - self.lo - self.hi) / (self.hi - self.lo)
        R = np.einsum("ma,a...->m...", np.polynomial.chebyshev.chebvander(z[:, 0], self.order - 1),
                      self.coef)
        for ax in range(1, self.n):
            T = np.polynomial.chebyshev.chebvander(z[:, ax], self.order - 1)
            R = np.einsum("ma,ma...->m...", T, R)
        return R


class PatchedRegion(RegionSpec):
    """A parametrized region whose ``points`` are replaced by a Chebyshev patch.

    Membership pulls a point back through the patch.  The patch is checked
    against the wrapped parametrization at random parameters; ``patch_error``
    is the worst deviation seen.
    """

    def __init__(self, base: RegionSpec, order: int = 14, checks: int = 64, seed: int = 0,
                 tol: float = 1e-13):
        super().__init__(base.st, base.x0)
        self.base = base
        self.kind = base.kind
        n = base.n
        while True:
            patch = ChebyshevPatch(base.points, n, order)
            u = np.random.default_rng(seed).uniform(-0.25, 1.25, (checks, n))
            err = float(np.max(np.abs(patch(u) - base.points(u))))
            if err <= tol * (1 + np.abs(base.x0).max()) or order >= 30:
                break
            order += 6
        self.patch, self.patch_error = patch, err
        self.jac = fd_jacobian(patch, np.full(n, 0.5), 1e-4)

    @property
    def scale(self) -> float:
        return self.base.scale

    @property
    def exact(self) -> bool:
        return self.base.exact

    def points(self, u) -> np.ndarray:
        return self.patch(u)

    def parameters(self, y) -> np.ndarray:
        y = np.atleast_2d(y)
        return chord_inverse(self.patch, y, np.full(self.n, 0.5), self.jac)

    def contains(self, y) -> np.ndarray:
        u = self.parameters(y)
        return np.all((u >= -MEMBER_TOL) & (u <= 1 + MEMBER_TOL), axis=-1)


class VoxelSet(RegionSpec):
    kind = "voxel_set"

    def __init__(self, st, vox: Voxelization, x0=None):
        if x0 is None:
            cen = vox.occupied_centers()
            x0 = cen.mean(axis=0) if len(cen) else vox.grid.lo
        super().__init__(st, x0)
        self.vox = vox

    def points(self, u) -> np.ndarray:
        raise NotImplementedError("voxel sets have no parametrization")

    def corners(self) -> np.ndarray:
        cen = self.vox.occupied_centers()
        return cen if len(cen) else np.empty((0, self.n))

    def contains(self, y) -> np.ndarray:
        return self.vox.contains(y)

    def bbox(self):
        cen = self.vox.occupied_centers()
        if len(cen) == 0:
            raise EmptyRegion("empty voxel set")
        half = self.vox.grid.side / 2
        return cen.min(axis=0) - half, cen.max(axis=0) + half

    def _voxelize(self, side):
        if np.allclose(self.vox.grid.side, side, rtol=1e-12):
            return self.vox
        return super()._voxelize(side)


class InterpolantRegion(RegionSpec):
    """``F_t(A x B)`` restricted to timelike pairs, known through sampled points."""

    kind = "interpolant"

    def __init__(self, A: RegionSpec, B: RegionSpec, t: float, samples: int,
                 seed: int = 0, threads: int = 1, block: int = 2 ** 14):
        super().__init__(A.st, gd.exp_fixed(A.st, A.x0, gd.log_fixed(A.st, A.x0, B.x0), t)[0])
        self.A, self.B, self.t = A, B, float(t)
        self.samples = samples
        u = pair_parameters(self.n, samples, seed)
        ca = np.array(list(itertools.product((0.0, 1.0), repeat=self.n)))
        cu = np.concatenate([np.repeat(ca, len(ca), axis=0), np.tile(ca, (len(ca), 1))], axis=1)
        u = np.concatenate([cu, u])
        blocks = [u[i:i + block] for i in range(0, len(u), block)]
        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                parts = list(ex.map(self._block, blocks))
        else:
            parts = [self._block(b) for b in blocks]
        self.hits = np.concatenate([p[0] for p in parts])
        self.order = np.concatenate([p[1] for p in parts])   # index of each hit in the pair sequence
        self.skipped = int(sum(p[2] for p in parts))
        self.pairs = len(u)
        if len(self.hits) == 0:
            raise NonTimelikePair(f"all {self.pairs} sampled pairs are non-timelike")

    def _block(self, u):
        st, n = self.st, self.n
        x = self.A.points(u[:, :n])
        y = self.B.points(u[:, n:])
        v = gd.log_fixed(st, x, y, steps=gd.rk4_steps(y - x))
        _, kind = gd.separation_from_velocity(st, x, v)
        ok = kind == 2
        if self.t == 0.0:
            p = x[ok]
        else:
            p = gd.exp_fixed(st, x[ok], v[ok], self.t, gd.rk4_steps(v[ok], self.t))
        return p, np.flatnonzero(ok), int(np.sum(~ok))

    @property
    def exact(self) -> bool:
        return False

    @property
    def scale(self) -> float:
        return max(self.A.scale, self.B.scale)

    def points(self, u):
        raise NotImplementedError("interpolant regions are sampled, not parametrized")

    def corners(self) -> np.ndarray:
        return self.hits[: 4 ** self.n]

    def contains(self, y):
        raise NotImplementedError("interpolant membership is only known through hits")

    def bbox(self):
        return self.hits.min(axis=0), self.hits.max(axis=0)

    def _voxelize(self, side, hits=None):
        hits = self.hits if hits is None else hits
        lo, hi = self.bbox()
        grid = VoxelGrid.anchored(lo, hi, side, pad=1)
        return Voxelization(grid, _bin(grid, hits, pad=1))

    def voxelize_subset(self, side: float, fraction: float) -> Voxelization:
        """Rasterization from the leading ``fraction`` of the pair sequence."""
        keep = self.order < int(fraction * self.pairs)
        return self._voxelize(side, self.hits[keep])


def _bin(grid: VoxelGrid, pts: np.ndarray, pad: int = 0) -> np.ndarray:
    """Occupancy of the cells holding ``pts``.

    With ``pad > 0`` the points are known to lie in the anchored box, and
    indices are clipped into it so that points on its upper faces do not
    spill into the padding layer.
    """
    mask = np.zeros(grid.shape, dtype=bool)
    idx, ok = grid.index_of(pts)
    if pad:
        idx = np.clip(idx, pad, np.asarray(grid.shape) - pad - 1)
        ok = np.ones(len(idx), dtype=bool)
    mask[tuple(idx[ok].T)] = True
    return mask


def _default_pairs(n: int) -> int:
    return PAIR_SAMPLES_2D * 4 ** max(0, n - 2)


def pair_parameters(n: int, count: int, seed: int = 0) -> np.ndarray:
    """Parameters in ``[0,1]^(2n)`` mixing three scrambled Sobol families.

    Half are diagonal pairs ``(u, u)``, which cover ``F_t`` of matching
    points evenly; a quarter are plain pairs; a quarter are pushed toward
    the faces by ``u -> (1 - cos(pi u)) / 2`` so that the hit density of
    ``(1-t) A + t B`` stays bounded below near its boundary.  The families
    are interleaved, so every prefix holds a balanced share of each.
    """
    if count <= 0:
        return np.empty((0, 2 * n))
    q = -(-count // 4)
    d = gd.sobol(n, 2 * q, seed + 3)
    plain = gd.sobol(2 * n, q, seed)
    face = 0.5 * (1.0 - np.cos(np.pi * gd.sobol(2 * n, q, seed + 1)))
    out = np.empty((4 * q, 2 * n))
    out[0::4] = np.concatenate([d[0::2], d[0::2]], axis=1)
    out[1::4] = np.concatenate([d[1::2], d[1::2]], axis=1)
    out[2::4] = plain
    out[3::4] = face
    return out[:count]


def _rasterize(points_fn, n, corners, side, count, seed=0):
    u = np.concatenate([np.array(list(itertools.product((0.0, 1.0), repeat=n))),
                        gd.sobol(n, count, seed)])
    pts = np.concatenate([corners, points_fn(u)])
    grid = VoxelGrid.anchored(pts.min(axis=0), pts.max(axis=0), side, pad=1)
    return Voxelization(grid, _bin(grid, pts, pad=1)), pts


# ---------------------------------------------------------------------------
# constructors

def eigen_cube(st: WeightedSpacetime, x0, v0, delta: float) -> EigenCube:
    """Cube of side ``delta`` in the eigenbasis of the tidal operator at ``(x0, v0)``, mapped by ``exp_{x0}``."""
    from .jacobi import tidal_operator

    if delta < 0:
        raise ValueError("delta must be non-negative")
    op = tidal_operator(st, x0, v0)
    return EigenCube(st, x0, op.coordinate_eigenvectors, delta, v0, op.eigenvalues)


def coordinate_box(st: WeightedSpacetime, lo, hi) -> EigenCube:
    """Axis-aligned box; only meaningful for constant metrics, where exp is affine."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if not st.metric_constant:
        raise ValueError("coordinate boxes need a constant metric")
    side = hi - lo
    d = float(side.max())
    return EigenCube(st, (lo + hi) / 2, np.diag(side / d), d)


def map_region(st: WeightedSpacetime, A: RegionSpec, fmap: RegionMap) -> ImageRegion:
    if not np.all(st.in_chart(A.corners())):
        raise LeftChart("region outside the chart")
    R = ImageRegion(A, fmap)
    if not np.all(st.in_chart(R.corners())):
        raise LeftChart("image leaves the chart")
    return R


def interpolant_region(st: WeightedSpacetime, A: RegionSpec, B: RegionSpec, t: float,
                       samples: int | None = None, seed: int = 0, threads: int = 1) -> InterpolantRegion:
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return InterpolantRegion(A, B, t, _default_pairs(st.n) if samples is None else samples,
                             seed, threads)


# ---------------------------------------------------------------------------
# measure

def _voxel_value(st, vox: Voxelization) -> float:
    cen = vox.occupied_centers()
    if len(cen) == 0:
        return 0.0
    return float(np.sum(geo.measure_density(st, cen)) * vox.grid.cell_volume)


def measure(st: WeightedSpacetime, R: RegionSpec, voxel_side: float) -> VolumeEstimate:
    """m-volume from voxel centres, with values on 4x and 2x coarser grids."""
    if not voxel_side > 0:
        raise ValueError("voxel_side must be positive")
    if isinstance(R, EigenCube) and R.delta == 0:
        raise EmptyRegion("degenerate region has no interior")
    hist = []
    for f in (4, 2, 1):
        hist.append(_voxel_value(st, R.voxelize(voxel_side * f)))
    vox = R.voxelize(voxel_side)
    if vox.count == 0:
        raise EmptyRegion("no occupied voxels")
    mono = abs(hist[2] - hist[1]) <= abs(hist[1] - hist[0]) + 1e-9
    sgap = 0.0
    if isinstance(R, InterpolantRegion):
        half = _voxel_value(st, R.voxelize_subset(voxel_side, 0.5))
        sgap = max(0.0, hist[2] - half)
    return VolumeEstimate(hist[2], float(voxel_side), vox.count, tuple(hist), bool(mono),
                          "exact-membership" if R.exact else "inner", sgap)


def quadrature_measure(st: WeightedSpacetime, R: RegionSpec, order: int = 12,
                       rel_step: float = 1e-4) -> float:
    """m-volume of a parametrized region by the change-of-variables formula.

    Gauss-Legendre nodes in parameter space; the parametrization's Jacobian
    comes from central differences, which is accurate because the fixed-step
    maps are smooth in their inputs.
    """
    if isinstance(R, (InterpolantRegion, VoxelSet)):
        raise ValueError("quadrature needs a parametrized region")
    n = st.n
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    nodes = np.stack(np.meshgrid(*([x] * n), indexing="ij"), -1).reshape(-1, n)
    weights = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), -1).reshape(-1, n), axis=1)
    h = rel_step
    offs = np.concatenate([h * np.eye(n), -h * np.eye(n)])
    pts = (nodes[:, None, :] + offs[None]).reshape(-1, n)
    vals = R.points(np.concatenate([nodes, pts])).reshape(-1, n)
    centre = vals[: len(nodes)]
    shifted = vals[len(nodes):].reshape(len(nodes), 2 * n, n)
    J = np.swapaxes((shifted[:, :n] - shifted[:, n:]) / (2 * h), 1, 2)
    dens = geo.measure_density(st, centre)
    return float(np.sum(weights * dens * np.abs(np.linalg.det(J))))


# ---------------------------------------------------------------------------
# fattening and export

def fatten(st: WeightedSpacetime, R: RegionSpec, radius: float, voxel_side: float,
           background_metric=None) -> VoxelSet:
    """Voxel dilation of ``R`` by a background-metric ball (Euclidean chart metric by default)."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    vox = R.voxelize(voxel_side)
    if radius == 0:
        return VoxelSet(st, vox, R.x0)
    grid = vox.grid
    pad = np.ceil(radius / grid.side).astype(int) + 1
    mask = np.pad(vox.mask, [(int(p), int(p)) for p in pad])
    big = VoxelGrid(grid.lo - pad * grid.side, grid.side, mask.shape)
    sampling = grid.side
    if background_metric is not None:
        # constant positive-definite metric: rescale axes by its diagonal
        sampling = grid.side * np.sqrt(np.diag(np.asarray(background_metric, float)))
    dist = ndimage.distance_transform_edt(~mask, sampling=sampling)
    return VoxelSet(st, Voxelization(big, dist <= radius * (1 + 1e-12)), R.x0)


def export_voxels(vox: Voxelization, path, delimiter: str = ",") -> int:
    cen = vox.occupied_centers()
    header = delimiter.join(f"x{k}" for k in range(cen.shape[1] if cen.ndim == 2 else 0))
    np.savetxt(path, cen, delimiter=delimiter, header=header, comments="")
    return len(cen)
