import math

import numpy as np
import pytest

from spacetime_tbm import geodesics as gd
from spacetime_tbm import regions as rg
from spacetime_tbm.catalog import spacetime
from spacetime_tbm.errors import EmptyRegion, LeftChart

ONE_MINUS_INV_E = 0.6321205588285576784


def test_flat_eigen_cube_is_coordinate_cube(mink2):
    d = 0.2
    A = rg.eigen_cube(mink2, [0.5, 0.0], [1.0, 0.0], d)
    c = A.corners()
    assert np.allclose(np.sort(np.abs(c - [0.5, 0.0]), axis=0), d / 2, atol=1e-14)
    est = rg.measure(mink2, A, d / 64)
    assert est.value == pytest.approx(d ** 2, rel=1e-3)
    assert est.bias == "exact-membership"


def test_flat_cube_volume_3d(mink3):
    d = 0.1
    A = rg.eigen_cube(mink3, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], d)
    assert rg.measure(mink3, A, d / 32).value == pytest.approx(d ** 3, rel=1e-3)


def test_weighted_unit_box():
    st_ = spacetime("weighted_minkowski2")
    A = rg.coordinate_box(st_, [0.0, 0.0], [1.0, 1.0])
    assert rg.measure(st_, A, 1 / 64).value == pytest.approx(ONE_MINUS_INV_E, abs=1e-3)


def test_degenerate_cube_has_no_volume(mink2):
    A = rg.eigen_cube(mink2, [0.0, 0.0], [1.0, 0.0], 0.0)
    assert np.allclose(A.corners(), 0.0)
    with pytest.raises(EmptyRegion):
        rg.measure(mink2, A, 0.01)


def test_warped_corners_are_geodesic_images(warped):
    x0 = np.array([0.1, -0.2])
    A = rg.eigen_cube(warped, x0, [1.0, 0.0], 0.3)
    u = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    pts = A.points(u)
    for k in range(4):
        ref = gd.exp_map(warped, x0, A.tangent(u[k])[0])
        assert np.max(np.abs(pts[k] - ref)) <= 1e-8


def test_warped_cube_membership_round_trip(warped):
    A = rg.eigen_cube(warped, [0.0, 0.0], [1.0, 0.0], 0.2)
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 1, (50, 2))
    assert np.allclose(A.parameters(A.points(u)), u, atol=1e-10)
    assert A.contains(A.points(u)).all()
    assert not A.contains(A.points(u + 1.1)).any()


def test_identity_map_keeps_voxelization(mink2):
    A = rg.coordinate_box(mink2, [0.0, 0.0], [0.1, 0.1])
    B = rg.map_region(mink2, A, rg.identity_map())
    va, vb = A.voxelize(0.005), B.voxelize(0.005)
    assert np.array_equal(va.mask, vb.mask) and np.allclose(va.grid.lo, vb.grid.lo)


def test_translation_preserves_volume(mink2):
    A = rg.coordinate_box(mink2, [0.0, 0.0], [0.1, 0.1])
    B = rg.map_region(mink2, A, rg.translation([0.7, 0.3]))
    assert np.allclose(B.corners() - A.corners(), [0.7, 0.3], atol=1e-15)
    assert rg.measure(mink2, B, 0.1 / 64).value == pytest.approx(rg.measure(mink2, A, 0.1 / 64).value, rel=1e-12)


def test_gradient_transport_scales_volume(mink2):
    alpha, lam, d = 0.5, 0.4, 0.1
    A = rg.coordinate_box(mink2, [0.0, 0.0], [d, d])
    s = 1 + alpha * lam
    B = rg.map_region(mink2, A, rg.affine_map(s * np.eye(2), [lam, 0.0]))
    ratio = rg.measure(mink2, B, d / 64).value / rg.measure(mink2, A, d / 64).value
    assert ratio == pytest.approx(s ** 2, rel=1e-3)


def test_map_region_leaving_chart(warped):
    A = rg.eigen_cube(warped, [0.0, 0.0], [1.0, 0.0], 0.1)
    with pytest.raises(LeftChart):
        rg.map_region(warped, A, rg.translation([5.0, 0.0]))


def _boxes(mink2, a=0.1, b=0.2, shift=(1.0, 0.0)):
    A = rg.coordinate_box(mink2, [0.0, 0.0], [a, a])
    B = rg.coordinate_box(mink2, shift, [shift[0] + b, shift[1] + b])
    return A, B


def test_interpolant_of_translate(mink2):
    A = rg.coordinate_box(mink2, [0.0, 0.0], [0.1, 0.1])
    B = rg.map_region(mink2, A, rg.translation([1.0, 0.2]))
    G = rg.interpolant_region(mink2, A, B, 0.5)
    est = rg.measure(mink2, G, 0.1 / 64)
    assert est.value == pytest.approx(0.01, rel=0.03)
    assert est.value <= 0.01 * (1 + 1e-9) + 4 * 0.1 * (0.1 / 64)
    assert est.bias == "inner"


@pytest.mark.parametrize("t", [0.25, 0.5, 0.8])
def test_interpolant_minkowski_sum(mink2, t):
    A, B = _boxes(mink2)
    side = (1 - t) * 0.1 + t * 0.2
    G = rg.interpolant_region(mink2, A, B, t)
    assert rg.measure(mink2, G, side / 64).value == pytest.approx(side ** 2, rel=0.03)


def test_interpolant_endpoints(mink2):
    A, B = _boxes(mink2)
    h = 0.1 / 64
    for t, R in ((0.0, A), (1.0, B)):
        lo, hi = rg.interpolant_region(mink2, A, B, t, samples=4096).bbox()
        rlo, rhi = R.bbox()
        assert np.max(np.abs(lo - rlo)) <= h and np.max(np.abs(hi - rhi)) <= h


def test_interpolant_monotone_in_samples(mink2):
    A, B = _boxes(mink2)
    G = rg.interpolant_region(mink2, A, B, 0.5, samples=2 ** 14)
    full = G.voxelize(0.15 / 32)
    half = G.voxelize_subset(0.15 / 32, 0.5)
    assert np.all(full.mask >= half.mask) and full.count >= half.count


def test_interpolant_contains_transport_image(mink2):
    alpha, lam, t = 0.5, 0.4, 0.5
    A = rg.coordinate_box(mink2, [0.0, 0.0], [0.1, 0.1])
    T = lambda s: rg.affine_map((1 + alpha * s) * np.eye(2), [s, 0.0])
    B = rg.map_region(mink2, A, T(lam))
    G = rg.interpolant_region(mink2, A, B, t)
    vox = G.voxelize(0.1 / 64)
    g = np.linspace(0.02, 0.98, 9)
    u = np.array([[a, b] for a in g for b in g])
    assert vox.contains(T(lam * t)(A.points(u))).all()


def test_measure_monotone_under_inclusion(warped):
    small = rg.PatchedRegion(rg.eigen_cube(warped, [0.0, 0.0], [1.0, 0.0], 0.1))
    big = rg.PatchedRegion(rg.eigen_cube(warped, [0.0, 0.0], [1.0, 0.0], 0.14))
    assert big.contains(small.corners()).all()
    assert rg.measure(warped, small, 0.002).value <= rg.measure(warped, big, 0.002).value


def test_refinement_consistency_on_boxes():
    st_ = spacetime("weighted_minkowski2")
    est = rg.measure(st_, rg.coordinate_box(st_, [0.0, 0.0], [0.3, 0.2]), 0.3 / 64)
    h = est.history
    assert abs(h[2] - h[1]) <= abs(h[1] - h[0]) + 1e-9 and est.monotone


@pytest.mark.parametrize("v0", [[1.0, 0.0], [1.0, 0.2]])
def test_curved_cube_voxel_volume_converges(warped, v0):
    d = 0.2
    A = rg.PatchedRegion(rg.eigen_cube(warped, [0.0, 0.0], v0, d))
    exact = rg.quadrature_measure(warped, A.base)
    for f in (32, 64, 128):
        h = d / f
        # boundary layer: perimeter (about 4 d) times one voxel
        assert abs(rg.measure(warped, A, h).value - exact) <= 4 * d * h


def test_fatten_radius_zero(mink2):
    A = rg.coordinate_box(mink2, [0.0, 0.0], [0.1, 0.1])
    F = rg.fatten(mink2, A, 0.0, 0.1 / 64)
    assert np.array_equal(F.vox.mask, A.voxelize(0.1 / 64).mask)


def test_fatten_steiner(mink2):
    d, r = 0.1, 0.02
    A = rg.coordinate_box(mink2, [0.0, 0.0], [d, d])
    h = d / 128
    F = rg.fatten(mink2, A, r, h)
    # Euclidean ball dilation of a square: d^2 + 4 d r + pi r^2
    steiner = d * d + 4 * d * r + math.pi * r * r
    assert F.vox.count * h * h == pytest.approx(steiner, rel=2e-2)


def test_fatten_leading_steiner_slope(mink2):
    d = 0.1
    A = rg.coordinate_box(mink2, [0.0, 0.0], [d, d])
    h = d / 512
    base = A.voxelize(h).count
    extra = [(rg.fatten(mink2, A, r, h).vox.count - base) * h * h for r in (0.01, 0.005)]
    assert abs(math.log2(extra[0] / extra[1]) - 1.0) <= 0.1


def test_patched_region_matches_base(warped):
    A = rg.eigen_cube(warped, [0.0, 0.0], [1.0, 0.0], 0.1)
    P = rg.PatchedRegion(A)
    assert P.patch_error <= 1e-13
    rng = np.random.default_rng(3)
    y = A.points(rng.uniform(-0.2, 1.2, (200, 2)))
    assert np.array_equal(P.contains(y), A.contains(y))
    assert np.allclose(P.parameters(y), A.parameters(y), atol=1e-10)


def test_quadrature_measure_flat(mink2):
    A = rg.coordinate_box(mink2, [0.0, 0.0], [0.1, 0.3])
    assert rg.quadrature_measure(mink2, A) == pytest.approx(0.03, rel=1e-9)


def test_export_voxels(tmp_path, mink2):
    vox = rg.coordinate_box(mink2, [0.0, 0.0], [0.1, 0.1]).voxelize(0.025)
    count = rg.export_voxels(vox, tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "x0,x1" and len(lines) == count + 1 == 17
