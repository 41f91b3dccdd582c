import numpy as np
import pytest
from hypothesis import given, strategies as st

from spacetime_tbm import geometry as geo
from spacetime_tbm.catalog import from_strings, spacetime
from spacetime_tbm.errors import DomainError, InvalidDimensionParam, SignatureError


def test_minkowski_metric(mink2):
    assert np.array_equal(geo.metric_at(mink2, [0.3, -2.0]), np.diag([1.0, -1.0]))


def test_warped_metric_at_origin(warped):
    assert np.allclose(geo.metric_at(warped, [0.0, 0.0]), np.diag([1.0, -1.0]), atol=0)


def test_degenerate_metric_rejected():
    st_ = from_strings(2, [["1", "0"], ["0", "0"]])
    with pytest.raises(SignatureError):
        geo.metric_at(st_, [0.0, 0.0])


@pytest.mark.parametrize("v,expected", [((1, 0), ("timelike", "future")),
                                        ((1, 1), ("lightlike", "future")),
                                        ((0, 1), ("spacelike", "none")),
                                        ((-2, 1), ("timelike", "past"))])
def test_causal_type(mink2, v, expected):
    assert geo.causal_type(mink2, [0.0, 0.0], v) == expected


def test_flat_christoffels_vanish(mink2):
    assert not np.any(geo.christoffels(mink2, [0.1, 0.2]))


def test_warped_christoffels(warped):
    gam = geo.christoffels(warped, [0.0, 0.0])
    assert gam[0, 1, 1] == pytest.approx(1.0, abs=1e-6)      # e^{2t}
    assert gam[1, 0, 1] == pytest.approx(1.0, abs=1e-6)
    assert gam[1, 1, 0] == pytest.approx(1.0, abs=1e-6)
    gam = geo.christoffels(warped, [0.5, 0.0])
    assert gam[0, 1, 1] == pytest.approx(np.exp(1.0), abs=1e-6)


def test_chart_margin_enforced(warped):
    with pytest.raises(DomainError):
        geo.christoffels(warped, [2.0, 0.0])


def test_flat_ricci(mink2, mink3):
    assert not np.any(geo.ricci(mink2, [0.0, 0.0]))
    assert not np.any(geo.ricci(mink3, [0.0, 1.0, 2.0]))


@pytest.mark.parametrize("t", [-1.0, 0.0, 0.7])
def test_warped_ricci_timelike(warped, t):
    ric = geo.ricci(warped, [t, 0.3])
    assert ric[0, 0] == pytest.approx(-1.0, abs=1e-4)
    # Ric = -g for this metric (constant curvature in two dimensions)
    assert np.allclose(ric, -geo.metric_at(warped, [t, 0.3]), atol=1e-4 * np.exp(2 * t))


def test_random_constant_metric_is_flat():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 2))
    P = np.eye(2) + 0.3 * (a + a.T)
    g = P.T @ np.diag([1.0, -1.0]) @ P
    st_ = from_strings(2, [[repr(float(c)) for c in row] for row in g])
    assert np.max(np.abs(geo.ricci(st_, [0.0, 0.0]))) <= 1e-8


def _curved3():
    return from_strings(3, [["1", "0", "0"], ["0", "-exp(2*x0)", "0"], ["0", "0", "-cosh(x0)^2*(1+x1^2/4)"]],
                        chart_lo=[-1, -1, -1], chart_hi=[1, 1, 1])


@pytest.mark.parametrize("make", [lambda: spacetime("warped2"), _curved3])
def test_riemann_symmetries(make):
    st_ = make()
    rng = np.random.default_rng(0)
    lo, hi = np.array(st_.chart_lo) + 0.1, np.array(st_.chart_hi) - 0.1
    pts = lo + (hi - lo) * rng.random((100, st_.n))
    R = geo.riemann(st_, pts)
    Rl = geo.lower_riemann(st_, pts, R)
    # antisymmetry in the derivative pair, in the outer pair and the cyclic identity
    assert np.max(np.abs(R + np.swapaxes(R, -3, -2))) <= 1e-6
    assert np.max(np.abs(Rl + np.swapaxes(Rl, -4, -1))) <= 1e-6
    cyc = R + np.einsum("...lijk->...ljki", R) + np.einsum("...lijk->...lkij", R)
    assert np.max(np.abs(cyc)) <= 1e-6


def test_ricci_symmetric(_=None):
    st_ = _curved3()
    ric = geo.ricci(st_, [0.2, 0.4, -0.1])
    assert np.max(np.abs(ric - ric.T)) <= 1e-8 * (1 + np.max(np.abs(ric)))


def test_richardson_improves_ricci(warped):
    x = [0.3, 0.0]
    exact = -geo.metric_at(warped, x)
    plain = np.max(np.abs(geo.ricci(warped, x, h=1e-2, richardson=False) - exact))
    rich = np.max(np.abs(geo.ricci(warped, x, h=1e-2, richardson=True) - exact))
    assert rich < plain


def test_bakry_emery_flat(mink2):
    for v in ([1.0, 0.0], [2.0, 1.0], [0.0, 1.0]):
        assert geo.bakry_emery_ricci(mink2, [0.0, 0.0], v) == 0.0


def test_bakry_emery_linear_weight():
    st_ = spacetime("weighted_minkowski2", N=3, weight_slope=0.7)
    assert geo.bakry_emery_ricci(st_, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(-0.49, abs=1e-8)


def test_bakry_emery_quadratic_weight():
    st_ = spacetime("weighted_minkowski2", N=3, weight="quadratic")
    assert geo.bakry_emery_ricci(st_, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(2.0, abs=1e-6)


def test_bakry_emery_needs_large_N():
    with pytest.raises(InvalidDimensionParam):
        spacetime("weighted_minkowski2", N=2)
    with pytest.raises(InvalidDimensionParam):
        from_strings(2, [["1", "0"], ["0", "-1"]], psi="x0", N=1.5)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1), st.floats(-1, 1))
def test_bakry_emery_quadratic_in_v(a, b, x0, x1):
    st_ = spacetime("weighted_minkowski2", N=3, weight="quadratic")
    v = np.array([a, b])
    one = geo.bakry_emery_ricci(st_, [x0, x1], v)
    two = geo.bakry_emery_ricci(st_, [x0, x1], 2 * v)
    assert two == pytest.approx(4 * one, rel=1e-12, abs=1e-12)


def test_measure_density_examples(mink2, warped):
    assert geo.measure_density(mink2, [0.3, 0.2]) == 1.0
    st_ = spacetime("weighted_minkowski2", N=3)
    assert geo.measure_density(st_, [1.0, 0.0]) == pytest.approx(0.36787944117144233, rel=1e-14)
    assert geo.measure_density(warped, [1.0, 0.0]) == pytest.approx(np.e, rel=1e-14)


@given(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9))
def test_measure_density_positive(t, x):
    assert geo.measure_density(spacetime("warped2"), [t, x]) > 0
