"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import itertools
import math
import time

import numpy as np
import pytest

from spacetime_tbm import distortion as ds
from spacetime_tbm import geodesics as gd
from spacetime_tbm import geometry as geo
from spacetime_tbm import jacobi as jc
from spacetime_tbm import regions as rg
from spacetime_tbm import tbm
from spacetime_tbm.catalog import spacetime


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, elapsed, limit, detail=""):
        status = "PASS" if ok and elapsed < limit else "FAIL"
        with capsys.disabled():
            print(f"\ncriterion {number} ({title}): {status} [{elapsed:.1f}s / {limit:.0f}s] {detail}")
        return status == "PASS"
    return emit


def test_flat_consistency(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    ric_max, trip_max, vol_err = 0.0, 0.0, 0.0
    for name in ("minkowski2", "minkowski3"):
        st_ = spacetime(name)
        n = st_.n
        x = rng.uniform(-1, 1, (20, n))
        ric_max = max(ric_max, float(np.max(np.abs(geo.ricci(st_, x)))))
        for _ in range(50):
            w = rng.uniform(-0.5, 0.5, n - 1)
            v = np.concatenate([[np.linalg.norm(w) + rng.uniform(0.1, 1.0)], w])
            y = gd.exp_map(st_, x[0], v)
            trip_max = max(trip_max, float(np.max(np.abs(gd.log_map(st_, x[0], y) - v))))
        d = 0.1
        A = rg.coordinate_box(st_, np.zeros(n), np.full(n, d))
        B = rg.map_region(st_, A, rg.translation([1.0, 0.2] + [0.1] * (n - 2)))
        for t in (0.25, 0.5, 0.75):
            G = rg.interpolant_region(st_, A, B, t)
            vol_err = max(vol_err, abs(rg.measure(st_, G, d / 64).value / d ** n - 1))
    sep = gd.time_separation(spacetime("minkowski2"), [0.0, 0.0], [2.0, 1.0]).value
    ok = (ric_max <= 1e-8 and trip_max <= 1e-7 and abs(sep - math.sqrt(3)) <= 1e-8
          and vol_err <= 1e-3)
    passed = report(1, "flat consistency", ok, time.perf_counter() - t0, 30,
                    f"ric={ric_max:.1e} round_trip={trip_max:.1e} sep_err={abs(sep - math.sqrt(3)):.1e} "
                    f"vol_rel_err={vol_err:.1e}")
    assert passed


def _equivalence_functions(count, seed=0):
    """Functions with ``f'' + k f`` equal to a constant of known sign."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        k = rng.uniform(-2.0, 2.0)
        L = rng.uniform(0.5, 0.9 * math.pi / math.sqrt(abs(k)) if k > 0 else 2.0)
        grid = np.linspace(0.0, L, 72)
        a, b = rng.uniform(-1, 1, 2)
        homog = a * ds.sin_k(k, grid) + b * ds.sin_k(k, L - grid)
        s = rng.uniform(0.5, 2.0) * (1 if i % 2 == 0 else -1)
        part = np.full_like(grid, 1.0 / k) if abs(k) > 1e-12 else grid ** 2 / 2
        yield grid, homog + s * part, k, s > 0


def test_distortion_suite(report):
    t0 = time.perf_counter()
    bvp = max(ds.bvp_residual(k, th) for k, th in
              [(1.0, 2.5), (4.0, 1.4), (-2.0, 2.0), (0.0, 1.0), (9.0, 0.95), (-0.5, 3.0)])
    ratios = []
    for k in (2.0, -2.0):
        for t in (0.25, 0.5, 0.75):
            e = [abs(ds.sigma(k, t, th) - float(ds.sigma_series(k, t, th))) for th in (0.4, 0.2)]
            ratios.append(e[0] / e[1])
    K, N, t, th = np.meshgrid(np.linspace(-8, 8, 10), np.linspace(1.2, 8, 10),
                              np.linspace(0, 1, 10), np.linspace(0, 2.5, 10), indexing="ij")
    tau, fin_t = ds.tau_values(K, N, t, th)
    sig, fin_s = ds.sigma_values(K / N, t, th)
    both = fin_t & fin_s
    violations = int(np.sum(tau[both] < sig[both] - 1e-12)) + int(np.sum(fin_t & ~fin_s))
    disagree = 0
    wrong = 0
    for grid, f, k, convex in _equivalence_functions(50):
        rep = ds.check_convexity_equivalence(grid, f, k)
        disagree += rep.ode_holds != rep.sigma_concavity_holds
        wrong += rep.ode_holds != convex
    ok = bvp <= 1e-6 and min(ratios) >= 15 and violations == 0 and disagree == 0 and wrong == 0
    passed = report(2, "distortion suite", ok, time.perf_counter() - t0, 10,
                    f"bvp={bvp:.1e} min_ratio={min(ratios):.2f} grid={K.size} tau_violations={violations} "
                    f"disagreements={disagree}")
    assert passed


def test_jacobi_taylor_suite(report):
    t0 = time.perf_counter()
    w = spacetime("warped2")
    lams = (0.2, 0.1, 0.05)
    df = [jc.df_taylor_check(w, [0.0, 0.0], [1.0, 0.3], lam, 0.5).error for lam in lams]
    field = lambda y: np.array([1.0 + 0.2 * y[0], 0.1 * y[1]])
    dt = [jc.transport_derivative(w, [0.0, 0.0], field, lam).error for lam in lams]
    df_r = [df[i] / df[i + 1] for i in range(2)]
    dt_r = [dt[i] / dt[i + 1] for i in range(2)]
    t = np.linspace(0, 0.6, 241)
    js = jc.riccati_state(jc.propagate(w, [0.0, 0.0], [1.0, 0.2], np.eye(2),
                                       np.array([[0.2, 0.1], [0.05, 0.3]]), t))
    det = np.linalg.det(js.M)
    h = t[1] - t[0]
    ddet = (-det[4:] + 8 * det[3:-1] - 8 * det[1:-3] + det[:-4]) / (12 * h)
    rhs = det[2:-2] * np.trace(js.L[2:-2], axis1=1, axis2=2)
    trace_err = float(np.max(np.abs(ddet - rhs) / np.abs(rhs)))
    ok = min(df_r) >= 7 and min(dt_r) >= 7 and trace_err <= 1e-6
    passed = report(3, "jacobi/taylor suite", ok, time.perf_counter() - t0, 60,
                    f"df_ratios={[round(r, 2) for r in df_r]} dt_ratios={[round(r, 2) for r in dt_r]} "
                    f"trace_rel_err={trace_err:.1e}")
    assert passed


def test_distortion_ode_realization(report):
    t0 = time.perf_counter()
    st_ = spacetime("weighted_minkowski2", N=3)
    ric = float(np.atleast_1d(geo.bakry_emery_ricci(st_, [0.0, 0.0], [1.0, 0.0]))[0])
    tf = tbm.build_transport_field(st_, [0.0, 0.0], [1.0, 0.0])
    reps = [tbm.check_distortion_ode(st_, tf, lam, 0.0, 0.4) for lam in (0.1, 0.05, 0.025)]
    sups = [r.sup_error for r in reps]
    ok = (abs(ric + 1) <= 1e-6 and all(r.certified for r in reps)
          and all(sups[i] > sups[i + 1] for i in range(2)))
    passed = report(4, "distortion ODE realization", ok, time.perf_counter() - t0, 60,
                    f"be_ricci={ric:.9f} certified={[r.certified for r in reps]} "
                    f"sup_error={[float(f'{s:.3g}') for s in sups]}")
    assert passed


def test_counterexample_realization(report):
    t0 = time.perf_counter()
    st_ = spacetime("weighted_minkowski2", N=3)
    rep = tbm.find_counterexample(st_, 0.0, 3.0)
    lam_grid = [0.2 * 2.0 ** -j for j in range(5)]
    ok = rep.status == "violation"
    detail = f"status={rep.status}"
    if ok:
        r = rep.result
        ok = (any(math.isclose(rep.lam, l) for l in lam_grid) and rep.delta == pytest.approx(rep.lam ** 3)
              and r.t == 0.5 and r.left + r.left_error < r.right - r.right_error - r.tolerance)
        detail += (f" lam={rep.lam} delta={rep.delta:.3g} left={r.left:.9g} right={r.right:.9g} "
                   f"certified_margin={r.certified_margin:.3e}")
    control = tbm.find_counterexample(spacetime("minkowski2"), 0.0)
    ok = ok and control.status == "none"
    passed = report(5, "counterexample realization", ok, time.perf_counter() - t0, 900,
                    detail + f" control={control.status}")
    assert passed


def test_optimal_vs_geodesic(report):
    t0 = time.perf_counter()
    st_ = spacetime("warped2")
    tf = tbm.build_transport_field(st_, [0.0, 0.0], [1.0, 0.0])
    delta, lams = 0.01, [0.2, 0.1, 0.05]
    reps = [tbm.compare_optimal_geodesic(st_, tf, lam, delta, 0.5, samples=4096, raise_on_failure=False)
            for lam in lams]
    contained = all(r.containment_holds and r.offenders == 0 for r in reps)
    gaps = [r.gap for r in reps]
    steps, slope = tbm.scaling_exponents(lams, gaps) if min(gaps) > 0 else ([], -math.inf)
    ok = contained and slope >= 2.5
    passed = report(6, "optimal vs geodesic", ok, time.perf_counter() - t0, 300,
                    f"containment={contained} gaps={[float(f'{g:.3g}') for g in gaps]} "
                    f"lambda_exponent={slope:.2f} (needs >= 2.5)")
    assert passed


def _brute_lw(st_, mu, nu, q):
    m = len(mu)
    ell = np.full((m, m), np.nan)
    for i in range(m):
        for j in range(m):
            s = gd.time_separation(st_, mu[i], nu[j])
            if s.classification == "timelike":
                ell[i, j] = s.value
    best = None
    for perm in itertools.permutations(range(m)):
        vals = [ell[i, p] for i, p in enumerate(perm)]
        if any(np.isnan(v) for v in vals):
            continue
        val = math.fsum(v ** q for v in vals) / m
        best = val if best is None or val > best else best
    return None if best is None else best ** (1 / q)


def test_coupling_oracle(report):
    t0 = time.perf_counter()
    st_ = spacetime("minkowski2")
    rng = np.random.default_rng(7)
    mismatches, minus_inf = 0, 0
    for i in range(200):
        m = int(rng.integers(1, 7))
        mu = rng.uniform(0, 1, (m, 2))
        # every fourth instance is mostly spacelike, so minus infinity shows up
        lo, hi = (0.0, 0.3) if i % 4 == 0 else (1.0, 2.0)
        nu = mu + np.column_stack([rng.uniform(lo, hi, m), rng.uniform(-1.0, 1.0, m)])
        q = float(rng.uniform(0.05, 0.95))
        cp = tbm.lw_distance_discrete(st_, mu, nu, q)
        expect = _brute_lw(st_, mu, nu, q)
        minus_inf += expect is None
        mismatches += cp.value != expect
    ok = mismatches == 0 and minus_inf > 0
    passed = report(7, "coupling oracle", ok, time.perf_counter() - t0, 10,
                    f"instances=200 mismatches={mismatches} minus_infinity_cases={minus_inf}")
    assert passed
