from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest

from snakelab.stable_core import DomainError, StableParams, alpha0, v0_closed_form
from snakelab.vlambda import (
    GridSpec,
    VTable,
    c_beta,
    decay_length,
    expansion_coefficient,
    f_lambda,
    f_lambda_log_excess,
    fd_residual,
    h_lambda,
    hij_relation,
    interval_midpoint_value,
    lam_root,
    moment_constants,
    moment_from_c_beta,
    solve_bvp_interval,
    v_lambda_expansion,
    v_lambda_halfline,
    v_lambda_log_excess,
    v_lambda_relative_excess,
    v_lambda_slope,
    vtable_halfline,
)

mpmath.mp.dps = 30
P15 = StableParams(1.5)


def f_oracle(alpha, lam, y):
    """int_y^inf du / (2 sqrt(G(u) - G(y0))), G(u) = u^(alpha+1)/(alpha+1) - lam u, in u = y e^s."""
    a = mpmath.mpf(alpha)
    lam = mpmath.mpf(lam)
    y = mpmath.mpf(y)
    y0 = lam ** (1 / a)
    G = lambda u: u ** (a + 1) / (a + 1) - lam * u
    g0 = G(y0)

    def integrand(s):
        u = y * mpmath.exp(s)
        return u / (2 * mpmath.sqrt(G(u) - g0))

    return float(mpmath.quad(integrand, [0, 1, 10, 60, mpmath.inf]))


@pytest.mark.parametrize("lam", [0.25, 1.0, 4.0])
@pytest.mark.parametrize("factor", [1.001, 1.3, 3.0, 50.0])
def test_f_lambda_against_mpmath(lam, factor):
    y = lam_root(P15, lam) * factor
    assert f_lambda(P15, lam, y) == pytest.approx(f_oracle(1.5, lam, y), rel=1e-12)


def test_f_lambda_other_alpha():
    p = StableParams(1.8)
    y = lam_root(p, 2.0) * 1.7
    assert f_lambda(p, 2.0, y) == pytest.approx(f_oracle(1.8, 2.0, y), rel=1e-12)


def test_f_lambda_zero_lambda_inverts_v0():
    assert f_lambda(P15, 0.0, 100.0) == pytest.approx(1.0, rel=1e-14)
    assert f_lambda(P15, 0.0, v0_closed_form(P15, 3.7)) == pytest.approx(3.7, rel=1e-13)


def test_f_lambda_domain():
    with pytest.raises(DomainError):
        f_lambda(P15, 1.0, 0.9)
    with pytest.raises(DomainError):
        f_lambda(P15, -1.0, 2.0)


def test_f_lambda_log_growth_near_root():
    # F(y0 + e) grows like c log(1/e) with c the decay length
    c = decay_length(P15, 1.0)
    f1 = f_lambda_log_excess(P15, 1.0, math.log(1e-8))
    f2 = f_lambda_log_excess(P15, 1.0, math.log(1e-10))
    assert (f2 - f1) / math.log(100.0) == pytest.approx(c, rel=1e-6)
    # slow algebraic decay to 0 at infinity: F ~ A y^(-(alpha-1)/2)
    far = [f_lambda(P15, 1.0, y) for y in (1e6, 1e9, 1e12)]
    assert far[0] > far[1] > far[2] > 0
    assert far[2] == pytest.approx(math.sqrt(2.5) / 0.5 * 1e12 ** (-0.25), rel=1e-6)


def test_halfline_basic_properties():
    assert v_lambda_halfline(P15, 0.0, 2.0) == v0_closed_form(P15, 2.0)
    xs = np.geomspace(1e-3, 30, 40)
    v = v_lambda_halfline(P15, 1.0, xs)
    assert np.all(np.diff(v) < 0)
    assert np.all(v >= 1.0)
    assert all(math.isfinite(v_lambda_log_excess(P15, 1.0, float(x))) for x in xs)
    assert v_lambda_halfline(P15, 1.0, 60.0) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("x", [0.01, 0.1, 1.0, 10.0])
def test_round_trip(x):
    for lam in (0.25, 1.0, 4.0):
        v = v_lambda_halfline(P15, lam, x)
        assert f_lambda(P15, lam, v) == pytest.approx(x, rel=1e-9)
        le = v_lambda_log_excess(P15, lam, x)
        assert f_lambda_log_excess(P15, lam, le) == pytest.approx(x, abs=1e-10)


def test_halfline_solves_ode():
    for alpha, lam in ((1.5, 1.0), (1.2, 0.5), (1.8, 3.0)):
        p = StableParams(alpha)
        x = np.geomspace(0.01, 5.0, 12)
        res = fd_residual(p, lam, lambda z: v_lambda_halfline(p, lam, z), x, x)
        assert res.max() < 1e-6


def test_slope_matches_finite_difference():
    x, h = 0.7, 1e-5
    fd = (v_lambda_halfline(P15, 1.0, x + h) - v_lambda_halfline(P15, 1.0, x - h)) / (2 * h)
    assert v_lambda_slope(P15, 1.0, x) == pytest.approx(fd, rel=1e-7)


def test_expansion_coefficient_reference():
    ref = 0.5**6 / (3.5 * 2.5**2)
    assert expansion_coefficient(P15, 1.0) == pytest.approx(ref, rel=1e-14)
    assert expansion_coefficient(P15, 2.0) == pytest.approx(2 * ref, rel=1e-14)


@pytest.mark.parametrize("alpha", [1.5, 1.8])
@pytest.mark.parametrize("lam", [1.0, 2.0])
def test_small_x_correction(alpha, lam):
    p = StableParams(alpha)
    x = 1e-3
    got = v_lambda_relative_excess(p, lam, x) * x ** (-p.occupation_exponent)
    assert got == pytest.approx(expansion_coefficient(p, lam), rel=1e-2)


def test_expansion_agrees_with_solution():
    x = 1e-3
    v0 = v0_closed_form(P15, x)
    # the correction is ~1e-21 relative here, so the two values agree to rounding
    gap = abs(v_lambda_halfline(P15, 1.0, x) - v_lambda_expansion(P15, 1.0, x)) / v0
    assert gap < 1e-14
    # and the excess itself matches the correction term up to O(x^6)
    rel = v_lambda_relative_excess(P15, 1.0, x)
    assert rel / (expansion_coefficient(P15, 1.0) * x**6) - 1 < 1e-5
    assert v_lambda_expansion(P15, 0.0, 0.3) == pytest.approx(v0_closed_form(P15, 0.3))


def test_h_lambda():
    assert h_lambda(P15, 0.0, 1.3) == v0_closed_form(P15, 1.3)
    assert 0 < h_lambda(P15, 1.0, 1.0) < 100.0
    assert 0 < h_lambda(P15, 1.0, 40.0) < 1e-25


def test_vtable_halfline_and_serialization():
    t = vtable_halfline(P15, 1.0, GridSpec(n_points=64))
    assert t.method == "F-inversion"
    assert max(t.residual) < 1e-6
    assert math.isnan(t(t.x[0] / 2))
    assert np.all(np.diff(t.v) < 0)
    back = VTable.from_json(t.to_json())
    assert back.grid == t.grid and back.values == t.values and back.rel_excess == t.rel_excess
    back = VTable.from_csv(t.to_csv(["alpha=1.5"]))
    assert back.grid == t.grid and back.values == t.values and back.slopes == t.slopes
    mid = math.sqrt(t.x[10] * t.x[11])
    assert t.tol < 1e-3
    assert abs(t(mid) / v_lambda_halfline(P15, 1.0, mid) - 1) <= 1.01 * t.tol


def test_vtable_validation():
    with pytest.raises(ValueError):
        VTable(1.0, 0.0, math.inf, (1.0, 0.5), (2.0, 1.0), "shooting", 0.0)
    with pytest.raises(ValueError):
        VTable(1.0, 0.0, math.inf, (0.5, 1.0), (2.0, 1.0), "magic", 0.0)


def test_closed_form_table():
    t = solve_bvp_interval(P15, 0.0, 0.0, math.inf, GridSpec(n_points=32))
    np.testing.assert_allclose(t.v, v0_closed_form(P15, t.x), rtol=1e-15)


def test_shooting_halfline_matches_inversion():
    t = solve_bvp_interval(P15, 1.0, 0.0, math.inf, GridSpec(n_points=48))
    assert t.method == "shooting"
    exact = v_lambda_halfline(P15, 1.0, t.x)
    assert np.max(np.abs(t.v / exact - 1)) < 1e-6
    assert max(t.residual) < 1e-6


def test_shooting_halfline_left_side():
    # (-inf, 2): mirror image of the half-line solution
    t = solve_bvp_interval(P15, 1.0, -math.inf, 2.0, GridSpec(n_points=32))
    exact = v_lambda_halfline(P15, 1.0, 2.0 - t.x)
    assert np.max(np.abs(t.v / exact - 1)) < 1e-6


def test_interval_midpoint_zero_lambda():
    for r in (0.5, 1.0, 2.0):
        assert interval_midpoint_value(P15, 0.0, r) == pytest.approx((alpha0(P15) / r) ** 4, rel=1e-12)
    t = solve_bvp_interval(P15, 0.0, -1.0, 1.0, GridSpec(n_points=24))
    i0 = int(np.argmin(np.abs(t.x)))
    assert t.x[i0] == 0.0
    assert t.v[i0] == pytest.approx(alpha0(P15) ** 4, rel=1e-8)


def test_interval_symmetry_and_residual():
    t = solve_bvp_interval(P15, 1.0, -1.0, 1.0, GridSpec(n_points=64))
    v = np.asarray(t.v)
    np.testing.assert_allclose(v, v[::-1], rtol=1e-12)
    assert min(v) > 1.0
    assert max(t.residual) < 1e-6


def test_interval_exceeds_halfline():
    # more room to escape on a bounded interval: v_{lam,-r,r} >= v_lam(dist to nearest end)
    val = interval_midpoint_value(P15, 1.0, 1.0)
    assert val > v_lambda_halfline(P15, 1.0, 1.0)


def test_solver_domain_errors():
    with pytest.raises(DomainError):
        solve_bvp_interval(P15, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        solve_bvp_interval(P15, -1.0, 0.0, 1.0)


def test_hij_relation_keys():
    out = hij_relation(P15, 1.0, 2.0)
    assert set(out) >= {"b"}
    assert all(math.isfinite(float(v)) for v in out.values())


def test_moment_constants_reference():
    mc = moment_constants(P15)
    assert mc.moment_R_range_exp == pytest.approx(float(mpmath.gamma(mpmath.mpf(1) / 3)) * 100, rel=1e-13)
    assert mc.moment_R_range_exp == pytest.approx(267.894, abs=1e-3)
    assert mc.alpha0 == pytest.approx(3.5806744985868, rel=1e-12)
    assert mc.min_ratio == pytest.approx(2 - mc.alpha0**4 / 100, rel=1e-12)
    assert mc.moment_R_1 == pytest.approx(3.648735, rel=1e-5)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_min_moment_below_twice_range(alpha):
    mc = moment_constants(StableParams(alpha))
    assert 0 < mc.moment_min_RL < 2 * mc.moment_R_range_exp


def test_c_beta_lambda_independence():
    beta = P15.range_exponent + 1
    vals = [moment_from_c_beta(P15, beta, lam, c_beta(P15, beta, lam)) for lam in (0.5, 1.0, 2.0)]
    assert max(vals) / min(vals) - 1 < 1e-3
    assert vals[1] == pytest.approx(1277.8278711435, rel=1e-8)


def test_c_beta_domain():
    with pytest.raises(DomainError):
        c_beta(P15, 4.0)
