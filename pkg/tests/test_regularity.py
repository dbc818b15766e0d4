import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from degenlab import (Field, best_affine_fit, build_grid, exponent_estimate, exponent_map,
                      iteration_audit, sample_field)
from degenlab.regularity import CAP


def chebyshev_oracle(u, x0, r):
    """Direct LP over every node of the ball: minimize t with |u - a - b.(x - x0)| <= t."""
    g = u.grid
    mask = g.ball_mask(r, x0)
    X = g.points[mask.ravel()] - np.asarray(x0, float)
    y = u.values[mask]
    n, d = X.shape
    one = np.ones((n, 1))
    A = np.vstack([np.hstack([-one, -X, -one]), np.hstack([one, X, -one])])
    res = linprog(np.r_[np.zeros(d + 1), 1.0], A_ub=A, b_ub=np.r_[-y, y],
                  bounds=[(None, None)] * (d + 1) + [(0, None)], method="highs")
    return res.x[-1]


@pytest.fixture(scope="module")
def g1():
    return build_grid(1, (-1, 1), 4097)


def test_affine_field_is_reproduced():
    g = build_grid(2, (-1, 1), 21)
    u = sample_field("0.3 - 2*x1 + 0.5*x2", g)
    fit = best_affine_fit(u, (0.1, -0.2), 0.5)
    assert fit.K <= 1e-14
    assert fit.a == pytest.approx(0.3 - 2 * 0.1 + 0.5 * -0.2, abs=1e-14)
    np.testing.assert_allclose(fit.b, [-2.0, 0.5], atol=1e-13)


@pytest.mark.parametrize("r", [0.5, 0.25, 0.125])
def test_midrange_residual_power(g1, r):
    # even function: the Chebyshev fit is the constant (max + min) / 2
    fit = best_affine_fit(sample_field("abs(t)**1.5", g1), [0.0], r)
    assert abs(fit.K - r ** 1.5 / 2) <= g1.h
    assert abs(fit.b[0]) <= 1e-12


@pytest.mark.parametrize("r", [1.0, 0.5, 0.1])
def test_midrange_residual_square(g1, r):
    fit = best_affine_fit(sample_field("t**2", g1), [0.0], r)
    assert abs(fit.K - r * r / 2) <= g1.h


@pytest.mark.parametrize("seed", range(6))
def test_fit_matches_lp_oracle_1d(seed):
    g = build_grid(1, (-1, 1), 101)
    u = Field(g, np.random.default_rng(seed).normal(size=g.shape))
    fit = best_affine_fit(u, [0.05], 0.6)
    assert fit.K == pytest.approx(chebyshev_oracle(u, [0.05], 0.6), rel=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_fit_matches_lp_oracle_2d(seed):
    g = build_grid(2, (-1, 1), 31)
    u = Field(g, np.random.default_rng(seed).normal(size=g.shape))
    fit = best_affine_fit(u, (0.0, 0.1), 0.5)
    assert fit.K == pytest.approx(chebyshev_oracle(u, (0.0, 0.1), 0.5), rel=1e-7)


def test_fit_needs_enough_nodes():
    g = build_grid(2, (-1, 1), 11)
    with pytest.raises(ValueError):
        best_affine_fit(Field.constant(g, 0.0), (0, 0), 0.1)
    with pytest.raises(ValueError):
        best_affine_fit(Field.constant(g, 0.0), (0,), 0.5)


@given(c=st.floats(-5, 5), b=st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_fit_absorbs_affine_shift(c, b):
    g = build_grid(1, (-1, 1), 201)
    base = sample_field("abs(t)**1.25", g)
    moved = base.with_values(base.values + c + b * g.axes[0])
    k0 = best_affine_fit(base, [0.0], 0.5).K
    assert best_affine_fit(moved, [0.0], 0.5).K == pytest.approx(k0, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("gamma", [0.25, 0.5, 0.75])
def test_power_exponent_recovery(g1, gamma):
    rep = exponent_estimate(sample_field(f"abs(t)**{1 + gamma}", g1), [0.0], 0.5, (1, 8))
    assert not rep.capped
    assert abs(rep.alpha - gamma) <= 0.05
    assert np.all(np.diff(rep.radii) < 0)


def test_kink_exponent_zero(g1):
    u = sample_field("2*maximum(t, 0) - 0.5*minimum(t, 0)", g1)
    rep = exponent_estimate(u, [0.0], 0.5, (1, 8))
    assert abs(rep.alpha) <= 0.05


@pytest.mark.parametrize("expr", ["t**2", "3*t**2 - t + 1", "0.5 - t"])
def test_smooth_fields_are_capped(g1, expr):
    rep = exponent_estimate(sample_field(expr, g1), [0.1], 0.5, (1, 8))
    assert rep.capped and rep.alpha == CAP


def test_resolution_guard():
    g = build_grid(1, (-1, 1), 101)
    with pytest.raises(ValueError):
        exponent_estimate(sample_field("t**2", g), [0.0], 0.5, (1, 8))


@pytest.mark.parametrize("bad", [dict(rho=1.0), dict(rho=0.0), dict(k_range=(3, 3))])
def test_radius_schedule_validation(g1, bad):
    with pytest.raises(ValueError):
        exponent_estimate(sample_field("t**2", g1), [0.0], **bad)


@given(s=st.floats(0.01, 100).flatmap(lambda v: st.sampled_from([v, -v])),
       c=st.floats(-3, 3), b=st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_exponent_invariant_under_scaling_and_affine(s, c, b):
    g = build_grid(1, (-1, 1), 1025)
    u = sample_field("abs(t)**1.5", g)
    base = exponent_estimate(u, [0.0], 0.5, (1, 6)).alpha
    v = u.with_values(s * u.values + c + b * g.axes[0])
    assert abs(exponent_estimate(v, [0.0], 0.5, (1, 6)).alpha - base) <= 1e-8


@pytest.mark.parametrize("gamma", [0.5, 0.75])
@pytest.mark.parametrize("rho,k_range", [(0.5, (1, 8)), (1 / 3, (1, 5))])
def test_rho_robustness(g1, gamma, rho, k_range):
    rep = exponent_estimate(sample_field(f"abs(t)**{1 + gamma}", g1), [0.0], rho, k_range)
    assert abs(rep.alpha - gamma) <= 0.05


def test_map_on_and_off_interface():
    g = build_grid(2, (-1, 1), 257)
    u = sample_field("abs(x2)**1.5", g)
    # probes sit on nodes so every ball reaches |x2| = r
    m = exponent_map(u, [(0.0, 0.0), (0.25, 0.0), (0.0, 0.5), (0.375, -0.5)], 0.5, (1, 4), r0=0.5)
    on, off = m.entries[:2], m.entries[2:]
    assert all(abs(e.alpha - 0.5) <= 0.07 and not e.capped for e in on)
    assert all(e.capped for e in off)
    text = m.to_csv()
    assert text.splitlines()[0] == "x1,x2,alpha,band,capped,error"
    assert len(text.splitlines()) == 5


def test_map_affine_all_capped():
    g = build_grid(2, (-1, 1), 129)
    m = exponent_map(sample_field("1 + x1 - 2*x2", g), [(0, 0), (0.2, 0.1)], 0.5, (1, 3), 0.5)
    assert all(e.capped and e.error is None for e in m.entries)


def test_map_records_failures():
    g = build_grid(1, (-1, 1), 65)
    m = exponent_map(sample_field("t**2", g), [[0.0]], 0.5, (1, 8))
    assert m.entries[0].error and math.isnan(m.entries[0].alpha)


def test_map_on_solved_sharp_profile():
    from degenlab import DirichletProblem, OperatorSpec, WeightSpec, solve_dirichlet
    a = 0.5
    g = build_grid(1, (-1, 1), 2048, offset=True)
    p = DirichletProblem(g, OperatorSpec.trace(), WeightSpec(a),
                         Field.constant(g, (2 - a) * (1 - a)), sample_field("abs(t)**1.5", g))
    u = solve_dirichlet(p).solution
    e = exponent_map(u, [[0.0]], 0.5, (1, 6)).entries[0]
    assert abs(e.alpha - (1 - a)) <= 0.05


def fits_at_zero(u, rho, ks):
    return [best_affine_fit(u, [0.0], rho ** k) for k in ks]


def test_audit_affine_is_zero(g1):
    fits = fits_at_zero(sample_field("1 + 2*t", g1), 0.5, range(1, 6))
    rep = iteration_audit(fits, 0.5, 0.5)
    assert rep.C_increment <= 1e-12 and rep.C_residual <= 1e-12 and not rep.blowup


def test_audit_sharp_profile_stable(g1):
    a = 0.5
    fits = fits_at_zero(sample_field(f"abs(t)**{2 - a}", g1), 0.5, range(1, 9))
    rep = iteration_audit(fits, 0.5, 1 - a)
    assert not rep.blowup
    # residual constants track the midrange 1/2 up to O(h / r^1.5)
    assert max(rep.residual_constants) / min(rep.residual_constants) <= 1.1
    assert np.isfinite(rep.C_increment)


def test_audit_kink_blows_up(g1):
    fits = fits_at_zero(sample_field("abs(t)", g1), 0.5, range(1, 9))
    rep = iteration_audit(fits, 0.5, 0.5)
    assert rep.blowup
    c = np.array(rep.residual_constants)
    np.testing.assert_allclose(c[1:] / c[:-1], 2 ** 0.5, rtol=0.02)


def test_audit_validation(g1):
    u = sample_field("abs(t)", g1)
    with pytest.raises(ValueError):
        iteration_audit([best_affine_fit(u, [0.0], 0.5), best_affine_fit(u, [0.1], 0.25)], 0.5, 0.5)
    with pytest.raises(ValueError):
        iteration_audit([best_affine_fit(u, [0.0], 0.5), best_affine_fit(u, [0.0], 0.2)], 0.5, 0.5)
    with pytest.raises(ValueError):
        iteration_audit([best_affine_fit(u, [0.0], 0.5)], 0.5, 0.5)


@pytest.mark.parametrize("expr", ["abs(t)", "abs(t)**1.3", "abs(t)**1.5", "abs(t)**1.8",
                                  "maximum(t, 0)**1.25"])
@pytest.mark.parametrize("declared", [0.2, 0.5, 0.7])
def test_audit_consistent_with_estimate(g1, expr, declared):
    u = sample_field(expr, g1)
    rep = exponent_estimate(u, [0.0], 0.5, (1, 8))
    audit = iteration_audit(rep.fits, 0.5, declared, u)
    expected = (not rep.capped) and rep.alpha < declared - rep.band
    assert audit.blowup == expected
    assert audit.alpha_hat == rep.alpha
