import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degenlab import (DirichletProblem, EllipticityPair, Field, PreconditionError, WeightSpec,
                      abp_estimate, build_barrier, build_grid, harnack_ratio_probe,
                      measure_estimate_check, sample_field, solve_dirichlet, verify_barrier,
                      weighted_residual)
from degenlab.estimates import ball_boundary, bump
from degenlab.operators import OperatorSpec
from degenlab.runner import _barrier_grid


def test_barrier_constants_d2():
    b = build_barrier(2, EllipticityPair(1, 1))
    assert b.alpha == 1.0
    # oracle: M1 - M2 / (2 sqrt 2) = 0 and M1 - M2 / (3 sqrt 2 / 2) = -2
    A = np.array([[1, -1 / (2 * math.sqrt(2))], [1, -2 / (3 * math.sqrt(2))]])
    M1, M2 = np.linalg.solve(A, [0.0, -2.0])
    assert math.isclose(b.M1, M1, rel_tol=1e-13) and math.isclose(b.M1, 6.0, rel_tol=1e-13)
    assert math.isclose(b.M2, M2, rel_tol=1e-13)
    assert math.isclose(b.M2, 12 * math.sqrt(2), rel_tol=1e-13)


@pytest.mark.parametrize("d,lam,Lam,alpha", [(3, 1, 3, 5.0), (1, 1, 1, 1.0), (1, 1, 5, 1.0),
                                             (2, 1, 2, 1.0), (2, 1, 5, 4.0), (3, 2, 2, 1.0)])
def test_barrier_exponent(d, lam, Lam, alpha):
    assert build_barrier(d, EllipticityPair(lam, Lam)).alpha == alpha


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("Lam", [1, 2, 5])
def test_barrier_level_conditions(d, Lam):
    b = build_barrier(d, EllipticityPair(1, Lam))
    x = np.zeros(d)
    x[0] = 2 * math.sqrt(d)
    assert abs(float(b(x))) <= 1e-12 * b.M1
    x[0] = 1.5 * math.sqrt(d)
    assert math.isclose(float(b(x)), -2.0, rel_tol=1e-12)
    assert b.M2 > 0 and b.pucci_factor <= 0


def test_barrier_extension_is_c2():
    b = build_barrier(2, EllipticityPair(1, 2))
    r, (c0, c2, c4) = b.r_blend, b.inner
    A, M2 = b.alpha, b.M2
    inner = [c0 + c2 * r ** 2 + c4 * r ** 4, 2 * c2 * r + 4 * c4 * r ** 3, 2 * c2 + 12 * c4 * r ** 2]
    outer = [b.M1 - M2 * r ** -A, A * M2 * r ** (-A - 1), -A * (A + 1) * M2 * r ** (-A - 2)]
    np.testing.assert_allclose(inner, outer, rtol=1e-10)
    assert float(b.radial(np.array([0.0]))[0]) == c0


def test_barrier_eigenvalues_at_unit_radius():
    b = build_barrier(2, EllipticityPair(1, 1))
    np.testing.assert_allclose(b.hessian_eigenvalues(1.0), b.M2 * np.array([-2.0, 1.0]),
                               rtol=1e-15)


@pytest.mark.parametrize("r", [0.3, 0.5, 1.0, 2.5])
def test_barrier_strict_margin_equal_ellipticity(r):
    # closed-form M+ of the Hessian spectrum for lam = Lam = 1, d = 2
    b = build_barrier(2, EllipticityPair(1, 1))
    ev = b.hessian_eigenvalues(r)
    mplus = ev[ev > 0].sum() + ev[ev < 0].sum()
    expected = -b.M2 * b.alpha * r ** (-b.alpha - 2) * (b.alpha + 1 - 1)
    assert math.isclose(mplus, expected, rel_tol=1e-12) and mplus < 0


def test_barrier_equality_case_fine_grid():
    b = build_barrier(2, EllipticityPair(1, 2))
    rep = verify_barrier(b, WeightSpec(0.5), _barrier_grid(2, 0.01))
    assert rep.max_outer <= 1e-6
    assert rep.passed, rep.to_json()


@pytest.mark.parametrize("d,Lam", [(1, 2), (2, 5), (3, 2), (3, 5)])
def test_barrier_passes_at_h002(d, Lam):
    b = build_barrier(d, EllipticityPair(1, Lam))
    rep = verify_barrier(b, WeightSpec(0.5), _barrier_grid(d, 0.02))
    assert rep.passed, rep.to_json()
    assert np.isfinite(rep.C)


def test_harmonic_barrier_truncation_is_second_order():
    # d = 3, lam = Lam = 1: phi = M1 - M2 / r is harmonic, so M+_h is the
    # 7-point Laplacian of 1/r and only its O(h^2) truncation remains
    b = build_barrier(3, EllipticityPair(1, 1))
    x = np.array([0.16, 0.16, 0.16])
    vals = []
    for h in (0.02, 0.01, 0.005):
        lap = sum(float(b(x + h * e) - 2 * b(x) + b(x - h * e)) for e in np.eye(3)) / h ** 2
        vals.append(lap)
    assert vals[0] > 0
    np.testing.assert_allclose([vals[0] / vals[1], vals[1] / vals[2]], 4.0, rtol=0.02)
    coarse = verify_barrier(b, WeightSpec(0.5), _barrier_grid(3, 0.04)).max_outer
    fine = verify_barrier(b, WeightSpec(0.5), _barrier_grid(3, 0.02)).max_outer
    assert 3.0 < coarse / fine < 4.5


def test_barrier_report_names_worst_node():
    b = build_barrier(2, EllipticityPair(1, 1))
    rep = verify_barrier(b, WeightSpec(0.5), _barrier_grid(2, 0.05), tol=-1e3)
    assert not rep.checks["outer"]["passed"]
    assert len(rep.checks["outer"]["node"]) == 2


def test_barrier_dimension_mismatch():
    with pytest.raises(ValueError):
        verify_barrier(build_barrier(2, EllipticityPair(1, 1)), WeightSpec(0.5),
                       build_grid(1, (0, 3), 11))


def test_bump():
    assert float(bump(np.zeros(3))) == 1.0
    assert float(bump(np.array([0.5, 0.0]))) == 0.0
    assert float(bump(np.array([0.7, 0.0]))) == 0.0
    assert float(bump(np.array([0.25]))) == pytest.approx(0.5625)


def test_abp_nonnegative_field():
    g = build_grid(2, (-1, 1), 21)
    rep = abp_estimate(Field.constant(g, 1.0), Field.constant(g, 1.0), WeightSpec(0.5), 1.0)
    assert rep.sup_neg == 0.0 and rep.C_hat == 0.0


def test_abp_boundary_precondition():
    g = build_grid(1, (-1, 1), 21)
    with pytest.raises(PreconditionError):
        abp_estimate(Field.constant(g, -1.0), Field.constant(g, 0.0), WeightSpec(1.0), 1.0)


def abp_1d(n):
    g = build_grid(1, (-1, 1), n)
    u, f = sample_field("t**2 - 1", g), sample_field("2*abs(t)", g)
    return g, u, f


@pytest.mark.parametrize("n", [200, 400, 800, 1600])
def test_abp_closed_form_example(n):
    g, u, f = abp_1d(n)
    rep = abp_estimate(u, f, WeightSpec(1.0), 1.0)
    assert rep.sup_neg == pytest.approx(1.0, abs=g.h ** 2)
    # closed form: integral 4 over the full contact set, so C_hat = 1/4
    assert abs(rep.integral - 4.0) <= 4 * g.h
    assert abs(rep.C_hat - 0.25) <= 0.5 * g.h
    assert rep.contact_measure == pytest.approx(2.0, abs=2 * g.h)


def test_abp_refinement_drift_shrinks():
    errs = [abs(abp_estimate(*abp_1d(n)[1:], WeightSpec(1.0), 1.0).C_hat - 0.25)
            for n in (200, 400, 800, 1600)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


@given(s=st.floats(1e-3, 1e3))
@settings(max_examples=30, deadline=None)
def test_abp_scale_invariance(s):
    g, u, f = abp_1d(200)
    w = WeightSpec(1.0)
    base = abp_estimate(u, f, w, 1.0).C_hat
    scaled = abp_estimate(u.with_values(s * u.values), f.with_values(s * f.values), w, 1.0).C_hat
    assert abs(scaled - base) <= 1e-10 * base


def test_abp_barrier_shift_regression():
    ell, w = EllipticityPair(1, 1), WeightSpec(0.5)
    b = build_barrier(2, ell)
    R = 1.5 * math.sqrt(2)
    g = build_grid(2, (-1.1 * R, 1.1 * R), 200, offset=True)
    u = Field(g, b(np.stack(g.coords, axis=-1)) + 2.0)
    f = weighted_residual(OperatorSpec("pucci-minus", ell), w, u, Field.constant(g, 0.0))
    f = f.with_values(np.nan_to_num(f.values))
    # the ball is widened by three cells so its discrete boundary lies where u >= 0
    rep = abp_estimate(u, f, w, R + 3 * g.h)
    assert rep.integral > 0
    assert rep.C_hat == pytest.approx(0.056607608335911525, rel=1e-9)


def test_ball_boundary_is_shell():
    g = build_grid(2, (-1, 1), 21)
    ball = g.ball_mask(0.8)
    shell = ball_boundary(g, ball)
    assert shell.any() and not shell[g.nearest_node((0, 0))]
    assert np.all(ball[shell])


def test_measure_zero_field_is_full():
    g = build_grid(2, (-3, 3), 60, offset=True)
    z = Field.constant(g, 0.0)
    rep = measure_estimate_check(z, z, WeightSpec(0.5), 1.0, mu=0.5)
    assert rep.applicable and rep.measure == rep.q1_measure and rep.exceeds


def test_measure_precondition_flag():
    g = build_grid(2, (-3, 3), 60, offset=True)
    rep = measure_estimate_check(Field.constant(g, 10.0), Field.constant(g, 0.0),
                                 WeightSpec(0.5), 1.0, mu=0.5)
    assert not rep.applicable and rep.exceeds is None
    neg = measure_estimate_check(Field.constant(g, -1.0), Field.constant(g, 0.0),
                                 WeightSpec(0.5), 1.0)
    assert not neg.applicable


def test_measure_barrier_regression():
    ell, w = EllipticityPair(1, 1), WeightSpec(0.5)
    b = build_barrier(2, ell)
    L = 2 * math.sqrt(2)
    g = build_grid(2, (-L, L), 160, offset=True)
    phi = b(np.stack(g.coords, axis=-1))
    u = Field(g, phi - phi.min())
    f = weighted_residual(OperatorSpec("pucci-minus", ell), w, u, Field.constant(g, 0.0))
    rep = measure_estimate_check(u, f.with_values(np.nan_to_num(f.values)), w, 1.0, mu=0.1)
    assert rep.applicable and rep.inf_q3 == 0.0
    # four cells around the minimum
    assert rep.measure == pytest.approx(4 * g.cell_volume, rel=1e-12)
    assert rep.f_norm == pytest.approx(5061.014209045545, rel=1e-9)


@given(seed=st.integers(0, 10 ** 6), m1=st.floats(0, 2), dm=st.floats(0, 2))
@settings(max_examples=40, deadline=None)
def test_measure_monotone_in_level(seed, m1, dm):
    g = build_grid(2, (-3, 3), 24, offset=True)
    u = Field(g, np.random.default_rng(seed).uniform(0, 3, g.shape))
    z = Field.constant(g, 0.0)
    lo = measure_estimate_check(u, z, WeightSpec(0.5), m1).measure
    hi = measure_estimate_check(u, z, WeightSpec(0.5), m1 + dm).measure
    assert hi >= lo


def test_harnack_examples():
    g = build_grid(1, (0, 1), 11)
    assert harnack_ratio_probe(Field.constant(g, 2.5), slice(None)) == 1.0
    lin = sample_field("1 + t", g)
    assert harnack_ratio_probe(lin, slice(2, 6)) == pytest.approx(1.5 / 1.2)
    with pytest.raises(ValueError):
        harnack_ratio_probe(sample_field("t", g), slice(None))
    with pytest.raises(ValueError):
        harnack_ratio_probe(lin, np.zeros(11, bool))


def test_harnack_solve_refinement():
    ratios = []
    for n in (33, 65, 129):
        g = build_grid(2, (-1, 1), n)
        p = DirichletProblem(g, OperatorSpec.trace(), WeightSpec(0.5, eps=1e-3),
                             Field.constant(g, 0.0), sample_field("2 + x1 + 0.5*x2**2", g))
        ratios.append(harnack_ratio_probe(solve_dirichlet(p).solution, g.cube_mask(1.0)))
    assert ratios[-1] == pytest.approx(1.6226728604824383, rel=1e-6)
    assert max(ratios) / min(ratios) - 1 <= 0.01
