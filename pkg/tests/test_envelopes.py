import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import ConvexHull

from degenlab import (EnvelopeParams, Field, build_grid, convex_envelope, envelope_audit,
                      eps_envelope, sample_field)
from degenlab.envelopes import erode, lower_hull_1d
from degenlab.runner import piecewise_linear_field


def whole(g, eps):
    return EnvelopeParams.whole(g, eps)


def test_constant_field():
    g = build_grid(2, (-1, 1), 7)
    r = eps_envelope(Field.constant(g, 1.5), whole(g, 0.25))
    assert np.all(r.envelope.values == 1.75)
    assert np.array_equal(r.argmax.ravel(), np.arange(g.size))


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2])
def test_absolute_value_closed_form(eps):
    # sup_x |x| + eps - |x - x0|^2 / eps is attained at x0 +- eps/2: |x0| + 5 eps / 4
    g = build_grid(1, (-1, 1), 2001)
    r = eps_envelope(sample_field("abs(t)", g), whole(g, eps))
    t = g.axes[0]
    near = np.abs(t) <= 0.3
    err = np.max(np.abs(r.envelope.values[near] - (np.abs(t[near]) + 1.25 * eps)))
    assert err <= 2 * g.h


def test_lower_is_dual_of_upper():
    g = build_grid(2, (-1, 1), 15)
    u = Field(g, np.random.default_rng(1).normal(size=g.shape))
    p = whole(g, 0.1)
    lo = eps_envelope(u, p, "lower").envelope.values
    up = eps_envelope(u.with_values(-u.values), p, "upper").envelope.values
    assert np.array_equal(lo, -up)


def test_argmax_lowest_index_on_ties():
    g = build_grid(1, (-1, 1), 5)
    u = Field(g, [0.0, 1.0, 0.0, 1.0, 0.0])
    r = eps_envelope(u, whole(g, 10.0))
    assert r.argmax[2] == 1  # nodes 1 and 3 tie for the middle node


@pytest.mark.parametrize("bad", [dict(eps=0.0), dict(eps=np.nan)])
def test_params_reject_eps(bad):
    with pytest.raises(ValueError):
        EnvelopeParams(source=np.ones(5, bool), **bad)


def test_params_evaluation_strictly_inside():
    g = build_grid(1, (-1, 1), 7)
    src = np.ones(g.shape, bool)
    with pytest.raises(ValueError):
        EnvelopeParams(0.1, src, src)
    with pytest.raises(ValueError):
        EnvelopeParams(0.1, np.zeros(g.shape, bool))
    assert EnvelopeParams(0.1, src).evaluation.tolist() == erode(src).tolist()


def test_audit_zero_field():
    g = build_grid(2, (-1, 1), 11)
    audit = envelope_audit(Field.constant(g, 0.0), whole(g, 0.1), 0.2)
    assert audit.passed
    assert audit.checks["above"].worst_margin == 0.0
    assert audit.checks["argmax"].worst_margin == 0.0


def test_audit_kink_semiconvexity():
    g = build_grid(1, (-1, 1), 401)
    eps = 0.1
    p = whole(g, eps)
    r = eps_envelope(sample_field("abs(t)", g), p)
    i = g.nearest_node((0.0,))[0]
    U = r.envelope.values
    d2 = (U[i + 1] - 2 * U[i] + U[i - 1]) / g.h ** 2
    assert d2 + 2 / eps >= 0
    assert envelope_audit(sample_field("abs(t)", g), p, 2 * eps).checks["semiconvex"].passed


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("eps", [0.05, 0.1])
def test_audit_seeded_corpus(seed, eps):
    g = build_grid(1, (-1, 1), 201)
    audit = envelope_audit(piecewise_linear_field(g, seed), whole(g, eps), 2 * eps)
    assert audit.violations == 0, audit.to_json()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_audit_seeded_corpus_2d(seed):
    g = build_grid(2, (-1, 1), 21)
    audit = envelope_audit(piecewise_linear_field(g, seed), whole(g, 0.1), 0.2)
    assert audit.passed, audit.to_json()


def test_audit_reports_json():
    g = build_grid(1, (-1, 1), 21)
    audit = envelope_audit(sample_field("t", g), whole(g, 0.1), 0.2)
    text = audit.to_json()
    assert '"above"' in text and '"semiconvex"' in text


def test_audit_requires_larger_eps_prime():
    g = build_grid(1, (-1, 1), 21)
    with pytest.raises(ValueError):
        envelope_audit(Field.constant(g, 0.0), whole(g, 0.1), 0.1)


# values on a coarse dyadic lattice keep every envelope operation exact
dyadic = st.integers(-256, 256).map(lambda k: k / 64)


@given(vals=st.lists(dyadic, min_size=17, max_size=17), c=dyadic,
       bump=st.lists(st.integers(0, 64), min_size=17, max_size=17))
@settings(max_examples=60, deadline=None)
def test_envelope_shift_and_monotonicity(vals, c, bump):
    g = build_grid(1, (-1, 1), 17)  # h = 1/8
    p = whole(g, 0.25)
    u = Field(g, vals)
    base = eps_envelope(u, p).envelope.values
    shifted = eps_envelope(u.with_values(u.values + c), p).envelope.values
    assert np.array_equal(shifted, base + c)
    w = u.with_values(u.values + np.array(bump) / 64)
    assert np.all(eps_envelope(w, p).envelope.values >= base)


def test_convex_input_is_fixed():
    g = build_grid(1, (-1, 1), 101)
    v = sample_field("t**2", g)
    gam, contact = convex_envelope(v)
    assert np.array_equal(gam.values, v.values)
    assert contact.count == g.n


def test_extended_kink_example():
    g = build_grid(1, (-2, 2), 401)
    ce = convex_envelope(sample_field("abs(t) - 1", g), extend=True, R=1.0)
    G = ce.envelope.values
    at = lambda x: G[g.nearest_node((x,))]  # noqa: E731
    assert at(0.0) == -1.0
    assert math.isclose(at(1.0), -0.5, abs_tol=1e-15)
    assert math.isclose(at(-1.0), -0.5, abs_tol=1e-15)
    # the hull touches the data at the origin and the two ends of [-2, 2]
    assert np.flatnonzero(ce.contact.mask).tolist() == [0, 200, 400]


def test_extend_requires_radius():
    g = build_grid(1, (-1, 1), 11)
    with pytest.raises(ValueError):
        convex_envelope(Field.constant(g, 0.0), extend=True)


@given(seed=st.integers(0, 10 ** 6), n=st.integers(3, 80))
@settings(max_examples=60, deadline=None)
def test_lower_hull_against_qhull(seed, n):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-1, 1, n)) + np.arange(n) * 1e-3
    y = rng.normal(size=n)
    got = lower_hull_1d(x, y)
    # oracle: qhull facets with downward normals form the lower hull
    if n >= 3:
        hull = ConvexHull(np.c_[x, y])
        verts = sorted({int(i) for eq, simplex in zip(hull.equations, hull.simplices)
                        if eq[1] < 0 for i in simplex})
        ref = np.interp(x, x[verts], y[verts])
        np.testing.assert_allclose(got, np.minimum(ref, y), atol=1e-12)
    assert np.all(got <= y)
    assert np.array_equal(lower_hull_1d(x, got), got)


@given(seed=st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_convex_envelope_1d_properties(seed):
    g = build_grid(1, (-1, 1), 65)
    v = Field(g, np.random.default_rng(seed).normal(size=g.shape))
    G = convex_envelope(v).envelope
    assert np.all(G.values <= v.values)
    d2 = G.values[2:] - 2 * G.values[1:-1] + G.values[:-2]
    assert np.all(d2 >= -1e-12)
    assert np.array_equal(convex_envelope(G).envelope.values, G.values)


def test_2d_sweep_matches_1d_hull():
    g1 = build_grid(1, (-1, 1), 41)
    g2 = build_grid(2, (-1, 1), 41)
    prof = np.random.default_rng(7).normal(size=41)
    ref = convex_envelope(Field(g1, prof)).envelope.values
    emb = Field(g2, np.broadcast_to(prof[:, None], g2.shape))
    ce = convex_envelope(emb)
    assert ce.converged
    assert np.max(np.abs(ce.envelope.values - ref[:, None])) <= 1e-12


def test_2d_convexity_and_idempotence():
    g = build_grid(2, (-1, 1), 21)
    v = Field(g, np.random.default_rng(3).normal(size=g.shape))
    ce = convex_envelope(v)
    G = ce.envelope.values
    assert ce.converged and np.all(G <= v.values + 1e-15)
    for ax in range(2):
        d2 = np.diff(G, 2, axis=ax)
        assert d2.min() >= -1e-9
    again = convex_envelope(ce.envelope).envelope.values
    assert np.max(np.abs(again - G)) <= 1e-10


def test_strictly_convex_contact_is_full():
    g = build_grid(2, (-1, 1), 15)
    mask = g.ball_mask(1.0)
    ce = convex_envelope(sample_field("x1**2 + 2*x2**2 + 0.5*x1*x2", g), region=mask)
    assert np.array_equal(ce.contact.mask, mask)
    assert ce.contact.measure == pytest.approx(mask.sum() * g.cell_volume)
