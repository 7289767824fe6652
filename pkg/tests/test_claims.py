"""Claim registry, bounded-expression grammar and admissibility."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsallis_pricing.bsde import (AdmissibilityError, Claim, ClaimError, check_admissible,
                                  clamped_linear_s, constant, digital_s, digital_w, digital_wperp,
                                  expression_claim, ramp_indicator, smooth_mixed)
from tsallis_pricing.market import MarketModel, TimeGrid
from tsallis_pricing.qcalc import QGammaParams

rng = np.random.default_rng(0)
W = rng.normal(size=(5000, 1)) * 2
P = rng.normal(size=(5000, 1)) * 2


def test_ramp_indicator():
    x = np.array([-1.0, -0.05, 0.0, 0.05, 1.0])
    assert np.array_equal(ramp_indicator(x), [0, 0, 0, 1, 1])
    assert np.allclose(ramp_indicator(x, 0.2), [0, 0.25, 0.5, 0.75, 1])


@pytest.mark.parametrize("claim,cls", [
    (constant(0.3), "attainable"),
    (digital_wperp(), "unhedged"),
    (digital_w(), "attainable"),
    (smooth_mixed(), "general"),
])
def test_registry_bounds_and_class(claim, cls):
    v = claim(W, P)
    assert claim.hedge_class == cls
    assert v.min() >= claim.lo and v.max() <= claim.hi


def test_attainable_claims_ignore_wperp_and_vice_versa():
    for c in (digital_w(), constant(0.2)):
        assert np.array_equal(c(W, P), c(W, -P))
    c = digital_wperp()
    assert np.array_equal(c(W, P), c(-W, P))


def test_digital_s_uses_integrated_drift():
    m = MarketModel(lam=0.6)
    c = digital_s(m, TimeGrid.uniform(1.0, 10))
    assert c(np.array([[-0.59]]), np.zeros((1, 1)))[0] == 1.0
    assert c(np.array([[-0.61]]), np.zeros((1, 1)))[0] == 0.0


def test_clamped_linear_s():
    m = MarketModel(lam=0.5)
    c = clamped_linear_s(m, TimeGrid.uniform(1.0, 4), -0.5, 0.5, 1.0)
    v = c(W, P)
    assert v.min() >= -0.5 and v.max() <= 0.5 and c.hedge_class == "attainable"


def test_heat_of_digital_is_normal_cdf():
    c = digital_wperp()
    h, hw, hp = c.heat(np.zeros((3, 1)), np.array([[-1.0], [0.0], [1.0]]), 1.0)
    assert np.allclose(h, [0.15865525, 0.5, 0.84134475])
    assert np.all(hw == 0) and np.all(hp > 0)


def test_transforms():
    c = digital_wperp()
    s = c.scaled(-2.0)
    assert (s.lo, s.hi) == (-2.0, 0.0)
    assert np.array_equal(s(W, P), -2.0 * c(W, P))
    sh = c.shifted(0.2)
    assert (sh.lo, sh.hi) == (0.2, 1.2) and sh.hedge_class == "unhedged"
    n = c.negated()
    assert np.array_equal(n(W, P), -c(W, P))
    mx = c.mix(smooth_mixed(), 0.25)
    assert mx.hedge_class == "general"
    assert np.allclose(mx(W, P), 0.25 * c(W, P) + 0.75 * smooth_mixed()(W, P))
    assert c.mix(constant(0.3), 0.5).hedge_class == "unhedged"


def test_out_of_bounds_payoff_rejected():
    bad = Claim("bad", lambda w, p, s: w[:, 0], -1.0, 1.0)
    with pytest.raises(ClaimError, match="left its declared bounds"):
        bad(W, P)
    with pytest.raises(ClaimError):
        Claim("x", lambda w, p, s: w[:, 0], 1.0, 0.0)
    with pytest.raises(ClaimError):
        Claim("x", lambda w, p, s: w[:, 0], 0.0, 1.0, "hedged")


@pytest.mark.parametrize("text,lo,hi,cls", [
    ("clamp(0.4 + 0.3*W_T - 0.3*Wperp_T, 0, 1)", 0.0, 1.0, "general"),
    ("ind(Wperp_T)", 0.0, 1.0, "unhedged"),
    ("0.5*ind(W) + 0.25", 0.25, 0.75, "attainable"),
    ("min(clamp(W, -1, 1), 0.5)", -1.0, 0.5, "attainable"),
    ("max(ind(W), ind(WP)) * clamp(WP, -2, 2)", -2.0, 2.0, "general"),
    ("-clamp(W, 0, 1)", -1.0, 0.0, "attainable"),
    ("0.3", 0.3, 0.3, "attainable"),
])
def test_expression_grammar(text, lo, hi, cls):
    c = expression_claim(text)
    assert (c.lo, c.hi) == pytest.approx((lo, hi))
    assert c.hedge_class == cls
    v = c(W, P)
    assert v.min() >= c.lo - 1e-12 and v.max() <= c.hi + 1e-12


@pytest.mark.parametrize("text,msg", [
    ("W_T", "not bounded"),
    ("clamp(W, 0, 1) / 2", "unsupported"),
    ("exp(W)", "unsupported"),
    ("__import__('os')", "unsupported"),
    ("clamp(W, WP, 1)", "constants"),
    ("clamp(W, 1, 0)", "exceeds"),
    ("min(W)", "at least two"),
    ("ind(W, WP)", "one argument"),
    ("S_T", "unknown name"),
    ("clamp(W, 0,", "cannot parse"),
])
def test_expression_errors(text, msg):
    with pytest.raises(ClaimError, match=msg):
        expression_claim(text)


def test_expression_smoothing_ramps_indicators():
    c = expression_claim("ind(Wperp_T)")
    assert c.discontinuous
    v = c(np.zeros((3, 1)), np.array([[-0.05], [0.0], [0.05]]), smoothing=0.2)
    assert np.allclose(v, [0.25, 0.5, 0.75])


# random bounded expressions: interval arithmetic must bracket every evaluation
atoms = st.sampled_from(["W", "WP", "0.5", "-1.5", "2"])
bounded_atoms = st.one_of(
    st.builds(lambda a, lo, w: f"clamp({a}, {lo}, {lo + w})", atoms, st.floats(-2, 2).map(lambda x: round(x, 2)),
              st.floats(0, 3).map(lambda x: round(x, 2))),
    atoms.map(lambda a: f"ind({a})"),
)
exprs = st.recursive(
    bounded_atoms,
    lambda inner: st.one_of(
        st.builds(lambda a, b: f"({a} + {b})", inner, inner),
        st.builds(lambda a, b: f"({a} - {b})", inner, inner),
        st.builds(lambda a, b: f"({a} * {b})", inner, inner),
        st.builds(lambda a, b: f"min({a}, {b})", inner, inner),
        st.builds(lambda a, b: f"max({a}, {b})", inner, inner),
    ),
    max_leaves=6,
)


@given(exprs)
def test_interval_bounds_bracket_values(text):
    c = expression_claim(text)
    v = c(W, P, check=False)
    tol = 1e-9 * max(1.0, abs(c.lo), abs(c.hi))
    assert v.min() >= c.lo - tol and v.max() <= c.hi + tol


def test_admissibility():
    c = digital_wperp()
    a = check_admissible(c, QGammaParams(2.0, 1.0))
    assert a.m1 == pytest.approx(0.5) and a.m2 == pytest.approx(1.0)
    # q = 2, gamma = 1: Lambda = (-1, inf); -digital has lo = -1 on the boundary
    with pytest.raises(AdmissibilityError):
        check_admissible(c.negated(), QGammaParams(2.0, 1.0))
    check_admissible(digital_wperp(0.5).negated(), QGammaParams(2.0, 1.0))
    # q = 0.5, gamma = 3: Lambda = (-inf, 2/3)
    with pytest.raises(AdmissibilityError):
        check_admissible(c, QGammaParams(0.5, 3.0))
