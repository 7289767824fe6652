"""Tsallis relative entropy: definitional and integral routes, conditional versions."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import tsallis_constant
from tsallis_pricing.entropy import (closed_form_tsallis, kl_limit_check, pointwise_form_gap,
                                     submartingale_check, tsallis_conditional, tsallis_definitional,
                                     tsallis_integral, tsallis_q_vs_qmin, write_entropy_csv)
from tsallis_pricing.market import MarketModel, TimeGrid, simulate, stochastic_exponential

NSIG = 4.0
FORM_TOL = 1e-12


@pytest.fixture(scope="module")
def ens():
    return simulate(MarketModel(lam=0.6), TimeGrid.uniform(1.0, 100), 100000, 11)


def density(ens, lam=0.6, alpha=0.8):
    return stochastic_exponential(ens, (-lam, alpha))


@pytest.mark.parametrize("c,T,q", [(1.0, 1.0, 2.0), (1.0, 1.0, 0.5), (0.36, 1.0, 1.7), (0.64, 2.0, 0.3)])
def test_closed_form_matches_oracle(c, T, q):
    assert closed_form_tsallis(c, T, q) == pytest.approx(tsallis_constant(c, T, q), rel=1e-13)


def test_closed_form_spot_values():
    assert closed_form_tsallis(1.0, 1.0, 2.0) == pytest.approx(math.e - 1)
    assert closed_form_tsallis(1.0, 1.0, 0.5) == pytest.approx(0.23501, abs=5e-6)
    assert closed_form_tsallis(0.64, 1.0, 2.0) == pytest.approx(0.89648, abs=5e-6)
    assert closed_form_tsallis(0.64, 1.0, 0.5) == pytest.approx(0.15377, abs=5e-6)
    assert closed_form_tsallis(0.64, 0.5, 2.0) == pytest.approx(0.37713, abs=5e-6)
    assert closed_form_tsallis(1.0, 1.0, 1.0) == 0.5


def test_identity_of_forms_pointwise():
    x = np.exp(np.linspace(-6, 3, 2001))
    for q in (0.3, 0.5, 0.99, 1.5, 2.0, 3.0):
        assert pointwise_form_gap(x, q) < FORM_TOL


def test_base_measure_has_zero_entropy(ens):
    D = stochastic_exponential(ens, (0.0, 0.0))
    for q in (0.5, 2.0, 1.0):
        e = tsallis_definitional(D, q)
        assert e.value == 0.0 and e.stderr == 0.0
    e = tsallis_integral(ens, 0.0, 0.0, 2.0)
    assert e.value == 0.0


@pytest.mark.parametrize("q", [0.5, 2.0])
def test_both_routes_hit_closed_form(ens, q):
    exact = closed_form_tsallis(1.0, 1.0, q)
    de = tsallis_definitional(density(ens), q)
    ie = tsallis_integral(ens, 0.6, 0.8, q)
    assert de.within(exact, NSIG) and ie.within(exact, NSIG)
    assert abs(de.value - ie.value) <= NSIG * math.hypot(de.stderr, ie.stderr)
    assert abs(de.extras["form_residual"]) < FORM_TOL * max(1.0, abs(de.value))


def test_minimal_measure_entropy(ens):
    for q in (0.5, 2.0):
        ie = tsallis_integral(ens, 0.6, 0.0, q)
        assert ie.within(closed_form_tsallis(0.36, 1.0, q), NSIG)


@pytest.mark.parametrize("q", [2.0, 0.5])
def test_entropy_relative_to_qmin(ens, q):
    e = tsallis_q_vs_qmin(ens, 0.8, q, MarketModel(lam=0.6))
    assert e.within(tsallis_constant(0.64, 1.0, q), NSIG)
    assert e.target == "Qmin"
    assert tsallis_q_vs_qmin(ens, 0.0, q).value == 0.0


@settings(max_examples=6)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.sampled_from([0.5, 0.8, 1.5, 2.0]))
def test_route_agreement_and_nonnegativity(lam, alpha, q):
    e = simulate(MarketModel(), TimeGrid.uniform(1.0, 40), 30000, 3)
    D = stochastic_exponential(e, (-lam, alpha))
    de = tsallis_definitional(D, q)
    ie = tsallis_integral(e, lam, alpha, q)
    assert abs(de.value - ie.value) <= NSIG * math.hypot(de.stderr, ie.stderr) + 1e-12
    assert de.value >= -NSIG * de.stderr and ie.value >= -NSIG * ie.stderr


def test_state_dependent_loadings_routes_agree():
    e = simulate(MarketModel(), TimeGrid.uniform(1.0, 100), 50000, 4)
    alpha = lambda t, w, p: 0.8 * np.tanh(p + w)
    lam = lambda t, w, p: 0.4 + 0.2 * np.sin(w)
    D = stochastic_exponential(e, (lambda t, w, p: -lam(t, w, p), alpha))
    for q in (0.5, 2.0):
        de = tsallis_definitional(D, q)
        ie = tsallis_integral(e, lam, alpha, q)
        assert abs(de.value - ie.value) <= NSIG * math.hypot(de.stderr, ie.stderr)


def test_integral_route_bias_decays_with_steps():
    # loadings that make the trapezoid rule biased: D^q grows quickly
    errs = []
    for K in (5, 10, 20):
        e = simulate(MarketModel(), TimeGrid.uniform(1.0, K), 200000, 6)
        ie = tsallis_integral(e, 1.0, 1.0, 2.0)
        errs.append((abs(ie.value - closed_form_tsallis(2.0, 1.0, 2.0)), ie.stderr))
    for (e0, s0), (e1, s1) in zip(errs, errs[1:]):
        assert e1 <= e0 + 3 * math.hypot(s0, s1)


def test_conditional_entropy_constant_alpha():
    e = simulate(MarketModel(), TimeGrid.uniform(1.0, 20), 40, 9)
    ce = tsallis_conditional(e, 0.0, 0.8, 2.0, 10, M=4096)
    exact = closed_form_tsallis(0.64, 0.5, 2.0)
    z = (ce.values - exact) / ce.stderr
    assert np.mean(np.abs(z) > NSIG) < 0.05
    assert np.all(np.isfinite(ce.values))


def test_conditional_entropy_edges():
    e = simulate(MarketModel(), TimeGrid.uniform(1.0, 10), 30, 2)
    end = tsallis_conditional(e, 0.0, 0.8, 2.0, 10, M=8)
    assert np.all(end.values == 0.0)
    start = tsallis_conditional(e, 0.0, 0.8, 2.0, 0, M=8192, n_outer=3)
    exact = closed_form_tsallis(0.64, 1.0, 2.0)
    assert np.all(np.abs(start.values - exact) <= NSIG * start.stderr)
    with pytest.raises(ValueError):
        tsallis_conditional(e, 0.0, 0.8, 2.0, 3, M=1)


@pytest.mark.parametrize("q", [0.5, 2.0])
def test_submartingale(q):
    e = simulate(MarketModel(lam=0.6), TimeGrid.uniform(1.0, 40), 400, 5)
    for k in (10, 20, 40):
        rep = submartingale_check(e, 0.6, 0.8, q, k, M=256)
        assert rep.passed and rep.fraction < 0.01
    flat = submartingale_check(e, 0.0, 0.0, q, 20, M=16)
    assert flat.n_violations == 0


def test_submartingale_state_dependent():
    e = simulate(MarketModel(), TimeGrid.uniform(1.0, 40), 300, 8)
    alpha = lambda t, w, p: 0.9 * np.tanh(2 * p)
    assert submartingale_check(e, 0.3, alpha, 2.0, 20, M=256).passed


def test_kl_limit(ens):
    rep = kl_limit_check(ens, 0.6, 0.8, 0.01)
    assert rep.passed
    assert rep.kl_exact == pytest.approx(0.5)
    assert rep.kl.within(0.5, NSIG)
    assert rep.upper_exact == pytest.approx(0.50628, abs=5e-6)
    assert rep.lower_exact == pytest.approx(0.49378, abs=5e-6)
    with pytest.raises(ValueError):
        kl_limit_check(ens, 0.6, 0.8, 0.5)


def test_entropy_csv(tmp_path, ens):
    est = [tsallis_definitional(density(ens), 2.0), tsallis_integral(ens, 0.6, 0.8, 2.0)]
    p = tmp_path / "e.csv"
    write_entropy_csv(est, p)
    lines = p.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "q,measure,route,estimate,stderr"
    assert lines[1].startswith("2.0,Q|P,definitional,")
    assert len(lines) == 3
