"""Pricing BSDE: closed forms, PDE scheme, regression Monte Carlo, optimizers and the dual recursion."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (ATTAINABLE_DIGITAL_CE_Q2, UNHEDGED_DIGITAL_Q2, problem2_constant_theta,
                     smoothed_unhedged_digital, unhedged_digital_q2)
from tsallis_pricing.bsde import (PDE_TOL, AdmissibilityError, PDEMesh, attainable_quadrature,
                                  backward_recursion_Ytheta, certainty_equivalent, constant,
                                  digital_s, digital_w, digital_wperp, expression_claim,
                                  extract_optimizers, martingale_check_qxi, refinement_study,
                                  restart_check, risk_neutral, smooth_mixed, solve_attainable,
                                  solve_ce, solve_lsmc, solve_pde, solve_unhedged,
                                  unhedged_quadrature)
from tsallis_pricing.market import MarketModel, TimeGrid, simulate
from tsallis_pricing.qcalc import DomainError, QGammaParams, driver_f, mu

NSIG = 4.0
LAM = 0.6


@pytest.fixture(scope="module")
def m():
    return MarketModel(lam=LAM)


@pytest.fixture(scope="module")
def grid():
    return TimeGrid.graded(1.0, 50)


@pytest.fixture(scope="module")
def ens(m, grid):
    return simulate(m, grid, 20000, 7)


@pytest.fixture(scope="module")
def big(m):
    return simulate(m, TimeGrid.uniform(1.0, 20), 200000, 3)


@pytest.fixture(scope="module")
def pde_digital(m, grid):
    return solve_pde(digital_wperp(), m, QGammaParams(2.0, 1.0), grid, PDEMesh(101))


# --- closed forms --------------------------------------------------------------

def test_unhedged_digital_closed_form(big):
    p = QGammaParams(2.0, 1.0)
    s = solve_unhedged(digital_wperp(), big, p)
    assert abs(s.Y0 - UNHEDGED_DIGITAL_Q2) <= NSIG * s.stderr
    assert unhedged_quadrature(digital_wperp(), p, 1.0) == pytest.approx(1 / 3, abs=1e-12)


@pytest.mark.parametrize("gamma", [0.01, 0.1, 1.0, 10.0, 100.0])
def test_unhedged_quadrature_gamma_family(gamma):
    p = QGammaParams(2.0, gamma)
    assert unhedged_quadrature(digital_wperp(), p, 1.0) == pytest.approx(unhedged_digital_q2(gamma), abs=1e-12)


def test_small_gamma_approaches_risk_neutral(big):
    s = solve_unhedged(digital_wperp(), big, QGammaParams(2.0, 0.01))
    assert s.Y0 == pytest.approx(0.4975, abs=NSIG * s.stderr + 5e-5)


def test_zero_claim_prices_to_zero(big):
    p = QGammaParams(2.0, 1.0)
    assert solve_unhedged(constant(0.0), big, p).Y0 == 0.0
    assert solve_attainable(constant(0.0), big, p).Y0 == 0.0
    assert solve_ce(constant(0.0), big, p).Y0 == 0.0


def test_attainable_digital(m, big):
    g = big.grid
    c = digital_s(m, g)
    s = solve_attainable(c, big, QGammaParams(2.0, 1.0), m)
    assert abs(s.Y0 - 0.5) <= NSIG * s.stderr
    assert s.diagnostics["Zperp"] == 0.0
    assert attainable_quadrature(c, 1.0, drift_integral=LAM) == pytest.approx(0.5, abs=1e-12)
    assert risk_neutral(c, big, m)[0] == s.Y0


def test_attainable_certainty_equivalent(m, big):
    s = solve_ce(digital_s(m, big.grid), big, QGammaParams(2.0, 1.0), m)
    assert abs(s.Y0 - float(ATTAINABLE_DIGITAL_CE_Q2)) <= NSIG * s.stderr


def test_class_mismatch_rejected(m, big):
    p = QGammaParams(2.0, 1.0)
    with pytest.raises(ValueError):
        solve_unhedged(digital_w(), big, p)
    with pytest.raises(ValueError):
        solve_attainable(digital_wperp(), big, p)


def test_certainty_equivalent_domain():
    with pytest.raises(DomainError):
        certainty_equivalent(0.0, 0.1, QGammaParams(2.0, 1.0))
    v, se = certainty_equivalent(1.0, 0.0, QGammaParams(2.0, 1.0))
    assert v == 0.0 and math.copysign(1, v) == 1


def test_conditional_unhedged_price(big):
    p = QGammaParams(2.0, 1.0)
    s = solve_unhedged(digital_wperp(), big, p, t_index=big.grid.K)
    y = s.Y[:, 0]
    assert np.all(np.minimum(np.abs(y), np.abs(y - 1.0)) < 1e-12)
    s0 = solve_unhedged(digital_wperp(), big, p, t_index=0)
    assert np.allclose(s0.Y[:, 0], 1 / 3, atol=1e-10)


# --- PDE -----------------------------------------------------------------------

def test_pde_constant_claims(m):
    g = TimeGrid.uniform(1.0, 10)
    p = QGammaParams(2.0, 1.0)
    assert solve_pde(constant(0.0), m, p, g, PDEMesh(31)).Y0 == 0.0
    s = solve_pde(constant(0.4), m, p, g, PDEMesh(31))
    assert s.Y0 == pytest.approx(0.4, abs=1e-12)


def test_pde_smoothed_digital_matches_quadrature(pde_digital):
    h = pde_digital.h[1]
    ref = smoothed_unhedged_digital(2.0, 1.0, 2 * h)
    assert abs(pde_digital.Y0 - ref) <= PDE_TOL
    assert abs(pde_digital.Y0 - UNHEDGED_DIGITAL_Q2) <= 10 * PDE_TOL


@pytest.mark.parametrize("q,gamma", [(0.5, 0.5), (1.5, 2.0)])
def test_pde_other_q(m, q, gamma):
    s = solve_pde(digital_wperp(), m, QGammaParams(q, gamma), TimeGrid.graded(1.0, 40), PDEMesh(101))
    ref = smoothed_unhedged_digital(q, gamma, 2 * s.h[1])
    assert abs(s.Y0 - ref) <= PDE_TOL


def test_pde_attainable_has_no_perp_gradient(m, grid):
    c = expression_claim("clamp(0.5 + 0.2*W_T, 0, 1)")
    s = solve_pde(c, m, QGammaParams(2.0, 1.0), grid, PDEMesh(101))
    ref = attainable_quadrature(c, 1.0, drift_integral=LAM)
    assert abs(s.Y0 - ref) <= PDE_TOL
    _, zp = s.gradients(0)
    assert np.max(np.abs(zp)) < 1e-10


def test_pde_refinement_contracts(m):
    rs = refinement_study(digital_wperp(), m, QGammaParams(2.0, 1.0), TimeGrid.graded(1.0, 20), PDEMesh(41), 3)
    assert rs.meshes == (41, 81, 161)
    assert rs.contracting()


def test_pde_restart_is_consistent(m, pde_digital, grid):
    r = restart_check(pde_digital, digital_wperp(), m, QGammaParams(2.0, 1.0), grid, PDEMesh(101), 25)
    assert r["max_abs_diff_same_steps"] < 1e-12
    assert r["Y0_diff_refined_steps"] < PDE_TOL


def test_pde_rejects_bad_input(m, grid):
    with pytest.raises(ValueError):
        PDEMesh(5).nodes(1.0)
    with pytest.raises(ValueError):
        PDEMesh(31, L=1.0).nodes(1.0)
    with pytest.raises(ValueError):
        solve_pde(constant(0.1), m, QGammaParams(2.0, 1.0), grid, PDEMesh(31), kind="other")
    with pytest.raises(AdmissibilityError):
        solve_pde(digital_wperp().negated(), m, QGammaParams(2.0, 1.0), grid, PDEMesh(31))


def test_pde_surface_stays_in_claim_bounds(pde_digital):
    assert pde_digital.u.min() >= 0.0 and pde_digital.u.max() <= 1.0


# --- regression Monte Carlo ---------------------------------------------------

def test_lsmc_zero_claim(m, ens):
    s = solve_lsmc(constant(0.0), m, QGammaParams(2.0, 1.0), ens)
    assert s.Y0 == 0.0 and s.stderr == 0.0


def test_lsmc_unhedged_digital(m, ens):
    s = solve_lsmc(digital_wperp(), m, QGammaParams(2.0, 1.0), ens)
    assert abs(s.Y0 - UNHEDGED_DIGITAL_Q2) <= NSIG * s.stderr
    assert s.diagnostics["Zperp_norm"] > 10 * s.diagnostics["Zperp_floor"]


def test_lsmc_attainable_digital(m, ens, grid):
    s = solve_lsmc(digital_s(m, grid), m, QGammaParams(2.0, 1.0), ens)
    assert abs(s.Y0 - 0.5) <= NSIG * s.stderr
    # no orthogonal exposure: Z_perp is indistinguishable from regression noise
    assert s.diagnostics["Zperp_norm"] <= 2 * s.diagnostics["Zperp_floor"]


def test_lsmc_agrees_with_pde_on_mixed_claim(m, ens, grid):
    p = QGammaParams(2.0, 1.0)
    c = smooth_mixed()
    pde = solve_pde(c, m, p, grid, PDEMesh(101))
    mc = solve_lsmc(c, m, p, ens)
    assert abs(pde.Y0 - mc.Y0) <= NSIG * mc.stderr + PDE_TOL


def test_lsmc_store_paths(m):
    e = simulate(m, TimeGrid.uniform(1.0, 10), 5000, 2)
    s = solve_lsmc(digital_wperp(), m, QGammaParams(2.0, 1.0), e, store_paths=True)
    assert s.Y.shape == (5000, 11) and s.Zperp.shape == (5000, 10, 1)
    assert s.Y.min() >= 0.0 and s.Y.max() <= 1.0


# --- driver and optimizers -----------------------------------------------------

@settings(max_examples=30)
@given(st.floats(0.0, 1.0), st.floats(-3.0, 3.0))
def test_driver_matches_quadratic_form(y, z):
    p = QGammaParams(2.0, 1.0)
    # f(y) z^2 is the generator in the orthogonal direction
    assert driver_f(y, p) * z * z == pytest.approx(p.gamma * z * z / (2 * mu(y, p)), rel=1e-12)


def test_optimizers_relationships(pde_digital):
    p = QGammaParams(2.0, 1.0)
    ctrl = extract_optimizers(pde_digital, p)
    w = np.linspace(-1, 1, 7)
    pp = np.linspace(-1, 1, 7)
    for t in (0.0, 0.5, 0.9):
        th = ctrl.theta_star(t, w, pp)
        al = ctrl.alpha_star(t, w, pp)
        assert np.allclose(al, th / p.q, rtol=1e-14)
        assert np.allclose(ctrl.qxi_perp_loading(t, w, pp), th / 2, rtol=1e-14)
    # a larger payoff in the orthogonal direction pushes theta* negative
    assert np.all(ctrl.theta_star(0.0, w, pp) < 0)


def test_optimizers_vanish_for_attainable(m, grid):
    p = QGammaParams(2.0, 1.0)
    s = solve_pde(expression_claim("clamp(0.5 + 0.2*W_T, 0, 1)"), m, p, grid, PDEMesh(61))
    ctrl = extract_optimizers(s, p)
    assert np.max(np.abs(ctrl.alpha_star(0.3, np.linspace(-2, 2, 9), np.zeros(9)))) < 1e-10


def test_optimizers_scale_with_gamma(m, grid):
    # same claim scaled by 1/gamma with gamma scaled by gamma: gamma Z/mu is invariant
    a = solve_pde(digital_wperp(), m, QGammaParams(2.0, 1.0), grid, PDEMesh(61))
    b = solve_pde(digital_wperp().scaled(0.5), m, QGammaParams(2.0, 2.0), grid, PDEMesh(61))
    assert b.Y0 == pytest.approx(0.5 * a.Y0, rel=1e-10)
    ta = extract_optimizers(a, QGammaParams(2.0, 1.0)).theta_star(0.2, np.zeros(5), np.linspace(-1, 1, 5))
    tb = extract_optimizers(b, QGammaParams(2.0, 2.0)).theta_star(0.2, np.zeros(5), np.linspace(-1, 1, 5))
    assert np.allclose(ta, tb, rtol=1e-8)


def test_optimizers_need_surfaces(m, ens):
    s = solve_lsmc(constant(0.1), m, QGammaParams(2.0, 1.0), ens)
    with pytest.raises(ValueError):
        extract_optimizers(s, QGammaParams(2.0, 1.0))


# --- dual recursion ------------------------------------------------------------

def test_dual_zero_theta_is_risk_neutral(m, ens):
    s = backward_recursion_Ytheta(0.0, digital_wperp(), m, QGammaParams(2.0, 1.0), ens)
    rn, _ = risk_neutral(digital_wperp(), ens, m)
    assert s.Y0 == pytest.approx(rn, abs=1e-12)


@pytest.mark.parametrize("theta", [-0.6, -0.3, 0.4])
def test_dual_constant_theta(m, ens, theta):
    s = backward_recursion_Ytheta(theta, digital_wperp(), m, QGammaParams(2.0, 1.0), ens)
    assert abs(s.Y0 - problem2_constant_theta(theta, 2.0, 1.0)) <= NSIG * s.stderr


def test_dual_optimal_theta_recovers_price(m, ens, pde_digital):
    p = QGammaParams(2.0, 1.0)
    ctrl = extract_optimizers(pde_digital, p)
    s = backward_recursion_Ytheta(ctrl.theta_star, digital_wperp(), m, p, ens)
    assert abs(s.Y0 - pde_digital.Y0) <= NSIG * s.stderr + PDE_TOL


def test_qxi_martingale_check(m, ens, pde_digital):
    r = martingale_check_qxi(pde_digital, digital_wperp(), m, QGammaParams(2.0, 1.0), ens, tol=PDE_TOL)
    assert r.passed
    assert r.martingale_mean == pytest.approx(1.0, abs=0.02)
