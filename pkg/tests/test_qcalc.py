"""Deformed exponential/logarithm, mu and the driver coefficient."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import qmc

from oracles import exp_q
from tsallis_pricing.qcalc import DomainError, LambdaDomain, QGammaParams, driver_f, mu, q_exp, q_ln

ROUND_TRIP_TOL = 1e-10
NEAR_ONE_TOL = 1e-3
MU_REL_TOL = 1e-12

qs = st.floats(0.05, 4.0).filter(lambda q: abs(q - 1.0) > 1e-3)
gammas = st.floats(0.01, 20.0)


@pytest.mark.parametrize("x,q,expected", [
    (0.0, 0.5, 1.0),
    (-1.0, 2.0, 0.5),
    (-0.5, 0.5, 0.5625),
])
def test_q_exp_examples(x, q, expected):
    assert q_exp(x, q) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("q", [0.3, 0.5, 1.5, 2.0, 3.0])
def test_q_ln_of_one_is_zero(q):
    assert q_ln(1.0, q) == 0.0


def test_q_ln_example():
    assert q_ln(0.75, 2.0) == pytest.approx(-1.0 / 3.0, rel=1e-15)


@pytest.mark.parametrize("y,q,gamma,expected", [(0.0, 0.5, 1.0, 2.0), (0.5, 0.5, 1.0, 1.5)])
def test_mu_examples(y, q, gamma, expected):
    assert mu(y, QGammaParams(q, gamma)) == pytest.approx(expected, rel=1e-15)


def test_mu_rejects_boundary_of_lambda():
    with pytest.raises(DomainError) as err:
        mu(-1.0, QGammaParams(2.0, 1.0))
    assert err.value.value == -1.0


@pytest.mark.parametrize("y,q,gamma,expected", [
    (0.0, 0.5, 1.0, 0.25),
    (0.0, 2.0, 2.0, 2.0),
    (0.5, 0.5, 1.0, 1.0 / 3.0),
])
def test_driver_f_examples(y, q, gamma, expected):
    assert driver_f(y, QGammaParams(q, gamma)) == pytest.approx(expected, rel=1e-15)


def test_q_exp_domain_errors_carry_value_and_bound():
    with pytest.raises(DomainError) as err:
        q_exp(1.0, 2.0)               # x = 1/(q-1) is excluded
    assert err.value.value == 1.0 and err.value.bound == 1.0
    with pytest.raises(DomainError) as err:
        q_exp(-2.5, 0.5)              # below -1/(1-q) = -2
    assert err.value.bound == -2.0
    assert q_exp(-2.0, 0.5) == 0.0    # edge of the q < 1 domain is admissible


def test_q_ln_domain():
    with pytest.raises(DomainError):
        q_ln(0.0, 2.0)
    with pytest.raises(DomainError):
        q_ln(-0.1, 0.5)
    assert q_ln(0.0, 0.5) == pytest.approx(-2.0)


@pytest.mark.parametrize("q", [0.0, -1.0, float("nan")])
def test_invalid_q_rejected(q):
    with pytest.raises(DomainError):
        q_exp(0.1, q)


def test_params_reject_q_equal_one():
    with pytest.raises(DomainError, match="q != 1"):
        QGammaParams(1.0, 1.0)
    with pytest.raises(DomainError):
        QGammaParams(2.0, 0.0)


def test_lambda_domain_orientation():
    lo = LambdaDomain.of(0.5, 2.0)
    assert lo.lower == -math.inf and lo.upper == pytest.approx(1.0)
    hi = LambdaDomain.of(2.0, 1.0)
    assert hi.lower == pytest.approx(-1.0) and hi.upper == math.inf
    assert hi.contains(-0.999) and not hi.contains(-1.0)


def _domain_points(n: int, seed: int = 11):
    """Sobol (x, q, gamma) with x = -gamma y pulled inside Dom(exp_q)."""
    u = qmc.Sobol(3, seed=seed).random(n)
    q = 0.05 + 3.95 * u[:, 0]
    q = np.where(np.abs(q - 1) < 1e-3, q + 2e-3, q)
    gamma = 0.01 + 10.0 * u[:, 1]
    x = -gamma * (4.0 * u[:, 2] - 2.0)
    d = 1.0 - q
    lo = np.where(d > 0, -1.0 / np.where(d > 0, d, 1.0) * 0.999, -np.inf)
    hi = np.where(d < 0, 1.0 / np.where(d < 0, -d, 1.0) * 0.999, np.inf)
    return np.clip(x, lo, hi), q, gamma


def test_round_trip_quasi_random():
    x, q, _ = _domain_points(2 ** 14)
    x, q = x[:10000], q[:10000]
    err = np.array([abs(q_ln(q_exp(xi, qi), qi) - xi) for xi, qi in zip(x, q)])
    assert err.max() < ROUND_TRIP_TOL


@given(qs, st.floats(-3.0, 3.0))
def test_matches_independent_formula(q, x):
    d = 1.0 - q
    if (d > 0 and 1 + d * x < 0) or (d < 0 and 1 + d * x < 1e-3):
        return
    assert q_exp(x, q) == pytest.approx(exp_q(x, q), rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("q", [1 - 1e-4, 1 + 1e-4])
def test_limit_q_to_one(q):
    # exp_q(3) itself sits 0.009 from e^3 at |1-q| = 1e-4, so the bound is read relative
    x = np.linspace(-3, 3, 601)
    assert np.max(np.abs(q_exp(x, q) / np.exp(x) - 1)) < NEAR_ONE_TOL
    exact = np.array([exp_q(v, q) for v in x])
    assert np.max(np.abs(q_exp(x, q) - exact)) < 1e-12 * np.max(exact)
    z = np.linspace(0.1, 10, 601)
    assert np.max(np.abs(q_ln(z, q) - np.log(z))) < NEAR_ONE_TOL


@pytest.mark.parametrize("q", [1 - 1e-7, 1 + 1e-7, 1 - 1e-9])
def test_near_one_series_is_accurate(q):
    # second-order series: error O(|1-q|^3), far below the naive formula's cancellation
    x = np.linspace(-3, 3, 61)
    ref = np.array([math.exp(math.log1p((1 - q) * v) / (1 - q)) for v in x])
    assert np.max(np.abs(q_exp(x, q) / ref - 1)) < 1e-12
    z = np.linspace(0.1, 10, 61)
    ref = np.array([math.expm1((1 - q) * math.log(v)) / (1 - q) for v in z])
    assert np.max(np.abs(q_ln(z, q) - ref)) < 1e-12


@given(qs, gammas, st.floats(-1.0, 1.0))
def test_mu_identity(q, gamma, u):
    p = QGammaParams(q, gamma)
    # y through its base q mu(y) = b, with b^(1/(1-q)) kept representable
    b = math.exp(u * min(2.0, 50.0 * abs(1 - q)))
    y = (1 - b) / ((1 - q) * gamma)
    assert p.domain.contains(y)
    lhs = mu(y, p)
    rhs = q_exp(-gamma * y, q) ** (1 - q) / q
    assert lhs > 0
    assert abs(lhs - rhs) <= MU_REL_TOL * abs(rhs)


@given(qs, gammas, st.floats(-0.5, 0.5))
def test_driver_is_gamma_over_two_mu(q, gamma, u):
    p = QGammaParams(q, gamma)
    y = u / gamma * (0.9 if q < 1 else 1.0)
    if not p.domain.contains(y):
        return
    f = driver_f(y, p)
    assert f == pytest.approx(gamma / (2 * mu(y, p)), rel=1e-12)
    assert f == pytest.approx(gamma * q / 2 * q_exp(-gamma * y, q) ** (q - 1), rel=1e-10)


@given(qs)
def test_q_exp_strictly_increasing(q):
    d = 1.0 - q
    # bases 1 + d x spanning the representable range of base^(1/d)
    L = min(5.0, 300.0 * abs(d))
    lo_b = 0.0 if d > 0 else math.exp(-L)
    b = np.linspace(lo_b, math.exp(L), 2001)
    x = (b - 1) / d
    x.sort()
    y = q_exp(x, q)
    assert np.all(np.isfinite(y))
    assert np.all(np.diff(y) > 0)


@given(qs, st.floats(0.05, 20.0))
def test_q_ln_inverts_q_exp_on_range(q, v):
    assert q_exp(q_ln(v, q), q) == pytest.approx(v, rel=1e-10)


def test_array_shapes_preserved():
    x = np.zeros((3, 4))
    assert q_exp(x, 2.0).shape == (3, 4)
    assert isinstance(q_exp(0.0, 2.0), float)
    assert mu(np.zeros(5), QGammaParams(0.5, 1.0)).shape == (5,)
