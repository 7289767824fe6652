"""Closed-form prices: unhedged claims, attainable claims and certainty equivalents.

    unhedged:    F_0 = -(1/gamma) ln_q E_Qmin[exp_q(-gamma xi)]
    attainable:  F_0 = E_Qmin[xi]
    CE:          CE_0 = -(1/gamma) ln_q E_Qmin[exp_q(-gamma xi)]   (any claim)
"""
from __future__ import annotations

import numpy as np
from scipy import integrate

from ..market import MarketModel, PathEnsemble, mean_se, terminal_state
from ..qcalc import DomainError, QGammaParams, q_exp, q_ln
from .claims import Claim, check_admissible
from .solution import BSDESolution

MC_TOL = 0.0   # closed forms carry Monte Carlo error only


def certainty_equivalent(v: float, se_v: float, params: QGammaParams) -> tuple[float, float]:
    """-(1/gamma) ln_q v with delta-method standard error."""
    if not v > 0:
        raise DomainError(f"E[q_exp(-gamma xi)] = {v!r} outside the domain of q_ln "
                          "(claim bounds misdeclared?)", value=v, bound=0.0)
    val = -float(q_ln(v, params.q)) / params.gamma + 0.0   # no negative zero
    return val, se_v * v ** (-params.q) / params.gamma


def utility_samples(xi: np.ndarray, params: QGammaParams) -> np.ndarray:
    return np.asarray(q_exp(-params.gamma * np.asarray(xi, dtype=float), params.q))


def _terminal_qmin(ensemble: PathEnsemble, model: MarketModel | None):
    model = model or MarketModel(ensemble.m, ensemble.n, ensemble.grid.T)
    return terminal_state(model, ensemble, coords="Qmin")


def solve_unhedged(claim: Claim, ensemble: PathEnsemble, params: QGammaParams,
                   t_index: int | None = None, model: MarketModel | None = None,
                   n_quad: int = 96) -> BSDESolution:
    """Plain Monte Carlo of E[q_exp(-gamma xi)] with xi = g(W_perp_T).

    With ``t_index`` the conditional price per path is returned in ``Y[:, 0]``,
    integrating the remaining Gaussian increment by Gauss-Hermite quadrature.
    """
    if claim.hedge_class != "unhedged" and claim.range > 0:
        raise ValueError(f"claim {claim.name!r} is not unhedged")
    check_admissible(claim, params)
    model = model or MarketModel(ensemble.m, ensemble.n, ensemble.grid.T)
    _, p_T = _terminal_qmin(ensemble, model)
    w0 = np.zeros((p_T.shape[0], model.m))
    xi = claim(w0, p_T)
    v, se_v = mean_se(utility_samples(xi, params))
    y0, se = certainty_equivalent(v, se_v, params)
    sol = BSDESolution("closed_form", y0, se, MC_TOL, "price", claim.name, params.q, params.gamma,
                       diagnostics={"E_utility": v, "E_utility_se": se_v, "N": int(p_T.shape[0])})
    if t_index is not None:
        grid = ensemble.grid
        tau = grid.T - float(grid.knots[t_index])
        from ..market import state_paths
        _, P = state_paths(model, ensemble, "Qmin")
        p_t = P[:, t_index, :]
        nodes, weights = np.polynomial.hermite_e.hermegauss(n_quad)
        weights = weights / weights.sum()
        acc = np.zeros(p_t.shape[0])
        for z, wt in zip(nodes, weights):
            pz = p_t.copy()
            pz[:, 0] = pz[:, 0] + np.sqrt(tau) * z
            acc += wt * utility_samples(claim(w0, pz), params)
        sol.Y = (-np.asarray(q_ln(acc, params.q)) / params.gamma)[:, None]
        sol.diagnostics["t_index"] = t_index
    return sol


def solve_attainable(claim: Claim, ensemble: PathEnsemble, params: QGammaParams,
                     model: MarketModel | None = None) -> BSDESolution:
    """E_Qmin[xi] by direct simulation of W under Q^min; Z_perp vanishes."""
    if claim.hedge_class != "attainable":
        raise ValueError(f"claim {claim.name!r} is not attainable")
    check_admissible(claim, params)
    model = model or MarketModel(ensemble.m, ensemble.n, ensemble.grid.T)
    w_T, p_T = _terminal_qmin(ensemble, model)
    y0, se = mean_se(claim(w_T, p_T))
    return BSDESolution("closed_form", y0, se, MC_TOL, "price", claim.name, params.q, params.gamma,
                        diagnostics={"N": int(w_T.shape[0]), "Zperp": 0.0})


def risk_neutral(claim: Claim, ensemble: PathEnsemble, model: MarketModel | None = None
                 ) -> tuple[float, float]:
    w_T, p_T = _terminal_qmin(ensemble, model)
    return mean_se(claim(w_T, p_T))


def solve_ce(claim: Claim, ensemble: PathEnsemble, params: QGammaParams,
             model: MarketModel | None = None) -> BSDESolution:
    """Certainty equivalent at t = 0 by Monte Carlo under Q^min."""
    check_admissible(claim, params)
    w_T, p_T = _terminal_qmin(ensemble, model)
    v, se_v = mean_se(utility_samples(claim(w_T, p_T), params))
    y0, se = certainty_equivalent(v, se_v, params)
    return BSDESolution("closed_form", y0, se, MC_TOL, "ce", claim.name, params.q, params.gamma,
                        diagnostics={"E_utility": v, "E_utility_se": se_v})


# ---------------------------------------------------------------------------
# deterministic quadrature (one Gaussian coordinate)
# ---------------------------------------------------------------------------

def _gauss_expectation(fn, mean: float, sd: float, breaks=()) -> float:
    dens = lambda x: np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
    lo, hi = mean - 12 * sd, mean + 12 * sd
    pts = sorted(b for b in breaks if lo < b < hi)
    val, _ = integrate.quad(lambda x: fn(x) * dens(x), lo, hi, points=pts or None,
                            limit=400, epsabs=1e-14, epsrel=1e-13)
    return float(val)


def _breaks(claim: Claim, smoothing: float, strike: float = 0.0):
    if not claim.discontinuous:
        return ()
    return (strike - smoothing / 2, strike, strike + smoothing / 2)


def unhedged_quadrature(claim: Claim, params: QGammaParams, T: float, smoothing: float = 0.0,
                        strike: float = 0.0) -> float:
    """-(1/gamma) ln_q E[q_exp(-gamma g(W_perp_T))] with W_perp_T ~ N(0, T), by quadrature."""
    check_admissible(claim, params)
    z = np.zeros((1, 1))
    fn = lambda x: float(q_exp(-params.gamma * claim(z, np.array([[x]]), smoothing, check=False)[0],
                               params.q))
    v = _gauss_expectation(fn, 0.0, np.sqrt(T), _breaks(claim, smoothing, strike))
    return -float(q_ln(v, params.q)) / params.gamma


def attainable_quadrature(claim: Claim, T: float, drift_integral: float = 0.0,
                          smoothing: float = 0.0, strike: float = 0.0) -> float:
    """E_Qmin[g(W_T)] with W_T ~ N(-int lambda, T) (time-only drift), by quadrature."""
    z = np.zeros((1, 1))
    fn = lambda x: float(claim(np.array([[x]]), z, smoothing, check=False)[0])
    return _gauss_expectation(fn, -drift_integral, np.sqrt(T), _breaks(claim, smoothing, strike))
