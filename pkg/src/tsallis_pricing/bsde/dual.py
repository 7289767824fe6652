"""Dual side of the pricing BSDE.

``backward_recursion_Ytheta`` evaluates the penalized value of a single
measure Q^theta (loading theta on W_perp relative to Q^min):

    Y^theta_t = E_{Q^theta}[ xi + int_t^T mu(Y^theta_s) |theta_s|^2 / (2 gamma) ds | F_t ].

``martingale_check_qxi`` verifies that Y0 is the Q^xi expectation of xi.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..market import (MarketModel, PathEnsemble, as_field, mean_se, state_paths,
                      stochastic_exponential, terminal_state)
from ..qcalc import QGammaParams
from .claims import Claim, check_admissible
from .lsmc import BasisConfig, Design, _GridHeat, _design_columns
from .solution import BSDESolution, checked_mu, extract_optimizers


class FixedPointError(RuntimeError):
    def __init__(self, message: str, step: int, change: float):
        super().__init__(message)
        self.step = step
        self.change = change


def backward_recursion_Ytheta(theta, claim: Claim, model: MarketModel, params: QGammaParams,
                              ensemble: PathEnsemble, basis: BasisConfig = BasisConfig(),
                              tol: float = 1e-8, max_iter: int = 100,
                              store_paths: bool = False) -> BSDESolution:
    """Regression backward induction for Y^theta along paths simulated under Q^theta.

    ``theta`` is a constant or a field (t, w, p) -> (N, n).  Under Q^theta the
    orthogonal state picks up the drift theta, the traded state the Q^min drift.
    """
    check_admissible(claim, params)
    th_field = as_field(theta, model.n)
    grid = ensemble.grid
    K, dts, knots = grid.K, grid.dt, grid.knots
    W, P = state_paths(model, ensemble, "Qmin", perp_drift=th_field)
    N = ensemble.N
    heat = None
    if basis.payoff_features:
        if claim.heat is not None:
            heat = claim.heat
        elif model.m == 1 and model.n == 1:
            heat = _GridHeat(claim, grid.T, basis.feature_grid)
    G = claim(W[:, -1], P[:, -1])
    lo, hi = claim.lo, claim.hi
    q, gamma = params.q, params.gamma
    if store_paths:
        Ys = np.empty((N, K + 1))
        Ys[:, K] = G
    iters = np.zeros(K, dtype=int)

    for k in range(K - 1, -1, -1):
        t, dt = float(knots[k]), float(dts[k])
        w, p = W[:, k], P[:, k]
        th = np.asarray(th_field(t, w, p), dtype=float)
        c = np.einsum("ij,ij->i", th, th) * dt / (2.0 * gamma)
        if k == 0:
            E = np.full(N, G.mean())
        else:
            X, ny = _design_columns(w, p, grid.T - t, basis, heat, y_only=True)
            E = Design(X, basis.ridge, k).fit(G, ny)
        y = np.clip(E, lo, hi)
        for it in range(1, max_iter + 1):
            new = E + checked_mu(y, params) * c
            change = float(np.max(np.abs(new - y)))
            y = new
            if change < tol:
                break
            if not np.isfinite(change):
                break
        else:
            raise FixedPointError(f"Y^theta fixed point did not converge at step {k} "
                                  f"(last change {change:.3e})", step=k, change=change)
        if not np.isfinite(change):
            raise FixedPointError(f"Y^theta fixed point diverged at step {k}", step=k, change=change)
        iters[k] = it
        G = G + checked_mu(y, params) * c
        if store_paths:
            Ys[:, k] = y

    y0, se = mean_se(G)
    diag = {"N": N, "K": K, "max_fixed_point_iterations": int(iters.max(initial=0))}
    sol = BSDESolution("dual", y0, se, 0.0, "price", claim.name, q, gamma,
                       times=np.array(knots), diagnostics=diag)
    if store_paths:
        sol.Y = Ys
    return sol


@dataclass(frozen=True)
class QxiReport:
    estimate: float
    stderr: float
    Y0: float
    nsig: float
    martingale_mean: float
    passed: bool

    def as_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "Y0": self.Y0, "nsig": self.nsig,
                "martingale_mean": self.martingale_mean, "passed": self.passed}


def martingale_check_qxi(solution: BSDESolution, claim: Claim, model: MarketModel,
                         params: QGammaParams, ensemble: PathEnsemble, nsig: float = 4.0,
                         tol: float = 0.0) -> QxiReport:
    """E_P[D^{Q^xi,P}_T xi] against Y0, D = E(-lambda.W - gamma Z_perp/(2 mu(Y)) . W_perp).

    ``tol`` adds a deterministic allowance (e.g. the scheme tolerance) to the
    statistical band.
    """
    ctrl = extract_optimizers(solution, params)
    neg = lambda t, w, p: -model.drift(t, w)
    dens = stochastic_exponential(ensemble, (neg, ctrl.qxi_perp_loading), model=model,
                                  coords="P", source="Qxi", target="P")
    w_T, p_T = terminal_state(model, ensemble, "P")
    D = dens.terminal
    est, se = mean_se(D * claim(w_T, p_T))
    ok = abs(est - solution.Y0) <= nsig * se + tol + 1e-14
    return QxiReport(est, se, solution.Y0, nsig, float(D.mean()), bool(ok))
