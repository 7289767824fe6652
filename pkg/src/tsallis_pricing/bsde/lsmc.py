"""Least-squares Monte Carlo for the pricing BSDE under P.

Backward induction on an ensemble of P-paths.  At step k:

* Z_k, Z_perp_k regress (Y_{k+1} - E_k[Y_{k+1}]) dW_k / dt_k on the Z basis
  (the fitted conditional mean is a control variate with zero mean effect);
* Y_k = E_k[G_{k+1}] - driver(Y_k, Z_k) dt_k, with G the pathwise sum
  xi - sum_{j>k} driver_j dt_j (multistep scheme) and one inner Picard pass
  for the y-dependence of mu;
* Y_k is clamped to the claim bounds.

The basis is total-degree polynomials in (W, W_perp), optionally augmented
with powers of the heat-smoothed payoff h_tau (tau = T - t_k) and, for Z,
its gradients.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from ..market import MarketModel, PathEnsemble, mean_se, state_paths
from ..qcalc import QGammaParams
from .claims import Claim, check_admissible
from .solution import BSDESolution, checked_mu

CLAMP_WARN_RATE = 0.05
CLAMP_SLACK = 1e-6       # overshoots below this fraction of the payoff range are not counted
ILL_CONDITIONED = 1e12


class RegressionError(np.linalg.LinAlgError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class BasisConfig:
    degree: int = 3
    payoff_features: bool = True
    feature_powers: int = 3
    ridge: float = 1e-8
    feature_grid: int = 241        # nodes per axis of the grid-based heat smoothing


def _monomials(X: np.ndarray, degree: int) -> list[np.ndarray]:
    """All monomials of total degree 1..degree in the columns of X."""
    d = X.shape[1]
    cols = []
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            c = X[:, combo[0]].copy()
            for j in combo[1:]:
                c *= X[:, j]
            cols.append(c)
    return cols


class _GridHeat:
    """Heat-smoothed payoff on a grid (m = n = 1) for claims without an analytic form."""

    def __init__(self, claim: Claim, T: float, nodes: int):
        L = 6.0 * np.sqrt(T)
        self.x = np.linspace(-L, L, nodes)
        self.dx = float(self.x[1] - self.x[0])
        Wg, Pg = np.meshgrid(self.x, self.x, indexing="ij")
        self.g = claim(Wg.ravel(), Pg.ravel()).reshape(nodes, nodes)

    def __call__(self, w, p, tau):
        sig = np.sqrt(max(tau, 0.0)) / self.dx
        h = gaussian_filter(self.g, sig, mode="nearest", truncate=5.0) if sig > 0.05 else self.g
        hw, hp = np.gradient(h, self.dx)
        c = np.vstack([(np.clip(w[:, 0], self.x[0], self.x[-1]) - self.x[0]) / self.dx,
                       (np.clip(p[:, 0], self.x[0], self.x[-1]) - self.x[0]) / self.dx])
        get = lambda a: map_coordinates(a, c, order=1, mode="nearest")
        return get(h), get(hw), get(hp)


class Design:
    """Centered regression design for one time step.

    Columns that are (numerically) constant on the sample are dropped; fits
    use ridge-regularized normal equations on standardized columns, with an
    unpenalized intercept.  ``fit(y, ncols)`` regresses on the first ``ncols``
    columns, so nested bases share one Gram matrix.
    """

    def __init__(self, X: np.ndarray, ridge: float, step: int):
        self.N = X.shape[0]
        self.ridge = ridge
        self.step = step
        self.mean = X.mean(axis=0)
        Xc = np.asfortranarray(X - self.mean)
        gram = Xc.T @ Xc / self.N
        sd = np.sqrt(np.maximum(np.diag(gram), 0.0))
        scale = np.maximum(1.0, np.abs(self.mean) + sd)
        self.keep = sd > 1e-9 * scale
        self.Xc = Xc
        self.sd = np.where(self.keep, sd, 1.0)
        self.corr = gram / np.outer(self.sd, self.sd)
        self._chol: dict[int, tuple] = {}
        self.conditions: list[float] = []

    def _factor(self, ncols: int):
        if ncols not in self._chol:
            idx = np.flatnonzero(self.keep[:ncols])
            C = self.corr[np.ix_(idx, idx)]
            if idx.size:
                ev = np.linalg.eigvalsh(C)
                cond = float(ev[-1] / max(ev[0], 1e-300))
                self.conditions.append(cond)
                if self.ridge == 0.0 and ev[0] <= 1e-13 * ev[-1]:
                    raise RegressionError(f"rank-deficient regression at time step {self.step}",
                                          self.step)
                L = np.linalg.cholesky(C + self.ridge * np.eye(idx.size))
            else:
                L = np.zeros((0, 0))
            self._chol[ncols] = (idx, L)
        return self._chol[ncols]

    def leverage(self, ncols: int) -> np.ndarray:
        """Diagonal of the hat matrix (intercept included), ridge ignored."""
        idx, L = self._factor(ncols)
        h = np.full(self.N, 1.0 / self.N)
        if idx.size:
            Zs = self.Xc[:, idx] / self.sd[idx]
            U = np.linalg.solve(L, Zs.T)
            h += np.sum(U * U, axis=0) / self.N
        return h

    def fit(self, y: np.ndarray, ncols: int) -> np.ndarray:
        """Fitted values for targets y of shape (N,) or (N, r)."""
        idx, L = self._factor(ncols)
        ym = y.mean(axis=0)
        if idx.size == 0:
            return np.broadcast_to(ym, y.shape).copy()
        X = self.Xc[:, idx]
        rhs = (X.T @ (y - ym)) / self.N / (self.sd[idx] if y.ndim == 1 else self.sd[idx][:, None])
        beta = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        beta = beta / (self.sd[idx] if y.ndim == 1 else self.sd[idx][:, None])
        return ym + X @ beta


def _design_columns(w: np.ndarray, p: np.ndarray, tau: float, cfg: BasisConfig, heat,
                    y_only: bool = False) -> tuple[np.ndarray, int]:
    """Z-basis matrix whose first ``ny`` columns form the Y basis (only those if ``y_only``)."""
    cols = _monomials(np.hstack([w, p]), cfg.degree)
    extra = []
    if heat is not None:
        h, hw, hp = heat(w, p, tau)
        powers = [np.ones_like(h)]
        for _ in range(cfg.feature_powers):
            powers.append(powers[-1] * h)
        cols += powers[1:]
        if not y_only:
            extra = [d * pw for d in (hw, hp) for pw in powers[:-1]]
    ny = len(cols)
    cols += extra
    N = w.shape[0]
    X = np.empty((N, len(cols)), order="F")
    for j, c in enumerate(cols):
        X[:, j] = c
    return X, ny


def solve_lsmc(claim: Claim, model: MarketModel, params: QGammaParams, ensemble: PathEnsemble,
               basis: BasisConfig = BasisConfig(), store_paths: bool = False) -> BSDESolution:
    """Regression Monte Carlo estimate of Y_0 for the pricing BSDE."""
    check_admissible(claim, params)
    grid = ensemble.grid
    K, dts, knots = grid.K, grid.dt, grid.knots
    W, P = state_paths(model, ensemble, "P")
    dW, dP = ensemble.dW, ensemble.dWperp
    N = ensemble.N
    heat = None
    if basis.payoff_features:
        if claim.heat is not None:
            heat = claim.heat
        elif model.m == 1 and model.n == 1:
            heat = _GridHeat(claim, grid.T, basis.feature_grid)
    xi = claim(W[:, -1], P[:, -1])
    G = xi.copy()
    Yn = xi.copy()
    lo, hi = claim.lo, claim.hi
    gamma = params.gamma
    if store_paths:
        Ys = np.empty((N, K + 1))
        Zs = np.empty((N, K, model.m))
        Zps = np.empty((N, K, model.n))
        Ys[:, K] = xi
    n_clamped = 0
    z_rms = np.zeros(K)
    zp_rms = np.zeros(K)
    zp_floor = np.zeros(K)
    z_floor = np.zeros(K)
    ill = 0

    for k in range(K - 1, -1, -1):
        t, dt = float(knots[k]), float(dts[k])
        w, p = W[:, k], P[:, k]
        X, ny = _design_columns(w, p, grid.T - t, basis, heat)
        if k == 0:
            X, ny = X[:, :0], 0
        des = Design(X, basis.ridge, k)
        nz = X.shape[1]
        resid = Yn - des.fit(Yn, ny)
        targets = np.column_stack([resid[:, None] * dW[:, k] / dt, resid[:, None] * dP[:, k] / dt])
        fitted = des.fit(targets, nz)
        Z, Zp = fitted[:, : model.m], fitted[:, model.m:]
        # rms of the fit a pure-noise target would produce (heteroscedastic, leverage-weighted)
        tc = targets - targets.mean(axis=0)
        fl = np.sqrt(des.leverage(nz) @ (tc * tc) / N)
        z_floor[k] = float(np.sqrt(np.sum(fl[: model.m] ** 2)))
        zp_floor[k] = float(np.sqrt(np.sum(fl[model.m:] ** 2)))
        z_rms[k] = float(np.sqrt(np.mean(np.sum(Z * Z, axis=1))))
        zp_rms[k] = float(np.sqrt(np.mean(np.sum(Zp * Zp, axis=1))))

        lam = model.drift(t, w)
        lin = np.sum(lam * Z, axis=1)
        quad = 0.5 * gamma * np.sum(Zp * Zp, axis=1)
        E = des.fit(G, ny)
        ill += sum(c > ILL_CONDITIONED for c in des.conditions)
        y = E - (lin + quad / checked_mu(np.clip(E, lo, hi), params)) * dt
        y = E - (lin + quad / checked_mu(np.clip(y, lo, hi), params)) * dt
        slack = CLAMP_SLACK * max(claim.range, 1e-300)
        n_clamped += int(np.count_nonzero((y < lo - slack) | (y > hi + slack)))
        y = np.clip(y, lo, hi)
        drv = lin + quad / checked_mu(y, params)
        G = G - drv * dt
        Yn = y
        if store_paths:
            Ys[:, k], Zs[:, k], Zps[:, k] = y, Z, Zp

    y0, se = mean_se(G)
    rate = n_clamped / (N * K)
    T = grid.T
    norm = lambda a: float(np.sqrt(np.sum(a * a * dts) / T))
    diag = {"N": N, "K": K, "degree": basis.degree, "payoff_features": heat is not None,
            "ridge": basis.ridge, "clamp_rate": rate, "clamp_warning": rate > CLAMP_WARN_RATE,
            "ill_conditioned_fits": ill, "Y0_regressed": float(Yn.mean()),
            "Z_norm": norm(z_rms), "Z_floor": norm(z_floor),
            "Zperp_norm": norm(zp_rms), "Zperp_floor": norm(zp_floor)}
    sol = BSDESolution("lsmc", float(y0), se, 0.0, "price", claim.name, params.q, params.gamma,
                       times=np.array(knots), diagnostics=diag)
    if store_paths:
        sol.Y, sol.Z, sol.Zperp = Ys, Zs, Zps
    return sol
