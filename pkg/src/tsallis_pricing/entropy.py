"""Tsallis relative entropy estimators.

Two independent routes for H_q(Q|P) = E_P[D^q ln_q D]:

* definitional: sample mean of D_T^q ln_q D_T;
* integral:     (q/2) E_P[ int_0^T D_s^q |theta_s|^2 ds ], trapezoidal in time,

with theta the full loading vector of log D.  Conditional versions use nested
simulation from grid times.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .market import (DensityPaths, MarketModel, PathEnsemble, as_field, mean_se,
                     standard_normals, stochastic_exponential, walk)
from .qcalc import q_ln

NESTED_STREAM = 1   # stream tag of inner (nested) simulations


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    stderr: float
    route: str
    q: float
    source: str = "Q"
    target: str = "P"
    extras: dict = field(default_factory=dict)

    def within(self, target: float, nsig: float = 4.0) -> bool:
        return abs(self.value - target) <= nsig * self.stderr + 1e-12

    def row(self) -> dict:
        return {"q": self.q, "measure": f"{self.source}|{self.target}", "route": self.route,
                "estimate": self.value, "stderr": self.stderr}


def closed_form_tsallis(c: float, T: float, q: float) -> float:
    """H_q for constant loadings with |theta|^2 = c on [0, T]."""
    if q == 1.0:
        return 0.5 * c * T
    return float(np.expm1(q * (q - 1.0) * c * T / 2.0) / (q - 1.0))


def entropy_integrand(log_x: np.ndarray, q: float) -> np.ndarray:
    """x^q ln_q x from log x (x ln x when q = 1)."""
    log_x = np.asarray(log_x, dtype=float)
    if q == 1.0:
        return np.exp(log_x) * log_x
    return np.exp(q * log_x) * q_ln(np.exp(log_x), q)


def pointwise_form_gap(x: np.ndarray, q: float) -> float:
    """max relative gap between x^q ln_q x and (x - x^q)/(1-q)."""
    x = np.asarray(x, dtype=float)
    a = x**q * q_ln(x, q)
    b = (x - x**q) / (1.0 - q)
    return float(np.max(np.abs(a - b) / (1.0 + np.abs(x) + x**q)))


def tsallis_definitional(density: DensityPaths, q: float) -> EntropyEstimate:
    """Mean of D_T^q ln_q D_T; q = 1 gives the Kullback-Leibler estimator.

    The normalized form (mean D_T^q - 1)/(q - 1) is reported as well.  On a
    finite sample the two differ by exactly (mean D_T - 1)/(1 - q), which is
    recorded in ``extras['form_residual']`` (zero up to rounding).
    """
    log_T = density.log_values[:, -1]
    vals = entropy_integrand(log_T, q)
    est, se = mean_se(vals)
    extras = {"mean_D": float(np.mean(np.exp(log_T)))}
    if q != 1.0:
        normalized = (float(np.mean(np.exp(q * log_T))) - 1.0) / (q - 1.0)
        extras["normalized"] = normalized
        extras["form_residual"] = est - normalized - (extras["mean_D"] - 1.0) / (1.0 - q)
    return EntropyEstimate(est, se, "definitional", q, density.source, density.target, extras)


def _trapezoid_paths(log_D: np.ndarray, sq: np.ndarray, dt: np.ndarray, q: float) -> np.ndarray:
    Dq = np.exp(q * log_D)
    return 0.5 * q * np.sum(0.5 * (Dq[:, :-1] + Dq[:, 1:]) * sq * dt[None, :], axis=1)


def _integral_route(model: MarketModel, ensemble: PathEnsemble, loadings, q: float, coords: str
                    ) -> np.ndarray:
    dt = ensemble.grid.dt

    def per_block(b, dW, dWp):
        bw = walk(model, ensemble.grid, dW, dWp, coords=coords, loadings=loadings,
                  offset=ensemble.block_slice(b).start)
        return _trapezoid_paths(bw.log_D, bw.sq_loading, dt, q)
    return np.concatenate(ensemble.map_blocks(per_block))


def _lambda_field(model: MarketModel, lam):
    if lam is None:
        return lambda t, w, p: -model.drift(t, w)
    f = as_field(lam, model.m)
    return lambda t, w, p: -f(t, w, p)


def tsallis_integral(ensemble: PathEnsemble, lam, alpha, q: float,
                     model: MarketModel | None = None) -> EntropyEstimate:
    """(q/2) E_P int D^q (|lambda|^2 + |alpha|^2) ds for dQ/dP = E(-lambda.W + alpha.W_perp).

    ``lam`` None means the model drift.
    """
    model = model or MarketModel(ensemble.m, ensemble.n, ensemble.grid.T,
                                 lam=0.0 if callable(lam) or lam is None else lam)
    loadings = (_lambda_field(model, lam), as_field(alpha, model.n))
    est, se = mean_se(_integral_route(model, ensemble, loadings, q, "P"))
    return EntropyEstimate(est, se, "integral", q, "Q", "P")


def tsallis_q_vs_qmin(ensemble: PathEnsemble, alpha, q: float,
                      model: MarketModel | None = None) -> EntropyEstimate:
    """(q/2) E_Qmin int (D^{Q,Qmin})^q |alpha|^2 ds along Q^min paths."""
    model = model or MarketModel(ensemble.m, ensemble.n, ensemble.grid.T)
    loadings = (as_field(0.0, model.m), as_field(alpha, model.n))
    est, se = mean_se(_integral_route(model, ensemble, loadings, q, "Qmin"))
    return EntropyEstimate(est, se, "integral", q, "Q", "Qmin")


def q_vs_qmin_paths(ensemble: PathEnsemble, alpha, q: float, model: MarketModel, payoff_fn=None,
                    beta=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-path (D_T^q xi, penalty integral) under Q^min coordinates.

    ``payoff_fn(W_T, Wp_T)`` gives xi; the penalty is (q/2) int D^q |theta|^2 ds.
    """
    loadings = (as_field(0.0 if beta is None else beta, model.m), as_field(alpha, model.n))
    dt = ensemble.grid.dt

    def per_block(b, dW, dWp):
        bw = walk(model, ensemble.grid, dW, dWp, coords="Qmin", loadings=loadings,
                  offset=ensemble.block_slice(b).start)
        pen = _trapezoid_paths(bw.log_D, bw.sq_loading, dt, q)
        xi = np.zeros(dW.shape[1]) if payoff_fn is None else payoff_fn(bw.W_T, bw.Wp_T)
        return np.exp(q * bw.log_D[:, -1]) * xi, pen
    parts = ensemble.map_blocks(per_block)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# ---------------------------------------------------------------------------
# conditional entropy by nested simulation
# ---------------------------------------------------------------------------

@dataclass
class ConditionalEntropy:
    t_index: int
    t: float
    q: float
    M: int
    values: np.ndarray        # H_{q,t} per outer path, direct form mean R^q ln_q R
    stderr: np.ndarray
    values_increment: np.ndarray  # (E[f(D_T)|F_t] - f(D_t)) / D_t^q
    D_t: np.ndarray
    f_Dt: np.ndarray          # f(D_t), f(x) = x^q ln_q x
    f_DT_mean: np.ndarray     # nested estimate of E[f(D_T)|F_t]
    f_DT_se: np.ndarray


def tsallis_conditional(ensemble: PathEnsemble, lam, alpha, q: float, t_index: int, M: int = 256,
                        n_outer: int | None = None, model: MarketModel | None = None,
                        chunk: int = 64) -> ConditionalEntropy:
    """Nested estimate of H_{q,t}(Q|P) on the first ``n_outer`` ensemble paths.

    Inner paths restart from each outer state at grid index ``t_index`` with
    their own Philox substreams (one per outer path).
    """
    if M < 2:
        raise ValueError("nested estimation needs M >= 2 inner paths")
    model = model or MarketModel(ensemble.m, ensemble.n, ensemble.grid.T,
                                 lam=0.0 if callable(lam) or lam is None else lam)
    grid = ensemble.grid
    K = grid.K
    if not 0 <= t_index <= K:
        raise ValueError(f"t_index {t_index} outside 0..{K}")
    n_outer = ensemble.N if n_outer is None else min(n_outer, ensemble.N)
    loadings = (_lambda_field(model, lam), as_field(alpha, model.n))

    # outer states at t_index (streamed over blocks, first n_outer paths)
    W_t, P_t, L_t = [], [], []
    for sl, dW, dWp in ensemble.iter_blocks():
        if sl.start >= n_outer:
            break
        bw = walk(model, grid, dW[:t_index], dWp[:t_index], coords="P", loadings=loadings,
                  keep_paths=False, offset=sl.start) if t_index > 0 else None
        nb = dW.shape[1]
        if bw is None:
            W_t.append(np.zeros((nb, model.m)))
            P_t.append(np.zeros((nb, model.n)))
            L_t.append(np.zeros(nb))
        else:
            W_t.append(bw.W_T)
            P_t.append(bw.Wp_T)
            L_t.append(bw.log_D[:, -1])
    W_t = np.concatenate(W_t)[:n_outer]
    P_t = np.concatenate(P_t)[:n_outer]
    logD_t = np.concatenate(L_t)[:n_outer]

    steps = K - t_index
    logR = np.zeros((n_outer, M))
    if steps > 0:
        sq_dt = np.sqrt(grid.dt[t_index:])[:, None, None]
        dims = model.m + model.n
        for c0 in range(0, n_outer, chunk):
            idx = range(c0, min(n_outer, c0 + chunk))
            z = np.concatenate([standard_normals(ensemble.seed, ensemble.stream + (NESTED_STREAM, t_index, i),
                                                 0, (steps, M, dims)) for i in idx], axis=1)
            z *= sq_dt
            w0 = np.repeat(W_t[c0:c0 + len(idx)], M, axis=0)
            p0 = np.repeat(P_t[c0:c0 + len(idx)], M, axis=0)
            bw = walk(model, grid, z[:, :, :model.m], z[:, :, model.m:], coords="P",
                      loadings=loadings, start_index=t_index, W0=w0, Wp0=p0)
            logR[c0:c0 + len(idx)] = bw.log_D[:, -1].reshape(len(idx), M)

    def cond_mean(x):
        return x.mean(axis=1), x.std(axis=1, ddof=1) / np.sqrt(M)

    direct, direct_se = cond_mean(entropy_integrand(logR, q))
    logDT = logD_t[:, None] + logR
    fDT, fDT_se = cond_mean(entropy_integrand(logDT, q))
    f_Dt = entropy_integrand(logD_t, q)
    incr = (fDT - f_Dt) * np.exp(-q * logD_t)
    return ConditionalEntropy(t_index, float(grid.knots[t_index]), q, M, direct, direct_se, incr,
                              np.exp(logD_t), f_Dt, fDT, fDT_se)


@dataclass(frozen=True)
class SubmartingaleReport:
    t_index: int
    t: float
    n_paths: int
    n_violations: int
    fraction: float
    nsig: float
    passed: bool


def submartingale_check(ensemble: PathEnsemble, lam, alpha, q: float, t_index: int, M: int = 256,
                        n_outer: int | None = None, model: MarketModel | None = None,
                        nsig: float = 3.0, max_fraction: float = 0.01) -> SubmartingaleReport:
    """Checks E[f(D_T)|F_t] >= f(D_t), f(x) = x^q ln_q x, path by path."""
    ce = tsallis_conditional(ensemble, lam, alpha, q, t_index, M, n_outer, model)
    floor = 1e-12 * (1.0 + np.abs(ce.f_Dt))   # t = T: zero nested spread, rounding only
    viol = ce.f_Dt - ce.f_DT_mean > nsig * ce.f_DT_se + floor
    n = int(viol.sum())
    frac = n / ce.f_Dt.size
    return SubmartingaleReport(t_index, ce.t, ce.f_Dt.size, n, frac, nsig, frac < max_fraction)


@dataclass(frozen=True)
class KLLimitReport:
    c: float
    T: float
    delta: float
    kl: EntropyEstimate
    lower: EntropyEstimate    # q = 1 - delta
    upper: EntropyEstimate    # q = 1 + delta
    kl_exact: float
    lower_exact: float
    upper_exact: float
    slope_bound: float
    passed: bool


def kl_limit_check(ensemble: PathEnsemble, lam, alpha, delta: float,
                   model: MarketModel | None = None, nsig: float = 4.0) -> KLLimitReport:
    """Compares H_{1-delta}, H_1, H_{1+delta} for constant loadings.

    |H_{1+-delta} - H_1| <= C delta + noise with C = 2(a + a^2/2), a = cT/2,
    twice the slope of the closed form at q = 1.
    """
    if not 0 < delta <= 0.1:
        raise ValueError("delta must lie in (0, 0.1]")
    lam_v = np.broadcast_to(np.asarray(lam, dtype=float), (ensemble.m,))
    alpha_v = np.broadcast_to(np.asarray(alpha, dtype=float), (ensemble.n,))
    c = float(lam_v @ lam_v + alpha_v @ alpha_v)
    T = ensemble.grid.T
    D = stochastic_exponential(ensemble, (-lam_v, alpha_v), source="Q", target="P")
    kl = tsallis_definitional(D, 1.0)
    lo = tsallis_definitional(D, 1.0 - delta)
    hi = tsallis_definitional(D, 1.0 + delta)
    a = 0.5 * c * T
    C = 2.0 * (a + 0.5 * a * a)
    ok = all(abs(e.value - kl.value) <= C * delta + nsig * np.hypot(e.stderr, kl.stderr)
             for e in (lo, hi))
    ok = ok and lo.within(closed_form_tsallis(c, T, 1 - delta), nsig) \
        and hi.within(closed_form_tsallis(c, T, 1 + delta), nsig)
    ok = ok and lo.value - nsig * lo.stderr <= a <= hi.value + nsig * hi.stderr
    return KLLimitReport(c, T, delta, kl, lo, hi, a, closed_form_tsallis(c, T, 1 - delta),
                         closed_form_tsallis(c, T, 1 + delta), C, bool(ok))


ENTROPY_CSV_HEADER = ["q", "measure", "route", "estimate", "stderr"]


def write_entropy_csv(estimates, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(ENTROPY_CSV_HEADER)
        for e in estimates:
            r = e.row()
            wr.writerow([repr(float(r["q"])), r["measure"], r["route"],
                         repr(float(r["estimate"])), repr(float(r["stderr"]))])
