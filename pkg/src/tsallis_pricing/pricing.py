"""The pricing principle: prices, dual objectives, bounds, gamma behaviour and property checks.

Every inequality is tested with tol = max(3 x combined stderr, scheme tolerance);
dual candidates use 4 combined standard errors.  All checks are recorded with
their operands so reports explain themselves.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bsde import (PDE_TOL, BasisConfig, BSDESolution, Claim, PDEMesh, backward_recursion_Ytheta,
                   check_admissible, constant, digital_s, digital_wperp, expression_claim,
                   extract_optimizers, restart_check, risk_neutral, smooth_mixed, solve_attainable,
                   solve_ce, solve_lsmc, solve_pde, solve_unhedged)
from .entropy import q_vs_qmin_paths
from .market import MarketModel, PathEnsemble, TimeGrid, mean_se, simulate, terminal_state, walk
from .qcalc import QGammaParams, q_exp

NSIG = 3.0                 # inequality checks
NSIG_DUAL = 4.0            # dual candidates and optimizers
GAMMA_ENDPOINT_TOL = 0.01  # both gamma-sweep endpoints
EXACT_TOL = 1e-12          # "machine precision" identities (relative)


# ---------------------------------------------------------------------------
# values and checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float = 0.0
    tol: float = 0.0
    scheme: str = ""

    @property
    def uncertainty(self) -> float:
        return max(NSIG * self.stderr, self.tol)

    def as_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "tol": self.tol, "scheme": self.scheme}

    @classmethod
    def of(cls, sol: BSDESolution) -> "Estimate":
        return cls(float(sol.Y0), float(sol.stderr), float(sol.tol), sol.scheme)


def tolerance(*ests: Estimate, nsig: float = NSIG, se: float | None = None) -> float:
    """max(nsig x combined stderr, largest scheme tolerance); ``se`` overrides the combination."""
    comb = float(np.sqrt(sum(e.stderr ** 2 for e in ests))) if se is None else se
    return max(nsig * comb, max((e.tol for e in ests), default=0.0))


@dataclass(frozen=True)
class Check:
    """``lhs relation rhs`` within ``tol``; relation is '<=', '>=' or '=='."""

    name: str
    lhs: float
    relation: str
    rhs: float
    tol: float

    @property
    def passed(self) -> bool:
        d = self.lhs - self.rhs
        if self.relation == "<=":
            return bool(d <= self.tol)
        if self.relation == ">=":
            return bool(d >= -self.tol)
        return bool(abs(d) <= self.tol)

    def as_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "relation": self.relation, "rhs": self.rhs,
                "tol": self.tol, "passed": self.passed}


@dataclass(frozen=True)
class DualRecord:
    """Objective of one candidate measure against a primal reference value.

    kind 'bound': candidate must not undercut the reference by more than tol;
    kind 'attain': candidate must match the reference within tol.
    """

    family: str
    candidate: str
    value: float
    stderr: float
    reference: float
    reference_stderr: float
    tol: float
    kind: str = "bound"
    extras: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.value - self.reference

    @property
    def passed(self) -> bool:
        return bool(self.gap >= -self.tol) if self.kind == "bound" else bool(abs(self.gap) <= self.tol)

    def as_dict(self) -> dict:
        return {"family": self.family, "candidate": self.candidate, "value": self.value,
                "stderr": self.stderr, "reference": self.reference,
                "reference_stderr": self.reference_stderr, "gap": self.gap, "tol": self.tol,
                "kind": self.kind, "passed": self.passed, "extras": self.extras}


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, repr floats)."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)


# ---------------------------------------------------------------------------
# context
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PricingContext:
    """Market, shared path ensemble (common random numbers) and solver settings."""

    model: MarketModel
    ensemble: PathEnsemble
    mesh: PDEMesh = PDEMesh()
    basis: BasisConfig = BasisConfig()

    @property
    def grid(self) -> TimeGrid:
        return self.ensemble.grid

    @classmethod
    def build(cls, model: MarketModel, N: int, K: int, seed: int, graded: bool = False,
              threads: int = 1, mesh: PDEMesh = PDEMesh(), basis: BasisConfig = BasisConfig()
              ) -> "PricingContext":
        grid = TimeGrid.graded(model.T, K) if graded else TimeGrid.uniform(model.T, K)
        return cls(model, simulate(model, grid, N, seed, threads), mesh, basis)

    @property
    def markovian_2d(self) -> bool:
        return self.model.m == 1 and self.model.n == 1


SCHEMES = ("auto", "closed_form", "pde", "lsmc")


def solve(claim: Claim, params: QGammaParams, ctx: PricingContext, scheme: str = "auto",
          store: bool = False) -> BSDESolution:
    """Buyer price F_0 by the requested scheme; 'auto' uses closed forms when the
    hedge class allows, otherwise the PDE (m = n = 1) or LSMC."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    check_admissible(claim, params)
    if scheme == "auto":
        if claim.hedge_class in ("attainable", "unhedged"):
            scheme = "closed_form"
        else:
            scheme = "pde" if ctx.markovian_2d else "lsmc"
    if scheme == "closed_form":
        if claim.hedge_class == "attainable":
            return solve_attainable(claim, ctx.ensemble, params, ctx.model)
        if claim.hedge_class == "unhedged":
            return solve_unhedged(claim, ctx.ensemble, params, model=ctx.model)
        raise ValueError(f"no closed form for the general claim {claim.name!r}")
    if scheme == "pde":
        return solve_pde(claim, ctx.model, params, ctx.grid, ctx.mesh, store=store)
    return solve_lsmc(claim, ctx.model, params, ctx.ensemble, ctx.basis)


def _optimizer_summary(sol: BSDESolution, params: QGammaParams) -> dict:
    fields = extract_optimizers(sol, params).grid_fields(0)
    a = fields["alpha_star"]
    c = a.shape[0] // 2
    return {"alpha_star_at_origin": float(a[c, c]), "alpha_star_max_abs_t0": float(np.max(np.abs(a))),
            "theta_star_max_abs_t0": float(np.max(np.abs(fields["theta_star"])))}


# ---------------------------------------------------------------------------
# price reports
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PriceReport:
    claim: str
    q: float
    gamma: float
    F0: Estimate
    CE0: Estimate
    riskneutral0: Estimate
    seller: Estimate | None = None
    checks: list[Check] = field(default_factory=list)
    duals: list[DualRecord] = field(default_factory=list)
    optimizers: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks) and all(d.passed for d in self.duals)

    def as_dict(self) -> dict:
        return {"claim": self.claim, "params": {"q": self.q, "gamma": self.gamma},
                "prices": {"F0": self.F0.as_dict(), "CE0": self.CE0.as_dict(),
                           "riskneutral0": self.riskneutral0.as_dict(),
                           "seller": None if self.seller is None else self.seller.as_dict()},
                "bounds": [c.as_dict() for c in self.checks],
                "duals": [d.as_dict() for d in self.duals],
                "optimizers": self.optimizers, "diagnostics": self.diagnostics,
                "passed": self.passed}

    def to_json(self) -> str:
        return dumps(self.as_dict())


def sandwich_checks(F0: Estimate, CE0: Estimate, rn: Estimate, label: str = "") -> list[Check]:
    sfx = f"[{label}]" if label else ""
    return [Check(f"CE0 <= F0{sfx}", CE0.value, "<=", F0.value, tolerance(CE0, F0)),
            Check(f"F0 <= riskneutral0{sfx}", F0.value, "<=", rn.value, tolerance(F0, rn))]


def price(claim: Claim, params: QGammaParams, ctx: PricingContext, scheme: str = "auto",
          with_seller: bool = False) -> PriceReport:
    """Buyer price with CE and risk-neutral references and the sandwich checks."""
    sol = solve(claim, params, ctx, scheme, store=True)
    F0 = Estimate.of(sol)
    CE0 = Estimate.of(solve_ce(claim, ctx.ensemble, params, ctx.model))
    rn = Estimate(*risk_neutral(claim, ctx.ensemble, ctx.model), 0.0, "closed_form")
    rep = PriceReport(claim.name, params.q, params.gamma, F0, CE0, rn,
                      checks=sandwich_checks(F0, CE0, rn), diagnostics=dict(sol.diagnostics))
    if sol.u is not None:
        rep.optimizers = _optimizer_summary(sol, params)
    elif claim.hedge_class == "attainable":
        rep.optimizers = {"alpha_star_max_abs_t0": 0.0, "theta_star_max_abs_t0": 0.0}
    if with_seller:
        rep.seller = seller_price(claim, params, ctx, scheme)
        rep.checks.append(Check("F0 <= seller", F0.value, "<=", rep.seller.value,
                                tolerance(F0, rep.seller)))
    return rep


def seller_price(claim: Claim, params: QGammaParams, ctx: PricingContext, scheme: str = "auto"
                 ) -> Estimate:
    """-F_0(-xi); requires -xi admissible."""
    e = Estimate.of(solve(claim.negated(), params, ctx, scheme))
    return Estimate(-e.value + 0.0, e.stderr, e.tol, e.scheme)


# ---------------------------------------------------------------------------
# dual objectives
# ---------------------------------------------------------------------------

def _describe(x) -> str:
    if callable(x):
        return getattr(x, "__name__", "field")
    return repr(float(np.asarray(x, dtype=float).ravel()[0])) if np.size(x) == 1 else repr(list(np.ravel(x)))


def _penalized_paths(alpha, beta, claim: Claim, params: QGammaParams, ctx: PricingContext):
    if _is_constant(alpha) and (beta is None or _is_constant(beta)):
        return _constant_penalized([(0.0 if beta is None else beta, alpha)], claim, params, ctx)[0]
    xi_D, pen = q_vs_qmin_paths(ctx.ensemble, alpha, params.q, ctx.model,
                                payoff_fn=lambda w, p: claim(w, p), beta=beta)
    return xi_D, xi_D + pen / params.gamma


def _is_constant(x) -> bool:
    return not callable(x)


def _constant_penalized(pairs, claim: Claim, params: QGammaParams, ctx: PricingContext
                        ) -> list[tuple[np.ndarray, np.ndarray]]:
    """(D_T^q xi, D_T^q xi + penalty/gamma) per path for constant (beta, alpha) candidates.

    With constant loadings log D_t = beta . B_t + alpha . W_perp_t - c t / 2, where B is
    the Q^min Brownian motion, so every candidate shares one pass over the ensemble.
    """
    model, ens, q = ctx.model, ctx.ensemble, params.q
    loads = [(np.broadcast_to(np.asarray(b, float), (model.m,)),
              np.broadcast_to(np.asarray(a, float), (model.n,))) for b, a in pairs]
    t = ens.grid.knots
    dt = ens.grid.dt

    def per_block(b, dW, dWp):
        xi = claim(*_terminal_block(model, ens, dW, dWp, b))
        B = np.concatenate([np.zeros((1,) + dW.shape[1:]), np.cumsum(dW, axis=0)])
        P = np.concatenate([np.zeros((1,) + dWp.shape[1:]), np.cumsum(dWp, axis=0)])
        out = []
        for tb, ta in loads:
            c = float(tb @ tb + ta @ ta)
            Dq = np.exp(q * (B @ tb + P @ ta - 0.5 * c * t[:, None]))
            pen = 0.5 * q * c * np.sum(0.5 * (Dq[:-1] + Dq[1:]) * dt[:, None], axis=0)
            out.append((Dq[-1] * xi, pen))
        return out
    parts = ens.map_blocks(per_block)
    res = []
    for i in range(len(loads)):
        dist = np.concatenate([p[i][0] for p in parts])
        pen = np.concatenate([p[i][1] for p in parts])
        res.append((dist, dist + pen / params.gamma))
    return res


def _terminal_block(model: MarketModel, ens: PathEnsemble, dW, dWp, b: int):
    bw = walk(model, ens.grid, dW, dWp, coords="Qmin", offset=ens.block_slice(b).start)
    return bw.W_T, bw.Wp_T


def problem1_objective(alpha, claim: Claim, params: QGammaParams, ctx: PricingContext,
                       reference: Estimate, kind: str = "bound", label: str | None = None
                       ) -> DualRecord:
    """E_Qmin[(D_T)^q xi] + H_q(Q|Q^min)/gamma for dQ/dQ^min = E(alpha . W_perp)."""
    check_admissible(claim, params)
    return _problem1_record(_penalized_paths(alpha, None, claim, params, ctx),
                            label or f"alpha={_describe(alpha)}", reference, kind)


def _problem1_record(paths, label: str, reference: Estimate, kind: str) -> DualRecord:
    distorted, total = paths
    v, se = mean_se(total)
    dv, dse = mean_se(distorted)
    return DualRecord("problem1", label, v, se, reference.value, reference.stderr,
                      tolerance(Estimate(v, se), reference, nsig=NSIG_DUAL), kind,
                      {"distorted": dv, "distorted_stderr": dse})


def problem2_value(theta, claim: Claim, params: QGammaParams, ctx: PricingContext,
                   reference: Estimate, kind: str = "bound", label: str | None = None) -> DualRecord:
    """Y^theta_0 from the backward recursion under Q^theta."""
    sol = backward_recursion_Ytheta(theta, claim, ctx.model, params, ctx.ensemble, ctx.basis)
    return DualRecord("problem2", label or f"theta={_describe(theta)}", sol.Y0, sol.stderr,
                      reference.value, reference.stderr,
                      tolerance(Estimate.of(sol), reference, nsig=NSIG_DUAL), kind,
                      {"fixed_point_iterations": sol.diagnostics["max_fixed_point_iterations"]})


def ce_dual_objective(beta, alpha, claim: Claim, params: QGammaParams, ctx: PricingContext,
                      reference: Estimate, kind: str = "bound", label: str | None = None
                      ) -> DualRecord:
    """E_Qmin[(D_T)^q xi + (q/2 gamma) int D^q (|beta|^2 + |alpha|^2) ds],
    dQ/dQ^min = E(beta . W^{-lambda} + alpha . W_perp)."""
    check_admissible(claim, params)
    return _ce_record(_penalized_paths(alpha, beta, claim, params, ctx),
                      label or f"beta={_describe(beta)},alpha={_describe(alpha)}", reference, kind)


def _ce_record(paths, label: str, reference: Estimate, kind: str) -> DualRecord:
    v, se = mean_se(paths[1])
    return DualRecord("ce", label, v, se, reference.value, reference.stderr,
                      tolerance(Estimate(v, se), reference, nsig=NSIG_DUAL), kind)


def candidate_grid(lo: float = -2.0, hi: float = 2.0, n: int = 21) -> np.ndarray:
    return np.round(np.linspace(lo, hi, n), 12)   # clean labels (-0.6, not -0.5999...)


def distorted_infimum(claim: Claim, params: QGammaParams, ctx: PricingContext,
                      grid: np.ndarray | None = None) -> tuple[Estimate, float]:
    """min over constant alpha of E_Qmin[(D_T)^q xi]; returns the minimizing estimate and alpha."""
    grid = candidate_grid() if grid is None else grid
    paths = _constant_penalized([(0.0, float(a)) for a in grid], claim, params, ctx)
    best, arg = None, None
    for a, (d, _) in zip(grid, paths):
        v, se = mean_se(d)
        if best is None or v < best.value:
            best, arg = Estimate(v, se, 0.0, "grid"), float(a)
    return best, arg


@dataclass(eq=False)
class DualReport:
    claim: str
    q: float
    gamma: float
    F0: Estimate
    CE0: Estimate | None
    records: list[DualRecord]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def as_dict(self) -> dict:
        return {"claim": self.claim, "params": {"q": self.q, "gamma": self.gamma},
                "F0": self.F0.as_dict(), "CE0": None if self.CE0 is None else self.CE0.as_dict(),
                "duals": [r.as_dict() for r in self.records], "passed": self.passed}

    def to_json(self) -> str:
        return dumps(self.as_dict())


def dual_report(claim: Claim, params: QGammaParams, ctx: PricingContext,
                families: tuple[str, ...] = ("problem1", "problem2"),
                grid: np.ndarray | None = None, ce_grid: np.ndarray | None = None,
                reference: Estimate | None = None) -> DualReport:
    """Constant-candidate grids plus the analytic optimizers from the PDE solution."""
    if not ctx.markovian_2d:
        raise ValueError("optimizer fields are extracted from the PDE solution (m = n = 1)")
    grid = candidate_grid() if grid is None else grid
    pde = solve_pde(claim, ctx.model, params, ctx.grid, ctx.mesh)
    ctrl = extract_optimizers(pde, params)
    F0 = reference or Estimate.of(solve(claim, params, ctx))
    recs: list[DualRecord] = []
    if "problem1" in families:
        recs.append(problem1_objective(ctrl.alpha_star, claim, params, ctx, F0, "attain", "alpha*"))
        batch = _constant_penalized([(0.0, float(a)) for a in grid], claim, params, ctx)
        recs += [_problem1_record(pth, f"alpha={_describe(a)}", F0, "bound")
                 for a, pth in zip(grid, batch)]
    if "problem2" in families:
        recs.append(problem2_value(ctrl.theta_star, claim, params, ctx, F0, "attain", "theta*"))
        recs += [problem2_value(float(t), claim, params, ctx, F0) for t in grid]
    CE0 = None
    if "ce" in families:
        CE0 = Estimate.of(solve_ce(claim, ctx.ensemble, params, ctx.model))
        ce_pde = solve_pde(claim, ctx.model, params, ctx.grid, ctx.mesh, kind="ce")
        cc = extract_optimizers(ce_pde, params)
        recs.append(ce_dual_objective(cc.beta_star, cc.alpha_star, claim, params, ctx, CE0,
                                      "attain", "(beta*,alpha*)"))
        ce_grid = candidate_grid(-1.0, 1.0, 5) if ce_grid is None else ce_grid
        pairs = [(float(b), float(a)) for b in ce_grid for a in ce_grid]
        batch = _constant_penalized(pairs, claim, params, ctx)
        recs += [_ce_record(pth, f"beta={_describe(b)},alpha={_describe(a)}", CE0, "bound")
                 for (b, a), pth in zip(pairs, batch)]
    return DualReport(claim.name, params.q, params.gamma, F0, CE0, recs)


# ---------------------------------------------------------------------------
# bounds over a claim battery
# ---------------------------------------------------------------------------

def default_battery(model: MarketModel, grid: TimeGrid) -> list[Claim]:
    return [constant(0.3), digital_wperp(), digital_s(model, grid), smooth_mixed(),
            expression_claim("clamp(0.4 + 0.3*W_T - 0.3*Wperp_T, 0, 1)")]


@dataclass(eq=False)
class BoundsRow:
    claim: str
    hedge_class: str
    F0: Estimate
    F0_cross: Estimate | None
    CE0: Estimate
    riskneutral0: Estimate
    distorted_inf: Estimate
    checks: list[Check]

    def as_dict(self) -> dict:
        return {"claim": self.claim, "hedge_class": self.hedge_class, "F0": self.F0.as_dict(),
                "F0_cross": None if self.F0_cross is None else self.F0_cross.as_dict(),
                "CE0": self.CE0.as_dict(), "riskneutral0": self.riskneutral0.as_dict(),
                "distorted_inf": self.distorted_inf.as_dict(),
                "checks": [c.as_dict() for c in self.checks]}


@dataclass(eq=False)
class BoundsReport:
    q: float
    gamma: float
    rows: list[BoundsRow]

    @property
    def checks(self) -> list[Check]:
        return [c for r in self.rows for c in r.checks]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {"params": {"q": self.q, "gamma": self.gamma},
                "rows": [r.as_dict() for r in self.rows], "passed": self.passed}

    def to_json(self) -> str:
        return dumps(self.as_dict())


def bounds_report(battery: list[Claim], params: QGammaParams, ctx: PricingContext,
                  cross: str | None = "lsmc", grid: np.ndarray | None = None) -> BoundsReport:
    """CE0 <= F0 <= riskneutral0 per claim, by the dispatched scheme and by a cross scheme.

    Unhedged members must satisfy F0 = CE0 and attainable members F0 = riskneutral0,
    both checked on the cross-scheme price so the closed form is not compared
    with itself.  Also checks inf_alpha E_Qmin[(D_T)^q xi] <= F0.
    """
    rows = []
    for claim in battery:
        F0 = Estimate.of(solve(claim, params, ctx))
        CE0 = Estimate.of(solve_ce(claim, ctx.ensemble, params, ctx.model))
        rn = Estimate(*risk_neutral(claim, ctx.ensemble, ctx.model), 0.0, "closed_form")
        checks = sandwich_checks(F0, CE0, rn, F0.scheme)
        Fx = None
        if cross is not None and cross != F0.scheme and claim.range > 0:
            Fx = Estimate.of(solve(claim, params, ctx, cross))
            checks += sandwich_checks(Fx, CE0, rn, Fx.scheme)
            if claim.hedge_class == "unhedged":
                checks.append(Check(f"F0 == CE0 (unhedged)[{Fx.scheme}]", Fx.value, "==", CE0.value,
                                    tolerance(Fx, CE0)))
            if claim.hedge_class == "attainable":
                checks.append(Check(f"F0 == riskneutral0 (attainable)[{Fx.scheme}]", Fx.value, "==",
                                    rn.value, tolerance(Fx, rn)))
        if claim.hedge_class == "unhedged":
            checks.append(Check("F0 == CE0 (unhedged)", F0.value, "==", CE0.value, tolerance(F0, CE0)))
        if claim.hedge_class == "attainable":
            checks.append(Check("F0 == riskneutral0 (attainable)", F0.value, "==", rn.value,
                                tolerance(F0, rn)))
        dinf, _ = distorted_infimum(claim, params, ctx, grid)
        checks.append(Check("distorted infimum <= F0", dinf.value, "<=", F0.value, tolerance(dinf, F0)))
        rows.append(BoundsRow(claim.name, claim.hedge_class, F0, Fx, CE0, rn, dinf, checks))
    return BoundsReport(params.q, params.gamma, rows)


# ---------------------------------------------------------------------------
# gamma behaviour
# ---------------------------------------------------------------------------

def _ce_influence(xi: np.ndarray, params: QGammaParams) -> tuple[float, np.ndarray]:
    """Plug-in -(1/gamma) ln_q mean(u) and its per-path influence values."""
    from .qcalc import q_ln
    u = np.asarray(q_exp(-params.gamma * xi, params.q))
    v = float(u.mean())
    return -float(q_ln(v, params.q)) / params.gamma, -(u - v) * v ** (-params.q) / params.gamma


@dataclass(eq=False)
class SweepReport:
    claim: str
    q: float
    gammas: list[float]
    F0: list[Estimate]
    CE0: list[Estimate]
    riskneutral0: Estimate
    distorted_inf: Estimate
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    CSV_HEADER = ("gamma", "F0", "F0_stderr", "CE0", "CE0_stderr", "riskneutral0")

    def rows(self) -> list[tuple]:
        return [(g, f.value, f.stderr, c.value, c.stderr, self.riskneutral0.value)
                for g, f, c in zip(self.gammas, self.F0, self.CE0)]

    def as_dict(self) -> dict:
        return {"claim": self.claim, "q": self.q, "gammas": self.gammas,
                "F0": [f.as_dict() for f in self.F0], "CE0": [c.as_dict() for c in self.CE0],
                "riskneutral0": self.riskneutral0.as_dict(),
                "distorted_inf": self.distorted_inf.as_dict(),
                "checks": [c.as_dict() for c in self.checks], "passed": self.passed}

    def to_json(self) -> str:
        return dumps(self.as_dict())


def gamma_sweep(claim: Claim, q: float, gammas, ctx: PricingContext, scheme: str = "auto",
                grid: np.ndarray | None = None) -> SweepReport:
    """F0 over gamma with common random numbers.

    Pairwise monotonicity uses the standard error of the difference of the two
    plug-in estimates (influence functions on the shared paths).  Endpoints:
    F0(smallest gamma) within GAMMA_ENDPOINT_TOL of riskneutral0 and F0(largest
    gamma) within GAMMA_ENDPOINT_TOL of the grid distorted infimum.
    """
    gammas = sorted(float(g) for g in gammas)
    rn = Estimate(*risk_neutral(claim, ctx.ensemble, ctx.model), 0.0, "closed_form")
    F0s, CEs, infl = [], [], []
    closed = scheme in ("auto", "closed_form") and claim.hedge_class == "unhedged"
    if closed:
        _, p_T = terminal_state(ctx.model, ctx.ensemble, "Qmin")
        xi = claim(np.zeros((p_T.shape[0], ctx.model.m)), p_T)
    for g in gammas:
        params = QGammaParams(q, g)
        F0s.append(Estimate.of(solve(claim, params, ctx, scheme)))
        CEs.append(Estimate.of(solve_ce(claim, ctx.ensemble, params, ctx.model)))
        if closed:
            infl.append(_ce_influence(xi, params)[1])
    checks = []
    for i in range(len(gammas) - 1):
        a, b = F0s[i], F0s[i + 1]
        se = (float(np.std(infl[i + 1] - infl[i], ddof=1) / np.sqrt(infl[i].size)) if closed
              else None)
        checks.append(Check(f"F0(gamma={gammas[i + 1]!r}) <= F0(gamma={gammas[i]!r})", b.value, "<=",
                            a.value, tolerance(a, b, se=se)))
    checks.append(Check(f"F0(gamma={gammas[0]!r}) ~ riskneutral0", F0s[0].value, "==", rn.value,
                        max(GAMMA_ENDPOINT_TOL, tolerance(F0s[0], rn))))
    dinf, _ = distorted_infimum(claim, QGammaParams(q, gammas[-1]), ctx, grid)
    checks.append(Check(f"F0(gamma={gammas[-1]!r}) ~ distorted infimum", F0s[-1].value, "==",
                        dinf.value, max(GAMMA_ENDPOINT_TOL, tolerance(F0s[-1], dinf))))
    checks.append(Check(f"distorted infimum <= F0(gamma={gammas[-1]!r})", dinf.value, "<=",
                        F0s[-1].value, tolerance(F0s[-1], dinf)))
    return SweepReport(claim.name, q, gammas, F0s, CEs, rn, dinf, checks)


def scaling_identity(claim: Claim, kappa: float, params: QGammaParams, ctx: PricingContext,
                     scheme: str = "auto") -> Check:
    """F0(kappa xi, gamma) against kappa F0(xi, kappa gamma), same scheme and paths."""
    lhs = solve(claim.scaled(kappa), params, ctx, scheme)
    rhs = solve(claim, params.with_gamma(kappa * params.gamma), ctx, scheme)
    r = kappa * rhs.Y0
    tol = PDE_TOL if lhs.scheme == "pde" else EXACT_TOL * max(1.0, abs(r))
    return Check(f"F0({kappa!r} xi, gamma) == {kappa!r} F0(xi, {kappa!r} gamma) [{lhs.scheme}]",
                 float(lhs.Y0), "==", float(r), tol)


# ---------------------------------------------------------------------------
# property matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PropertyRow:
    prop: str
    q: float
    gamma: float
    case: str
    check: Check

    def as_dict(self) -> dict:
        return {"property": self.prop, "q": self.q, "gamma": self.gamma, "case": self.case,
                **{k: v for k, v in self.check.as_dict().items() if k != "name"}}


@dataclass(eq=False)
class PropertyMatrix:
    rows: list[PropertyRow]

    CSV_HEADER = ("property", "q", "gamma", "case", "lhs", "relation", "rhs", "tol", "passed")

    @property
    def passed(self) -> bool:
        return all(r.check.passed for r in self.rows)

    def by_property(self) -> dict[str, bool]:
        out: dict[str, bool] = {}
        for r in self.rows:
            out[r.prop] = out.get(r.prop, True) and r.check.passed
        return out

    def as_dict(self) -> dict:
        return {"rows": [r.as_dict() for r in self.rows], "summary": self.by_property(),
                "passed": self.passed}

    def to_json(self) -> str:
        return dumps(self.as_dict())


def property_suite(params_list, ctx: PricingContext, cash: float = 0.2) -> PropertyMatrix:
    """Normalization, monotonicity, concavity, scaling, time consistency and the
    cash super/sub-additivity quadrants on a fixed battery."""
    rows: list[PropertyRow] = []
    dig = digital_wperp()
    mixed = smooth_mixed()

    def add(prop, params, case, chk):
        rows.append(PropertyRow(prop, params.q, params.gamma, case, chk))

    def F(claim, params, scheme="auto"):
        return Estimate.of(solve(claim, params, ctx, scheme))

    for params in params_list:
        z = F(constant(0.0), params)
        add("normalization", params, "xi = 0", Check("F0(0) == 0", z.value, "==", 0.0, 0.0))

        for hi_c, lo_c, scheme in ((dig, dig.scaled(0.5), "auto"),
                                   (mixed.shifted(0.1), mixed, "pde"),
                                   (mixed, mixed.mix(constant(mixed.lo), 0.5), "pde")):
            a, b = F(hi_c, params, scheme), F(lo_c, params, scheme)
            add("monotonicity", params, f"{hi_c.name} >= {lo_c.name}",
                Check("F0(xi) >= F0(eta)", a.value, ">=", b.value, tolerance(a, b)))

        fx, fy = F(dig, params, "pde"), F(mixed, params, "pde")
        for k in (0.25, 0.5, 0.75):
            fm = F(dig.mix(mixed, k), params, "pde")
            add("concavity", params, f"kappa={k!r}",
                Check("F0(mix) >= mix of F0", fm.value, ">=", k * fx.value + (1 - k) * fy.value,
                      tolerance(fm, fx, fy)))

        for claim, scheme in ((dig, "auto"), (mixed, "pde")):
            base = F(claim, params, scheme)
            for k in (0.5, 2.0):
                try:
                    fk = F(claim.scaled(k), params, scheme)
                except ValueError:
                    continue   # kappa xi not admissible for these parameters
                rel = ">=" if k < 1 else "<="
                add("scaling", params, f"{claim.name}, kappa={k!r}",
                    Check(f"F0(kappa xi) {rel} kappa F0(xi)", fk.value, rel, k * base.value,
                          tolerance(fk, base)))

        for claim in (mixed, dig):
            sol = solve_pde(claim, ctx.model, params, ctx.grid, ctx.mesh)
            rc = restart_check(sol, claim, ctx.model, params, ctx.grid, ctx.mesh, ctx.grid.K // 2)
            add("time_consistency", params, claim.name,
                Check("max |restart - original| on [0, t]", rc["max_abs_diff_same_steps"], "<=", 0.0,
                      PDE_TOL))

        for c in (cash, -cash):
            try:
                a = F(dig.shifted(c), params)
            except ValueError:
                continue
            b = F(dig, params)
            superadd = (params.q < 1 and c <= 0) or (params.q > 1 and c >= 0)
            rel = ">=" if superadd else "<="
            add("cash", params, f"c={c!r}",
                Check(f"F0(xi + c) {rel} F0(xi) + c", a.value, rel, b.value + c, tolerance(a, b)))
    return PropertyMatrix(rows)
