"""Finite-difference solver for the Markovian pricing equation (m = n = 1).

    u_t + (u_ww + u_pp)/2 = lambda(t, w) u_w + f(u) G,   u(T) = g,

with f(u) = gamma / (2 mu(u)) and G = u_p^2 (price) or u_w^2 + u_p^2
(certainty equivalent).  Backward Euler in time, factored ADI sweeps in w
then p, fourth-order central stencils in the interior, linear extrapolation
at the truncation boundary.  The y-dependence of f is resolved by Picard
iteration within each step.  By default the gradient term is refreshed
inside the same iteration (fully implicit step); ``implicit_gradient=False``
lags it from the later level, which keeps each iterate linear but carries a
much larger first-order time error for kinked terminal data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from ..market import MarketModel, TimeGrid
from ..qcalc import MU_MIN, DomainError, QGammaParams, _mu_raw
from .claims import Claim, check_admissible
from .solution import BSDESolution, central_gradient

PDE_TOL = 1e-3   # discretization tolerance used when comparing prices


class PicardError(RuntimeError):
    def __init__(self, message: str, residual: float, step: int):
        super().__init__(message)
        self.residual = residual
        self.step = step


@dataclass(frozen=True)
class PDEMesh:
    """Square spatial mesh of ``n_space`` nodes per axis on [-L, L]^2."""

    n_space: int = 201
    L: float | None = None          # default 5 sqrt(T)
    smoothing_cells: float = 2.0    # ramp width for discontinuous payoffs

    def nodes(self, T: float) -> np.ndarray:
        if self.n_space < 7:
            raise ValueError("need at least 7 nodes per axis")
        L = 5.0 * np.sqrt(T) if self.L is None else self.L
        if L < 5.0 * np.sqrt(T) - 1e-12:
            raise ValueError("the truncated domain must satisfy L >= 5 sqrt(T)")
        return np.linspace(-L, L, self.n_space)

    def refined(self) -> "PDEMesh":
        """Halve the spatial width (2n - 1 nodes on the same box)."""
        return PDEMesh(2 * self.n_space - 1, self.L, self.smoothing_cells)


def _operator_band(n: int, h: float, dt: float, adv: np.ndarray | None) -> np.ndarray:
    """Banded storage (l = u = 2) of I - dt (D2/2 - adv D1) with boundary rows."""
    ab = np.zeros((5, n))

    def put(i, j, v):
        ab[2 + i - j, j] += v

    d2_4 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    d1_4 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    d2_2 = np.array([1.0, -2.0, 1.0]) / (h * h)
    d1_2 = np.array([-1.0, 0.0, 1.0]) / (2.0 * h)
    a = np.zeros(n) if adv is None else adv
    for i in range(1, n - 1):
        if 2 <= i <= n - 3:
            st = 0.5 * d2_4 - a[i] * d1_4
            offs = range(-2, 3)
        else:
            st = 0.5 * d2_2 - a[i] * d1_2
            offs = range(-1, 2)
        for o, c in zip(offs, st):
            put(i, i + o, -dt * c)
        put(i, i, 1.0)
    for j, c in zip((0, 1, 2), (1.0, -2.0, 1.0)):
        put(0, j, c)
        put(n - 1, n - 1 - j, c)
    return ab


def _boundary_extrapolate(u: np.ndarray) -> None:
    u[0, :] = 2.0 * u[1, :] - u[2, :]
    u[-1, :] = 2.0 * u[-2, :] - u[-3, :]
    u[:, 0] = 2.0 * u[:, 1] - u[:, 2]
    u[:, -1] = 2.0 * u[:, -2] - u[:, -3]


def solve_pde(claim: Claim, model: MarketModel, params: QGammaParams, grid: TimeGrid,
              mesh: PDEMesh = PDEMesh(), kind: str = "price", store: bool = True,
              terminal_values: np.ndarray | None = None, clamp: bool = True,
              picard_tol: float = 1e-10, picard_max: int = 50,
              implicit_gradient: bool = True) -> BSDESolution:
    """Backward time stepping of the pricing (``kind='price'``) or certainty
    equivalent (``kind='ce'``) equation.

    ``terminal_values`` replaces the payoff at the last knot of ``grid``
    (restart from an intermediate level).  Discontinuous payoffs are ramped
    over ``mesh.smoothing_cells`` cells.
    """
    if model.m != 1 or model.n != 1:
        raise ValueError("the PDE scheme handles m = n = 1")
    if kind not in ("price", "ce"):
        raise ValueError(f"unknown equation kind {kind!r}")
    check_admissible(claim, params)
    x = mesh.nodes(model.T)
    h = float(x[1] - x[0])
    n = x.size
    smoothing = mesh.smoothing_cells * h if claim.discontinuous else 0.0
    Wg, Pg = np.meshgrid(x, x, indexing="ij")
    if terminal_values is None:
        u = claim(Wg.ravel(), Pg.ravel(), smoothing=smoothing).reshape(n, n)
    else:
        u = np.array(terminal_values, dtype=float)
        if u.shape != (n, n):
            raise ValueError("terminal values do not match the mesh")

    K = grid.K
    knots, dts = grid.knots, grid.dt
    lam_const = model.constant_lambda
    surfaces = np.empty((K + 1, n, n)) if store else None
    if store:
        surfaces[K] = u
    q, gamma = params.q, params.gamma
    band_p_cache: dict[float, np.ndarray] = {}
    band_w_cache: dict[float, np.ndarray] = {}
    picard_its = np.zeros(K, dtype=int)
    overshoot = 0.0
    n_clamped = 0

    for k in range(K - 1, -1, -1):
        t, dt = float(knots[k]), float(dts[k])
        uw = central_gradient(u, h, 0)
        up = central_gradient(u, h, 1)
        G = up * up if kind == "price" else uw * uw + up * up
        if lam_const is None:
            adv = model.drift(t, x[:, None])[:, 0]
            band_w = _operator_band(n, h, dt, adv)
        else:
            band_w = band_w_cache.get(dt)
            if band_w is None:
                band_w = band_w_cache.setdefault(dt, _operator_band(n, h, dt, np.full(n, lam_const[0])))
        band_p = band_p_cache.get(dt)
        if band_p is None:
            band_p = band_p_cache.setdefault(dt, _operator_band(n, h, dt, None))

        it_u = u
        for it in range(1, picard_max + 1):
            mu = _mu_raw(it_u, params)
            if np.any(~(mu >= MU_MIN)):
                raise DomainError(f"mu(u) below {MU_MIN} at step {k}", value=float(np.nanmin(mu)),
                                  bound=MU_MIN)
            if implicit_gradient and it > 1:
                gp = central_gradient(it_u, h, 1)
                G = gp * gp if kind == "price" else central_gradient(it_u, h, 0) ** 2 + gp * gp
            rhs = u - dt * (gamma / (2.0 * mu)) * G
            rhs[0, :] = rhs[-1, :] = 0.0
            v = solve_banded((2, 2), band_w, rhs, check_finite=False)
            v[:, 0] = v[:, -1] = 0.0
            new = solve_banded((2, 2), band_p, v.T, check_finite=False).T
            _boundary_extrapolate(new)
            res = float(np.max(np.abs(new - it_u)))
            it_u = new
            if res < picard_tol:
                break
        else:
            raise PicardError(f"Picard iteration did not converge at step {k} "
                              f"(residual {res:.3e})", residual=res, step=k)
        picard_its[k] = it
        u = it_u
        if clamp:
            over = max(float(np.max(u - claim.hi)), float(np.max(claim.lo - u)), 0.0)
            if over > 0.0:
                overshoot = max(overshoot, over)
                n_clamped += int(np.count_nonzero((u > claim.hi) | (u < claim.lo)))
                u = np.clip(u, claim.lo, claim.hi)
        if store:
            surfaces[k] = u

    c = n // 2
    if n % 2 == 1:
        y0 = float(u[c, c])
    else:
        from scipy.interpolate import RegularGridInterpolator
        y0 = float(RegularGridInterpolator((x, x), u)((0.0, 0.0)))
    diag = {"picard_max_iterations": int(picard_its.max(initial=0)),
            "picard_mean_iterations": float(picard_its.mean()) if K else 0.0,
            "clamp_max_overshoot": overshoot, "clamped_nodes": n_clamped,
            "n_space": n, "L": float(x[-1]), "K": K, "smoothing": smoothing}
    return BSDESolution("pde", y0, 0.0, PDE_TOL, kind, claim.name, q, gamma,
                        times=np.array(knots), w=x, p=x,
                        u=surfaces if store else u[None], diagnostics=diag)


@dataclass(frozen=True)
class RefinementStudy:
    meshes: tuple[int, ...]
    Y0: tuple[float, ...]
    changes: tuple[float, ...]
    ratios: tuple[float, ...]

    def contracting(self, factor: float = 1.0) -> bool:
        """Every change smaller than ``factor`` times the previous one."""
        return all(r < factor for r in self.ratios)


def refinement_study(claim: Claim, model: MarketModel, params: QGammaParams, grid: TimeGrid,
                     mesh: PDEMesh = PDEMesh(51), levels: int = 3, kind: str = "price"
                     ) -> RefinementStudy:
    """Y0 under successive halvings of both spatial mesh widths (time grid fixed)."""
    meshes, ys = [], []
    m = mesh
    for _ in range(levels):
        sol = solve_pde(claim, model, params, grid, m, kind=kind, store=False)
        meshes.append(m.n_space)
        ys.append(sol.Y0)
        m = m.refined()
    ch = tuple(abs(b - a) for a, b in zip(ys, ys[1:]))
    ratios = tuple(b / a if a > 0 else (0.0 if b == 0 else np.inf) for a, b in zip(ch, ch[1:]))
    return RefinementStudy(tuple(meshes), tuple(ys), ch, ratios)


def restart_check(solution: BSDESolution, claim: Claim, model: MarketModel, params: QGammaParams,
                  grid: TimeGrid, mesh: PDEMesh, t_index: int) -> dict:
    """Re-solve from level ``t_index`` with terminal data u(t, .) and compare earlier levels.

    Also repeats the restart with the [0, t] steps halved, which measures the
    semigroup defect at the level of the time discretization.
    """
    if solution.u is None or solution.u.shape[0] != grid.K + 1:
        raise ValueError("restart check needs all stored levels")
    sub = TimeGrid(grid.knots[: t_index + 1])
    again = solve_pde(claim, model, params, sub, mesh, kind=solution.kind,
                      terminal_values=solution.u[t_index])
    same = float(np.max(np.abs(again.u - solution.u[: t_index + 1])))
    fine_knots = np.sort(np.concatenate([sub.knots, 0.5 * (sub.knots[1:] + sub.knots[:-1])]))
    fine = solve_pde(claim, model, params, TimeGrid(fine_knots), mesh, kind=solution.kind,
                     terminal_values=solution.u[t_index])
    c = solution.u.shape[1] // 2
    return {"t_index": t_index, "max_abs_diff_same_steps": same,
            "Y0_diff_refined_steps": abs(fine.Y0 - solution.Y0),
            "max_abs_diff_refined_steps": float(np.max(np.abs(fine.u[0] - solution.u[0]))),
            "center_index": c}
