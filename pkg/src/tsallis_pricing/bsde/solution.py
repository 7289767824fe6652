"""Containers for BSDE solutions and the optimal measures derived from them."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from ..qcalc import MU_MIN, QGammaParams, DomainError, _mu_raw


def central_gradient(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order central first derivative; second order near and at the edges."""
    u = np.moveaxis(u, axis, 0)
    g = np.empty_like(u)
    g[2:-2] = (u[:-4] - 8.0 * u[1:-3] + 8.0 * u[3:-1] - u[4:]) / (12.0 * h)
    g[1] = (u[2] - u[0]) / (2.0 * h)
    g[-2] = (u[-1] - u[-3]) / (2.0 * h)
    g[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
    g[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * h)
    return np.moveaxis(g, 0, axis)


@dataclass(eq=False)
class BSDESolution:
    """Y0 plus either grid surfaces (pde) or per-path estimates (lsmc)."""

    scheme: str
    Y0: float
    stderr: float = 0.0
    tol: float = 0.0
    kind: str = "price"
    claim: str = ""
    q: float | None = None
    gamma: float | None = None
    times: np.ndarray | None = None      # knots of stored time levels
    w: np.ndarray | None = None          # spatial nodes (pde)
    p: np.ndarray | None = None
    u: np.ndarray | None = None          # (levels, nw, np)
    Y: np.ndarray | None = None          # (N, K+1) per path
    Z: np.ndarray | None = None          # (N, K, m)
    Zperp: np.ndarray | None = None      # (N, K, n)
    diagnostics: dict = field(default_factory=dict)

    @property
    def uncertainty(self) -> float:
        """max(3 stderr, scheme tolerance)."""
        return max(3.0 * self.stderr, self.tol)

    # grid access -------------------------------------------------------
    @property
    def h(self) -> tuple[float, float]:
        return float(self.w[1] - self.w[0]), float(self.p[1] - self.p[0])

    def level_index(self, t: float) -> int:
        """Last stored knot not after t."""
        k = int(np.searchsorted(self.times, t + 1e-12 * max(1.0, self.times[-1]), side="right")) - 1
        return min(max(k, 0), self.times.size - 1)

    def gradients(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        hw, hp = self.h
        return central_gradient(self.u[k], hw, 0), central_gradient(self.u[k], hp, 1)

    def _coords(self, w, p):
        hw, hp = self.h
        iw = (np.clip(np.ravel(w), self.w[0], self.w[-1]) - self.w[0]) / hw
        ip = (np.clip(np.ravel(p), self.p[0], self.p[-1]) - self.p[0]) / hp
        return np.vstack([iw, ip])

    def fields_at(self, k: int, w, p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Bilinear (Y, Z, Z_perp) at level k for states w, p (first coordinates)."""
        if self.u is None:
            raise ValueError("solution carries no grid surfaces")
        c = self._coords(w, p)
        zw, zp = self.gradients(k)
        get = lambda a: map_coordinates(a, c, order=1, mode="nearest")
        return get(self.u[k]), get(zw), get(zp)

    def value_at(self, k: int, w, p) -> np.ndarray:
        return map_coordinates(self.u[k], self._coords(w, p), order=1, mode="nearest")

    # export ------------------------------------------------------------
    def to_csv(self, path, every: int = 1) -> None:
        """Surface rows (t, w, w_perp, Y, Z, Z_perp)."""
        if self.u is None:
            raise ValueError("solution carries no grid surfaces")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "w", "w_perp", "Y", "Z", "Z_perp"])
            for k in range(0, self.times.size, every):
                zw, zp = self.gradients(k)
                for i in range(self.w.size):
                    for j in range(self.p.size):
                        wr.writerow([repr(float(x)) for x in
                                     (self.times[k], self.w[i], self.p[j], self.u[k, i, j], zw[i, j], zp[i, j])])

    def summary(self) -> dict:
        return {"scheme": self.scheme, "kind": self.kind, "claim": self.claim, "Y0": self.Y0,
                "stderr": self.stderr, "tol": self.tol, "diagnostics": self.diagnostics}

    def diagnostics_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2, default=float)


def checked_mu(y: np.ndarray, params: QGammaParams) -> np.ndarray:
    mu = _mu_raw(y, params)
    if np.any(~(mu >= MU_MIN)):
        raise DomainError(f"mu(Y) fell below the floor {MU_MIN}", value=float(np.nanmin(mu)), bound=MU_MIN)
    return mu


@dataclass(eq=False)
class OptimalControls:
    """alpha* = -gamma Z_perp / (q mu(Y)), theta* = q alpha*, from a grid solution.

    Fields are evaluated at the last stored level not after t (left point),
    matching the left-point loadings of the simulators.
    """

    solution: BSDESolution
    params: QGammaParams

    def _zp_over_mu(self, t, w, p) -> np.ndarray:
        k = self.solution.level_index(t)
        y, _, zp = self.solution.fields_at(k, w, p)
        return zp / checked_mu(y, self.params)

    def theta_star(self, t, w, p) -> np.ndarray:
        return (-self.params.gamma * self._zp_over_mu(t, w, p))[:, None]

    def alpha_star(self, t, w, p) -> np.ndarray:
        return (-self.params.gamma / self.params.q * self._zp_over_mu(t, w, p))[:, None]

    def beta_star(self, t, w, p) -> np.ndarray:
        """-gamma Z / (q mu(Y)); meaningful for certainty-equivalent solutions."""
        k = self.solution.level_index(t)
        y, zw, _ = self.solution.fields_at(k, w, p)
        return (-self.params.gamma / self.params.q * zw / checked_mu(y, self.params))[:, None]

    def qxi_perp_loading(self, t, w, p) -> np.ndarray:
        """-gamma Z_perp / (2 mu(Y)), the W_perp loading of the density of Q^xi."""
        return (-0.5 * self.params.gamma * self._zp_over_mu(t, w, p))[:, None]

    def grid_fields(self, k: int) -> dict[str, np.ndarray]:
        u = self.solution.u[k]
        _, zp = self.solution.gradients(k)
        mu = checked_mu(u, self.params)
        theta = -self.params.gamma * zp / mu
        return {"theta_star": theta, "alpha_star": theta / self.params.q}


def extract_optimizers(solution: BSDESolution, params: QGammaParams) -> OptimalControls:
    if solution.u is None:
        raise ValueError("optimizer fields need a grid solution with stored surfaces")
    checked_mu(solution.u, params)
    return OptimalControls(solution, params)
