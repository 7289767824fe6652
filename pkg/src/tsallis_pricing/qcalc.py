"""Deformed exponential / logarithm and the positivity function mu.

    exp_q(x) = [1 + (1-q) x]^(1/(1-q))
    ln_q(x)  = (x^(1-q) - 1) / (1-q)
    mu(y)    = (1 - (1-q) gamma y) / q
    f(y)     = gamma / (2 mu(y))

All functions accept scalars or numpy arrays and return the same shape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEAR_ONE = 1e-6      # |q-1| below this switches to the series expansions
DOMAIN_EPS = 1e-12   # smallest admissible base for negative exponents
MU_MIN = 1e-8        # floor used by the solvers


class DomainError(ValueError):
    """Raised when an argument falls outside the domain of a q-function."""

    def __init__(self, message: str, value=None, bound=None):
        super().__init__(message)
        self.value = value
        self.bound = bound


def _check_q(q: float) -> float:
    q = float(q)
    if not np.isfinite(q) or q <= 0.0:
        raise DomainError(f"q must be a positive real, got {q!r}", value=q, bound=0.0)
    return q


def _first_bad(x: np.ndarray, bad: np.ndarray):
    idx = np.flatnonzero(np.ravel(bad))[0]
    return float(np.ravel(x)[idx])


def q_exp(x, q: float):
    """q-exponential. Raises DomainError outside its domain.

    For 0<q<1 the domain is x >= -1/(1-q) (the value is 0 at the edge).
    For q>1 it is x < 1/(q-1); bases closer than DOMAIN_EPS to zero are
    rejected because the negative power would overflow.
    """
    q = _check_q(q)
    xa = np.asarray(x, dtype=float)
    d = 1.0 - q
    if abs(d) < NEAR_ONE:
        # exp(ln(1+dx)/d) expanded to second order in d
        out = np.exp(xa - 0.5 * d * xa**2 + d * d * xa**3 / 3.0)
        return out if out.ndim else float(out)
    base = 1.0 + d * xa
    if d > 0:
        bad = ~(base >= 0.0)
        if np.any(bad):
            v = _first_bad(xa, bad)
            raise DomainError(
                f"q_exp: x={v!r} below domain bound {-1.0 / d!r} for q={q}",
                value=v, bound=-1.0 / d)
        out = base ** (1.0 / d)
    else:
        bad = ~(base >= DOMAIN_EPS)
        if np.any(bad):
            v = _first_bad(xa, bad)
            raise DomainError(
                f"q_exp: x={v!r} not below domain bound {-1.0 / d!r} for q={q}",
                value=v, bound=-1.0 / d)
        out = base ** (1.0 / d)
    return out if out.ndim else float(out)


def q_ln(x, q: float):
    """q-logarithm, the inverse of q_exp on (0, inf)."""
    q = _check_q(q)
    xa = np.asarray(x, dtype=float)
    d = 1.0 - q
    if d > 0:
        bad = ~(xa >= 0.0)
    else:
        bad = ~(xa > 0.0)
    if np.any(bad):
        v = _first_bad(xa, bad)
        raise DomainError(f"q_ln: argument {v!r} outside domain for q={q}", value=v, bound=0.0)
    if abs(d) < NEAR_ONE:
        with np.errstate(divide="ignore"):
            lx = np.log(xa)
        out = lx + 0.5 * d * lx**2 + d * d * lx**3 / 6.0
    else:
        with np.errstate(divide="ignore"):
            out = np.expm1(d * np.log(xa)) / d   # x = 0 (q<1) gives -1/d
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LambdaDomain:
    """Positivity domain of mu as an open interval (lower, upper)."""

    q: float
    gamma: float
    lower: float
    upper: float

    @classmethod
    def of(cls, q: float, gamma: float) -> "LambdaDomain":
        d = 1.0 - q
        if d == 0.0:
            return cls(q, gamma, -np.inf, np.inf)
        edge = 1.0 / (d * gamma)
        if d > 0:
            return cls(q, gamma, -np.inf, edge)
        return cls(q, gamma, edge, np.inf)

    def contains(self, y):
        y = np.asarray(y, dtype=float)
        return (y > self.lower) & (y < self.upper)


@dataclass(frozen=True)
class QGammaParams:
    q: float
    gamma: float

    def __post_init__(self):
        q, g = float(self.q), float(self.gamma)
        if not np.isfinite(q) or q <= 0.0:
            raise DomainError(f"q must satisfy q > 0, got {q!r}", value=q)
        if q == 1.0:
            raise DomainError("q = 1 is excluded: the pricing principle requires q != 1 "
                              "(use q close to 1 for the entropic limit)", value=q)
        if not np.isfinite(g) or g <= 0.0:
            raise DomainError(f"gamma must satisfy gamma > 0, got {g!r}", value=g)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "gamma", g)

    @property
    def near_one(self) -> bool:
        return abs(self.q - 1.0) < NEAR_ONE

    @property
    def domain(self) -> LambdaDomain:
        return LambdaDomain.of(self.q, self.gamma)

    def with_gamma(self, gamma: float) -> "QGammaParams":
        return QGammaParams(self.q, gamma)


def _mu_raw(y, params: QGammaParams):
    return (1.0 - (1.0 - params.q) * params.gamma * np.asarray(y, dtype=float)) / params.q


def mu(y, params: QGammaParams):
    """mu(y) = (1 - (1-q) gamma y)/q, defined on the domain Lambda."""
    ya = np.asarray(y, dtype=float)
    dom = params.domain
    ok = dom.contains(ya)
    if not np.all(ok):
        v = _first_bad(ya, ~ok)
        bound = dom.upper if params.q < 1 else dom.lower
        raise DomainError(f"mu: y={v!r} outside Lambda (boundary {bound!r}) for "
                          f"q={params.q}, gamma={params.gamma}", value=v, bound=bound)
    out = _mu_raw(ya, params)
    return out if out.ndim else float(out)


def driver_f(y, params: QGammaParams):
    """Quadratic-driver coefficient gamma / (2 mu(y))."""
    out = params.gamma / (2.0 * np.asarray(mu(y, params)))
    return out if np.ndim(out) else float(out)
