"""Bounded terminal claims xi = g(W_T, W_perp_T) and their admissibility."""
from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from ..qcalc import DomainError, QGammaParams, q_exp

HEDGE_CLASSES = ("attainable", "unhedged", "general")

Payoff = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
# heat(w, p, tau) -> (h, dh/dw, dh/dp): payoff smoothed by a driftless Brownian step of variance tau
Heat = Callable[[np.ndarray, np.ndarray, float], tuple]


class ClaimError(ValueError):
    pass


class AdmissibilityError(DomainError):
    pass


def ramp_indicator(x: np.ndarray, width: float = 0.0) -> np.ndarray:
    """1{x > 0}; with width > 0 a linear ramp over [-width/2, width/2]."""
    x = np.asarray(x, dtype=float)
    if width <= 0.0:
        return (x > 0.0).astype(float)
    return np.clip(x / width + 0.5, 0.0, 1.0)


def _cols(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


@dataclass(frozen=True, eq=False)
class Claim:
    """Terminal payoff with declared bounds lo <= xi <= hi.

    ``payoff(w, p, smoothing)`` takes W_T (N, m) and W_perp_T (N, n); a positive
    ``smoothing`` replaces indicator jumps by ramps of that width.
    """

    name: str
    payoff: Payoff
    lo: float
    hi: float
    hedge_class: str = "general"
    discontinuous: bool = False
    heat: Heat | None = None

    def __post_init__(self):
        if self.hedge_class not in HEDGE_CLASSES:
            raise ClaimError(f"unknown hedge class {self.hedge_class!r}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo > self.hi:
            raise ClaimError(f"claim {self.name!r}: invalid bounds ({self.lo}, {self.hi})")

    @property
    def range(self) -> float:
        return float(self.hi - self.lo)

    def __call__(self, w, p, smoothing: float = 0.0, check: bool = True) -> np.ndarray:
        w, p = _cols(w), _cols(p)
        out = np.broadcast_to(np.asarray(self.payoff(w, p, smoothing), dtype=float), (w.shape[0],))
        if check:
            slack = 1e-12 * max(1.0, abs(self.lo), abs(self.hi))
            if np.any(out < self.lo - slack) or np.any(out > self.hi + slack):
                raise ClaimError(f"claim {self.name!r} left its declared bounds "
                                 f"[{self.lo}, {self.hi}]")
        return np.array(out)

    # mechanically derived transforms -----------------------------------
    def scaled(self, kappa: float) -> "Claim":
        lo, hi = sorted((kappa * self.lo, kappa * self.hi))
        f = self.payoff
        return Claim(f"{kappa!r}*{self.name}", lambda w, p, s: kappa * f(w, p, s), lo, hi,
                     self.hedge_class, self.discontinuous, _heat_affine(self.heat, kappa, 0.0))

    def shifted(self, c: float) -> "Claim":
        f = self.payoff
        return Claim(f"{self.name}+{c!r}", lambda w, p, s: f(w, p, s) + c, self.lo + c, self.hi + c,
                     self.hedge_class, self.discontinuous, _heat_affine(self.heat, 1.0, c))

    def negated(self) -> "Claim":
        f = self.payoff
        return Claim(f"-{self.name}", lambda w, p, s: -f(w, p, s), -self.hi, -self.lo,
                     self.hedge_class, self.discontinuous, _heat_affine(self.heat, -1.0, 0.0))

    def mix(self, other: "Claim", kappa: float) -> "Claim":
        """kappa * self + (1 - kappa) * other."""
        f, g = self.payoff, other.payoff
        if self.range == 0:
            hc = other.hedge_class
        elif other.range == 0 or self.hedge_class == other.hedge_class:
            hc = self.hedge_class
        else:
            hc = "general"
        heat = None
        if self.heat is not None and other.heat is not None:
            ha, hb = self.heat, other.heat

            def mixed_heat(w, p, tau):
                a, b = ha(w, p, tau), hb(w, p, tau)
                return tuple(kappa * x + (1 - kappa) * y for x, y in zip(a, b))
            heat = mixed_heat
        lo1, hi1 = sorted((kappa * self.lo, kappa * self.hi))
        lo2, hi2 = sorted(((1 - kappa) * other.lo, (1 - kappa) * other.hi))
        return Claim(f"{kappa!r}*{self.name}+{1 - kappa!r}*{other.name}",
                     lambda w, p, s: kappa * f(w, p, s) + (1 - kappa) * g(w, p, s),
                     lo1 + lo2, hi1 + hi2, hc, self.discontinuous or other.discontinuous, heat)


def _heat_affine(heat: Heat | None, a: float, b: float) -> Heat | None:
    if heat is None:
        return None

    def out(w, p, tau):
        h, hw, hp = heat(w, p, tau)
        return a * h + b, a * hw, a * hp
    return out


def _digital_heat(scale: float, strike: float, coord: str) -> Heat:
    def heat(w, p, tau):
        x = (p if coord == "p" else w)[:, 0] - strike
        if tau <= 0.0:
            h = (x > 0).astype(float)
            d = np.zeros_like(x)
        else:
            s = np.sqrt(tau)
            h = ndtr(x / s)
            d = np.exp(-0.5 * (x / s) ** 2) / (s * np.sqrt(2 * np.pi))
        z = np.zeros_like(x)
        return (scale * h, z, scale * d) if coord == "p" else (scale * h, scale * d, z)
    return heat


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def constant(c: float = 0.0) -> Claim:
    c = float(c)
    return Claim(f"constant({c!r})", lambda w, p, s: np.full(w.shape[0], c), c, c, "attainable",
                 heat=lambda w, p, tau: (np.full(w.shape[0], c), np.zeros(w.shape[0]), np.zeros(w.shape[0])))


def digital_wperp(scale: float = 1.0, strike: float = 0.0) -> Claim:
    """scale * 1{W_perp_T > strike} (first orthogonal coordinate)."""
    lo, hi = sorted((0.0, float(scale)))
    return Claim(f"digital_wperp({scale!r},{strike!r})",
                 lambda w, p, s: scale * ramp_indicator(p[:, 0] - strike, s),
                 lo, hi, "unhedged", True, _digital_heat(scale, strike, "p"))


def digital_w(scale: float = 1.0, strike: float = 0.0) -> Claim:
    """scale * 1{W_T > strike} (first traded coordinate)."""
    lo, hi = sorted((0.0, float(scale)))
    return Claim(f"digital_w({scale!r},{strike!r})",
                 lambda w, p, s: scale * ramp_indicator(w[:, 0] - strike, s),
                 lo, hi, "attainable", True, _digital_heat(scale, strike, "w"))


def digital_s(model, grid, scale: float = 1.0) -> Claim:
    """scale * 1{S_T > S_0}, i.e. W_T > -int lambda dt (time-only drift)."""
    shift = float(model.integrated_drift(grid)[0])
    c = digital_w(scale, -shift)
    return Claim(f"digital_s({scale!r})", c.payoff, c.lo, c.hi, "attainable", True, c.heat)


def smooth_mixed(a: float = 0.2, b: float = 0.2, c: float = 0.1, level: float = 0.5) -> Claim:
    """level + a tanh(W_T) + b tanh(W_perp_T) + c tanh(W_T) tanh(W_perp_T)."""
    amp = abs(a) + abs(b) + abs(c)

    def f(w, p, s):
        tw, tp = np.tanh(w[:, 0]), np.tanh(p[:, 0])
        return level + a * tw + b * tp + c * tw * tp
    return Claim(f"smooth_mixed({a!r},{b!r},{c!r},{level!r})", f, level - amp, level + amp, "general")


def clamped_linear_s(model, grid, lo: float = -1.0, hi: float = 1.0, slope: float = 0.5) -> Claim:
    """clamp(slope * (S_T - S_0), lo, hi): attainable, Lipschitz."""
    shift = float(model.integrated_drift(grid)[0])
    return Claim(f"clamped_linear_s({lo!r},{hi!r},{slope!r})",
                 lambda w, p, s: np.clip(slope * (w[:, 0] + shift), lo, hi), lo, hi, "attainable")


# ---------------------------------------------------------------------------
# bounded expression grammar
# ---------------------------------------------------------------------------

_NAMES = {"W": "w", "W_T": "w", "WP": "p", "Wperp": "p", "W_perp": "p", "Wperp_T": "p"}
_FUNCS = ("min", "max", "clamp", "ind")


def _interval_mul(a, b):
    vals = [x * y for x in a for y in b]
    vals = [0.0 if np.isnan(v) else v for v in vals]   # inf * 0 inside an interval product
    return (min(vals), max(vals))


class _Compiler:
    def __init__(self):
        self.uses_w = False
        self.uses_p = False
        self.has_ind = False

    def build(self, node):
        """Returns (fn(w, p, s) -> array, (lo, hi))."""
        if isinstance(node, ast.Expression):
            return self.build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            v = float(node.value)
            return (lambda w, p, s: np.full(w.shape[0], v)), (v, v)
        if isinstance(node, ast.Name):
            if node.id not in _NAMES:
                raise ClaimError(f"unknown name {node.id!r}; allowed: {sorted(_NAMES)}")
            if _NAMES[node.id] == "w":
                self.uses_w = True
                return (lambda w, p, s: w[:, 0]), (-np.inf, np.inf)
            self.uses_p = True
            return (lambda w, p, s: p[:, 0]), (-np.inf, np.inf)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            f, (lo, hi) = self.build(node.operand)
            if isinstance(node.op, ast.UAdd):
                return f, (lo, hi)
            return (lambda w, p, s: -f(w, p, s)), (-hi, -lo)
        if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult)):
            f, a = self.build(node.left)
            g, b = self.build(node.right)
            if isinstance(node.op, ast.Add):
                return (lambda w, p, s: f(w, p, s) + g(w, p, s)), (a[0] + b[0], a[1] + b[1])
            if isinstance(node.op, ast.Sub):
                return (lambda w, p, s: f(w, p, s) - g(w, p, s)), (a[0] - b[1], a[1] - b[0])
            return (lambda w, p, s: f(w, p, s) * g(w, p, s)), _interval_mul(a, b)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
                and not node.keywords:
            name = node.func.id
            parts = [self.build(a) for a in node.args]
            fs = [f for f, _ in parts]
            bs = [b for _, b in parts]
            if name in ("min", "max"):
                if len(parts) < 2:
                    raise ClaimError(f"{name} needs at least two arguments")
                red = np.minimum if name == "min" else np.maximum
                pick = min if name == "min" else max

                def fn(w, p, s, fs=fs, red=red):
                    out = fs[0](w, p, s)
                    for h in fs[1:]:
                        out = red(out, h(w, p, s))
                    return out
                return fn, (pick(b[0] for b in bs), pick(b[1] for b in bs))
            if name == "clamp":
                if len(parts) != 3:
                    raise ClaimError("clamp(x, lo, hi) takes three arguments")
                (lo_lo, lo_hi), (hi_lo, hi_hi) = bs[1], bs[2]
                if lo_lo != lo_hi or hi_lo != hi_hi:
                    raise ClaimError("clamp bounds must be constants")
                lo, hi = lo_lo, hi_lo
                if lo > hi:
                    raise ClaimError("clamp lower bound exceeds upper bound")
                x_lo, x_hi = bs[0]
                f0 = fs[0]
                return (lambda w, p, s: np.clip(f0(w, p, s), lo, hi)), (min(max(x_lo, lo), hi),
                                                                       max(min(x_hi, hi), lo))
            if len(parts) != 1:
                raise ClaimError("ind(x) takes one argument")
            self.has_ind = True
            f0 = fs[0]
            return (lambda w, p, s: ramp_indicator(f0(w, p, s), s)), (0.0, 1.0)
        raise ClaimError(f"unsupported syntax: {ast.dump(node)[:60]}")


def expression_claim(text: str, name: str | None = None) -> Claim:
    """Claim from a bounded expression.

    Grammar: numbers, ``W``/``W_T`` and ``WP``/``Wperp_T``, ``+ - *``,
    ``min(a, b, ...)``, ``max(a, b, ...)``, ``clamp(x, lo, hi)`` with constant
    bounds, and ``ind(x)`` = 1{x > 0} (ramped under smoothing).  Bounds follow by
    interval arithmetic; unbounded expressions are rejected.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ClaimError(f"cannot parse expression {text!r}: {exc.msg}") from None
    comp = _Compiler()
    fn, (lo, hi) = comp.build(tree)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ClaimError(f"expression {text!r} is not bounded (interval [{lo}, {hi}])")
    if comp.uses_w and comp.uses_p:
        hc = "general"
    elif comp.uses_p:
        hc = "unhedged"
    else:
        hc = "attainable"
    return Claim(name or text, fn, float(lo), float(hi), hc, comp.has_ind)


# ---------------------------------------------------------------------------
# admissibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Admissibility:
    m1: float   # min of q_exp(-gamma xi) over the bounds
    m2: float   # max
    lo: float
    hi: float


def check_admissible(claim: Claim, params: QGammaParams) -> Admissibility:
    """Requires -gamma [lo, hi] inside Dom(q_exp) with 0 < m1 <= m2 (bounds inside Lambda)."""
    dom = params.domain
    if not (dom.contains(claim.lo) and dom.contains(claim.hi)):
        raise AdmissibilityError(
            f"claim {claim.name!r} with bounds [{claim.lo}, {claim.hi}] is not admissible for "
            f"q={params.q}, gamma={params.gamma}: bounds must lie in ({dom.lower}, {dom.upper})",
            value=(claim.lo, claim.hi), bound=(dom.lower, dom.upper))
    e = q_exp(-params.gamma * np.array([claim.lo, claim.hi]), params.q)
    m1, m2 = float(e.min()), float(e.max())
    if not m1 > 0:
        raise AdmissibilityError(f"claim {claim.name!r}: q_exp(-gamma xi) reaches 0", value=m1)
    return Admissibility(m1, m2, claim.lo, claim.hi)
