"""Brownian market simulation, density processes and measure changes.

Coordinates.  An ensemble only stores standard Gaussian increments.  How
they are read depends on the measure being simulated:

* ``"P"``:     dW are P-increments, W = sum dW, W_perp = sum dW_perp.
* ``"Qmin"``:  dW are increments of W^{-lambda} = W + int lambda, which is
               Brownian under Q^min; the physical state is recovered by
               W_{k+1} = W_k + dW_k - lambda(t_k, W_k) dt_k.
* a perp drift theta turns dW_perp into Q^theta increments:
               W_perp_{k+1} = W_perp_k + dW_perp_k + theta_k dt_k.

Random numbers come from counter-based Philox streams.  Paths are split into
blocks of ``BLOCK_SIZE``; block b of seed s always has the same increments,
so results do not depend on N (prefix property) nor on the thread count.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

BLOCK_SIZE = 4096

Field = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class SimulationError(RuntimeError):
    pass


class LoadingError(SimulationError):
    """Non-finite loading; carries the offending path and step."""

    def __init__(self, message: str, path: int, step: int):
        super().__init__(message)
        self.path = path
        self.step = step


# ---------------------------------------------------------------------------
# time grid and model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TimeGrid:
    knots: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.knots, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("time grid needs at least two knots")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0.0):
            raise ValueError("time grid must start at 0 and be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "knots", t)

    @classmethod
    def uniform(cls, T: float, K: int) -> "TimeGrid":
        if K < 1 or T <= 0:
            raise ValueError("need K >= 1 and T > 0")
        t = np.linspace(0.0, T, K + 1)
        t[-1] = T
        return cls(t)

    @classmethod
    def graded(cls, T: float, K: int, power: float = 2.0) -> "TimeGrid":
        """Knots T(1 - (1 - k/K)^power): steps shrink towards maturity."""
        if K < 1 or T <= 0 or power < 1:
            raise ValueError("need K >= 1, T > 0 and power >= 1")
        u = np.arange(K + 1) / K
        t = T * (1.0 - (1.0 - u) ** power)
        t[0], t[-1] = 0.0, T
        return cls(t)

    @property
    def K(self) -> int:
        return self.knots.size - 1

    @property
    def T(self) -> float:
        return float(self.knots[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.knots)

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.knots - t)))
        if not np.isclose(self.knots[k], t, rtol=0, atol=1e-12 * max(1.0, self.T)):
            raise ValueError(f"t={t} is not a grid knot")
        return k

    def same_as(self, other: "TimeGrid") -> bool:
        return self.knots.shape == other.knots.shape and np.array_equal(self.knots, other.knots)

    def describe(self) -> dict:
        return {"K": self.K, "T": self.T}


def _as_vector(x, dim: int) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = np.full(dim, float(v))
    if v.shape != (dim,):
        raise ValueError(f"expected a scalar or a length-{dim} vector, got shape {v.shape}")
    return v


def as_field(spec, dim: int) -> Field:
    """Turn a constant (scalar / vector) or a callable into a field (t, w, p) -> (N, dim)."""
    if callable(spec):
        def fn(t, w, p, _s=spec):
            out = np.asarray(_s(t, w, p), dtype=float)
            if out.ndim == 1 and dim == 1 and out.shape[0] == w.shape[0]:
                out = out[:, None]
            return np.broadcast_to(out, (w.shape[0], dim))
        return fn
    v = _as_vector(spec, dim)

    def const(t, w, p, _v=v):
        return np.broadcast_to(_v, (w.shape[0], dim))
    const.constant = v  # type: ignore[attr-defined]
    return const


def field_constant(fn: Field):
    """The constant vector behind a field built from a constant, else None."""
    return getattr(fn, "constant", None)


@dataclass(frozen=True, eq=False)
class MarketModel:
    """S = S0 + int lambda(t, W) dt + W with W in R^m and n untraded directions.

    ``lam`` is a constant (scalar/vector) or a callable ``lam(t, w)`` with w of
    shape (N, m).  ``lambda_max`` bounds |lambda| and is checked on every
    evaluation during simulation.  ``state_dependent`` must be set for callables
    that read w; time-only drifts keep the attainable-claim shortcuts valid.
    """

    m: int = 1
    n: int = 1
    T: float = 1.0
    lam: object = 0.0
    lambda_max: float | None = None
    S0: object = 0.0
    state_dependent: bool = False

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("need m >= 1 and n >= 1")
        if not self.T > 0:
            raise ValueError("need T > 0")
        if callable(self.lam):
            if self.lambda_max is None:
                raise ValueError("a callable lambda needs a declared lambda_max")
        else:
            v = _as_vector(self.lam, self.m)
            object.__setattr__(self, "lam", v)
            if self.lambda_max is None:
                object.__setattr__(self, "lambda_max", float(np.linalg.norm(v)))
            elif np.linalg.norm(v) > self.lambda_max * (1 + 1e-12):
                raise ValueError("|lambda| exceeds lambda_max")
            object.__setattr__(self, "state_dependent", False)
        object.__setattr__(self, "S0", _as_vector(self.S0, self.m))

    @property
    def constant_lambda(self) -> np.ndarray | None:
        return None if callable(self.lam) else self.lam

    def drift(self, t: float, w: np.ndarray) -> np.ndarray:
        """lambda(t, w) as an (N, m) array, bound-checked."""
        if not callable(self.lam):
            return np.broadcast_to(self.lam, (w.shape[0], self.m))
        out = np.broadcast_to(np.asarray(self.lam(t, w), dtype=float), (w.shape[0], self.m))
        norms = np.sqrt(np.sum(out * out, axis=1))
        if not np.all(np.isfinite(norms)) or np.any(norms > self.lambda_max * (1 + 1e-12)):
            raise SimulationError(f"|lambda| exceeds declared bound {self.lambda_max} at t={t}")
        return out

    def drift_field(self) -> Field:
        return lambda t, w, p: self.drift(t, w)

    def integrated_drift(self, grid: TimeGrid) -> np.ndarray:
        """int_0^T lambda dt for a drift that does not read the state."""
        if self.state_dependent:
            raise ValueError("integrated drift is path dependent for state-dependent lambda")
        z = np.zeros((1, self.m))
        return sum(self.drift(t, z)[0] * h for t, h in zip(grid.knots[:-1], grid.dt))


# ---------------------------------------------------------------------------
# random increments
# ---------------------------------------------------------------------------

def _philox_key(seed: int, stream: tuple[int, ...]) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(s) for s in stream))
    return ss.generate_state(2, dtype=np.uint64)


def standard_normals(seed: int, stream: tuple[int, ...], block: int, shape) -> np.ndarray:
    """Standard normals of one (seed, stream, block) Philox substream."""
    counter = np.array([0, 0, 0, block], dtype=np.uint64)
    bg = np.random.Philox(key=_philox_key(seed, stream), counter=counter)
    return np.random.Generator(bg).standard_normal(shape)


@dataclass(eq=False)
class PathEnsemble:
    """N paths of (dW, dW_perp) increments on a grid, generated block-wise on demand."""

    seed: int
    N: int
    grid: TimeGrid
    m: int = 1
    n: int = 1
    threads: int = 1
    stream: tuple[int, ...] = ()
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need N >= 1")
        self.stream = tuple(self.stream)

    @property
    def n_blocks(self) -> int:
        return -(-self.N // self.block_size)

    def block_slice(self, b: int) -> slice:
        return slice(b * self.block_size, min(self.N, (b + 1) * self.block_size))

    def block(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        """Step-major increments of block b: arrays (K, nb, m) and (K, nb, n).

        A full block is always drawn, so the increments of a path do not
        depend on N.
        """
        sl = self.block_slice(b)
        nb = sl.stop - sl.start
        z = standard_normals(self.seed, self.stream, b, (self.grid.K, self.block_size, self.m + self.n))
        z = z[:, :nb]
        z *= np.sqrt(self.grid.dt)[:, None, None]
        return z[:, :, : self.m], z[:, :, self.m:]

    def map_blocks(self, fn: Callable[[int, np.ndarray, np.ndarray], object]) -> list:
        """fn(b, dW_b, dWp_b) over all blocks, results in block order."""
        def run(b):
            dW, dWp = self.block(b)
            return fn(b, dW, dWp)
        if self.threads > 1 and self.n_blocks > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                return list(ex.map(run, range(self.n_blocks)))
        return [run(b) for b in range(self.n_blocks)]

    def iter_blocks(self) -> Iterator[tuple[slice, np.ndarray, np.ndarray]]:
        for b in range(self.n_blocks):
            dW, dWp = self.block(b)
            yield self.block_slice(b), dW, dWp

    @cached_property
    def _increments(self) -> tuple[np.ndarray, np.ndarray]:
        parts = self.map_blocks(lambda b, dW, dWp: (dW, dWp))
        return (np.concatenate([p[0] for p in parts], axis=1).transpose(1, 0, 2),
                np.concatenate([p[1] for p in parts], axis=1).transpose(1, 0, 2))

    @property
    def dW(self) -> np.ndarray:
        """(N, K, m) view of all increments."""
        return self._increments[0]

    @property
    def dWperp(self) -> np.ndarray:
        return self._increments[1]

    def with_threads(self, threads: int) -> "PathEnsemble":
        return PathEnsemble(self.seed, self.N, self.grid, self.m, self.n, threads,
                            self.stream, self.block_size)

    def moment_zscores(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-step z-scores of the sample mean and variance of all increments."""
        z = np.concatenate([self.dW, self.dWperp], axis=2) / np.sqrt(self.grid.dt)[None, :, None]
        N = z.shape[0]
        mean_z = z.mean(axis=0) * np.sqrt(N)
        var_z = (np.mean(z * z, axis=0) - 1.0) / np.sqrt(2.0 / N)
        return mean_z, var_z

    def to_csv(self, path) -> None:
        """Debug dump: one row per (path, step) with all increments."""
        dW, dWp = self.dW, self.dWperp
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["path", "step"] + [f"dW{i}" for i in range(self.m)]
                        + [f"dWperp{j}" for j in range(self.n)])
            for i in range(self.N):
                for k in range(self.grid.K):
                    wr.writerow([i, k] + [repr(float(v)) for v in dW[i, k]]
                                + [repr(float(v)) for v in dWp[i, k]])


def simulate(model: MarketModel, grid: TimeGrid, N: int, seed: int, threads: int = 1) -> PathEnsemble:
    if not np.isclose(grid.T, model.T, rtol=1e-12, atol=0):
        raise ValueError(f"grid horizon {grid.T} differs from model horizon {model.T}")
    return PathEnsemble(seed=seed, N=N, grid=grid, m=model.m, n=model.n, threads=threads)


# ---------------------------------------------------------------------------
# measures and densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """Loadings of a candidate measure relative to Q^min.

    ``alpha`` loads on W_perp, the optional ``beta`` on W^{-lambda}; both are
    constants or callables (t, w, p) -> (N, dim) of the physical state.
    """

    alpha: object = 0.0
    beta: object | None = None
    label: str = ""

    @property
    def is_martingale_measure(self) -> bool:
        return self.beta is None


@dataclass(eq=False)
class DensityPaths:
    """log D on the grid (N, K+1); D itself via ``values``."""

    log_values: np.ndarray
    grid: TimeGrid
    source: str = "Q"
    target: str = "P"

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    @property
    def terminal(self) -> np.ndarray:
        return np.exp(self.log_values[:, -1])

    def terminal_power(self, power: float) -> np.ndarray:
        return np.exp(power * self.log_values[:, -1])

    @property
    def N(self) -> int:
        return self.log_values.shape[0]

    def martingale_check(self, nsig: float = 4.0) -> tuple[bool, float, float]:
        est, se = mean_se(self.terminal)
        return abs(est - 1.0) <= nsig * se + 1e-14, est, se


def mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


@dataclass
class BlockWalk:
    """Per-block output of ``walk``."""

    W: np.ndarray | None        # (nb, K+1, m) physical W state
    Wp: np.ndarray | None       # (nb, K+1, n)
    W_T: np.ndarray             # (nb, m)
    Wp_T: np.ndarray            # (nb, n)
    log_D: np.ndarray | None    # (nb, K+1)
    sq_loading: np.ndarray | None  # (nb, K) |theta_k|^2


def _check_finite(arr: np.ndarray, k: int, offset: int, what: str):
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        path = offset + int(bad[0])
        raise LoadingError(f"non-finite {what} on path {path} at step {k}", path=path, step=k)


def walk(model: MarketModel, grid: TimeGrid, dW: np.ndarray, dWp: np.ndarray, *,
         coords: str = "P", loadings: tuple[Field, Field] | None = None,
         perp_drift: Field | None = None, keep_paths: bool = False,
         start_index: int = 0, W0: np.ndarray | None = None, Wp0: np.ndarray | None = None,
         offset: int = 0) -> BlockWalk:
    """Advance the physical state along one block of step-major increments.

    ``loadings`` = (theta_w, theta_p) fields evaluated at the current state;
    when given, log D accumulates theta . dB - |theta|^2 dt / 2 with dB the
    increments as read in ``coords``.  ``start_index`` lets the increments
    cover steps start_index..start_index+len(dW)-1 (nested simulation and
    partial walks up to an intermediate time).
    """
    steps, nb = dW.shape[0], dW.shape[1]
    knots = grid.knots[start_index:start_index + steps + 1]
    dts = grid.dt[start_index:start_index + steps]
    if steps != dts.size:
        raise ValueError("increments do not match the grid")
    if coords not in ("P", "Qmin"):
        raise ValueError(f"unknown coordinates {coords!r}")
    w0 = np.zeros((nb, model.m)) if W0 is None else np.broadcast_to(W0, (nb, model.m)).astype(float)
    p0 = np.zeros((nb, model.n)) if Wp0 is None else np.broadcast_to(Wp0, (nb, model.n)).astype(float)
    dWs, dPs = dW, dWp
    lam_c = model.constant_lambda
    drifted = coords == "Qmin" and not (lam_c is not None and not np.any(lam_c))
    const_load = loadings is not None and all(field_constant(f) is not None for f in loadings)

    if (not drifted or lam_c is not None) and perp_drift is None and (loadings is None or const_load):
        # closed-form accumulation: no state feedback
        steps_w = dWs - lam_c[None, None, :] * dts[:, None, None] if drifted else dWs
        if not keep_paths and loadings is None:
            return BlockWalk(None, None, w0 + steps_w.sum(axis=0), p0 + dPs.sum(axis=0), None, None)
        Ws = np.concatenate([w0[None], w0[None] + np.cumsum(steps_w, axis=0)])
        Ps = np.concatenate([p0[None], p0[None] + np.cumsum(dPs, axis=0)])
        log_D = sq = None
        if loadings is not None:
            tw, tp = field_constant(loadings[0]), field_constant(loadings[1])
            c = float(tw @ tw + tp @ tp)
            inc = dWs @ tw + dPs @ tp - 0.5 * c * dts[:, None]
            log_D = np.zeros((nb, steps + 1))
            log_D[:, 1:] = np.cumsum(inc, axis=0).T
            sq = np.full((nb, steps), c)
        return BlockWalk(Ws.transpose(1, 0, 2) if keep_paths else None,
                         Ps.transpose(1, 0, 2) if keep_paths else None,
                         Ws[-1], Ps[-1], log_D, sq)

    w, p = w0, p0
    if keep_paths:
        Ws = np.empty((steps + 1, nb, model.m))
        Ps = np.empty((steps + 1, nb, model.n))
        Ws[0], Ps[0] = w, p
    log_Ds = sqs = None
    if loadings is not None:
        log_Ds = np.zeros((steps + 1, nb))
        sqs = np.empty((steps, nb))
    for k in range(steps):
        t, h = float(knots[k]), float(dts[k])
        if loadings is not None:
            tw = np.asarray(loadings[0](t, w, p), dtype=float)
            tp = np.asarray(loadings[1](t, w, p), dtype=float)
            s = np.einsum("ij,ij->i", tw, tw) + np.einsum("ij,ij->i", tp, tp)
            _check_finite(s, start_index + k, offset, "loading")
            sqs[k] = s
            log_Ds[k + 1] = log_Ds[k] + np.einsum("ij,ij->i", tw, dWs[k]) \
                + np.einsum("ij,ij->i", tp, dPs[k]) - 0.5 * h * s
        if perp_drift is not None:
            th = np.asarray(perp_drift(t, w, p), dtype=float)
            _check_finite(th, start_index + k, offset, "perp drift")
            p = p + dPs[k] + th * h
        else:
            p = p + dPs[k]
        if drifted:
            w = w + dWs[k] - model.drift(t, w) * h
        else:
            w = w + dWs[k]
        if keep_paths:
            Ws[k + 1], Ps[k + 1] = w, p
    return BlockWalk(Ws.transpose(1, 0, 2) if keep_paths else None,
                     Ps.transpose(1, 0, 2) if keep_paths else None, w, p,
                     None if log_Ds is None else np.ascontiguousarray(log_Ds.T),
                     None if sqs is None else np.ascontiguousarray(sqs.T))


def walk_ensemble(model: MarketModel, ensemble: PathEnsemble, **kw) -> list[BlockWalk]:
    return ensemble.map_blocks(
        lambda b, dW, dWp: walk(model, ensemble.grid, dW, dWp,
                                offset=ensemble.block_slice(b).start, **kw))


def _cat(parts: Sequence[BlockWalk], name: str) -> np.ndarray:
    return np.concatenate([getattr(p, name) for p in parts])


def _loading_pair(model: MarketModel, theta_w, theta_p) -> tuple[Field, Field]:
    return as_field(theta_w, model.m), as_field(theta_p, model.n)


def stochastic_exponential(ensemble: PathEnsemble, loadings, *, model: MarketModel | None = None,
                           coords: str = "P", source: str = "Q", target: str = "P") -> DensityPaths:
    """Log-Euler stochastic exponential E(theta . B)_t on the ensemble grid.

    ``loadings`` = (theta_w, theta_p); each a constant or a field (t, w, p).
    """
    model = model or MarketModel(ensemble.m, ensemble.n, ensemble.grid.T)
    pair = _loading_pair(model, *loadings)
    parts = walk_ensemble(model, ensemble, coords=coords, loadings=pair)
    return DensityPaths(_cat(parts, "log_D"), ensemble.grid, source, target)


def minimal_density(model: MarketModel, ensemble: PathEnsemble) -> DensityPaths:
    """dQ^min/dP = E(-lambda . W) along P-paths."""
    neg = lambda t, w, p: -model.drift(t, w)
    return stochastic_exponential(ensemble, (neg, 0.0), model=model, coords="P",
                                  source="Qmin", target="P")


def density_ratio(measure: MeasureSpec, ensemble: PathEnsemble,
                  model: MarketModel | None = None) -> DensityPaths:
    """dQ/dQ^min = E(beta . W^{-lambda} + alpha . W_perp) along Q^min-paths."""
    model = model or MarketModel(ensemble.m, ensemble.n, ensemble.grid.T)
    beta = 0.0 if measure.beta is None else measure.beta
    return stochastic_exponential(ensemble, (beta, measure.alpha), model=model, coords="Qmin",
                                  source=measure.label or "Q", target="Qmin")


def density_under_p(measure: MeasureSpec, ensemble: PathEnsemble, model: MarketModel) -> DensityPaths:
    """dQ/dP = E(-lambda . W + alpha . W_perp) along P-paths (martingale measures)."""
    if not measure.is_martingale_measure:
        raise ValueError("density relative to P is built for martingale measures only")
    neg = lambda t, w, p: -model.drift(t, w)
    return stochastic_exponential(ensemble, (neg, measure.alpha), model=model, coords="P",
                                  source=measure.label or "Q", target="P")


def reweighted_expectation(payoff: np.ndarray, density: DensityPaths, power: float = 1.0
                           ) -> tuple[float, float]:
    """Sample mean of D_T^power * payoff with its standard error."""
    payoff = np.asarray(payoff, dtype=float)
    if payoff.shape != (density.N,):
        raise ValueError(f"payoff has {payoff.shape} samples, density has {density.N}")
    if power == 0:
        return mean_se(payoff)
    return mean_se(density.terminal_power(power) * payoff)


def state_paths(model: MarketModel, ensemble: PathEnsemble, coords: str = "P",
                perp_drift=None) -> tuple[np.ndarray, np.ndarray]:
    """Physical (W, W_perp) paths, each (N, K+1, dim)."""
    pd = None if perp_drift is None else as_field(perp_drift, model.n)
    parts = walk_ensemble(model, ensemble, coords=coords, perp_drift=pd, keep_paths=True)
    return _cat(parts, "W"), _cat(parts, "Wp")


def terminal_state(model: MarketModel, ensemble: PathEnsemble, coords: str = "P",
                   perp_drift=None) -> tuple[np.ndarray, np.ndarray]:
    """Physical (W_T, W_perp_T), each (N, dim), without storing paths."""
    pd = None if perp_drift is None else as_field(perp_drift, model.n)
    parts = walk_ensemble(model, ensemble, coords=coords, perp_drift=pd)
    return _cat(parts, "W_T"), _cat(parts, "Wp_T")


def asset_paths(model: MarketModel, ensemble: PathEnsemble) -> np.ndarray:
    """S = S0 + int lambda dt + W on P-paths, Euler drift; shape (N, K+1, m)."""
    W, _ = state_paths(model, ensemble, "P")
    dts = ensemble.grid.dt
    drift = np.zeros_like(W)
    for k in range(ensemble.grid.K):
        drift[:, k + 1] = drift[:, k] + model.drift(float(ensemble.grid.knots[k]), W[:, k]) * dts[k]
    return model.S0[None, None, :] + drift + W
