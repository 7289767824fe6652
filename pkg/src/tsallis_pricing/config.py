"""Scenario configuration: YAML file, strict schema, errors with line and field context."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bsde import BasisConfig, Claim, PDEMesh, constant, digital_s, digital_w, digital_wperp
from .bsde import expression_claim, smooth_mixed
from .bsde.claims import ClaimError, check_admissible, clamped_linear_s
from .market import MarketModel, TimeGrid
from .qcalc import QGammaParams


class ConfigError(ValueError):
    def __init__(self, message: str, field_path: str = "", line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_path:
            where.append(f"field '{field_path}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.field_path = field_path
        self.line = line


# ---------------------------------------------------------------------------
# YAML with line numbers
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    value: object
    line: int


def _convert(node) -> _Node:
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", key, k.start_mark.line + 1)
            out[key] = _convert(v)
        return _Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_convert(v) for v in node.value], line)
    return _Node(yaml.safe_load(yaml.serialize(node)), line)


def _parse(text: str) -> _Node:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from None
    if root is None:
        raise ConfigError("empty configuration")
    return _convert(root)


class _Reader:
    """Typed access to one mapping block; unknown keys are rejected on ``done``."""

    def __init__(self, node: _Node, path: str):
        if not isinstance(node.value, dict):
            raise ConfigError("expected a mapping", path, node.line)
        self.node, self.path, self.used = node, path, set()

    def _where(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key) -> bool:
        return key in self.node.value

    def raw(self, key) -> _Node | None:
        self.used.add(key)
        return self.node.value.get(key)

    def error(self, key, msg):
        n = self.node.value.get(key)
        return ConfigError(msg, self._where(key), n.line if n is not None else self.node.line)

    def get(self, key, kind, default=None, *, required=False, lo=None, hi=None, lo_open=False,
            choices=None):
        n = self.raw(key)
        if n is None or n.value is None:
            if required:
                raise ConfigError("required field is missing", self._where(key), self.node.line)
            return default
        v = n.value
        if kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise self.error(key, f"expected a number, got {v!r}")
            v = float(v)
            if not np.isfinite(v):
                raise self.error(key, "must be finite")
        elif kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                raise self.error(key, f"expected an integer, got {v!r}")
        elif kind is bool:
            if not isinstance(v, bool):
                raise self.error(key, f"expected true/false, got {v!r}")
        elif kind is str:
            if not isinstance(v, str):
                raise self.error(key, f"expected a string, got {v!r}")
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise self.error(key, f"must be {'>' if lo_open else '>='} {lo}, got {v!r}")
        if hi is not None and v > hi:
            raise self.error(key, f"must be <= {hi}, got {v!r}")
        if choices is not None and v not in choices:
            raise self.error(key, f"must be one of {list(choices)}, got {v!r}")
        return v

    def numbers(self, key, default=None, *, lo=None, lo_open=False):
        n = self.raw(key)
        if n is None:
            return default
        items = n.value if isinstance(n.value, list) else [n]
        out = []
        for it in items:
            v = it.value
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
                raise ConfigError(f"expected a number, got {v!r}", self._where(key), it.line)
            if lo is not None and (v <= lo if lo_open else v < lo):
                raise ConfigError(f"must be {'>' if lo_open else '>='} {lo}, got {v!r}",
                                  self._where(key), it.line)
            out.append(float(v))
        if not out:
            raise ConfigError("empty list", self._where(key), n.line)
        return out

    def block(self, key, required=False) -> "_Reader | None":
        n = self.raw(key)
        if n is None:
            if required:
                raise ConfigError("required block is missing", self._where(key), self.node.line)
            return None
        return _Reader(n, self._where(key))

    def done(self):
        extra = sorted(set(self.node.value) - self.used)
        if extra:
            k = extra[0]
            raise ConfigError(f"unknown key {k!r}", self._where(k), self.node.value[k].line)


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

LAMBDA_FUNCTIONS = ("constant", "tanh_w", "linear_t")


@dataclass
class Numerics:
    N: int = 100_000
    K: int = 200
    grid: str = "uniform"
    seed: int = 0
    threads: int = 1
    mesh: PDEMesh = field(default_factory=PDEMesh)
    basis: BasisConfig = field(default_factory=BasisConfig)
    scheme: str = "auto"
    M: int = 256
    n_outer: int = 2000


@dataclass
class ScenarioConfig:
    model: MarketModel
    q: float
    gammas: list[float]
    claim_spec: dict
    numerics: Numerics
    outputs: dict
    entropy: dict
    dual: dict
    sweep: dict
    properties: dict
    source: str = ""

    @property
    def params(self) -> QGammaParams:
        return QGammaParams(self.q, self.gammas[0])

    def grid(self) -> TimeGrid:
        T, K = self.model.T, self.numerics.K
        return TimeGrid.graded(T, K) if self.numerics.grid == "graded" else TimeGrid.uniform(T, K)

    def claim(self) -> Claim:
        return build_claim(self.claim_spec, self.model, self.grid())


def _lambda(rd: _Reader, m: int):
    node = rd.raw("lambda")
    if node is None or node.value is None:
        return 0.0, None, False
    v = node.value
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v), None, False
    if isinstance(v, list):
        vals = [it.value for it in v]
        if len(vals) != m or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vals):
            raise ConfigError(f"expected {m} numbers", f"{rd.path}.lambda", node.line)
        return np.array(vals, dtype=float), None, False
    sub = _Reader(node, f"{rd.path}.lambda")
    name = sub.get("name", str, required=True, choices=LAMBDA_FUNCTIONS)
    if name == "constant":
        val = sub.get("value", float, required=True)
        sub.done()
        return val, None, False
    if name == "tanh_w":
        a = sub.get("scale", float, required=True)
        sub.done()
        return (lambda t, w, _a=a: _a * np.tanh(w)), abs(a) * np.sqrt(m), True
    a0 = sub.get("start", float, required=True)
    a1 = sub.get("end", float, required=True)
    sub.done()
    return None, (a0, a1), False


def _market(rd: _Reader) -> MarketModel:
    m = rd.get("m", int, 1, lo=1, hi=3)
    n = rd.get("n", int, 1, lo=1, hi=3)
    T = rd.get("T", float, 1.0, lo=0.0, lo_open=True)
    s0 = rd.get("S0", float, 0.0)
    lam, extra, state_dep = _lambda(rd, m)
    rd.done()
    if lam is None:   # linear in time
        a0, a1 = extra
        lam_fn = lambda t, w, _a=a0, _b=a1, _T=T: np.full(w.shape, _a + (_b - _a) * t / _T)
        return MarketModel(m, n, T, lam_fn, max(abs(a0), abs(a1)) * np.sqrt(m), s0)
    if callable(lam):
        return MarketModel(m, n, T, lam, extra, s0, state_dependent=state_dep)
    return MarketModel(m, n, T, lam, None, s0)


CLAIMS = ("constant", "digital_w", "digital_wperp", "digital_s", "smooth_mixed", "clamped_linear_s",
          "expression")


def _claim_spec(rd: _Reader) -> dict:
    name = rd.get("name", str, required=True, choices=CLAIMS)
    spec = {"name": name}
    if name == "constant":
        spec["value"] = rd.get("value", float, 0.0)
    elif name in ("digital_w", "digital_wperp"):
        spec["scale"] = rd.get("scale", float, 1.0)
        spec["strike"] = rd.get("strike", float, 0.0)
    elif name == "digital_s":
        spec["scale"] = rd.get("scale", float, 1.0)
    elif name == "smooth_mixed":
        for k, d in (("a", 0.2), ("b", 0.2), ("c", 0.1), ("level", 0.5)):
            spec[k] = rd.get(k, float, d)
    elif name == "clamped_linear_s":
        for k, d in (("lo", -1.0), ("hi", 1.0), ("slope", 0.5)):
            spec[k] = rd.get(k, float, d)
    else:
        spec["expr"] = rd.get("expr", str, required=True)
        try:
            expression_claim(spec["expr"])
        except ClaimError as exc:
            raise rd.error("expr", str(exc)) from None
    rd.done()
    return spec


def build_claim(spec: dict, model: MarketModel, grid: TimeGrid) -> Claim:
    name = spec["name"]
    if name == "constant":
        return constant(spec["value"])
    if name == "digital_w":
        return digital_w(spec["scale"], spec["strike"])
    if name == "digital_wperp":
        return digital_wperp(spec["scale"], spec["strike"])
    if name == "digital_s":
        return digital_s(model, grid, spec["scale"])
    if name == "smooth_mixed":
        return smooth_mixed(spec["a"], spec["b"], spec["c"], spec["level"])
    if name == "clamped_linear_s":
        return clamped_linear_s(model, grid, spec["lo"], spec["hi"], spec["slope"])
    return expression_claim(spec["expr"])


def _numerics(rd: _Reader | None) -> Numerics:
    nm = Numerics()
    if rd is None:
        return nm
    nm.N = rd.get("N", int, nm.N, lo=2, hi=10_000_000)
    nm.K = rd.get("K", int, nm.K, lo=1, hi=100_000)
    nm.grid = rd.get("grid", str, nm.grid, choices=("uniform", "graded"))
    nm.seed = rd.get("seed", int, nm.seed, lo=0, hi=2 ** 64 - 1)
    nm.threads = rd.get("threads", int, nm.threads, lo=1, hi=1024)
    nm.scheme = rd.get("scheme", str, nm.scheme, choices=("auto", "closed_form", "pde", "lsmc"))
    nm.M = rd.get("M", int, nm.M, lo=2)
    nm.n_outer = rd.get("n_outer", int, nm.n_outer, lo=1)
    mesh = rd.block("mesh")
    if mesh is not None:
        nm.mesh = PDEMesh(mesh.get("n_space", int, 201, lo=7, hi=4001),
                          mesh.get("L", float, None, lo=0.0, lo_open=True),
                          mesh.get("smoothing_cells", float, 2.0, lo=0.0))
        mesh.done()
    basis = rd.block("basis")
    if basis is not None:
        nm.basis = BasisConfig(basis.get("degree", int, 3, lo=1, hi=6),
                               basis.get("payoff_features", bool, True),
                               basis.get("feature_powers", int, 3, lo=1, hi=6),
                               basis.get("ridge", float, 1e-8, lo=0.0))
        basis.done()
    rd.done()
    return nm


def _simple_block(rd: _Reader | None, fields: dict) -> dict:
    """fields: key -> (kind, default, extra kwargs); kind 'numbers' for lists."""
    out = {}
    for key, (kind, default, kw) in fields.items():
        if rd is None:
            out[key] = default
        elif kind == "numbers":
            out[key] = rd.numbers(key, default, **kw)
        else:
            out[key] = rd.get(key, kind, default, **kw)
    if rd is not None:
        rd.done()
    return out


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from None
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    root = _Reader(_parse(text), "")
    model = _market(root.block("market", required=True))
    prm = root.block("params", required=True)
    q = prm.get("q", float, required=True, lo=0.0, lo_open=True)
    gammas = prm.numbers("gamma", [1.0], lo=0.0, lo_open=True)
    prm.done()
    try:
        for g in gammas:
            QGammaParams(q, g)
    except ValueError as exc:
        raise prm.error("q", str(exc)) from None
    claim_spec = _claim_spec(root.block("claim", required=True))
    numerics = _numerics(root.block("numerics"))
    outputs = _simple_block(root.block("outputs"), {"dir": (str, "out", {})})
    entropy = _simple_block(root.block("entropy"), {
        "lambda": (float, None, {}), "alpha": (float, 0.8, {}),
        "qs": ("numbers", [0.5, 2.0], {"lo": 0.0, "lo_open": True}),
        "kl_delta": (float, 0.01, {"lo": 0.0, "lo_open": True, "hi": 0.1}),
        "t_fractions": ("numbers", [0.25, 0.5], {"lo": 0.0})})
    dual = _simple_block(root.block("dual"), {
        "families": (str, "problem1,problem2", {}),
        "grid_lo": (float, -2.0, {}), "grid_hi": (float, 2.0, {}),
        "grid_n": (int, 21, {"lo": 1})})
    for fam in dual["families"].split(","):
        if fam.strip() not in ("problem1", "problem2", "ce"):
            raise ConfigError(f"unknown dual family {fam.strip()!r}", "dual.families")
    sweep = _simple_block(root.block("sweep"), {
        "gammas": ("numbers", [0.01, 0.1, 1.0, 10.0, 100.0], {"lo": 0.0, "lo_open": True})})
    props = _simple_block(root.block("properties"), {
        "qs": ("numbers", [0.5, 2.0], {"lo": 0.0, "lo_open": True}),
        "cash": (float, 0.2, {})})
    root.done()
    cfg = ScenarioConfig(model, q, gammas, claim_spec, numerics, outputs, entropy, dual, sweep,
                         props, source)
    try:
        claim = cfg.claim()
        for g in gammas:
            check_admissible(claim, QGammaParams(q, g))
    except (ClaimError, ValueError) as exc:
        raise ConfigError(str(exc), "claim") from None
    return cfg
