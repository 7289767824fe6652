"""Command line front end: ``tsallis-price {price,entropy,dual,sweep,properties} --config FILE``.

Reports are deterministic for a fixed configuration and seed; run metadata
(timestamps, timings, versions) goes to a separate ``*_metadata.json`` file.
Exit status: 0 when every enabled check passed, 1 when a check failed (or a
warning under ``--strict``), 2 on configuration or domain errors.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bsde import AdmissibilityError, FixedPointError, PicardError, RegressionError
from .config import ConfigError, ScenarioConfig, load_config
from .entropy import (closed_form_tsallis, kl_limit_check, submartingale_check, tsallis_definitional,
                      tsallis_integral, write_entropy_csv)
from .market import stochastic_exponential
from .pricing import (Check, PricingContext, candidate_grid, dual_report, dumps, gamma_sweep, price,
                      property_suite, seller_price, tolerance)
from .qcalc import DomainError, QGammaParams

log = logging.getLogger("tsallis_pricing")

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


def _context(cfg: ScenarioConfig) -> PricingContext:
    nm = cfg.numerics
    return PricingContext.build(cfg.model, nm.N, nm.K, nm.seed, nm.grid == "graded", nm.threads,
                                nm.mesh, nm.basis)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _write(path: Path, text: str) -> None:
    path.write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands; each returns (report dict, passed, warnings)
# ---------------------------------------------------------------------------

def run_price(cfg: ScenarioConfig, out: Path):
    ctx = _context(cfg)
    claim = cfg.claim()
    rep = price(claim, cfg.params, ctx, cfg.numerics.scheme)
    try:
        rep.seller = seller_price(claim, cfg.params, ctx, cfg.numerics.scheme)
        rep.checks.append(Check("F0 <= seller", rep.F0.value, "<=", rep.seller.value,
                                tolerance(rep.F0, rep.seller)))
    except AdmissibilityError as exc:
        rep.diagnostics["seller_skipped"] = str(exc)
    warnings = []
    if rep.diagnostics.get("clamp_warning"):
        warnings.append(f"LSMC clamp rate {rep.diagnostics['clamp_rate']:.3%} above 5%")
    d = rep.as_dict()
    _write(out / "price_report.json", dumps(d))
    return d, rep.passed, warnings


def run_entropy(cfg: ScenarioConfig, out: Path):
    ctx = _context(cfg)
    ens, model = ctx.ensemble, cfg.model
    e = cfg.entropy
    if e["lambda"] is not None:
        lam = e["lambda"]
    elif model.constant_lambda is not None:
        lam = float(model.constant_lambda[0])
    else:
        raise ConfigError("entropy checks need a constant lambda", "entropy.lambda")
    alpha = e["alpha"]
    lam_v = np.full(model.m, lam)
    alpha_v = np.full(model.n, alpha)
    c = float(lam_v @ lam_v + alpha_v @ alpha_v)
    T = model.T
    D = stochastic_exponential(ens, (-lam_v, alpha_v), source="Q", target="P")
    estimates, checks = [], []
    for q in e["qs"]:
        exact = closed_form_tsallis(c, T, q)
        de = tsallis_definitional(D, q)
        ie = tsallis_integral(ens, lam_v, alpha_v, q)
        estimates += [de, ie]
        comb = float(np.hypot(de.stderr, ie.stderr))
        checks += [{"name": f"definitional ~ closed form (q={q!r})", "passed": de.within(exact),
                    "estimate": de.value, "stderr": de.stderr, "target": exact},
                   {"name": f"integral ~ closed form (q={q!r})", "passed": ie.within(exact),
                    "estimate": ie.value, "stderr": ie.stderr, "target": exact},
                   {"name": f"routes agree (q={q!r})",
                    "passed": bool(abs(de.value - ie.value) <= 4 * comb + 1e-12),
                    "difference": de.value - ie.value, "combined_stderr": comb}]
    kl = kl_limit_check(ens, lam_v, alpha_v, e["kl_delta"])
    estimates += [kl.lower, kl.kl, kl.upper]
    checks.append({"name": f"KL bracket (delta={e['kl_delta']!r})", "passed": kl.passed,
                   "H_lower": kl.lower.value, "H_1": kl.kl.value, "H_upper": kl.upper.value,
                   "kl_exact": kl.kl_exact})
    K = ens.grid.K
    for frac in e["t_fractions"]:
        k = min(K, int(round(frac * K)))
        for q in e["qs"]:
            sm = submartingale_check(ens, lam_v, alpha_v, q, k, cfg.numerics.M, cfg.numerics.n_outer)
            checks.append({"name": f"submartingale (q={q!r}, t={sm.t!r})", "passed": sm.passed,
                           "violations": sm.n_violations, "paths": sm.n_paths, "fraction": sm.fraction})
    write_entropy_csv(estimates, out / "entropy.csv")
    passed = all(ch["passed"] for ch in checks)
    d = {"c": c, "T": T, "lambda": lam, "alpha": alpha, "checks": checks, "passed": passed}
    _write(out / "entropy_report.json", dumps(d))
    return d, passed, []


def run_dual(cfg: ScenarioConfig, out: Path):
    ctx = _context(cfg)
    dd = cfg.dual
    fams = tuple(f.strip() for f in dd["families"].split(","))
    rep = dual_report(cfg.claim(), cfg.params, ctx, fams,
                      candidate_grid(dd["grid_lo"], dd["grid_hi"], dd["grid_n"]))
    d = rep.as_dict()
    _write(out / "dual_report.json", dumps(d))
    return d, rep.passed, []


def run_sweep(cfg: ScenarioConfig, out: Path):
    ctx = _context(cfg)
    rep = gamma_sweep(cfg.claim(), cfg.q, cfg.sweep["gammas"], ctx, cfg.numerics.scheme)
    _write_csv(out / "sweep.csv", rep.CSV_HEADER, rep.rows())
    d = rep.as_dict()
    _write(out / "sweep_report.json", dumps(d))
    return d, rep.passed, []


def run_properties(cfg: ScenarioConfig, out: Path):
    ctx = _context(cfg)
    plist = [QGammaParams(q, cfg.gammas[0]) for q in cfg.properties["qs"]]
    mat = property_suite(plist, ctx, cfg.properties["cash"])
    rows = [tuple(r.as_dict()[k] for k in mat.CSV_HEADER) for r in mat.rows]
    _write_csv(out / "properties.csv", mat.CSV_HEADER, rows)
    d = mat.as_dict()
    _write(out / "properties.json", dumps(d))
    return d, mat.passed, []


COMMANDS = {"price": run_price, "entropy": run_entropy, "dual": run_dual, "sweep": run_sweep,
            "properties": run_properties}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsallis-price",
                                description="Tsallis-entropy pricing of bounded claims in an "
                                            "incomplete Brownian market.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__ or name)
        sp.add_argument("--config", required=True, help="scenario YAML file")
        sp.add_argument("--seed", type=int, help="override numerics.seed (unsigned 64-bit)")
        sp.add_argument("--out", help="output directory (overrides outputs.dir)")
        sp.add_argument("--threads", type=int, help="worker threads; never changes results")
        sp.add_argument("--strict", action="store_true", help="treat warnings as failures")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer", "--seed")
            cfg.numerics.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads must be >= 1", "--threads")
            cfg.numerics.threads = args.threads
        out = Path(args.out or cfg.outputs["dir"])
        out.mkdir(parents=True, exist_ok=True)
        report, passed, warnings = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (DomainError, PicardError, RegressionError, FixedPointError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for w in warnings:
        log.warning(w)
    meta = {"command": args.command, "config": str(args.config), "seed": cfg.numerics.seed,
            "threads": cfg.numerics.threads, "strict": args.strict, "version": __version__,
            "python": platform.python_version(), "numpy": np.__version__,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "elapsed_seconds": time.perf_counter() - started, "warnings": warnings,
            "passed": passed}
    _write(out / f"{args.command}_metadata.json", json.dumps(meta, sort_keys=True, indent=2))
    ok = passed and not (args.strict and warnings)
    print(f"{args.command}: {'PASS' if ok else 'FAIL'} -> {out}")
    return EXIT_OK if ok else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
