"""Batch experiment runner.

    implicit-tc --config hedge.ini --seed 7 --workers 4 --out results/

Every run writes its CSV outputs, ``checks.csv`` (internal invariant checks)
and ``manifest.csv`` (config hash, seed, library versions and a SHA-256 of
every output file).  The exit status is 0 only if every check passed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ConfigIssue, ExperimentConfig, parse_config
from .continuous_limit import cost_convergence_suite, cost_process
from .diagnostics import (
    PROBE_HEADER,
    StrategyGenerator,
    arbitrage_probe,
    supermartingale_test,
    write_diagnostics,
)
from .hedging import (
    CallSpec,
    mollify_strategy,
    run_hedge_experiment,
    write_path_detail,
)
from .market_model import GBMParams, LinearSupplyCurve, SlopeParams, simulate_mid_gbm, simulate_mid_paths
from .partitions import Partition, SampledPath, make_random, quadratic_variation, thinned_levels
from .portfolio import decompose_costs, run_ledger, self_financing_residuals

log = logging.getLogger(__name__)

OUTPUT_ENV = "IMPLICIT_TC_OUTPUT_DIR"
CHECK_COLUMNS = ("check", "value", "threshold", "pass")


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


def _gbm(cfg: ExperimentConfig) -> GBMParams:
    m = cfg["market"]
    return GBMParams(m["mu_per_year"], m["sigma_per_sqrt_year"], m["m0_currency"])


def _slopes(cfg: ExperimentConfig) -> SlopeParams:
    m = cfg["market"]
    return SlopeParams(
        m["gamma_currency_per_share2"], m["delta_currency_per_share2"],
        m["gamma_ramp_currency_per_share2"], m["delta_ramp_currency_per_share2"],
    )


def _grid(cfg: ExperimentConfig) -> Partition:
    g = cfg["grid"]
    T, cells = g["horizon_years"], g["cells"]
    if g["kind"] == "random":
        return make_random(T, cells - 1, cfg.seed) if cells > 1 else Partition.uniform(T, 1)
    if g["kind"] == "dyadic" and cells & (cells - 1):
        raise ConfigError([_issue("grid.cells", f"dyadic grids need a power of two, got {cells}")])
    return Partition.uniform(T, cells)


def _issue(key, reason):
    return ConfigIssue(key, reason)


def _generator(cfg: ExperimentConfig) -> StrategyGenerator:
    s = cfg["strategy"]
    params = {
        "n_jumps": s["n_jumps"],
        "scale": s["scale_shares"],
        "jump_time": s["jump_time_years"],
        "jump": s["jump_shares"],
        "level": s["level_shares"],
        "mollify_n": s["mollify_n_per_year"],
        "liquidate": s["liquidate"],
    }
    return StrategyGenerator(s["family"], params, s["seed"])


def _write_checks(checks: Sequence[Check], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CHECK_COLUMNS)
        for c in checks:
            w.writerow([c.name, repr(float(c.value)), repr(float(c.threshold)), int(c.passed)])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, files: Sequence[str], cfg: ExperimentConfig) -> None:
    rows = [
        ("meta", "experiment", cfg.kind),
        ("meta", "config_sha256", hashlib.sha256(cfg.text.encode()).hexdigest()),
        ("meta", "seed", str(cfg.seed)),
        ("meta", "implicit_tc", __version__),
        ("meta", "python", platform.python_version()),
        ("meta", "numpy", np.__version__),
        ("meta", "scipy", scipy.__version__),
    ]
    rows += [("file", name, _sha256(out / name)) for name in files]
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "name", "value"])
        w.writerows(rows)


# ----------------------------------------------------------------------
# experiments; each returns (files written, checks)
# ----------------------------------------------------------------------


def _simulate(cfg, out, workers):
    grid = _grid(cfg)
    market = simulate_mid_gbm(_gbm(cfg), grid, cfg.seed, _slopes(cfg))
    market.to_csv(out / "market.csv")
    grid.to_csv(out / "partition.csv")
    qv = quadratic_variation(SampledPath(grid, np.log(market.mid)), thinned_levels(grid, cfg["grid"]["levels"]))
    qv.to_csv(out / "qv.csv")
    checks = [
        Check("mid_positive", float(np.min(market.mid)), 0.0, bool(np.all(market.mid > 0))),
        Check("qv_nonnegative", min(qv.estimates), 0.0, min(qv.estimates) >= 0),
    ]
    return ["market.csv", "partition.csv", "qv.csv"], checks


def _market_and_strategy(cfg):
    grid = _grid(cfg)
    market = simulate_mid_gbm(_gbm(cfg), grid, cfg.seed, _slopes(cfg))
    strategy = _generator(cfg).generate(grid, 0)
    return market, market.curve(), strategy


def _ledger(cfg, out, workers):
    market, curve, strategy = _market_and_strategy(cfg)
    ledger = run_ledger(curve, market, strategy, cfg["strategy"]["initial_value_currency"])
    dec = decompose_costs(ledger, curve, market)
    market.to_csv(out / "market.csv")
    ledger.to_csv(out / "ledger.csv")
    dec.to_csv(out / "costs.csv")
    sf = float(np.max(self_financing_residuals(curve, ledger), initial=0.0))
    checks = [
        Check("self_financing", sf, 1e-12, sf <= 1e-12),
        Check("decomposition_residual", dec.residual, 1e-10, dec.residual <= 1e-10),
    ]
    return ["market.csv", "ledger.csv", "costs.csv"], checks


def _cost_process(cfg, out, workers):
    market, curve, strategy = _market_and_strategy(cfg)
    seq = thinned_levels(market.grid, cfg["grid"]["levels"])
    cp = cost_process(curve, market, strategy, seq)
    cp.to_csv(out / "cost_process.csv")
    cp.levels.to_csv(out / "cost_levels.csv")
    # cost positivity rests on the slope conditions alone; a locked or
    # crossed book is reported but does not gate the run
    slope_bad = [v for v in cp.assumptions.violations if v.condition != "ask>bid"]
    crossed = len(cp.assumptions.violations) - len(slope_bad)
    if crossed:
        print(f"warning: ask > bid fails at {crossed} probed (t, y) points", file=sys.stderr)
    checks = [Check("monotone_curves", len(slope_bad), 0, not slope_bad)]
    if not slope_bad:
        checks += [
            Check("cost_nonnegative", float(np.min(cp.values)), -1e-12, cp.is_nonnegative()),
            Check("cost_nondecreasing", float(np.min(np.diff(cp.values), initial=0.0)), -1e-12, cp.is_nondecreasing()),
        ]
    return ["cost_process.csv", "cost_levels.csv"], checks


def _hedge(cfg, out, workers):
    grid = _grid(cfg)
    gbm = _gbm(cfg)
    h = cfg["hedge"]
    call = CallSpec(h["strike_currency"], grid.T, gbm.sigma)
    report, detail = run_hedge_experiment(
        call, _slopes(cfg), gbm, grid, h["n_paths"], h["mollify_n_per_year"],
        cfg.seed, workers=workers, return_paths=True,
    )
    report.to_csv(out / "hedge_report.csv")
    write_path_detail(detail, out / "hedge_paths.csv")
    print(f"hedge: {report.n_paths} paths in {report.runtime_seconds:.2f}s, "
          f"L2 error {report.l2_error:.6g} (price {report.option_price:.6g})")
    vals = [report.mean_terminal_value, report.mean_total_cost, report.l2_error]
    finite = bool(np.all(np.isfinite(vals)))
    checks = [
        Check("report_finite", float(finite), 1.0, finite),
        Check("l2_error_nonnegative", report.l2_error, 0.0, report.l2_error >= 0),
    ]
    return ["hedge_report.csv", "hedge_paths.csv"], checks


def _convergence(cfg, out, workers):
    market, curve, strategy = _market_and_strategy(cfg)
    ns = cfg["convergence"]["mollify_ns_per_year"]
    mollified = [mollify_strategy(strategy, n) for n in ns]
    levels = thinned_levels(market.grid, cfg["grid"]["levels"])
    rep = cost_convergence_suite(mollified, strategy, curve, market, levels, ns=ns)
    rep.to_csv(out / "convergence.csv")
    cost_process(curve, market, strategy, levels).levels.to_csv(out / "cost_levels.csv")
    checks = [Check("qv_bounded", max(rep.qv), 0.0, not rep.qv_divergent)]
    return ["convergence.csv", "cost_levels.csv"], checks


def _diagnostics(cfg, out, workers):
    grid = _grid(cfg)
    gbm = _gbm(cfg)
    slopes = _slopes(cfg)
    d = cfg["diagnostics"]
    gen = _generator(cfg)
    sm = supermartingale_test(slopes, gbm, gen, d["n_paths"], grid, d["alpha_currency"],
                              cfg.seed, d["initial_value_currency"])
    mid = simulate_mid_paths(gbm, grid, cfg.seed, range(d["n_paths"]))
    g, dl = slopes.paths(grid)
    curve = LinearSupplyCurve(g, dl, mid)
    cands = [gen.generate(grid, 10_000 + k) for k in range(d["n_candidates"])]
    probe = arbitrage_probe(curve, cands, d["alpha_currency"])
    rows = [sm.row(), probe.row()]
    write_diagnostics(rows, out / "diagnostics.csv", header=PROBE_HEADER)
    checks = [Check(r.test_name, r.statistic, r.threshold, r.passed) for r in rows]
    return ["diagnostics.csv"], checks


EXPERIMENTS = {
    "simulate": _simulate,
    "ledger": _ledger,
    "cost_process": _cost_process,
    "hedge": _hedge,
    "convergence": _convergence,
    "diagnostics": _diagnostics,
}


def run(cfg: ExperimentConfig, out_dir: Optional[os.PathLike] = None, workers: Optional[int] = None) -> int:
    """Run one experiment and write its artifacts; return the exit status."""
    out = Path(out_dir or cfg["experiment"]["output_dir"] or os.environ.get(OUTPUT_ENV) or "out")
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg["experiment"]["workers"]
    files, checks = EXPERIMENTS[cfg.kind](cfg, out, workers)
    _write_checks(checks, out / "checks.csv")
    _write_manifest(out, list(files) + ["checks.csv"], cfg)
    failed = [c.name for c in checks if not c.passed]
    for name in failed:
        print(f"check failed: {name}", file=sys.stderr)
    return 1 if failed else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="implicit-tc", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="experiment configuration file")
    ap.add_argument("--seed", type=int, help="override [experiment] seed")
    ap.add_argument("--workers", type=int, help="worker processes for Monte Carlo runs")
    ap.add_argument("--out", help=f"output directory (default: config, then ${OUTPUT_ENV}, then ./out)")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        text = Path(args.config).read_text()
        cfg = parse_config(text)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError([_issue("--seed", "must be >= 0")])
            cfg = cfg.replace("experiment", seed=args.seed)
        if args.workers is not None and args.workers < 1:
            raise ConfigError([_issue("--workers", "must be >= 1")])
        return run(cfg, args.out, args.workers)
    except ConfigError as e:
        for issue in e.issues:
            print(f"config error: {issue}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
