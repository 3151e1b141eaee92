"""Command line entry point: ``sshdi simulate``, ``sshdi fit`` and ``sshdi selftest``.

Exit codes: 0 success, 2 configuration or input error, 3 run aborted because
too many splits failed, 4 self-test failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import coverage_experiment, draw_scenario_truth, infer, sshdi_fit, variance_estimate
from .config import ScenarioConfig, load_config, shipped_scenarios
from .errors import ConfigError, DimensionError, IngestError, RunAborted
from .reports import (SCHEMA_VERSION, dumps_report, inference_rows, read_csv_dataset, results_csv,
                      table1_csv)

log = logging.getLogger("sshdi")

EXIT_OK, EXIT_INPUT, EXIT_ABORTED, EXIT_SELFTEST = 0, 2, 3, 4


def _overrides(args) -> dict:
    return {
        "run.workers": getattr(args, "workers", None),
        "run.seed": getattr(args, "seed", None),
        "run.replicates": getattr(args, "replicates", None),
        "inference.b": getattr(args, "b", None),
        "inference.alpha": getattr(args, "alpha", None),
        "inference.adjust": getattr(args, "adjust", None),
        "inference.log_transform": True if getattr(args, "log_transform", False) else None,
    }


def _write_outputs(out_dir: Path, files: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8")


def run_simulate(config_path, out_dir="out", **overrides) -> dict:
    """Run the coverage experiment described by a scenario file.

    Writes ``report.json`` and ``table1.csv`` (plus ``run.json`` with timing
    and worker count) into ``out_dir`` and returns the report dict.
    """
    cfg = load_config(config_path).override(**overrides)
    if cfg["inference.b"] is None:
        cfg.values["inference"]["b"] = cfg["scenario.n"]
        cfg.sources["inference.b"] = "derived"
    scenario = cfg.scenario()
    seed = cfg["run.seed"]
    replicates = cfg["run.replicates"]
    workers = cfg["run.workers"]
    log.info("simulate: n=%d p=%d covariance=%s b=%d replicates=%d seed=%d workers=%d",
             scenario.n, scenario.p, scenario.covariance.tag, scenario.b, replicates, seed, workers)

    t0 = time.perf_counter()
    truth = draw_scenario_truth(scenario, seed)
    step = max(1, replicates // 20)

    def progress(r):
        if r % step == 0:
            log.info("replicate %d/%d (%.0fs)", r, replicates, time.perf_counter() - t0)

    rep = coverage_experiment(scenario, replicates, seed, workers=workers, truth=truth, progress=progress)
    wall = time.perf_counter() - t0

    signal_cov = [r["cov_prob"] for r in rep.signal_rows]
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "simulate",
        "config": cfg.echo(),
        "config_sources": cfg.source_echo(),
        "seed": seed,
        "truth": {"active_set": (rep.truth_active + 1).tolist(),
                  "coefficients": rep.truth_coefficients.tolist(),
                  "noise_sd": scenario.noise_sd},
        "signal_rows": rep.signal_rows,
        "noise_row": rep.noise_row,
        "summary": {"signal_cov_prob_mean": float(np.mean(signal_cov)) if signal_cov else None,
                    "replicates": replicates},
        "diagnostics": rep.diagnostics,
    }
    _write_outputs(Path(out_dir), {
        "report.json": dumps_report(report),
        "table1.csv": table1_csv(rep),
        "run.json": dumps_report({"workers": workers, "wall_seconds": wall, "version": __version__}),
    })
    return report


def run_fit(csv_path, response_column, config_path=None, out_dir="out", **overrides) -> dict:
    """Fit, estimate variances and test every coefficient of a CSV dataset.

    Writes ``report.json`` and ``results.csv`` (plus ``run.json``).
    """
    cfg = load_config(config_path).override(**overrides)
    data = read_csv_dataset(csv_path, response_column, log_transform=cfg["inference.log_transform"])
    if data.n < 8:
        raise DimensionError(f"need at least 8 rows, got {data.n}")
    if cfg["inference.b"] is None:
        cfg.values["inference"]["b"] = data.n
        cfg.sources["inference.b"] = "derived"
    selector = cfg.selector_config()
    seed = cfg["run.seed"]
    log.info("fit: n=%d p=%d b=%d selector=%s seed=%d", data.n, data.p, cfg["inference.b"],
             selector.to_string(), seed)

    t0 = time.perf_counter()
    fit = sshdi_fit(data, selector, cfg["inference.b"], seed, workers=cfg["run.workers"])
    var = variance_estimate(fit)
    table = infer(fit, var, cfg["inference.alpha"], cfg["inference.adjust"], names=data.names)
    wall = time.perf_counter() - t0
    rows = inference_rows(table)

    diagnostics = {k: v for k, v in fit.diagnostics.items() if k != "runtime_seconds"}
    diagnostics.update({"failed_splits": [list(f) for f in fit.failures],
                        "variance_fallbacks": int(var.fallback.sum())})
    sections = ("selection", "inference", "run")
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit",
        "config": cfg.echo(sections),
        "config_sources": cfg.source_echo(sections),
        "seed": seed,
        "data": {"path": Path(csv_path).name, "response": response_column, "n": data.n, "p": data.p},
        "b": fit.b,
        "alpha": table.alpha,
        "adjustment": table.adjustment,
        "tests": table.m,
        "intercept": {"estimate": fit.intercept_hat, "variance": var.intercept_v_b,
                      "uncorrected_variance": var.intercept_fallback},
        "results": rows,
        "diagnostics": diagnostics,
    }
    _write_outputs(Path(out_dir), {
        "report.json": dumps_report(report),
        "results.csv": results_csv(rows),
        "run.json": dumps_report({"workers": cfg["run.workers"], "wall_seconds": wall,
                                  "runtime_seconds": fit.diagnostics["runtime_seconds"],
                                  "version": __version__}),
    })
    return report


def run_selftest(stream=None) -> bool:
    from .selftest import run_checks
    return run_checks(stream)


def _add_common(p, simulate):
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--b", type=int, help="number of random splits")
    p.add_argument("--alpha", type=float, help="significance level")
    p.add_argument("--adjust", choices=("none", "bonferroni"), help="multiplicity adjustment")
    p.add_argument("--log-transform", action="store_true", help="log-transform response and predictors")
    if simulate:
        p.add_argument("--replicates", type=int, help="Monte Carlo replicates")


def build_parser():
    parser = argparse.ArgumentParser(prog="sshdi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a coverage simulation from a scenario file")
    sim.add_argument("config", help=f"scenario file or shipped name ({', '.join(shipped_scenarios())})")
    _add_common(sim, simulate=True)

    fit = sub.add_parser("fit", help="fit a CSV dataset and test every coefficient")
    fit.add_argument("csv")
    fit.add_argument("--response", required=True, help="name of the response column")
    fit.add_argument("--config", help="config file with [selection]/[inference]/[run] sections")
    _add_common(fit, simulate=False)

    sub.add_parser("selftest", help="run the built-in oracle checks")
    sub.add_parser("scenarios", help="list shipped scenario files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "simulate":
            run_simulate(args.config, args.out, **_overrides(args))
        elif args.command == "fit":
            run_fit(args.csv, args.response, args.config, args.out, **_overrides(args))
        elif args.command == "selftest":
            return EXIT_OK if run_selftest() else EXIT_SELFTEST
        elif args.command == "scenarios":
            print("\n".join(shipped_scenarios()))
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_INPUT
    except (IngestError, DimensionError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
