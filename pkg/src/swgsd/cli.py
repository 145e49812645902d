"""Batch command-line frontend.

Subcommands: evaluate, optimize, analyze, simulate, table-a1.  Every run
honours --seed, writes a manifest listing its outputs, and prints a
machine-readable key=value record on standard output.

Exit codes: 0 success, 1 constraint or inference failure, 2 parse or
configuration error.
"""

from __future__ import annotations

import csv
import datetime
import os
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .analysis import TrialResult, infer
from .config import ConfigError, design_alpha, load_design, load_scenario, \
    save_design
from .model import ConstraintViolationError, NonEstimableError
from .oc import summarize
from .optimize import CEConfig, InfeasibleDesignError, ce_optimize, \
    objective, ordered_allocation_probability
from .sim import replicate_study

_EXIT_CONSTRAINT = 1
_EXIT_CONFIG = 2


def _threads_default():
    return int(os.environ.get("SWGSD_THREADS", "1"))


def _record(pairs):
    """Print a flat key=value record; floats at full precision."""
    for key, value in pairs:
        if isinstance(value, float):
            click.echo(f"{key}={value:.17g}")
        else:
            click.echo(f"{key}={value}")


def _write_manifest(out_dir, command, config_paths, seed, started, outputs):
    manifest = {
        "command": command,
        "config_paths": [str(p) for p in config_paths],
        "seed": seed,
        "tool_version": __version__,
        "started": started.isoformat(),
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
    }
    path = Path(out_dir) / f"{command}_manifest.yaml"
    path.write_text(yaml.safe_dump(manifest, sort_keys=False))
    return path


def _fail_config(exc):
    click.echo(f"error: {exc}", err=True)
    sys.exit(_EXIT_CONFIG)


@click.group()
@click.version_option(__version__)
@click.option("--threads", type=int, default=_threads_default,
              show_default="SWGSD_THREADS or 1",
              help="Worker cap for library-level parallelism. The current "
                   "implementation is vectorized single-process; the value "
                   "is validated and recorded in run manifests.")
@click.pass_context
def main(ctx, threads):
    """Design and analysis of group sequential stepped-wedge trials."""
    if threads < 1:
        raise click.BadParameter("--threads must be >= 1")
    ctx.obj = {"threads": threads}


@main.command()
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("design_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default=".",
              show_default=True)
@click.option("--abs-tol", type=float, default=1e-6, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def evaluate(scenario_file, design_file, out_dir, abs_tol, seed):
    """Exact operating characteristics of a design under a scenario.

    Exits 0 only if the type-I error and power constraints hold."""
    started = datetime.datetime.now(datetime.timezone.utc)
    try:
        scenario = load_scenario(scenario_file)
        design = load_design(design_file)
    except ConfigError as exc:
        _fail_config(exc)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        oc = summarize(design, scenario, abs_tol=abs_tol, seed=seed)
    except (ConstraintViolationError, NonEstimableError, ValueError) as exc:
        _fail_config(exc)

    outcomes_path = out_dir / "outcome_probabilities.csv"
    with outcomes_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["gamma", "psi", "tau", "probability"])
        for tau, gamma, psi, prob in oc.per_outcome:
            writer.writerow([gamma, psi, f"{tau:.17g}", f"{prob:.17g}"])
    manifest = _write_manifest(out_dir, "evaluate",
                               [scenario_file, design_file], seed, started,
                               [outcomes_path])
    _record([
        ("type_i", oc.type_i),
        ("power", oc.power),
        ("enm_null", oc.enm_null),
        ("enm_alt", oc.enm_alt),
        ("max_measurements", oc.max_measurements),
        ("error_bound", oc.error_bound),
        ("alpha_ok", oc.alpha_ok),
        ("power_ok", oc.power_ok),
        ("outcomes_csv", outcomes_path),
        ("manifest", manifest),
    ])
    if not (oc.alpha_ok and oc.power_ok):
        sys.exit(_EXIT_CONSTRAINT)


@main.command("optimize")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default=".",
              show_default=True)
@click.option("--n-samples", type=int, default=None,
              help="Candidates per iteration (default scales with problem "
                   "dimension).")
@click.option("--rho", type=float, default=0.01, show_default=True)
@click.option("--m-max", type=int, default=None)
@click.option("--max-iters", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--figure", type=click.Path(dir_okay=False), default=None,
              help="Render the optimisation trace to this image file.")
def optimize_cmd(scenario_file, out_dir, n_samples, rho, m_max, max_iters,
                 seed, figure):
    """Cross-entropy search for the optimal design under a scenario."""
    started = datetime.datetime.now(datetime.timezone.utc)
    try:
        scenario = load_scenario(scenario_file)
        config = CEConfig(rho=rho, n_samples=n_samples, m_max=m_max,
                          max_iters=max_iters, seed=seed)
    except (ConfigError, ValueError) as exc:
        _fail_config(exc)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def emit(trace, design=None, oc=None):
        outputs = []
        trace_path = out_dir / "trace.csv"
        with trace_path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["iteration", "elite_quantile", "best_objective"])
            for rec in trace:
                writer.writerow([rec["iteration"],
                                 f"{rec['elite_quantile']:.17g}",
                                 f"{rec['best_objective']:.17g}"])
        outputs.append(trace_path)
        if design is not None:
            design_path = out_dir / "design.yaml"
            summary = {
                "type_i": float(oc.type_i),
                "power": float(oc.power),
                "enm_null": float(oc.enm_null),
                "enm_alt": float(oc.enm_alt),
                "max_measurements": int(oc.max_measurements),
                "objective": float(objective(design, scenario, _oc=oc)),
            }
            save_design(design, scenario.alpha, design_path, summary=summary)
            outputs.append(design_path)
        if figure and trace:
            from .plots import trace_figure
            trace_figure(trace, figure)
            outputs.append(Path(figure))
        return outputs

    try:
        result = ce_optimize(scenario, config)
    except InfeasibleDesignError as exc:
        outputs = emit(list(exc.trace or ()), exc.best_design, exc.best_oc)
        _write_manifest(out_dir, "optimize", [scenario_file], seed, started,
                        outputs)
        click.echo(f"error: {exc}", err=True)
        if exc.best_design is not None:
            click.echo("best design found so far written to design.yaml",
                       err=True)
        sys.exit(_EXIT_CONSTRAINT)

    outputs = emit(list(result.trace), result.design, result.oc)
    manifest = _write_manifest(out_dir, "optimize", [scenario_file], seed,
                               started, outputs)
    oc = result.oc
    _record([
        ("m", result.design.m),
        ("switching_times",
         ",".join(str(s) for s in result.design.allocation.switch_periods)),
        ("futility",
         ",".join(f"{b:.17g}" for b in result.design.boundaries.futility)),
        ("efficacy",
         ",".join(f"{b:.17g}" for b in result.design.boundaries.efficacy)),
        ("objective", objective(result.design, scenario, _oc=oc)),
        ("type_i", oc.type_i),
        ("power", oc.power),
        ("enm_null", oc.enm_null),
        ("enm_alt", oc.enm_alt),
        ("n_evaluations", result.n_evaluations),
        ("design_yaml", out_dir / "design.yaml"),
        ("trace_csv", out_dir / "trace.csv"),
        ("manifest", manifest),
    ])


@main.command()
@click.argument("design_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--gamma", type=int, required=True,
              help="Analysis at which the trial stopped (1-based).")
@click.option("--z", "z_value", type=float, default=None,
              help="Observed standardized statistic at the stopping analysis.")
@click.option("--tau-hat", type=float, default=None,
              help="Observed effect estimate; converted to a statistic via "
                   "the supplied or design-implied information.")
@click.option("--info", "info_value", type=float, default=None,
              help="Information accompanying --tau-hat (defaults to the "
                   "design's information at the stopping analysis).")
@click.option("--seed", type=int, default=0, show_default=True)
def analyze(design_file, gamma, z_value, tau_hat, info_value, seed):
    """Naive and adjusted inference for a completed trial."""
    try:
        design = load_design(design_file)
        alpha = design_alpha(design_file)
    except ConfigError as exc:
        _fail_config(exc)
    if (z_value is None) == (tau_hat is None):
        click.echo("error: supply exactly one of --z or --tau-hat", err=True)
        sys.exit(_EXIT_CONFIG)
    try:
        if z_value is None:
            from .model import statistic_covariance
            if info_value is None:
                info_sqrt, _ = statistic_covariance(design)
                info_value = float(info_sqrt[gamma - 1] ** 2)
            z_value = tau_hat * np.sqrt(info_value)
        result = TrialResult.from_statistic(gamma, z_value, design)
    except (ConstraintViolationError, IndexError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_EXIT_CONSTRAINT)
    report = infer(result, alpha, seed=seed)
    _record([
        ("gamma", result.gamma),
        ("psi", result.psi),
        ("z", result.z),
        ("estimate_naive", report.estimate_naive),
        ("p_naive", report.p_naive),
        ("ci_lower_naive", report.ci_lower_naive),
        ("estimate_so", report.estimate_so),
        ("p_so", report.p_so),
        ("ci_lower_so", report.ci_lower_so),
    ])


def _parse_tau_grid(spec):
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise click.BadParameter("grid must be start:stop:step or a "
                                     "comma-separated list")
        start, stop, step = map(float, parts)
        n = int(round((stop - start) / step)) + 1
        return [start + i * step for i in range(n)]
    return [float(v) for v in spec.split(",")]


@main.command()
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("design_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--tau-grid", default="-0.3:0.5:0.1", show_default=True,
              help="start:stop:step or comma-separated effect values.")
@click.option("--replicates", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=".",
              show_default=True)
@click.option("--figure", type=click.Path(dir_okay=False), default=None,
              help="Render bias/RMSE/coverage panels to this image file.")
def simulate(scenario_file, design_file, tau_grid, replicates, seed, out_dir,
             figure):
    """Replication study of the naive and adjusted analysis procedures."""
    started = datetime.datetime.now(datetime.timezone.utc)
    try:
        scenario = load_scenario(scenario_file)
        design = load_design(design_file)
        grid = _parse_tau_grid(tau_grid)
    except (ConfigError, click.BadParameter) as exc:
        _fail_config(exc)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = replicate_study(design, grid, replicates, seed=seed,
                              alpha=scenario.alpha)
    csv_path = out_dir / "simulation_metrics.csv"
    with csv_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["tau", "estimator", "bias", "rmse", "coverage",
                         "se_bias", "se_coverage"])
        for rec in metrics:
            writer.writerow([f"{rec.tau:.17g}", "naive",
                             f"{rec.bias_naive:.17g}",
                             f"{rec.rmse_naive:.17g}",
                             f"{rec.coverage_naive:.17g}",
                             f"{rec.se_bias_naive:.17g}",
                             f"{rec.se_coverage_naive:.17g}"])
            writer.writerow([f"{rec.tau:.17g}", "so",
                             f"{rec.bias_so:.17g}",
                             f"{rec.rmse_so:.17g}",
                             f"{rec.coverage_so:.17g}",
                             f"{rec.se_bias_so:.17g}",
                             f"{rec.se_coverage_so:.17g}"])
    outputs = [csv_path]
    if figure:
        from .plots import simulation_figure
        simulation_figure(metrics, figure, alpha=scenario.alpha)
        outputs.append(Path(figure))
    manifest = _write_manifest(out_dir, "simulate",
                               [scenario_file, design_file], seed, started,
                               outputs)
    _record([
        ("replicates", replicates),
        ("tau_values", len(metrics)),
        ("metrics_csv", csv_path),
        ("manifest", manifest),
    ])


@main.command("table-a1")
@click.option("--c-list", default="2,4,6,8,10,15,20", show_default=True)
@click.option("--t-list", default="2,4,6,8,10", show_default=True)
@click.option("--output", type=click.Path(dir_okay=False), default=None,
              help="Write CSV here instead of standard output.")
def table_a1(c_list, t_list, output):
    """Exact probabilities of drawing an ordered allocation vector.

    Uses the default sampling distributions with the first analysis at
    period T/2 (rounded down, at least 1)."""
    try:
        cs = [int(v) for v in c_list.split(",")]
        ts = [int(v) for v in t_list.split(",")]
    except ValueError as exc:
        _fail_config(exc)
    rows = []
    for C in cs:
        for T in ts:
            t1 = max(1, T // 2)
            rows.append((C, T, ordered_allocation_probability(C, T, t1)))
    handle = open(output, "w", newline="") if output else sys.stdout
    try:
        writer = csv.writer(handle)
        writer.writerow(["C", "T", "probability"])
        for C, T, prob in rows:
            writer.writerow([C, T, f"{prob:.17g}"])
    finally:
        if output:
            handle.close()


if __name__ == "__main__":
    main()
