"""Acceptance criteria for the package, one test per criterion.

Each test prints a single ``[ACCEPTANCE] criterion N (<name>): PASS|FAIL``
line before asserting, so a plain ``pytest -s tests/test_acceptance.py``
gives the full scoreboard.  The suite is compute-heavy (quasi-Monte Carlo
evaluation, cross-entropy searches and 10^4-replicate simulation studies)
and takes on the order of an hour on a single core.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import kstest

from swgsd.analysis import TrialResult, infer, stagewise_exceedance
from swgsd.config import builtin_config_path, load_design, load_scenario
from swgsd.model import AllocationSchedule, ConstraintViolationError, \
    NonEstimableError, build_treatment_matrix, collapsed_covariance, \
    collapsed_design_matrix, information_closed_form, information_generic, \
    statistic_covariance
from swgsd.oc import OutcomeLabel, outcome_probability, summarize
from swgsd.optimize import CEConfig, ce_optimize, objective, \
    ordered_allocation_probability
from swgsd.sim import replicate_study, _apply_stopping, _simulate_statistics

from oracles import exceedance_quad, two_stage_design_optimum, \
    two_stage_outcome_quad


def _report(number, name, failures):
    status = "FAIL" if failures else "PASS"
    line = f"[ACCEPTANCE] criterion {number} ({name}): {status}"
    print(line)
    assert not failures, line + "\n" + "\n".join(failures)


def _design_table():
    rows = []
    for scenario_name, design_name, enm_null, enm_alt in (
            ("tds1", "tds1_design1", 1010.0, 1073.7),
            ("tds1", "tds1_design2", 978.6, 1219.0),
            ("tds1", "tds1_design3", 1370.7, 1055.8),
            ("tds2", "tds2_design1", 725.5, 923.2),
            ("tds2", "tds2_design2", 705.7, 1184.1),
            ("tds2", "tds2_design3", 1243.9, 923.7)):
        scenario = load_scenario(builtin_config_path(scenario_name))
        design = load_design(builtin_config_path(f"designs/{design_name}"))
        rows.append((design_name, scenario, design, enm_null, enm_alt))
    return rows


def test_criterion_1_published_design_evaluation():
    failures = []
    for name, scenario, design, enm_null, enm_alt in _design_table():
        oc = summarize(design, scenario, abs_tol=1e-7)
        tol = 0.5 if name.startswith("tds1") else 1.0
        if abs(oc.enm_null - enm_null) > tol:
            failures.append(f"{name}: ENM(0) {oc.enm_null:.2f} vs "
                            f"{enm_null} (tol {tol})")
        if abs(oc.enm_alt - enm_alt) > tol:
            failures.append(f"{name}: ENM(delta) {oc.enm_alt:.2f} vs "
                            f"{enm_alt} (tol {tol})")
        if oc.type_i > scenario.alpha + 1e-4:
            failures.append(f"{name}: type-I {oc.type_i:.6f}")
        if oc.power < 1.0 - scenario.beta - 1e-3:
            failures.append(f"{name}: power {oc.power:.6f}")
    _report(1, "published design evaluation", failures)


def test_criterion_2_efficiency_claims():
    failures = []
    rows = _design_table()
    # savings under the null for the ENM(0)-focused design
    oc2 = summarize(rows[1][2], rows[1][1], abs_tol=1e-7)
    saving_null = 1.0 - oc2.enm_null / 1400.0
    if abs(saving_null - 0.301) > 0.001:
        failures.append(f"null saving {saving_null:.4f} vs 0.301")
    # savings under the alternative for the ENM(delta)-focused design
    oc3 = summarize(rows[2][2], rows[2][1], abs_tol=1e-7)
    saving_alt = 1.0 - oc3.enm_alt / 1400.0
    if abs(saving_alt - 0.246) > 0.001:
        failures.append(f"alternative saving {saving_alt:.4f} vs 0.246")
    for name, _, design, _, _ in rows[:3]:
        if design.max_measurements > 1400:
            failures.append(f"{name}: max measurements "
                            f"{design.max_measurements} > 1400")
    _report(2, "efficiency claims", failures)


# Printed two-significant-figure table of ordered-allocation
# probabilities, rows C, columns T (interim analysis after T // 2
# periods).  The (C=2, T=4) entry is misprinted as 0.9e-1; the exact
# value 1 - (1/2) * (1/5) = 0.90 is used instead.
_TABLE_A1 = {
    2: [1.0, 0.90, 0.86, 0.83, 0.82],
    4: [0.37, 0.22, 0.17, 0.15, 0.13],
    6: [8.6e-2, 2.9e-2, 1.7e-2, 1.2e-2, 9.4e-3],
    8: [1.6e-2, 2.9e-3, 1.1e-3, 6.5e-4, 4.4e-4],
    10: [2.8e-3, 2.4e-4, 6.4e-5, 2.8e-5, 1.5e-5],
    15: [2.5e-5, 3.1e-7, 2.6e-8, 5.3e-9, 1.7e-9],
    20: [1.8e-7, 2.7e-10, 6.7e-12, 5.7e-13, 9.8e-14],
}


def _matches_two_significant_figures(value, printed):
    exponent = math.floor(math.log10(abs(printed)))
    return abs(value - printed) <= 0.05 * 10.0 ** exponent + 1e-15


def test_criterion_3_ordered_allocation_table():
    failures = []
    for C, row in _TABLE_A1.items():
        for T, printed in zip((2, 4, 6, 8, 10), row):
            value = ordered_allocation_probability(C, T, max(1, T // 2))
            if not _matches_two_significant_figures(value, printed):
                failures.append(f"C={C} T={T}: {value:.6g} vs {printed}")
    _report(3, "ordered allocation table", failures)


def test_criterion_4a_exhaustive_oracle_equivalence(tiny_scenario):
    failures = []
    start = time.monotonic()
    oracle_value, oracle_best = two_stage_design_optimum(tiny_scenario)
    config = CEConfig(rho=0.03, n_samples=800, max_iters=14,
                      stall_window=4, seed=2, integrator_tol=5e-6)
    result = ce_optimize(tiny_scenario, config)
    elapsed = time.monotonic() - start
    ce_value = objective(result.design, tiny_scenario, _oc=result.oc)
    if not (result.oc.alpha_ok and result.oc.power_ok):
        failures.append("cross-entropy design infeasible")
    if abs(ce_value - oracle_value) > 0.01 * oracle_value:
        failures.append(f"objective {ce_value:.4f} vs oracle "
                        f"{oracle_value:.4f} ({oracle_best})")
    if elapsed > 300.0:
        failures.append(f"runtime {elapsed:.0f}s exceeds 5 minutes")
    _report("4a", "exhaustive oracle equivalence", failures)


def test_criterion_4b_desk_scale_search(tds1_scenario):
    failures = []
    reference = load_design(builtin_config_path("designs/tds1_design1"))
    bar = 1.02 * objective(reference, tds1_scenario)
    config = CEConfig(rho=0.05, n_samples=1400, m_max=100, max_iters=25,
                      stall_window=5, seed=0)
    start = time.monotonic()
    result = ce_optimize(tds1_scenario, config)
    elapsed = time.monotonic() - start
    value = objective(result.design, tds1_scenario, _oc=result.oc)
    if not (result.oc.alpha_ok and result.oc.power_ok):
        failures.append("returned design infeasible")
    if value > bar:
        failures.append(f"objective {value:.2f} exceeds 1.02x reference "
                        f"{bar:.2f}")
    if elapsed > 1800.0:
        failures.append(f"runtime {elapsed:.0f}s exceeds 30 minutes")
    _report("4b", "desk-scale search quality", failures)


def _simulation_grids():
    tds1 = load_scenario(builtin_config_path("tds1"))
    tds2 = load_scenario(builtin_config_path("tds2"))
    grid = tuple(float(t) for t in np.round(np.linspace(-0.3, 0.5, 9), 10))
    return (
        ("tds1_design1", tds1, grid),
        ("tds2_design2", tds2, grid),
        ("tds2_design3", tds2, grid),
    )


def test_criterion_5_simulation_study():
    failures = []
    R = 10_000
    coverage_band = 3.0 * math.sqrt(0.95 * 0.05 / R)
    naive_extremes = {}
    for name, scenario, grid in _simulation_grids():
        design = load_design(builtin_config_path(f"designs/{name}"))
        start = time.monotonic()
        metrics = replicate_study(design, grid, R, seed=2,
                                  alpha=scenario.alpha)
        elapsed = time.monotonic() - start
        if elapsed > 1200.0:
            failures.append(f"{name}: runtime {elapsed:.0f}s exceeds "
                            "20 minutes")
        better = 0
        for m in metrics:
            if abs(m.coverage_so - 0.95) > coverage_band:
                failures.append(f"{name} tau={m.tau}: SO coverage "
                                f"{m.coverage_so:.4f}")
            if abs(m.bias_so) <= abs(m.bias_naive):
                better += 1
        if better < 0.8 * len(metrics):
            failures.append(f"{name}: |bias_SO| <= |bias_N| at only "
                            f"{better}/{len(metrics)} grid points")
        naive_extremes[name] = (max(m.coverage_naive for m in metrics),
                                min(m.coverage_naive for m in metrics))
    if naive_extremes["tds2_design2"][0] < 0.975:
        failures.append("tds2_design2: naive coverage never reaches 0.975 "
                        f"(max {naive_extremes['tds2_design2'][0]:.4f})")
    if naive_extremes["tds2_design3"][1] > 0.925:
        failures.append("tds2_design3: naive coverage never drops to 0.925 "
                        f"(min {naive_extremes['tds2_design3'][1]:.4f})")
    _report(5, "simulation study", failures)


def test_criterion_6_property_suites(tiny_scenario, tiny_design,
                                     single_stage_design):
    failures = []

    # outcome probabilities partition unity
    for name, scenario, design, _, _ in _design_table():
        for tau in (0.0, scenario.delta):
            total = sum(
                outcome_probability(tau, OutcomeLabel(g, psi), design,
                                    abs_tol=1e-7)
                for g in range(1, design.n_analyses + 1) for psi in (0, 1))
            if abs(total - 1.0) > 4e-6:
                failures.append(f"partition {name} tau={tau}: {total!r}")

    # closed-form information against the generic GLS route
    rng = np.random.Generator(np.random.PCG64(3))
    for scenario_name in ("tds1", "tds2", "tiny"):
        scenario = load_scenario(builtin_config_path(scenario_name))
        C, T = scenario.n_clusters, scenario.n_periods
        while True:
            S = tuple(sorted(int(s) for s in rng.integers(1, T + 2, size=C)))
            try:
                allocation = AllocationSchedule(S, T)
                break
            except ConstraintViolationError:
                continue
        X = build_treatment_matrix(allocation)
        for t in scenario.analysis_periods:
            try:
                closed = information_closed_form(X, 5, t, scenario.vc)
            except NonEstimableError:
                continue
            D = collapsed_design_matrix(X, t)
            keep = np.abs(D).sum(axis=0) > 0
            Sigma = collapsed_covariance(C, 5, t, scenario.vc)
            generic = information_generic(D[:, keep], Sigma)
            if abs(closed - generic) > 1e-8 * generic:
                failures.append(
                    f"information {scenario_name} t={t}: "
                    f"{closed!r} vs {generic!r}")

    # analytic operating characteristics against simulation
    R = 100_000
    for tau in (0.0, tiny_scenario.delta):
        z, _ = _simulate_statistics(tiny_design, tau, R, seed_key=(77, 0))
        gamma0, psi, _ = _apply_stopping(z, tiny_design)
        for g in range(1, tiny_design.n_analyses + 1):
            for p in (0, 1):
                freq = float(((gamma0 == g - 1) & (psi == p)).mean())
                prob = outcome_probability(tau, OutcomeLabel(g, p),
                                           tiny_design, abs_tol=1e-7)
                se = math.sqrt(max(prob * (1.0 - prob), 1.0 / R) / R)
                if abs(freq - prob) > 3.0 * se:
                    failures.append(f"oc-vs-sim tau={tau} ({g},{p}): "
                                    f"{freq:.5f} vs {prob:.5f}")

    # two-stage quadrature oracles for outcomes and exceedance
    info_sqrt, Lambda = statistic_covariance(tiny_design)
    f = tiny_design.boundaries.futility
    e = tiny_design.boundaries.efficacy
    for tau in (0.0, 0.7):
        for g in (1, 2):
            for p in (0, 1):
                value = outcome_probability(tau, OutcomeLabel(g, p),
                                            tiny_design, abs_tol=1e-8)
                oracle = two_stage_outcome_quad(tau, g, p, info_sqrt,
                                                Lambda, f, e)
                if abs(value - oracle) > 1e-5:
                    failures.append(f"outcome quad tau={tau} ({g},{p})")
        value = stagewise_exceedance(tau, 2, 1.1, tiny_design, abs_tol=1e-8)
        oracle = exceedance_quad(tau, 2, 1.1, info_sqrt, Lambda, f, e)
        if abs(value - oracle) > 1e-5:
            failures.append(f"exceedance quad tau={tau}")

    # single-analysis designs collapse to naive inference
    for z in (2.2, 1.0, -0.6):
        result = TrialResult.from_statistic(1, z, single_stage_design)
        report = infer(result, 0.05)
        if abs(report.p_so - report.p_naive) > 1e-6 \
                or abs(report.estimate_so - report.estimate_naive) > 1e-6 \
                or abs(report.ci_lower_so - report.ci_lower_naive) > 1e-6:
            failures.append(f"single-stage collapse z={z}")

    # p_SO is uniform under the null
    _, raw = replicate_study(tiny_design, [0.0], 10_000, seed=8,
                             return_raw=True)
    stat = kstest(raw[0.0]["p_so"], "uniform")
    if stat.pvalue <= 0.01:
        failures.append(f"p_SO uniformity KS p={stat.pvalue:.4f}")

    _report(6, "property suites", failures)
