"""Exact operating characteristics of a group sequential design.

Stagewise outcome probabilities, rejection probability, and the expected
number of measurements (ENM), all via multivariate normal rectangle
probabilities over the joint distribution of the interim Z statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GroupSequentialDesign, ScenarioSpec, statistic_covariance
from .mvnorm import mvn_rectangles

__all__ = [
    "OutcomeLabel",
    "OperatingCharacteristics",
    "DEFAULT_ABS_TOL",
    "integration_limits",
    "outcome_probability",
    "rejection_probability",
    "enm",
    "summarize",
]

DEFAULT_ABS_TOL = 1e-6

# Slack applied when flagging the type-I and power constraints, matching
# the tolerances used throughout the optimisation layer.
ALPHA_SLACK = 1e-4
POWER_SLACK = 1e-3


@dataclass(frozen=True)
class OutcomeLabel:
    """A terminal trial outcome: stopping analysis and decision."""

    gamma: int
    psi: int

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("stopping analysis index must be >= 1")
        if self.psi not in (0, 1):
            raise ValueError("decision must be 0 (accept) or 1 (reject)")


@dataclass(frozen=True)
class OperatingCharacteristics:
    """Bundled operating characteristics at tau = 0 and tau = delta."""

    type_i: float
    power: float
    enm_null: float
    enm_alt: float
    max_measurements: int
    per_outcome: tuple  # ((tau, gamma, psi, probability), ...)
    error_bound: float
    alpha_target: float
    power_target: float

    @property
    def alpha_ok(self) -> bool:
        return self.type_i <= self.alpha_target + ALPHA_SLACK

    @property
    def power_ok(self) -> bool:
        return self.power >= self.power_target - POWER_SLACK


def integration_limits(i, gamma, psi, f, e):
    """Integration limits for stage i of an outcome stopping at gamma.

    Stages before gamma contribute the continuation interval (f_i, e_i];
    the stopping stage contributes (e_gamma, inf) for rejection and
    (-inf, f_gamma] for acceptance.
    """
    k = len(f)
    if not 1 <= gamma <= k:
        raise ValueError(f"stopping analysis {gamma} outside {{1,...,{k}}}")
    if not 1 <= i <= gamma:
        raise ValueError(f"stage index {i} outside {{1,...,{gamma}}}")
    if psi not in (0, 1):
        raise ValueError("decision must be 0 or 1")
    if i < gamma:
        return f[i - 1], e[i - 1]
    if psi == 1:
        return e[gamma - 1], np.inf
    return -np.inf, f[gamma - 1]


def _outcome_rectangle(gamma, psi, design):
    f = design.boundaries.futility
    e = design.boundaries.efficacy
    limits = [integration_limits(i, gamma, psi, f, e)
              for i in range(1, gamma + 1)]
    lower, upper = map(np.array, zip(*limits))
    return lower, upper


def _outcome_probabilities(taus, design, abs_tol, seed):
    """Probabilities of every outcome (gamma, psi) at each tau in taus.

    Returns (probs, errs) as dicts keyed by (tau_index, gamma, psi).
    Outcomes sharing a stopping stage share one batched integration call.
    """
    info_sqrt, Lambda = statistic_covariance(design)
    k = design.n_analyses
    probs, errs = {}, {}
    for gamma in range(1, k + 1):
        lowers, uppers, keys = [], [], []
        for psi in (0, 1):
            lo, up = _outcome_rectangle(gamma, psi, design)
            for ti, tau in enumerate(taus):
                shift = tau * info_sqrt[:gamma]
                lowers.append(lo - shift)
                uppers.append(up - shift)
                keys.append((ti, gamma, psi))
        values, errors = mvn_rectangles(
            np.array(lowers), np.array(uppers), Lambda[:gamma, :gamma],
            abs_tol=abs_tol, seed=seed)
        for key, v, err in zip(keys, values, errors):
            probs[key] = float(v)
            errs[key] = float(err)
    return probs, errs


def outcome_probability(tau, outcome: OutcomeLabel, design: GroupSequentialDesign,
                        abs_tol=DEFAULT_ABS_TOL, seed=0) -> float:
    """Probability of terminating at analysis gamma with decision psi."""
    if outcome.gamma > design.n_analyses:
        raise ValueError(f"stopping analysis {outcome.gamma} exceeds "
                         f"{design.n_analyses} planned analyses")
    probs, _ = _outcome_probabilities((float(tau),), design, abs_tol, seed)
    return probs[(0, outcome.gamma, outcome.psi)]


def rejection_probability(tau, design: GroupSequentialDesign,
                          abs_tol=DEFAULT_ABS_TOL, seed=0) -> float:
    """P(reject H0 | tau): total probability of stopping with rejection."""
    probs, _ = _outcome_probabilities((float(tau),), design, abs_tol, seed)
    return sum(p for (ti, g, psi), p in probs.items() if psi == 1)


def enm(tau, design: GroupSequentialDesign,
        abs_tol=DEFAULT_ABS_TOL, seed=0) -> float:
    """Expected number of measurements at effect tau.

    All measurements through the terminating analysis period are counted,
    including periods between analyses.
    """
    probs, _ = _outcome_probabilities((float(tau),), design, abs_tol, seed)
    mC = design.m * design.n_clusters
    periods = design.schedule.periods
    return sum(mC * periods[g - 1] * p for (ti, g, psi), p in probs.items())


def summarize(design: GroupSequentialDesign, scenario: ScenarioSpec,
              abs_tol=DEFAULT_ABS_TOL, seed=0) -> OperatingCharacteristics:
    """Full operating characteristics at tau in {0, delta}."""
    if design.n_clusters != scenario.n_clusters \
            or design.n_periods != scenario.n_periods:
        raise ValueError("design and scenario dimensions are inconsistent")
    if design.schedule.periods != scenario.analysis_periods:
        raise ValueError("design and scenario analysis schedules differ")
    taus = (0.0, float(scenario.delta))
    probs, errs = _outcome_probabilities(taus, design, abs_tol, seed)
    mC = design.m * design.n_clusters
    periods = design.schedule.periods
    type_i = sum(p for (ti, g, psi), p in probs.items() if ti == 0 and psi == 1)
    power = sum(p for (ti, g, psi), p in probs.items() if ti == 1 and psi == 1)
    enm_null = sum(mC * periods[g - 1] * p
                   for (ti, g, psi), p in probs.items() if ti == 0)
    enm_alt = sum(mC * periods[g - 1] * p
                  for (ti, g, psi), p in probs.items() if ti == 1)
    per_outcome = tuple(sorted(
        (taus[ti], g, psi, p) for (ti, g, psi), p in probs.items()))
    return OperatingCharacteristics(
        type_i=type_i,
        power=power,
        enm_null=enm_null,
        enm_alt=enm_alt,
        max_measurements=design.max_measurements,
        per_outcome=per_outcome,
        error_bound=max(errs.values()),
        alpha_target=scenario.alpha,
        power_target=1.0 - scenario.beta,
    )
