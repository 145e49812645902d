"""Design optimisation: weighted-ENM objective, penalized constraint
handling, cross-entropy search over boundaries, allocation and sample
size, and the fixed-sample reference computations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import AllocationSchedule, AnalysisSchedule, \
    ConstraintViolationError, GroupSequentialDesign, NonEstimableError, \
    ScenarioSpec, StoppingBoundaries, build_treatment_matrix, \
    information_closed_form
from .mvnorm import std_normal_cdf, std_normal_quantile
from .oc import OperatingCharacteristics, summarize

__all__ = [
    "CEConfig",
    "CEState",
    "CEResult",
    "InfeasibleDesignError",
    "objective",
    "penalized_objective",
    "ce_optimize",
    "fixed_sample_reference",
    "near_balanced_allocation",
    "ordered_allocation_probability",
]

_M_SEARCH_CAP = 100_000


class InfeasibleDesignError(RuntimeError):
    """The search terminated without a design meeting both constraints."""

    def __init__(self, message, best_design=None, best_oc=None, trace=None):
        super().__init__(message)
        self.best_design = best_design
        self.best_oc = best_oc
        self.trace = trace


@dataclass(frozen=True)
class CEConfig:
    """Cross-entropy search controls.

    Defaults follow standard practice for this family of problems:
    rarity 0.01, per-iteration sample count 10000 * (C + 2 * analyses),
    and m capped at 10 * M_SW / (C * T).  Desk-scale runs override
    n_samples downward and should widen result tolerances accordingly.
    """

    rho: float = 0.01
    n_samples: int | None = None
    m_max: int | None = None
    max_iters: int = 100
    stall_window: int = 5
    smoothing: float = 1.0
    seed: int = 0
    std_floor: float = 1e-4
    integrator_tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rarity parameter must lie in (0, 1)")
        if self.n_samples is not None and self.n_samples < 100:
            raise ValueError("n_samples must be at least 100")
        if self.m_max is not None and self.m_max < 2:
            raise ValueError("m_max must be at least 2")
        if not 0.0 < self.smoothing <= 1.0:
            raise ValueError("smoothing must lie in (0, 1]")


@dataclass
class CEState:
    """Sampling distribution of the cross-entropy search.

    Discrete probability tables for m and each switching time; normal
    parameters for the futility bounds and the positive efficacy gaps
    r_i = e_i - f_i (i < analyses), with the final bound shared.
    """

    m_values: np.ndarray
    m_probs: np.ndarray
    s_values: list  # per cluster, admissible switching periods
    s_probs: list
    f_mean: np.ndarray
    f_std: np.ndarray
    r_mean: np.ndarray
    r_std: np.ndarray
    best_design: GroupSequentialDesign | None = None
    best_objective: float = math.inf
    best_feasible_design: GroupSequentialDesign | None = None
    best_feasible_objective: float = math.inf


@dataclass(frozen=True)
class CEResult:
    design: GroupSequentialDesign
    oc: OperatingCharacteristics
    trace: tuple
    n_evaluations: int


def near_balanced_allocation(C: int, T: int) -> AllocationSchedule:
    """Fixed-sample reference allocation: switches spread over periods
    2..T with as-equal-as-possible counts, extras in the earliest periods."""
    slots = T - 1
    q, r = divmod(C, slots)
    S = []
    for j, period in enumerate(range(2, T + 1)):
        S.extend([period] * (q + 1 if j < r else q))
    return AllocationSchedule(tuple(S), T)


def fixed_sample_reference(scenario: ScenarioSpec,
                           allocation: AllocationSchedule | None = None):
    """Smallest per-cluster per-period size m giving the scenario's power
    in a single-analysis trial, and the implied total M_SW."""
    if allocation is None:
        allocation = near_balanced_allocation(
            scenario.n_clusters, scenario.n_periods)
    X = build_treatment_matrix(allocation)
    T = scenario.n_periods
    z_alpha = std_normal_quantile(1.0 - scenario.alpha)
    target = 1.0 - scenario.beta
    for m in range(2, _M_SEARCH_CAP + 1):
        info = information_closed_form(X, m, T, scenario.vc)
        power = 1.0 - std_normal_cdf(z_alpha - scenario.delta * np.sqrt(info))
        if power >= target:
            return m, m * scenario.n_clusters * T
    raise InfeasibleDesignError(
        f"power {target} unreachable for any m <= {_M_SEARCH_CAP}")


def objective(design: GroupSequentialDesign, scenario: ScenarioSpec,
              abs_tol=1e-6, seed=0, _oc=None) -> float:
    """Weighted combination of ENM(0), ENM(delta) and the maximal
    measurement count."""
    oc = _oc if _oc is not None else summarize(
        design, scenario, abs_tol=abs_tol, seed=seed)
    w1, w2, w3 = scenario.weights
    return w1 * oc.enm_null + w2 * oc.enm_alt + w3 * design.max_measurements


def penalized_objective(design: GroupSequentialDesign, scenario: ScenarioSpec,
                        m_sw=None, abs_tol=1e-6, seed=0, _oc=None) -> float:
    """Objective plus M_SW-scaled penalties for violated error-rate
    constraints; equals the plain objective when both constraints hold."""
    if m_sw is None:
        m_sw = scenario.m_sw
        if m_sw is None:
            _, m_sw = fixed_sample_reference(scenario)
    oc = _oc if _oc is not None else summarize(
        design, scenario, abs_tol=abs_tol, seed=seed)
    value = objective(design, scenario, _oc=oc)
    alpha, beta = scenario.alpha, scenario.beta
    if oc.type_i > alpha:
        value += m_sw * (oc.type_i - alpha) / alpha
    if 1.0 - oc.power > beta:
        value += m_sw * (1.0 - oc.power - beta) / beta
    return value


def ordered_allocation_probability(C: int, T: int, t1: int,
                                   first_probs=None, rest_probs=None) -> float:
    """Exact probability that independently drawn switching times come out
    non-decreasing.

    Defaults: S_1 uniform on {1..t1}, later clusters uniform on {1..T+1}.
    Caller-supplied tables are dicts/sequences of length T+1 giving
    P(S_c = s) for s = 1..T+1.
    """
    n_vals = T + 1
    if first_probs is None:
        first_probs = np.array([1.0 / t1 if s <= t1 else 0.0
                                for s in range(1, n_vals + 1)])
    else:
        first_probs = np.asarray(first_probs, dtype=float)
    if rest_probs is None:
        rest_probs = np.full(n_vals, 1.0 / n_vals)
    else:
        rest_probs = np.asarray(rest_probs, dtype=float)
    # g[s] = P(S_1 <= ... <= S_c, S_c = s), accumulated cluster by cluster.
    g = first_probs.copy()
    for _ in range(1, C):
        g = rest_probs * np.cumsum(g)
    return float(g.sum())


def _sample_truncated_normal(rng, mean, std, n):
    """Positive-part truncated normal draws, shape (n, len(mean))."""
    from scipy.stats import truncnorm
    a = (0.0 - mean) / std
    u = rng.random((n, len(mean)))
    # ppf transform keeps the draw deterministic and vectorized
    return truncnorm.ppf(u, a[None, :], np.inf, loc=mean[None, :],
                         scale=std[None, :])


def _initial_state(scenario, m_max, t1):
    C, T = scenario.n_clusters, scenario.n_periods
    k = len(scenario.analysis_periods)
    m_values = np.arange(2, m_max + 1)
    s_values = [np.arange(1, t1 + 1)] \
        + [np.arange(1, T + 2) for _ in range(C - 1)]
    return CEState(
        m_values=m_values,
        m_probs=np.full(len(m_values), 1.0 / len(m_values)),
        s_values=s_values,
        s_probs=[np.full(len(v), 1.0 / len(v)) for v in s_values],
        f_mean=np.zeros(k),
        f_std=np.full(k, 10.0),
        r_mean=np.zeros(k - 1),
        r_std=np.full(k - 1, 10.0),
    )


def _candidate_design(m, S, f, r, scenario):
    """Build a design from raw sampled parameters, or None if invalid."""
    T = scenario.n_periods
    for t in range(1, T + 1):
        if all(s == t for s in S):
            return None  # every cluster switching at once: rejected manually
    k = len(f)
    efficacy = tuple(f[i] + r[i] for i in range(k - 1)) + (f[k - 1],)
    try:
        return GroupSequentialDesign(
            allocation=AllocationSchedule(tuple(int(s) for s in S), T),
            schedule=AnalysisSchedule(scenario.analysis_periods),
            boundaries=StoppingBoundaries(tuple(f), efficacy),
            m=int(m),
            vc=scenario.vc,
        )
    except ConstraintViolationError:
        return None


def _evaluate(design, scenario, m_sw, cache, abs_tol, seed):
    key = (design.m, tuple(sorted(design.allocation.switch_periods)),
           tuple(round(b, 3) for b in design.boundaries.futility),
           tuple(round(b, 3) for b in design.boundaries.efficacy))
    if key in cache:
        return cache[key]
    try:
        oc = summarize(design, scenario, abs_tol=abs_tol, seed=seed)
        value = penalized_objective(design, scenario, m_sw=m_sw, _oc=oc)
    except (NonEstimableError, ConstraintViolationError):
        value, oc = math.inf, None
    cache[key] = (value, oc)
    return value, oc


def _canonical(design):
    """Equivalent design with switching times sorted ascending."""
    return GroupSequentialDesign(
        allocation=AllocationSchedule(
            tuple(sorted(design.allocation.switch_periods)),
            design.n_periods),
        schedule=design.schedule,
        boundaries=design.boundaries,
        m=design.m,
        vc=design.vc,
    )


def ce_optimize(scenario: ScenarioSpec, config: CEConfig = CEConfig()):
    """Cross-entropy search for the design minimizing the penalized
    objective.  Deterministic given config.seed.

    Raises InfeasibleDesignError (with best-so-far attached) if no design
    satisfying the error-rate constraints is found.
    """
    C, T = scenario.n_clusters, scenario.n_periods
    k = len(scenario.analysis_periods)
    t1 = scenario.analysis_periods[0]
    m_sw = scenario.m_sw
    if m_sw is None:
        _, m_sw = fixed_sample_reference(scenario)
    n_samples = config.n_samples or 10_000 * (C + 2 * k)
    m_max = config.m_max or max(2, int(10 * m_sw / (C * T)))
    n_elite = max(2, math.ceil(config.rho * n_samples))
    smooth = config.smoothing

    state = _initial_state(scenario, m_max, t1)
    cache = {}
    trace = []
    stall = 0
    n_evals = 0

    for iteration in range(config.max_iters):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=(int(config.seed), iteration))))
        m_draw = rng.choice(state.m_values, size=n_samples, p=state.m_probs)
        s_draw = np.column_stack([
            rng.choice(vals, size=n_samples, p=probs)
            for vals, probs in zip(state.s_values, state.s_probs)])
        f_draw = state.f_mean + state.f_std * rng.standard_normal(
            (n_samples, k))
        if k > 1:
            r_draw = _sample_truncated_normal(
                rng, state.r_mean, state.r_std, n_samples)
        else:
            r_draw = np.zeros((n_samples, 0))

        scored = []
        for idx in range(n_samples):
            design = _candidate_design(
                int(m_draw[idx]), s_draw[idx], f_draw[idx], r_draw[idx],
                scenario)
            if design is None:
                continue
            value, oc = _evaluate(design, scenario, m_sw, cache,
                                  config.integrator_tol,
                                  seed=config.seed)
            n_evals += 1
            if math.isfinite(value):
                scored.append((value, idx, design, oc))
        if not scored:
            trace.append({"iteration": iteration,
                          "elite_quantile": math.inf,
                          "best_objective": state.best_objective})
            continue
        scored.sort(key=lambda rec: (
            rec[0], rec[2].m, rec[2].allocation.switch_periods,
            float(np.mean(np.abs(rec[2].boundaries.futility
                                 + rec[2].boundaries.efficacy)))))
        elites = scored[:n_elite]
        elite_quantile = elites[-1][0]

        best_value, best_idx, best_design, best_oc = elites[0]
        improved = best_value < state.best_objective - 1e-9
        if best_value < state.best_objective:
            state.best_objective = best_value
            state.best_design = best_design
        stall = 0 if improved else stall + 1
        # The penalized optimum can sit marginally outside the error-rate
        # constraints, so the best feasible design is tracked separately.
        for value, _, design, oc in scored:
            if oc is not None and oc.alpha_ok and oc.power_ok:
                plain = objective(design, scenario, _oc=oc)
                if plain < state.best_feasible_objective:
                    state.best_feasible_objective = plain
                    state.best_feasible_design = design
        trace.append({"iteration": iteration,
                      "elite_quantile": elite_quantile,
                      "best_objective": state.best_objective})

        # Refit the sampling distribution to the elite set.
        idxs = [rec[1] for rec in elites]
        m_emp = np.array([(m_draw[idxs] == v).mean() for v in state.m_values])
        state.m_probs = smooth * m_emp + (1 - smooth) * state.m_probs
        for c in range(C):
            emp = np.array([(s_draw[idxs, c] == v).mean()
                            for v in state.s_values[c]])
            state.s_probs[c] = smooth * emp + (1 - smooth) * state.s_probs[c]
        f_el = f_draw[idxs]
        state.f_mean = smooth * f_el.mean(axis=0) \
            + (1 - smooth) * state.f_mean
        state.f_std = np.maximum(
            smooth * f_el.std(axis=0) + (1 - smooth) * state.f_std,
            config.std_floor)
        if k > 1:
            r_el = r_draw[idxs]
            state.r_mean = smooth * r_el.mean(axis=0) \
                + (1 - smooth) * state.r_mean
            state.r_std = np.maximum(
                smooth * r_el.std(axis=0) + (1 - smooth) * state.r_std,
                config.std_floor)

        if stall >= config.stall_window:
            break

    if state.best_design is None:
        raise InfeasibleDesignError(
            "no valid design found in the search budget", trace=tuple(trace))
    if state.best_feasible_design is None:
        final = _canonical(state.best_design)
        oc = summarize(final, scenario, abs_tol=config.integrator_tol,
                       seed=config.seed)
        raise InfeasibleDesignError(
            f"best design violates error-rate constraints: "
            f"type-I {oc.type_i:.5f}, power {oc.power:.5f}",
            best_design=final, best_oc=oc, trace=tuple(trace))
    final = _canonical(state.best_feasible_design)
    oc = summarize(final, scenario, abs_tol=config.integrator_tol,
                   seed=config.seed)
    return CEResult(design=final, oc=oc, trace=tuple(trace),
                    n_evaluations=n_evals)
