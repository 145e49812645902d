"""Domain types and linear-model computations for cross-sectional
stepped-wedge cluster randomised trials.

The working representation collapses individual observations to
cluster-period means, which is sufficient under the exchangeable
(cluster random intercept) covariance structure and keeps the linear
algebra at O(C*T) instead of O(m*C*T).  Individual-level design and
covariance builders are kept for cross-checking.

Observation ordering everywhere is period-major: all rows for period 1,
then period 2, and so on.  This makes the period-t design and covariance
matrices exact leading sub-blocks of their period-T counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "ConstraintViolationError",
    "NonEstimableError",
    "VarianceComponents",
    "AllocationSchedule",
    "AnalysisSchedule",
    "StoppingBoundaries",
    "GroupSequentialDesign",
    "ScenarioSpec",
    "FixedEffects",
    "build_treatment_matrix",
    "build_design_matrix",
    "build_covariance",
    "collapsed_design_matrix",
    "collapsed_covariance",
    "information_closed_form",
    "information_generic",
    "statistic_covariance",
]

# Condition-number threshold above which the normal-equations matrix is
# treated as rank deficient.
_COND_LIMIT = 1e12


class ConstraintViolationError(ValueError):
    """A design component violates one of its structural constraints."""


class NonEstimableError(ValueError):
    """The treatment effect is not estimable from the data in question."""


@dataclass(frozen=True)
class VarianceComponents:
    """Cluster random-effect and residual variances."""

    sigma_c2: float
    sigma_e2: float

    def __post_init__(self):
        if self.sigma_c2 < 0.0:
            raise ConstraintViolationError("cluster variance sigma_c2 must be >= 0")
        if self.sigma_e2 <= 0.0:
            raise ConstraintViolationError("residual variance sigma_e2 must be > 0")


@dataclass(frozen=True)
class AllocationSchedule:
    """Switching periods for each cluster.

    switch_periods[c] is the first period in which cluster c receives the
    intervention; n_periods + 1 means the cluster never switches.
    """

    switch_periods: tuple[int, ...]
    n_periods: int

    def __post_init__(self):
        object.__setattr__(self, "switch_periods",
                           tuple(int(s) for s in self.switch_periods))
        C, T = self.n_clusters, self.n_periods
        if C < 2:
            raise ConstraintViolationError("at least two clusters required")
        if T < 2:
            raise ConstraintViolationError("at least two periods required")
        for s in self.switch_periods:
            if not 1 <= s <= T + 1:
                raise ConstraintViolationError(
                    f"switching period {s} outside {{1,...,{T + 1}}}")
        for t in range(1, T + 1):
            if all(s == t for s in self.switch_periods):
                raise ConstraintViolationError(
                    f"all clusters switch in period {t}; "
                    "simultaneous switching of every cluster is not allowed")
        if len(set(self.switch_periods)) < 2:
            raise ConstraintViolationError(
                "at least two distinct allocation sequences required")

    @property
    def n_clusters(self) -> int:
        return len(self.switch_periods)


@dataclass(frozen=True)
class AnalysisSchedule:
    """Periods after which interim (and final) analyses are performed."""

    periods: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(int(t) for t in self.periods))
        if not self.periods:
            raise ConstraintViolationError("at least one analysis required")
        if any(t < 1 for t in self.periods):
            raise ConstraintViolationError("analysis periods must be >= 1")
        if any(b <= a for a, b in zip(self.periods, self.periods[1:])):
            raise ConstraintViolationError(
                "analysis periods must be strictly increasing")

    @property
    def n_analyses(self) -> int:
        return len(self.periods)


@dataclass(frozen=True)
class StoppingBoundaries:
    """Futility (f) and efficacy (e) bounds on the standardized-Z scale.

    The final futility and efficacy bounds coincide, which guarantees a
    decision at the last analysis.
    """

    futility: tuple[float, ...]
    efficacy: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "futility",
                           tuple(float(x) for x in self.futility))
        object.__setattr__(self, "efficacy",
                           tuple(float(x) for x in self.efficacy))
        k = len(self.futility)
        if len(self.efficacy) != k or k == 0:
            raise ConstraintViolationError(
                "futility and efficacy bounds must have equal, positive length")
        for i in range(k - 1):
            if not self.futility[i] < self.efficacy[i]:
                raise ConstraintViolationError(
                    f"interim bounds require f_{i + 1} < e_{i + 1}")
        if self.futility[-1] != self.efficacy[-1]:
            raise ConstraintViolationError(
                "final futility and efficacy bounds must coincide")

    @classmethod
    def from_shared_final(cls, futility_head, efficacy_head, final):
        """Build bounds from interim components plus the shared final bound."""
        final = float(final)
        return cls(tuple(futility_head) + (final,),
                   tuple(efficacy_head) + (final,))

    @property
    def n_analyses(self) -> int:
        return len(self.futility)


@dataclass(frozen=True)
class GroupSequentialDesign:
    """A complete group sequential stepped-wedge design."""

    allocation: AllocationSchedule
    schedule: AnalysisSchedule
    boundaries: StoppingBoundaries
    m: int
    vc: VarianceComponents

    def __post_init__(self):
        object.__setattr__(self, "m", int(self.m))
        if self.m < 2:
            raise ConstraintViolationError(
                "per-cluster per-period size m must be >= 2")
        T = self.allocation.n_periods
        sched = self.schedule.periods
        if sched[-1] != T:
            raise ConstraintViolationError(
                f"final analysis period {sched[-1]} must equal T={T}")
        if self.boundaries.n_analyses != self.schedule.n_analyses:
            raise ConstraintViolationError(
                "boundary length must match the number of analyses")
        if min(self.allocation.switch_periods) > sched[0]:
            raise ConstraintViolationError(
                "no cluster receives the intervention by the first analysis; "
                "treatment effect not estimable")

    @property
    def n_clusters(self) -> int:
        return self.allocation.n_clusters

    @property
    def n_periods(self) -> int:
        return self.allocation.n_periods

    @property
    def n_analyses(self) -> int:
        return self.schedule.n_analyses

    @property
    def max_measurements(self) -> int:
        return self.m * self.n_clusters * self.n_periods


@dataclass(frozen=True)
class ScenarioSpec:
    """A trial design scenario: dimensions, error rates, and objective weights."""

    n_clusters: int
    n_periods: int
    alpha: float
    beta: float
    delta: float
    vc: VarianceComponents
    analysis_periods: tuple[int, ...]
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    m_sw: int | None = None
    m: int | None = None
    switch_periods: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "analysis_periods",
                           tuple(int(t) for t in self.analysis_periods))
        object.__setattr__(self, "weights",
                           tuple(float(w) for w in self.weights))
        if not 0.0 < self.alpha < 1.0:
            raise ConstraintViolationError("alpha must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ConstraintViolationError("beta must lie in (0, 1)")
        if self.delta <= 0.0:
            raise ConstraintViolationError("effect size delta must be > 0")
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ConstraintViolationError(
                "weights must be three nonnegative numbers")
        AnalysisSchedule(self.analysis_periods)
        if self.analysis_periods[-1] != self.n_periods:
            raise ConstraintViolationError(
                "last analysis period must equal the number of periods")

    @property
    def schedule(self) -> AnalysisSchedule:
        return AnalysisSchedule(self.analysis_periods)


@dataclass(frozen=True)
class FixedEffects:
    """Fixed effects of the cross-sectional mixed model.

    period_effects holds the effects for periods 2..T (period 1 is the
    reference and fixed at zero).
    """

    mu: float = 0.0
    period_effects: tuple[float, ...] = ()
    tau: float = 0.0

    def coefficient_vector(self, n_periods: int) -> np.ndarray:
        """(mu, pi_2..pi_T, tau) in design-matrix column order."""
        pi = tuple(self.period_effects)
        if len(pi) != n_periods - 1:
            raise ConstraintViolationError(
                f"expected {n_periods - 1} period effects, got {len(pi)}")
        return np.array([self.mu, *pi, self.tau], dtype=float)


def build_treatment_matrix(allocation: AllocationSchedule) -> np.ndarray:
    """Binary C x T matrix with X[c, t] = 1 iff cluster c is treated in t."""
    S = np.asarray(allocation.switch_periods)
    periods = np.arange(1, allocation.n_periods + 1)
    return (periods[None, :] >= S[:, None]).astype(int)


def _check_period(t, n_periods):
    if not 1 <= t <= n_periods:
        raise ValueError(f"period {t} outside {{1,...,{n_periods}}}")


def build_design_matrix(X: np.ndarray, m: int, t: int) -> np.ndarray:
    """Individual-level design matrix through period t.

    Rows are ordered period-major, (period, cluster, individual); columns
    are intercept, period dummies 2..T, treatment indicator.
    """
    C, T = X.shape
    _check_period(t, T)
    collapsed = collapsed_design_matrix(X, t)
    return np.repeat(collapsed, m, axis=0)


def collapsed_design_matrix(X: np.ndarray, t: int) -> np.ndarray:
    """Design matrix on the cluster-period mean scale, rows (period, cluster)."""
    C, T = X.shape
    _check_period(t, T)
    p = T + 1
    rows = []
    for j in range(1, t + 1):
        block = np.zeros((C, p))
        block[:, 0] = 1.0
        if j >= 2:
            block[:, j - 1] = 1.0
        block[:, p - 1] = X[:, j - 1]
        rows.append(block)
    return np.vstack(rows)


def build_covariance(C: int, m: int, t: int, vc: VarianceComponents,
                     n_periods: int | None = None) -> np.ndarray:
    """Individual-level covariance through period t, rows ordered as in
    build_design_matrix.

    Entries: sigma_c2 + sigma_e2 on the diagonal, sigma_c2 between any two
    observations from the same cluster, zero otherwise.
    """
    if n_periods is not None:
        _check_period(t, n_periods)
    n = m * C * t
    cluster_of = np.tile(np.repeat(np.arange(C), m), t)
    same_cluster = cluster_of[:, None] == cluster_of[None, :]
    cov = np.where(same_cluster, vc.sigma_c2, 0.0)
    cov[np.diag_indices(n)] += vc.sigma_e2
    return cov


def collapsed_covariance(C: int, m: int, t: int,
                         vc: VarianceComponents) -> np.ndarray:
    """Covariance of cluster-period means, rows ordered (period, cluster)."""
    cluster_of = np.tile(np.arange(C), t)
    same_cluster = cluster_of[:, None] == cluster_of[None, :]
    cov = np.where(same_cluster, vc.sigma_c2, 0.0)
    cov[np.diag_indices(C * t)] += vc.sigma_e2 / m
    return cov


def information_closed_form(X: np.ndarray, m: int, t: int,
                            vc: VarianceComponents) -> float:
    """Treatment-effect information through period t, via the closed form
    for the cross-sectional exchangeable model.
    """
    C, T = X.shape
    _check_period(t, T)
    Xt = X[:, :t]
    U = Xt.sum()
    V = (Xt.sum(axis=1) ** 2).sum()
    W = (Xt.sum(axis=0) ** 2).sum()
    if U == 0:
        raise NonEstimableError("no cluster treated by period "
                                f"{t}; treatment effect not estimable")
    if U == C * t:
        raise NonEstimableError("every cluster-period treated through period "
                                f"{t}; treatment effect not estimable")
    s2 = vc.sigma_e2 / m
    sc2 = vc.sigma_c2
    info = ((s2 + t * sc2) * (C * U - W) + sc2 * (U ** 2 - C * V)) \
        / (C * s2 * (s2 + t * sc2))
    if info <= 0.0:
        raise NonEstimableError(
            "treatment indicator confounded with period effects")
    return float(info)


def information_generic(D: np.ndarray, Sigma: np.ndarray) -> float:
    """Treatment-effect information from explicit design and covariance
    matrices: the reciprocal of the last diagonal entry of (D' Sigma^-1 D)^-1.
    """
    normal_eq = D.T @ np.linalg.solve(Sigma, D)
    if np.linalg.cond(normal_eq) > _COND_LIMIT:
        raise NonEstimableError(
            "normal-equations matrix is numerically rank deficient")
    inv = np.linalg.inv(normal_eq)
    info = 1.0 / inv[-1, -1]
    if info <= 0.0:
        raise NonEstimableError("nonpositive information; model degenerate")
    return float(info)


@lru_cache(maxsize=4096)
def _statistic_covariance_cached(design: GroupSequentialDesign):
    X = build_treatment_matrix(design.allocation)
    infos = np.array([
        information_closed_form(X, design.m, t, design.vc)
        for t in design.schedule.periods
    ])
    ratio = np.sqrt(np.minimum.outer(infos, infos)
                    / np.maximum.outer(infos, infos))
    return np.sqrt(infos), ratio


def statistic_covariance(design: GroupSequentialDesign):
    """Mean scaling and correlation of the standardized interim statistics.

    Returns (sqrt_informations, Lambda): Z_i has mean tau * sqrt(I_i) and
    Cov(Z_i, Z_j) = sqrt(I_i / I_j) for i <= j.
    """
    info_sqrt, Lambda = _statistic_covariance_cached(design)
    return info_sqrt.copy(), Lambda.copy()
