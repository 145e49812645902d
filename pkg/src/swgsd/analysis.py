"""Post-trial inference from a terminal observation.

Naive (maximum likelihood) estimate, p-value and one-sided confidence
bound, plus the stage-wise-ordering adjusted p-value, median-unbiased
estimate and exact-coverage one-sided confidence bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .model import ConstraintViolationError, GroupSequentialDesign, \
    statistic_covariance
from .mvnorm import mvn_rectangles, std_normal_cdf, std_normal_quantile
from .oc import integration_limits

__all__ = [
    "RootBracketError",
    "TrialResult",
    "InferenceReport",
    "naive_inference",
    "stagewise_exceedance",
    "so_p_value",
    "so_root",
    "infer",
]

# Integrals inside root finding run tighter than the reporting default so
# root brackets stay stable.
ROOT_ABS_TOL = 1e-7

# Slack on boundary comparisons when classifying a terminal observation.
_BOUNDARY_TOL = 1e-12

# Bracket expansion limits for the exceedance root search, in units of the
# standard error at the stopping analysis.
_BRACKET_INIT = 5.0
_BRACKET_MAX = 20.0


class RootBracketError(RuntimeError):
    """The exceedance equation has no root in the admissible bracket."""


def _classify(z, gamma, design):
    """Decision implied by z at analysis gamma, or None for continuation."""
    f = design.boundaries.futility[gamma - 1]
    e = design.boundaries.efficacy[gamma - 1]
    if z <= f + _BOUNDARY_TOL:
        return 0
    if z > e + _BOUNDARY_TOL:
        return 1
    if gamma == design.n_analyses:
        # At the final analysis f = e, so only roundoff lands here.
        return 0
    return None


@dataclass(frozen=True)
class TrialResult:
    """The terminal observation of a completed trial: the stopping analysis
    and the standardized statistic observed there."""

    gamma: int
    z: float
    psi: int
    design: GroupSequentialDesign
    tau_hat_mle: float = field(init=False)
    info: float = field(init=False)

    def __post_init__(self):
        if not 1 <= self.gamma <= self.design.n_analyses:
            raise ConstraintViolationError(
                f"stopping analysis {self.gamma} outside "
                f"{{1,...,{self.design.n_analyses}}}")
        decision = _classify(self.z, self.gamma, self.design)
        if decision is None:
            f = self.design.boundaries.futility[self.gamma - 1]
            e = self.design.boundaries.efficacy[self.gamma - 1]
            raise ConstraintViolationError(
                f"z={self.z} lies in the continuation region ({f}, {e}] at "
                f"analysis {self.gamma}; not a terminal observation")
        if decision != self.psi:
            raise ConstraintViolationError(
                f"decision psi={self.psi} inconsistent with z={self.z} at "
                f"analysis {self.gamma}")
        info_sqrt, _ = statistic_covariance(self.design)
        object.__setattr__(self, "info", float(info_sqrt[self.gamma - 1] ** 2))
        object.__setattr__(self, "tau_hat_mle",
                           float(self.z / info_sqrt[self.gamma - 1]))

    @classmethod
    def from_statistic(cls, gamma, z, design):
        """Build a result, inferring the decision from the boundaries."""
        if not 1 <= gamma <= design.n_analyses:
            raise ConstraintViolationError(
                f"stopping analysis {gamma} outside "
                f"{{1,...,{design.n_analyses}}}")
        decision = _classify(z, gamma, design)
        if decision is None:
            f = design.boundaries.futility[gamma - 1]
            e = design.boundaries.efficacy[gamma - 1]
            raise ConstraintViolationError(
                f"z={z} lies in the continuation region ({f}, {e}] at "
                f"analysis {gamma}; not a terminal observation")
        return cls(gamma=gamma, z=float(z), psi=decision, design=design)


@dataclass(frozen=True)
class InferenceReport:
    """Naive and stage-wise adjusted inference for one trial result."""

    estimate_naive: float
    p_naive: float
    ci_lower_naive: float
    estimate_so: float
    p_so: float
    ci_lower_so: float


def naive_inference(result: TrialResult, alpha: float):
    """MLE, unadjusted p-value and one-sided lower confidence bound."""
    tau_hat = result.tau_hat_mle
    p = 1.0 - std_normal_cdf(result.z)
    lower = tau_hat - std_normal_quantile(1.0 - alpha) / np.sqrt(result.info)
    return tau_hat, float(p), float(lower)


def stagewise_exceedance(tau, gamma, z, design: GroupSequentialDesign,
                         abs_tol=ROOT_ABS_TOL, seed=0) -> float:
    """Probability of a result more extreme than (gamma, z) in the
    stage-wise ordering, at treatment effect tau.

    Sums the rejection probabilities at analyses before gamma, plus the
    probability of stopping at gamma with a statistic above z.
    """
    info_sqrt, Lambda = statistic_covariance(design)
    f = design.boundaries.futility
    e = design.boundaries.efficacy
    total = 0.0
    for j in range(1, gamma + 1):
        limits = [integration_limits(i, j, 1, f, e) for i in range(1, j + 1)]
        lower, upper = map(np.array, zip(*[map(float, lim) for lim in limits]))
        if j == gamma:
            lower[-1] = z  # the observed statistic replaces e_gamma
        shift = tau * info_sqrt[:j]
        values, _ = mvn_rectangles(
            (lower - shift)[None, :], (upper - shift)[None, :],
            Lambda[:j, :j], abs_tol=abs_tol, seed=seed)
        total += float(values[0])
    return min(max(total, 0.0), 1.0)


def so_p_value(result: TrialResult, abs_tol=ROOT_ABS_TOL, seed=0) -> float:
    """Adjusted p-value: exceedance probability of the observed result
    under the null."""
    return stagewise_exceedance(0.0, result.gamma, result.z, result.design,
                                abs_tol=abs_tol, seed=seed)


def so_root(result: TrialResult, target: float,
            abs_tol=ROOT_ABS_TOL, seed=0) -> float:
    """Effect value tau at which the exceedance of the observed result
    equals target.

    target = 0.5 gives the median-unbiased estimate; target = alpha gives
    the lower limit of the exact-coverage one-sided confidence interval.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie strictly in (0, 1)")

    def g(tau):
        return stagewise_exceedance(tau, result.gamma, result.z, result.design,
                                    abs_tol=abs_tol, seed=seed) - target

    se = 1.0 / np.sqrt(result.info)
    center = result.tau_hat_mle
    width = _BRACKET_INIT * se
    while True:
        lo, hi = center - width, center + width
        glo, ghi = g(lo), g(hi)
        if glo <= 0.0 <= ghi:
            break
        if width >= _BRACKET_MAX * se:
            raise RootBracketError(
                f"no root of the exceedance equation within "
                f"{_BRACKET_MAX} standard errors of the MLE")
        width *= 2.0
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    return float(brentq(g, lo, hi, xtol=1e-9))


def infer(result: TrialResult, alpha: float,
          abs_tol=ROOT_ABS_TOL, seed=0) -> InferenceReport:
    """Full inference report: naive and stage-wise adjusted quantities."""
    est_n, p_n, lci_n = naive_inference(result, alpha)
    return InferenceReport(
        estimate_naive=est_n,
        p_naive=p_n,
        ci_lower_naive=lci_n,
        estimate_so=so_root(result, 0.5, abs_tol=abs_tol, seed=seed),
        p_so=so_p_value(result, abs_tol=abs_tol, seed=seed),
        ci_lower_so=so_root(result, alpha, abs_tol=abs_tol, seed=seed),
    )
