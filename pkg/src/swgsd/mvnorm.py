"""Normal probability kernels.

Standard normal CDF/quantile plus multivariate normal rectangle
probabilities, computed with randomized quasi-Monte Carlo using
sequential conditioning (separation of variables).  Dimensions in this
package are small (one per interim analysis), so no variable reordering
or sparsity tricks are needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

__all__ = [
    "RectangleProbability",
    "std_normal_cdf",
    "std_normal_quantile",
    "mvn_rectangle",
    "mvn_rectangles",
]

# Quantile arguments are clipped away from {0, 1} before ndtri.
_CLIP = 1e-15

# Adaptive sampling schedule: log2(points per randomization).
_BASE_LOG2_POINTS = 9
_MAX_LOG2_POINTS = 16
_N_RANDOMIZATIONS = 12


def std_normal_cdf(z):
    """Phi(z), elementwise for array input."""
    out = ndtr(np.asarray(z, dtype=float))
    return float(out) if np.ndim(z) == 0 else out


def std_normal_quantile(p):
    """Phi^{-1}(p) for p strictly inside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("quantile argument must lie strictly in (0, 1)")
    out = ndtri(arr)
    return float(out) if np.ndim(p) == 0 else out


@dataclass(frozen=True)
class RectangleProbability:
    """A rectangle probability with its Monte Carlo error bound."""

    value: float
    error_estimate: float

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"probability {self.value} outside [0, 1]")
        if self.error_estimate < 0.0:
            raise ValueError("error estimate must be nonnegative")


def _validated_limits(lower, upper, mean, dim_from_cov):
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape:
        raise ValueError("lower and upper limits must have matching shapes")
    if dim_from_cov is not None and lower.shape[1] != dim_from_cov:
        raise ValueError(
            f"limit dimension {lower.shape[1]} does not match covariance "
            f"dimension {dim_from_cov}"
        )
    if np.any(lower >= upper):
        raise ValueError("crossed integration limits: require lower < upper")
    if mean is not None:
        mean = np.asarray(mean, dtype=float)
        lower = lower - mean
        upper = upper - mean
    return lower, upper


def _cholesky(cov):
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be a square matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance matrix is not positive definite") from exc


def _qmc_pass(a, b, chol, log2_points, seed_seq):
    """One adaptive pass: mean and error over scrambled-Sobol randomizations.

    a, b: standardized limits, shape (n_rect, d).  Returns (values, errors).
    """
    n_rect, d = a.shape
    children = seed_seq.spawn(_N_RANDOMIZATIONS)
    batch_means = np.empty((_N_RANDOMIZATIONS, n_rect))
    sd0 = chol[0, 0]
    d0 = ndtr(a[:, 0] / sd0)
    e0 = ndtr(b[:, 0] / sd0)
    for k, child in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(child))
        sampler = qmc.Sobol(d=max(d - 1, 1), scramble=True, seed=rng)
        u = sampler.random_base2(log2_points)  # (n_pts, d-1)
        n_pts = u.shape[0]
        low = np.broadcast_to(d0, (n_pts, n_rect))
        high = np.broadcast_to(e0, (n_pts, n_rect))
        f = high - low
        y = np.empty((n_pts, n_rect, d - 1))
        for i in range(1, d):
            z = low + u[:, i - 1][:, None] * (high - low)
            y[:, :, i - 1] = ndtri(np.clip(z, _CLIP, 1.0 - _CLIP))
            s = y[:, :, :i] @ chol[i, :i]
            low = ndtr((a[:, i][None, :] - s) / chol[i, i])
            high = ndtr((b[:, i][None, :] - s) / chol[i, i])
            f = f * np.clip(high - low, 0.0, 1.0)
        batch_means[k] = f.mean(axis=0)
    values = batch_means.mean(axis=0)
    errors = 3.0 * batch_means.std(axis=0, ddof=1) / np.sqrt(_N_RANDOMIZATIONS)
    return values, errors


def mvn_rectangles(lower, upper, cov, *, mean=None, abs_tol=1e-6, seed=0):
    """Rectangle probabilities for a batch of limits sharing one covariance.

    lower, upper: arrays of shape (n_rect, d); +-inf entries allowed.
    Returns (values, error_estimates) as arrays of length n_rect.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    lower, upper = _validated_limits(lower, upper, mean, cov.shape[0])
    n_rect, d = lower.shape
    if d == 1:
        sd = np.sqrt(cov[0, 0])
        values = ndtr(upper[:, 0] / sd) - ndtr(lower[:, 0] / sd)
        return np.clip(values, 0.0, 1.0), np.zeros(n_rect)
    chol = _cholesky(cov)
    log2_points = _BASE_LOG2_POINTS
    while True:
        seed_seq = np.random.SeedSequence(entropy=(0x5357, int(seed), log2_points))
        values, errors = _qmc_pass(lower, upper, chol, log2_points, seed_seq)
        if errors.max(initial=0.0) <= abs_tol or log2_points >= _MAX_LOG2_POINTS:
            return np.clip(values, 0.0, 1.0), errors
        log2_points += 2


def mvn_rectangle(lower, upper, mean, cov, abs_tol=1e-6, seed=0):
    """Probability that a N(mean, cov) vector falls in [lower, upper].

    Infinite limits are admitted as +-numpy.inf.  Deterministic for a
    given (inputs, seed) pair.
    """
    values, errors = mvn_rectangles(
        np.atleast_2d(lower), np.atleast_2d(upper), cov,
        mean=mean, abs_tol=abs_tol, seed=seed,
    )
    return RectangleProbability(float(values[0]), float(errors[0]))
