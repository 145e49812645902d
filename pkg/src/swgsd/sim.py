"""Trial simulation: sequential data generation, interim GLS fitting,
trial conduct, and replication studies of the analysis procedures.

Data generation and fitting operate on cluster-period means, which is
exact under the exchangeable covariance structure and keeps replication
studies fast.  An individual-level generator is retained for
distributional cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .analysis import TrialResult
from .model import FixedEffects, GroupSequentialDesign, NonEstimableError, \
    build_treatment_matrix, collapsed_covariance, collapsed_design_matrix, \
    statistic_covariance
from .mvnorm import mvn_rectangles, std_normal_quantile
from .oc import integration_limits

__all__ = [
    "PeriodData",
    "GLSFit",
    "ReplicationMetrics",
    "generate_next_period",
    "generate_trial",
    "generate_individual_trial",
    "gls_fit",
    "run_trial",
    "replicate_study",
]

# Number of grid points per stage for the adjusted-inference
# interpolation tables used inside replicate_study.
_SO_GRID_POINTS = 512
# Resolution of the exceedance surface inverted for the adjusted
# estimate and confidence limit: effect grid by statistic grid.
_SO_TAU_POINTS = 161
_SO_SURFACE_Z_POINTS = 129


@dataclass(frozen=True)
class PeriodData:
    """Cluster-period mean responses for a single period."""

    period: int
    cluster_means: np.ndarray  # shape (C,)

    def __post_init__(self):
        object.__setattr__(self, "cluster_means",
                           np.asarray(self.cluster_means, dtype=float))
        if self.cluster_means.ndim != 1:
            raise ValueError("cluster_means must be one-dimensional")


@dataclass(frozen=True)
class GLSFit:
    """A generalised least squares fit through one analysis period.

    beta entries for period effects not yet observed are NaN.
    """

    beta: np.ndarray
    tau_hat: float
    info: float
    z: float


@lru_cache(maxsize=256)
def _mean_matrix(design, effects):
    """Cluster-period mean surface, shape (T, C)."""
    X = build_treatment_matrix(design.allocation)
    beta = effects.coefficient_vector(design.n_periods)
    mu, pi, tau = beta[0], beta[1:-1], beta[-1]
    period_effect = np.concatenate(([0.0], pi))
    return mu + period_effect[:, None] + tau * X.T


@lru_cache(maxsize=256)
def _conditional_weights(design):
    """Per-period conditioning weights and residual standard deviations.

    For period t given periods 1..t-1 of the same cluster, the mean
    correction is weights[t] @ (history - its mean) and the conditional
    standard deviation is sds[t].  Identical across clusters.
    """
    sc2 = design.vc.sigma_c2
    w = design.vc.sigma_e2 / design.m
    weights, sds = [np.zeros(0)], [np.sqrt(sc2 + w)]
    for t in range(2, design.n_periods + 1):
        h = t - 1
        sig_hist = sc2 * np.ones((h, h)) + w * np.eye(h)
        cross = sc2 * np.ones(h)
        wt = np.linalg.solve(sig_hist, cross)
        var = sc2 + w - cross @ wt
        weights.append(wt)
        sds.append(np.sqrt(var))
    return weights, sds


def generate_next_period(history, t, effects: FixedEffects,
                         design: GroupSequentialDesign, rng) -> PeriodData:
    """Draw period t cluster means conditional on periods 1..t-1.

    history is the sequence of PeriodData for periods 1..t-1, in order.
    """
    if not 1 <= t <= design.n_periods:
        raise ValueError(f"period {t} outside {{1,...,{design.n_periods}}}")
    if len(history) != t - 1 or any(p.period != j + 1
                                    for j, p in enumerate(history)):
        raise ValueError("history must hold periods 1..t-1 in order")
    C = design.n_clusters
    means = _mean_matrix(design, effects)
    weights, sds = _conditional_weights(design)
    if t == 1:
        cond_mean = means[0]
    else:
        hist = np.stack([p.cluster_means for p in history])  # (t-1, C)
        cond_mean = means[t - 1] + weights[t - 1] @ (hist - means[:t - 1])
    draw = cond_mean + sds[t - 1] * rng.standard_normal(C)
    return PeriodData(period=t, cluster_means=draw)


def generate_trial(design, effects, rng) -> np.ndarray:
    """Cluster-period means for a full trial, shape (T, C)."""
    history = []
    for t in range(1, design.n_periods + 1):
        history.append(generate_next_period(history, t, effects, design, rng))
    return np.stack([p.cluster_means for p in history])


def generate_individual_trial(design, effects, rng) -> np.ndarray:
    """Individual responses for a full trial, shape (T, C, m).

    Draws the cluster random intercepts and residuals directly; the joint
    distribution matches the sequential conditional generator.
    """
    C, T, m = design.n_clusters, design.n_periods, design.m
    means = _mean_matrix(design, effects)
    cluster_effects = np.sqrt(design.vc.sigma_c2) * rng.standard_normal(C)
    resid = np.sqrt(design.vc.sigma_e2) * rng.standard_normal((T, C, m))
    return means[:, :, None] + cluster_effects[None, :, None] + resid


def _gls_operator(design, t):
    """GLS solve at period t on collapsed data.

    Returns (identifiable column mask, full solve operator A with
    beta_hat = A @ y, information for the treatment effect).
    """
    X = build_treatment_matrix(design.allocation)
    D = collapsed_design_matrix(X, t)
    keep = np.abs(D).sum(axis=0) > 0
    Dk = D[:, keep]
    Sigma = collapsed_covariance(design.n_clusters, design.m, t, design.vc)
    sinv_d = np.linalg.solve(Sigma, Dk)
    normal_eq = Dk.T @ sinv_d
    if np.linalg.cond(normal_eq) > 1e12:
        raise NonEstimableError(
            f"treatment effect not estimable from periods 1..{t}")
    cov_beta = np.linalg.inv(normal_eq)
    A = cov_beta @ sinv_d.T
    info = 1.0 / cov_beta[-1, -1]
    if info <= 0.0:
        raise NonEstimableError("nonpositive information at analysis")
    return keep, A, info


def gls_fit(period_means, design: GroupSequentialDesign) -> GLSFit:
    """Fit the mixed model by GLS on cluster-period means through the
    last supplied period."""
    y = np.asarray(period_means, dtype=float)
    if y.ndim != 2 or y.shape[1] != design.n_clusters:
        raise ValueError("period_means must have shape (t, C)")
    t = y.shape[0]
    keep, A, info = _gls_operator(design, t)
    beta_k = A @ y.reshape(-1)
    beta = np.full(design.n_periods + 1, np.nan)
    beta[keep] = beta_k
    tau_hat = float(beta_k[-1])
    return GLSFit(beta=beta, tau_hat=tau_hat, info=float(info),
                  z=float(tau_hat * np.sqrt(info)))


def run_trial(design: GroupSequentialDesign, effects: FixedEffects,
              rng) -> TrialResult:
    """Conduct one trial: generate periods sequentially and apply the
    stopping rule at each planned analysis."""
    f = design.boundaries.futility
    e = design.boundaries.efficacy
    history = []
    for t in range(1, design.n_periods + 1):
        history.append(generate_next_period(history, t, effects, design, rng))
        if t in design.schedule.periods:
            i = design.schedule.periods.index(t) + 1
            fit = gls_fit(np.stack([p.cluster_means for p in history]), design)
            if fit.z <= f[i - 1]:
                return TrialResult(gamma=i, z=fit.z, psi=0, design=design)
            if fit.z > e[i - 1]:
                return TrialResult(gamma=i, z=fit.z, psi=1, design=design)
    raise AssertionError("trial failed to terminate; boundaries malformed")


@dataclass(frozen=True)
class ReplicationMetrics:
    """Estimator performance at one true effect value."""

    tau: float
    n_replicates: int
    bias_naive: float
    bias_so: float
    rmse_naive: float
    rmse_so: float
    coverage_naive: float
    coverage_so: float
    se_bias_naive: float
    se_bias_so: float
    se_coverage_naive: float
    se_coverage_so: float
    stop_frequencies: tuple  # ((gamma, psi, frequency), ...)


def _simulate_statistics(design, tau, R, seed_key, mu=0.0, period_effects=None):
    """Interim Z statistics and MLEs for R replicates, vectorized.

    Returns (z, tau_hat) arrays of shape (R, n_analyses).
    """
    T, C = design.n_periods, design.n_clusters
    if period_effects is None:
        period_effects = (0.0,) * (T - 1)
    effects = FixedEffects(mu=mu, period_effects=tuple(period_effects), tau=tau)
    means = _mean_matrix(design, effects)
    weights, sds = _conditional_weights(design)
    y = np.empty((R, T, C))
    for t in range(1, T + 1):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=(*seed_key, t))))
        noise = sds[t - 1] * rng.standard_normal((R, C))
        if t == 1:
            y[:, 0] = means[0] + noise
        else:
            centered = y[:, :t - 1] - means[:t - 1]
            y[:, t - 1] = means[t - 1] \
                + np.einsum("h,rhc->rc", weights[t - 1], centered) + noise
    k = design.n_analyses
    z = np.empty((R, k))
    tau_hat = np.empty((R, k))
    for i, t in enumerate(design.schedule.periods):
        _, A, info = _gls_operator(design, t)
        a_tau = A[-1]
        tau_hat[:, i] = y[:, :t].reshape(R, -1) @ a_tau
        z[:, i] = tau_hat[:, i] * np.sqrt(info)
    return z, tau_hat


def _apply_stopping(z, design):
    """Stopping analysis (0-based), decision and terminal z per replicate."""
    R, k = z.shape
    f = np.array(design.boundaries.futility)
    e = np.array(design.boundaries.efficacy)
    stopped = (z <= f) | (z > e)
    stopped[:, -1] = True
    gamma0 = stopped.argmax(axis=1)
    z_term = z[np.arange(R), gamma0]
    psi = (z_term > e[gamma0]).astype(int)
    return gamma0, psi, z_term


class _StagewiseTables:
    """Interpolation tables for adjusted inference, per stopping stage.

    Exact root searches are run on a z grid spanning the observed
    statistics; per-replicate quantities are linearly interpolated.
    """

    def __init__(self, design, alpha, abs_tol=1e-6, seed=0):
        self.design = design
        self.alpha = alpha
        self.abs_tol = abs_tol
        self.seed = seed
        self._grids = {}

    def _exceedance_surface(self, gamma, z_grid, taus, info_sqrt, Lambda,
                            abs_tol=None):
        """Stage-wise exceedance E(tau | gamma, z) on a (tau, z) grid.

        Shifting the integration limits by tau times the mean direction
        keeps the covariance fixed, so every term integrates as one batch.
        """
        if abs_tol is None:
            abs_tol = self.abs_tol
        f = self.design.boundaries.futility
        e = self.design.boundaries.efficacy
        out = np.zeros((len(taus), len(z_grid)))
        for j in range(1, gamma + 1):
            limits = [integration_limits(i, j, 1, f, e)
                      for i in range(1, j + 1)]
            lower, upper = map(lambda s: np.array(s, dtype=float),
                               zip(*limits))
            shift = taus[:, None] * info_sqrt[:j]
            if j < gamma:
                # Rejection before the stopping stage: constant in z.
                values, _ = mvn_rectangles(
                    lower - shift, upper - shift, Lambda[:j, :j],
                    abs_tol=abs_tol, seed=self.seed)
                out += values[:, None]
            else:
                lowers = np.tile(lower, (len(z_grid), 1))
                lowers[:, -1] = z_grid
                uppers = np.tile(upper, (len(z_grid), 1))
                for a in range(len(taus)):
                    values, _ = mvn_rectangles(
                        lowers - shift[a], uppers - shift[a], Lambda[:j, :j],
                        abs_tol=abs_tol, seed=self.seed)
                    out[a] += values
        return out

    def _build(self, gamma, z_lo, z_hi):
        n = _SO_GRID_POINTS
        pad = 1e-6 + 0.02 * (z_hi - z_lo)
        grid = np.linspace(z_lo - pad, z_hi + pad, n)
        info_sqrt, Lambda = statistic_covariance(self.design)

        p_so = self._exceedance_surface(
            gamma, grid, np.zeros(1), info_sqrt, Lambda)[0]
        p_so = np.clip(p_so, 0.0, 1.0)

        # Estimate and confidence limit: tabulate the exceedance surface
        # on a coarser z grid and invert it in tau by interpolation.
        # Integrator noise enters the roots damped by the slope of E, so a
        # looser tolerance is safe here.
        surface_tol = max(self.abs_tol, 1e-4)
        zg = np.linspace(grid[0], grid[-1], _SO_SURFACE_Z_POINTS)
        se = 1.0 / info_sqrt[gamma - 1]
        tau_lo = zg[0] * se - 4.0 * se
        tau_hi = zg[-1] * se + 4.0 * se
        for _ in range(8):
            taus = np.linspace(tau_lo, tau_hi, _SO_TAU_POINTS)
            E = self._exceedance_surface(gamma, zg, taus, info_sqrt, Lambda,
                                         abs_tol=surface_tol)
            if E[0].max() < self.alpha and E[-1].min() > 0.5:
                break
            span = tau_hi - tau_lo
            tau_lo -= 0.5 * span
            tau_hi += 0.5 * span
        else:
            raise RuntimeError("adjusted-inference root bracket failed")

        est_zg = np.empty(len(zg))
        lci_zg = np.empty(len(zg))
        for b in range(len(zg)):
            # monotone in tau up to integrator noise
            col = np.maximum.accumulate(E[:, b])
            est_zg[b] = np.interp(0.5, col, taus)
            lci_zg[b] = np.interp(self.alpha, col, taus)
        est = np.interp(grid, zg, est_zg)
        lci = np.interp(grid, zg, lci_zg)
        return grid, p_so, est, lci

    def prepare(self, gamma, z_lo, z_hi):
        """Build the stage-gamma tables for a known statistic range up
        front, avoiding rebuilds when evaluate() is called piecewise."""
        self._grids[gamma] = self._build(gamma, z_lo, z_hi)

    def evaluate(self, gamma, z_values):
        """(p_so, estimate_so, ci_lower_so) for an array of statistics
        observed at stopping stage gamma."""
        z_values = np.asarray(z_values, dtype=float)
        key = gamma
        if key not in self._grids:
            self._grids[key] = self._build(
                gamma, float(z_values.min()), float(z_values.max()))
        grid, p_so, est, lci = self._grids[key]
        if z_values.min() < grid[0] or z_values.max() > grid[-1]:
            self._grids[key] = self._build(
                gamma,
                min(float(z_values.min()), grid[0]),
                max(float(z_values.max()), grid[-1]))
            grid, p_so, est, lci = self._grids[key]
        return (np.interp(z_values, grid, p_so),
                np.interp(z_values, grid, est),
                np.interp(z_values, grid, lci))


def replicate_study(design: GroupSequentialDesign, tau_grid, R: int,
                    seed: int = 0, alpha: float = 0.05,
                    mu: float = 0.0, period_effects=None,
                    return_raw: bool = False):
    """Replicate trials at each effect in tau_grid and score the naive and
    stage-wise adjusted analysis procedures.

    Returns a list of ReplicationMetrics, one per tau (plus a raw-results
    dict when return_raw is set).  Deterministic given seed.
    """
    if R < 1000:
        raise ValueError("at least 1000 replicates required for usable "
                         "standard errors")
    tau_grid = [float(t) for t in tau_grid]
    info_sqrt, _ = statistic_covariance(design)
    z_alpha = std_normal_quantile(1.0 - alpha)
    k = design.n_analyses

    per_tau = []
    for ti, tau in enumerate(tau_grid):
        z, tau_hat = _simulate_statistics(
            design, tau, R, seed_key=(int(seed), ti),
            mu=mu, period_effects=period_effects)
        gamma0, psi, z_term = _apply_stopping(z, design)
        per_tau.append((tau, gamma0, psi, z_term))

    # One set of adjusted-inference tables per stopping stage, spanning the
    # statistics observed across the whole tau grid.
    tables = _StagewiseTables(design, alpha, seed=seed)
    stage_ranges = {}
    for _, gamma0, _, z_term in per_tau:
        for g in range(k):
            mask = gamma0 == g
            if not mask.any():
                continue
            lo = float(z_term[mask].min())
            hi = float(z_term[mask].max())
            if g in stage_ranges:
                lo = min(lo, stage_ranges[g][0])
                hi = max(hi, stage_ranges[g][1])
            stage_ranges[g] = (lo, hi)
    for g, (lo, hi) in stage_ranges.items():
        tables.prepare(g + 1, lo, hi)
    metrics = []
    raw = {}
    for tau, gamma0, psi, z_term in per_tau:
        est_n = z_term / info_sqrt[gamma0]
        lci_n = est_n - z_alpha / info_sqrt[gamma0]
        p_so = np.empty(R)
        est_so = np.empty(R)
        lci_so = np.empty(R)
        for g in range(k):
            mask = gamma0 == g
            if not mask.any():
                continue
            p_so[mask], est_so[mask], lci_so[mask] = \
                tables.evaluate(g + 1, z_term[mask])
        err_n = est_n - tau
        err_so = est_so - tau
        cov_n = tau > lci_n
        cov_so = tau > lci_so
        freq = tuple(sorted(
            (g + 1, p, float(((gamma0 == g) & (psi == p)).mean()))
            for g in range(k) for p in (0, 1)))
        metrics.append(ReplicationMetrics(
            tau=tau,
            n_replicates=R,
            bias_naive=float(err_n.mean()),
            bias_so=float(err_so.mean()),
            rmse_naive=float(np.sqrt((err_n ** 2).mean())),
            rmse_so=float(np.sqrt((err_so ** 2).mean())),
            coverage_naive=float(cov_n.mean()),
            coverage_so=float(cov_so.mean()),
            se_bias_naive=float(err_n.std(ddof=1) / np.sqrt(R)),
            se_bias_so=float(err_so.std(ddof=1) / np.sqrt(R)),
            se_coverage_naive=float(
                np.sqrt(cov_n.mean() * (1 - cov_n.mean()) / R)),
            se_coverage_so=float(
                np.sqrt(cov_so.mean() * (1 - cov_so.mean()) / R)),
            stop_frequencies=freq,
        ))
        if return_raw:
            raw[tau] = {
                "gamma": gamma0 + 1, "psi": psi, "z": z_term,
                "estimate_naive": est_n, "estimate_so": est_so,
                "ci_lower_naive": lci_n, "ci_lower_so": lci_so,
                "p_so": p_so,
            }
    return (metrics, raw) if return_raw else metrics
