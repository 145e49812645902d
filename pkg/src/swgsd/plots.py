"""Figure rendering for the report path: simulation-study panels
(bias, RMSE, coverage) and optimisation trace plots, written to files
alongside the delimited output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["simulation_figure", "trace_figure"]


def simulation_figure(metrics, path, alpha=0.05, title=None):
    """Three-panel figure of estimator performance over the effect grid.

    Naive procedures are drawn solid, adjusted (stage-wise) procedures
    dashed, matching the usual presentation of these comparisons.
    """
    taus = [m.tau for m in metrics]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    panels = [
        ("Average bias", "bias_naive", "bias_so"),
        ("RMSE", "rmse_naive", "rmse_so"),
        ("Coverage", "coverage_naive", "coverage_so"),
    ]
    for ax, (label, key_n, key_so) in zip(axes, panels):
        ax.plot(taus, [getattr(m, key_n) for m in metrics],
                "-", color="C0", label="naive")
        ax.plot(taus, [getattr(m, key_so) for m in metrics],
                "--", color="C1", label="adjusted")
        ax.set_xlabel(r"true effect $\tau$")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes[0].axhline(0.0, color="grey", lw=0.8)
    axes[2].axhline(1.0 - alpha, color="grey", lw=0.8)
    axes[0].legend(frameon=False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def trace_figure(trace, path, title=None):
    """Optimisation progress: best objective and elite threshold by
    iteration."""
    iters = [rec["iteration"] for rec in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(iters, [rec["best_objective"] for rec in trace],
            "-o", ms=3, label="best objective")
    ax.plot(iters, [rec["elite_quantile"] for rec in trace],
            "--", label="elite threshold")
    ax.set_xlabel("iteration")
    ax.set_ylabel("penalized objective")
    ax.grid(True, alpha=0.3)
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
