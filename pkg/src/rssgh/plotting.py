"""PNG figures written next to the CSV outputs (non-interactive backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_curves(curves, labels, path, title: str = "Net survival") -> None:
    """Posterior mean curves with shaded intervals."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for c, lab in zip(curves, labels):
        if c is None:
            continue
        line, = ax.plot(c.times, c.mean, lw=1.5, label=lab)
        ax.fill_between(c.times, c.lower, c.upper, color=line.get_color(), alpha=0.15, lw=0)
    ax.set_xlabel("years since diagnosis")
    ax.set_ylabel("net survival")
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    if len(labels) <= 12:
        ax.legend(fontsize=7, frameon=False)
    _save(fig, path)


def plot_exceedance(prob, labels, path, threshold: float = 0.0, selector: str = "u") -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    y = np.arange(len(prob))
    ax.barh(y, prob, color="0.4")
    ax.set_yticks(y, labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel(f"P({selector} > {threshold:g})")
    _save(fig, path)


def plot_comparison(report, path) -> None:
    """elpd differences to the best model with 2-SE bars."""
    fig, ax = plt.subplots(figsize=(7, 0.5 * len(report.names) + 1.5))
    y = np.arange(len(report.names))
    ax.errorbar(report.elpd_diff, y, xerr=2 * report.se_diff, fmt="o", color="k", capsize=3)
    ax.axvline(0, color="0.6", lw=0.8)
    ax.set_yticks(y, report.names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("elpd difference to best (+/- 2 SE)")
    _save(fig, path)


def plot_traces(chains, path, max_params: int = 12) -> None:
    names = chains[0].names[:max_params]
    k = len(names)
    fig, axes = plt.subplots(k, 1, figsize=(7, 1.2 * k + 0.5), sharex=True, squeeze=False)
    for j, ax in enumerate(axes[:, 0]):
        for c in chains:
            ax.plot(c.draws[:, j], lw=0.4)
        ax.set_ylabel(names[j], fontsize=6, rotation=0, ha="right")
        ax.tick_params(labelsize=6)
    axes[-1, 0].set_xlabel("iteration (post warmup)")
    _save(fig, path)
