"""Figure rendering for CLI reports.

Every function writes a PNG next to the delimited output and returns the
path it wrote.  The Agg backend is forced before pyplot is imported so
the CLI never needs a display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def curve_band(grid: dict, path: str, level: float = 0.95) -> str:
    """Dose-response point estimates with a pointwise confidence band."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.fill_between(grid["t"], grid["lower"], grid["upper"], alpha=0.25,
                    color="tab:blue", linewidth=0,
                    label=f"{100 * level:g}% pointwise band")
    ax.plot(grid["t"], grid["theta"], color="tab:blue", label="estimate")
    ax.set_xlabel("treatment")
    ax.set_ylabel("dose-response")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def weight_histogram(weights: np.ndarray, path: str) -> str:
    """Histogram of the fitted stabilized weights with the mean marked."""
    weights = np.asarray(weights, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(weights, bins=40, color="tab:blue", alpha=0.8)
    ax.axvline(weights.mean(), color="tab:red", linestyle="--",
               label=f"mean = {weights.mean():.4f}")
    ax.set_xlabel("weight")
    ax.set_ylabel("count")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def simulation_bars(reports, path: str) -> str:
    """Bias and standard-deviation bars per estimator and coefficient."""
    labels = [f"{r.label}\n{name}" for r in reports for name in r.coef_names]
    bias = np.concatenate([np.atleast_1d(r.bias) for r in reports])
    sd = np.concatenate([np.atleast_1d(r.sd) for r in reports])
    pos = np.arange(len(labels))

    fig, (ax_b, ax_s) = plt.subplots(1, 2, figsize=(10.0, 4.0), sharey=False)
    ax_b.bar(pos, bias, color="tab:blue")
    ax_b.axhline(0.0, color="black", linewidth=0.8)
    ax_b.set_xticks(pos, labels, fontsize=8)
    ax_b.set_ylabel("bias")
    ax_s.bar(pos, sd, color="tab:orange")
    ax_s.set_xticks(pos, labels, fontsize=8)
    ax_s.set_ylabel("standard deviation")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
