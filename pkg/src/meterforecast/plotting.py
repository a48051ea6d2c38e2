"""Figures for back-test reports, rendered off-screen to PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .backtest import median_by_day, median_by_meter  # noqa: E402

COLORS = {"naive": "tab:gray", "arima": "tab:blue", "lstm": "tab:red"}


def plot_median_by_day(records, path, title: str = "") -> Path:
    """One line per method: median MAE across meters for each test day."""
    stats = median_by_day(records)
    fig, ax = plt.subplots(figsize=(9, 3.5))
    for method, v in stats.items():
        days = list(v["per"])
        ax.plot(days, list(v["per"].values()), lw=1, color=COLORS.get(method),
                label=f"{method} (median {v['overall']:.3g} kWh)")
    ax.set_ylabel("median MAE (kWh)")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_median_by_meter(records, path, title: str = "") -> Path:
    """Grouped bars: median MAE across days for each meter."""
    stats = median_by_meter(records)
    methods = list(stats)
    meters = list(next(iter(stats.values()))["per"]) if stats else []
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(meters) * len(methods)), 3.5))
    for k, method in enumerate(methods):
        xs = [i + (k - (len(methods) - 1) / 2) * width for i in range(len(meters))]
        ax.bar(xs, [stats[method]["per"][m] for m in meters], width, color=COLORS.get(method),
               label=method)
    ax.set_xticks(range(len(meters)))
    ax.set_xticklabels(meters, rotation=90, fontsize=7)
    ax.set_ylabel("median MAE (kWh)")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_loss_trace(trace, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(range(1, len(trace) + 1), trace, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training MAE (normalized)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
