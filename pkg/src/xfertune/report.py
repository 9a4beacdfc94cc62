"""Figure rendering for run outputs.

Every CLI subcommand that writes a delimited table can also render the
matching figure next to it. Uses the non-interactive backend so runs work
headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "plot_sweep",
    "plot_learning_curve",
    "plot_eval",
    "plot_fairness",
    "plot_cost",
]


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence[dict], path: str | Path) -> Path:
    """Throughput and mean MI energy against total stream count."""
    streams = [r["cc"] * r["p"] for r in rows]
    tput = [r["mean_throughput_bps"] / 1e9 for r in rows]
    energy = [r["mean_energy_j"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.scatter(streams, tput, s=14)
    ax1.set_xlabel("total streams (cc x p)")
    ax1.set_ylabel("mean throughput (Gbit/s)")
    ax1.grid(True, alpha=0.3)
    ax2.scatter(streams, energy, s=14, color="tab:red")
    ax2.set_xlabel("total streams (cc x p)")
    ax2.set_ylabel("mean energy per MI (J)")
    ax2.grid(True, alpha=0.3)
    fig.suptitle("Static parameter sweep")
    return _save(fig, path)


def plot_learning_curve(returns: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(range(1, len(returns) + 1), returns, lw=0.8)
    if len(returns) >= 10:
        window = max(1, len(returns) // 20)
        smooth = [
            sum(returns[max(0, i - window): i + 1]) / len(returns[max(0, i - window): i + 1])
            for i in range(len(returns))
        ]
        ax.plot(range(1, len(returns) + 1), smooth, lw=1.8, color="tab:orange")
    ax.set_xlabel("episode")
    ax.set_ylabel("episode return")
    ax.grid(True, alpha=0.3)
    fig.suptitle("Training progress")
    return _save(fig, path)


def plot_eval(rows: Sequence[dict], path: str | Path) -> Path:
    """Per-MI throughput and stream count of the evaluation rollouts."""
    times = range(len(rows))
    tput = [r["throughput_bps"] / 1e9 for r in rows]
    streams = [r["cc"] * r["p"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 4.5), sharex=True)
    ax1.plot(times, tput, lw=0.9)
    ax1.set_ylabel("throughput (Gbit/s)")
    ax1.grid(True, alpha=0.3)
    ax2.plot(times, streams, lw=0.9, color="tab:green")
    ax2.set_ylabel("cc x p")
    ax2.set_xlabel("MI")
    ax2.grid(True, alpha=0.3)
    fig.suptitle("Evaluation rollouts")
    return _save(fig, path)


def plot_fairness(
    per_flow: dict[int, Sequence[tuple[int, float]]],
    jfi_series: Sequence[tuple[int, float]],
    path: str | Path,
) -> Path:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 4.5), sharex=True)
    for flow_id, series in sorted(per_flow.items()):
        if not series:
            continue
        xs, ys = zip(*series)
        ax1.plot(xs, [y / 1e9 for y in ys], lw=0.9, label=f"flow {flow_id}")
    ax1.set_ylabel("throughput (Gbit/s)")
    ax1.legend(loc="upper right", fontsize=8)
    ax1.grid(True, alpha=0.3)
    if jfi_series:
        xs, ys = zip(*jfi_series)
        ax2.plot(xs, ys, lw=1.2, color="tab:purple")
    ax2.set_ylim(0, 1.05)
    ax2.set_ylabel("fairness index")
    ax2.set_xlabel("MI")
    ax2.grid(True, alpha=0.3)
    fig.suptitle("Shared-link fairness")
    return _save(fig, path)


def plot_cost(entries: Sequence[dict], path: str | Path) -> Path:
    """Per-transfer cost against the number of transfers, per method."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for entry in entries:
        ax.plot(entry["transfers"], entry["per_transfer_j"], lw=1.3, label=entry["method"])
    ax.set_xscale("log")
    ax.set_xlabel("number of transfers")
    ax.set_ylabel("per-transfer energy (J)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.suptitle("Amortized operating cost")
    return _save(fig, path)
