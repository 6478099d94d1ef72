"""Figure and text-chart rendering for stats and evaluation reports.

Every report-writing CLI path calls into here so that a PNG lands next to
the JSON/TSV it summarizes. Rendering is headless (Agg backend).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 150


def text_bar_chart(counts: dict[str, int | float], width: int = 40) -> str:
    """Plain-text horizontal bars, one line per key, input order preserved."""
    if not counts:
        return "(empty)"
    peak = max(counts.values()) or 1
    label_w = max(len(str(k)) for k in counts)
    lines = []
    for key, value in counts.items():
        bar = "#" * round(width * value / peak)
        lines.append(f"{str(key):<{label_w}}  {bar} {value}")
    return "\n".join(lines)


def save_histogram(
    counts: dict[str, int | float],
    path: str | Path,
    title: str,
    xlabel: str = "",
    ylabel: str = "count",
    rotate: bool = False,
) -> None:
    fig, ax = plt.subplots(figsize=(max(4.0, 0.38 * len(counts) + 1.5), 3.6))
    keys = list(counts)
    ax.bar(range(len(keys)), [counts[k] for k in keys], color="#4878a8")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=90 if rotate or len(keys) > 12 else 0, fontsize=7)
    ax.set_title(title)
    if xlabel:
        ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def save_topk_bars(report, path: str | Path) -> None:
    """Grouped bars: one group per model row, one bar per k, std whiskers."""
    rows = report.rows
    ks = report.ks
    if not rows:
        return
    fig, ax = plt.subplots(figsize=(max(5.0, 1.1 * len(rows) + 2.0), 4.0))
    x = np.arange(len(rows))
    width = 0.8 / max(1, len(ks))
    for i, k in enumerate(ks):
        means = [r["topk"].get(str(k), {}).get("mean", 0.0) for r in rows]
        stds = [r["topk"].get(str(k), {}).get("std", 0.0) for r in rows]
        ax.bar(
            x + (i - (len(ks) - 1) / 2) * width,
            means,
            width,
            yerr=stds,
            capsize=2,
            label=f"Top-{k}",
        )
    labels = [
        r["model_label"]
        + (" (sup)" if r["attn_supervision"] == "yes" else "")
        + (" (unsup)" if r["attn_supervision"] == "no" else "")
        for r in rows
    ]
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylim(0, 1.0)
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def save_loss_curves(record, path: str | Path) -> None:
    """Per-epoch training loss components from a run record."""
    epochs = [e["epoch"] for e in record.epochs]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for key, label in (
        ("loss_total", "total"),
        ("loss_country", "country"),
        ("loss_attn", "attention"),
    ):
        ax.plot(epochs, [e[key] for e in record.epochs], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
