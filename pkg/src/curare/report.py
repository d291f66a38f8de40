"""Figure rendering for loop histories and benchmark tables.

The CLI report paths write these PNGs next to their delimited outputs.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .bench import BenchResult
from .learner import HistoryRecord


def plot_history(
    history: Sequence[HistoryRecord], path: Union[str, Path], title: str = "curation run"
) -> Path:
    """Labels used vs. validation F1 and positives found, one PNG."""
    path = Path(path)
    labels = [h.labels_used for h in history]
    fig, ax1 = plt.subplots(figsize=(7, 4.5))
    ax1.plot(labels, [h.positives_found for h in history], "o-", color="tab:blue",
             label="positives found")
    ax1.set_xlabel("labels used")
    ax1.set_ylabel("positives found", color="tab:blue")
    with_f1 = [(h.labels_used, h.f1_val) for h in history if h.f1_val is not None]
    if with_f1:
        ax2 = ax1.twinx()
        ax2.plot(*zip(*with_f1), "s--", color="tab:orange", label="validation F1")
        ax2.set_ylabel("validation F1", color="tab:orange")
        ax2.set_ylim(0.0, 1.05)
    ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_benchmark(
    results: dict[str, BenchResult], path: Union[str, Path], title: str = "benchmark"
) -> Path:
    """Grouped bars of the headline metrics for each strategy."""
    path = Path(path)
    strategies = list(results)
    metrics = [
        ("positives_retrieved", "positives retrieved"),
        ("f1_val", "F1 (val)"),
        ("false_positive_fraction", "false positives"),
        ("labeling_effort", "labeling effort"),
    ]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / max(1, len(strategies))
    for si, strategy in enumerate(strategies):
        mean = results[strategy].mean
        values = [getattr(mean, attr) for attr, _ in metrics]
        xs = [i + si * width for i in range(len(metrics))]
        ax.bar(xs, values, width=width, label=strategy)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(metrics))])
    ax.set_xticklabels([label for _, label in metrics])
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_benchmark_tsv(results: dict[str, BenchResult], path: Union[str, Path]) -> Path:
    """Per-strategy table: mean row first, then one row per class."""
    path = Path(path)
    columns = [
        "strategy", "scope", "f1_val", "labeling_effort", "loop_effort",
        "positives_retrieved", "false_positive_fraction",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")

        def row(strategy: str, scope: str, m) -> str:
            return "\t".join(
                [strategy, scope, f"{m.f1_val:.4f}", f"{m.labeling_effort:.4f}",
                 f"{m.loop_effort:.4f}", f"{m.positives_retrieved:.4f}",
                 f"{m.false_positive_fraction:.4f}"]
            )

        for strategy, result in results.items():
            fh.write(row(strategy, "mean", result.mean) + "\n")
            for class_id in sorted(result.per_class):
                fh.write(row(strategy, f"class-{class_id}", result.per_class[class_id]) + "\n")
    return path


__all__ = ["plot_benchmark", "plot_history", "write_benchmark_tsv"]
