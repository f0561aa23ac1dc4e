"""Figure styling and the bar chart used in evaluation reports."""

from __future__ import annotations

import math
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REPORT_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "vcse",
}


def figsize(width: float = 6.0, ratio: float | None = None) -> tuple[float, float]:
    ratio = ratio or (math.sqrt(5) - 1.0) / 2.0
    return width, width * ratio


@contextmanager
def report_style():
    with plt.rc_context(REPORT_RC):
        yield


def save_figure(fig, path: str | Path) -> None:
    # Stripping the Software tag keeps PNG bytes identical across runs.
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def bar_chart(labels: Sequence[str], values: Sequence[float], path: str | Path, *, ylabel: str,
              title: str | None = None, highlight: str | None = None) -> None:
    with report_style():
        fig, ax = plt.subplots(figsize=figsize(6.4, 0.5))
        colors = ["#c44e52" if lab == highlight else "#4c72b0" for lab in labels]
        bars = ax.bar(range(len(values)), values, color=colors, width=0.65)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=25, ha="right")
        ax.set_ylabel(ylabel)
        ax.axhline(0.0, color="0.3", linewidth=0.6)
        for bar, v in zip(bars, values):
            ax.annotate(f"{v:.2f}", (bar.get_x() + bar.get_width() / 2, v), ha="center",
                        va="bottom" if v >= 0 else "top", fontsize=7, xytext=(0, 2 if v >= 0 else -2),
                        textcoords="offset points")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        save_figure(fig, path)
