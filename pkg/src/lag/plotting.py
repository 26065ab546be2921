"""Figures for eval sweeps, rendered headless to image files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import EvalReport  # noqa: E402


def plot_ablation(reports: Sequence[EvalReport], path: str | Path) -> Path:
    """Grouped bars of Contain-Acc. and GPT-Acc. per configuration row."""
    labels = [r.label for r in reports]
    contain = [100 * (r.aggregates["contain_accuracy"] or 0.0) for r in reports]
    judge = [100 * (r.aggregates["judge_accuracy"] or 0.0) for r in reports]
    x = np.arange(len(reports))
    width = 0.38

    fig, ax = plt.subplots(figsize=(max(6.0, 1.6 * len(reports)), 4.2))
    ax.bar(x - width / 2, contain, width, label="Contain-Acc.")
    ax.bar(x + width / 2, judge, width, label="GPT-Acc.")
    ax.set_xticks(x)
    ax.set_xticklabels([lab.replace(" + ", "\n+ ") for lab in labels], fontsize=8)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.legend(loc="upper left", frameon=False)
    ax.set_title(f"ablation, n={reports[0].aggregates['n']}" if reports else "ablation")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
