"""Figure rendering for the reporting commands.

Reports stay delimited text; these helpers render a companion PNG next
to the text output so a run can be eyeballed without post-processing.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_training_curves(log_rows, path) -> None:
    """Reconstruction error per epoch, plus regularizer traces when logged."""
    epochs = [r.epoch for r in log_rows]
    panels = [("recon_error", "reconstruction error")]
    if any(r.mean_group_norm is not None for r in log_rows):
        panels.append(("mean_group_norm", "mean group norm"))
    if any(r.intra_kl is not None for r in log_rows):
        panels.append(("kl", "intra/inter-concept KL"))

    fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 3.2))
    if len(panels) == 1:
        axes = [axes]
    for ax, (key, title) in zip(axes, panels):
        if key == "kl":
            ax.plot(epochs, [r.intra_kl for r in log_rows], label="intra")
            ax.plot(epochs, [r.inter_kl for r in log_rows], label="inter")
            ax.legend(frameon=False)
        else:
            ax.plot(epochs, [getattr(r, key) for r in log_rows])
        ax.set_xlabel("epoch")
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_metric_report(rows, path) -> None:
    """Bar chart of (method, metric, value, std) report rows."""
    metrics = sorted({r[1] for r in rows})
    methods = sorted({r[0] for r in rows})
    fig, axes = plt.subplots(1, len(metrics), figsize=(1.2 + 2.6 * len(metrics), 3.2))
    if len(metrics) == 1:
        axes = [axes]
    for ax, metric in zip(axes, metrics):
        vals, errs = [], []
        for method in methods:
            match = [r for r in rows if r[0] == method and r[1] == metric]
            vals.append(match[0][2] if match else 0.0)
            errs.append(match[0][3] if match else 0.0)
        ax.bar(np.arange(len(methods)), vals, yerr=errs, capsize=3)
        ax.set_xticks(np.arange(len(methods)))
        ax.set_xticklabels(methods, rotation=20, ha="right", fontsize=8)
        ax.set_title(metric, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
