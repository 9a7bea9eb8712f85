"""Figure rendering for calibration reports (convergence curves and demand scatter)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_LABELS = (
    ("nrmse_demand", "demand nRMSE"),
    ("nrmse_time", "travel time nRMSE"),
    ("nrmse_count", "count nRMSE"),
)

_RC = {
    "svg.hashsalt": "odcalib",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    # no timestamp so identical inputs give identical files
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None,
                bbox_inches="tight")
    plt.close(fig)


def plot_convergence(traces: dict, path) -> None:
    """One panel per metric; ``traces`` maps a label to a list of trace rows."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3))
        for ax, (col, label) in zip(axes, METRIC_LABELS):
            for name, rows in traces.items():
                it = [r.iteration for r in rows]
                ax.plot(it, [getattr(r, col) for r in rows], marker=".", lw=1.2, label=name)
            ax.set_xlabel("iteration")
            ax.set_ylabel(label)
        axes[0].legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_demand_scatter(gt, calibrated: dict, path) -> None:
    """Ground truth vs calibrated demand, one marker series per method."""
    gt = np.asarray(gt, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        hi = gt.max()
        for name, d in calibrated.items():
            d = np.asarray(d, dtype=float)
            hi = max(hi, d.max())
            ax.scatter(gt, d, s=18, label=name)
        ax.plot([0, hi], [0, hi], color="0.5", lw=0.8, ls="--")
        ax.set_xlabel("ground truth demand")
        ax.set_ylabel("calibrated demand")
        ax.set_aspect("equal")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
