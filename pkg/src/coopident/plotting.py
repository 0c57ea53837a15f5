"""Error-trace figures rendered next to the CSV output.

Only the ``network`` entity is plotted; per-robot and per-edge streams stay
in the CSV.  Uses the Agg backend so it works without a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_LABELS = {
    "rotation_error_rad": "rotation error [rad]",
    "translation_error_m": "translation error [m]",
    "inertia_error": "inertia error [kg m^2]",
    "pc_error_m": "mass-center error [m]",
    "mass_kg": "mass [kg]",
}


def plot_metrics(metrics, path, title=None, entity="network"):
    """One stacked panel per metric of ``entity``; returns the written path."""
    names = [m for m in _LABELS if len(metrics.series(entity, m))]
    if not names:
        raise ValueError(f"no {entity} metrics to plot")
    fig, axes = plt.subplots(len(names), 1, sharex=True, squeeze=False,
                             figsize=(6.0, 1.9 * len(names) + 0.6))
    for ax, name in zip(axes[:, 0], names):
        s = metrics.series(entity, name)
        ax.plot(s[:, 0], s[:, 1], lw=1.2, color="C0")
        if name == "mass_kg":
            truth = metrics.series(entity, "true_mass_kg")
            if len(truth):
                ax.plot(truth[:, 0], truth[:, 1], lw=1.0, ls="--", color="k", label="true")
                ax.legend(loc="upper right", frameon=False, fontsize=8)
        ax.set_ylabel(_LABELS[name], fontsize=8)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("time [s]")
    if title:
        axes[0, 0].set_title(title, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
