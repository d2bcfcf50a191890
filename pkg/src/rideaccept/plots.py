"""Static SVG charts for sweep and sensitivity outputs (optional matplotlib)."""

from __future__ import annotations

from pathlib import Path

from .choice import sensitivity_sweep
from .metrics import share_means

COLOURS = {"random": "tab:blue", "behavioural": "tab:orange", "all": "tab:green"}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "rideaccept"
    return plt


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def sweep_plots(summaries, trends, fig3, out_dir: Path) -> list[Path]:
    plt = _pyplot()
    written = []
    for metric, label in (("income_eur", "driver income [EUR]"), ("waiting_s", "traveller waiting time [s]")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for cls, colour in COLOURS.items():
            rows = share_means(summaries, metric, cls)
            if rows:
                ax.plot([r[0] for r in rows], [r[1] for r in rows], marker="o", color=colour, label=cls)
        ax.set_xlabel("behavioural share")
        ax.set_ylabel(label)
        ax.legend()
        fig.tight_layout()
        written.append(_save(fig, out_dir / f"sweep_{metric}.svg"))
        plt.close(fig)
    if fig3:
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
        for ax, field, label in ((axes[0], "income_eur", "income [EUR]"), (axes[1], "idle_s", "idle time [s]")):
            for cls in ("random", "behavioural"):
                values = [getattr(d, field) for s in fig3 for d in s.driver_rows if d.policy == cls]
                if values:
                    ax.hist(values, bins=15, alpha=0.6, color=COLOURS[cls], label=cls)
            ax.set_xlabel(label)
            ax.legend()
        fig.tight_layout()
        written.append(_save(fig, out_dir / "distribution_50.svg"))
        plt.close(fig)
    return written


def sensitivity_plot(model, grids, out_dir: Path) -> Path:
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(grids), figsize=(3 * len(grids), 3), sharey=True)
    for ax, (attribute, grid) in zip(axes, grids.items()):
        curve = sensitivity_sweep(model, attribute, grid)
        ax.plot([v for v, _ in curve], [p for _, p in curve], marker=".")
        ax.set_xlabel(attribute)
    axes[0].set_ylabel("P(accept)")
    fig.tight_layout()
    path = _save(fig, out_dir / "sensitivity.svg")
    plt.close(fig)
    return path
