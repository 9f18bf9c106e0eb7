"""Matplotlib figures for sweep reports (written next to the CSV)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 120,
}
# no version or timestamp chunks, so files are byte-stable
_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_throughput_vs_memory(records: Sequence[dict], path: Path) -> Path:
    """Throughput against GPU budget, one line per 4-bit expert count."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        by_n4: dict[int, list[tuple[float, float]]] = {}
        for rec in records:
            if rec["feasible"]:
                by_n4.setdefault(rec["n4"], []).append(
                    (rec["budget_bytes"] / 1e9, rec["throughput_tps"]))
        cmap = plt.get_cmap("viridis")
        for i, n4 in enumerate(sorted(by_n4)):
            xs, ys = zip(*sorted(by_n4[n4]))
            ax.plot(xs, ys, marker="o", ms=2.5, lw=1.0,
                    color=cmap(i / max(1, len(by_n4) - 1)), label=f"n4={n4}")
        ax.set_xlabel("GPU memory budget (GB)")
        ax.set_ylabel("throughput (tokens/s)")
        if by_n4:
            ax.legend(loc="upper left", ncol=2, frameon=False)
        return _save(fig, path)


def plot_frontier(records: Sequence[dict], path: Path) -> Path:
    """Estimated perplexity against throughput, frontier points ringed."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        feasible = [r for r in records if r["feasible"]]
        if feasible:
            sc = ax.scatter([r["throughput_tps"] for r in feasible],
                            [r["ppl_estimate"] for r in feasible],
                            c=[r["budget_bytes"] / 1e9 for r in feasible],
                            s=10, cmap="viridis")
            fig.colorbar(sc, ax=ax, label="GPU budget (GB)")
            front = sorted((r for r in feasible if r["on_frontier"]),
                           key=lambda r: r["throughput_tps"])
            ax.scatter([r["throughput_tps"] for r in front],
                       [r["ppl_estimate"] for r in front],
                       s=28, facecolors="none", edgecolors="crimson", lw=0.8,
                       label="Pareto frontier")
            ax.legend(loc="lower left", bbox_to_anchor=(0.0, 1.0), frameon=False)
        ax.set_xlabel("throughput (tokens/s)")
        ax.set_ylabel("estimated perplexity")
        return _save(fig, path)


def render_sweep_figures(records: Sequence[dict], csv_path: Path) -> list[Path]:
    stem = csv_path.with_suffix("")
    return [
        plot_throughput_vs_memory(records, Path(f"{stem}_throughput.png")),
        plot_frontier(records, Path(f"{stem}_frontier.png")),
    ]
