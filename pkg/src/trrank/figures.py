"""Report figures. Every driver that writes a delimited output can also
render the matching picture; everything here takes plain rows or arrays so
it never reaches back into the experiment state.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finite(rows: Sequence[dict]) -> list[dict]:
    return [r for r in rows if np.isfinite(r["loss"])]


def pareto_cloud(rows: Sequence[dict], path: str | Path) -> None:
    """Loss vs parameter count for every evaluated genome, with the
    non-dominated frontier drawn through the cloud."""
    rows = _finite(rows)
    fig, ax = plt.subplots(figsize=(7, 5))
    if rows:
        params = np.array([r["params"] for r in rows])
        losses = np.array([r["loss"] for r in rows])
        ax.scatter(params, losses, s=8, alpha=0.35, color="#4878a8", label="evaluated")
        order = np.argsort(params, kind="stable")
        frontier_x, frontier_y = [], []
        best = np.inf
        for i in order:
            if losses[i] < best:
                best = losses[i]
                frontier_x.append(params[i])
                frontier_y.append(losses[i])
        ax.step(
            frontier_x, frontier_y, where="post", color="#c23b22", lw=1.8,
            label="non-dominated",
        )
        ax.set_yscale("log")
    ax.set_xlabel("parameters")
    ax.set_ylabel("test MSE")
    ax.set_title("loss vs size over the rank box")
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def search_progress(
    rows: Sequence[dict], summaries: Sequence[dict], path: str | Path
) -> None:
    """Best-so-far loss against evaluation count, phase switches marked."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    best = np.inf
    xs, ys = [], []
    phase_starts = {}
    for i, r in enumerate(rows, 1):
        phase_starts.setdefault(r["phase"], i)
        if np.isfinite(r["loss"]) and r["loss"] < best:
            best = r["loss"]
        if np.isfinite(best):
            xs.append(i)
            ys.append(best)
    if xs:
        ax.plot(xs, ys, color="#2a6f4e", lw=1.8)
        ax.set_yscale("log")
    for phase, start in sorted(phase_starts.items()):
        if phase > 1:
            ax.axvline(start - 0.5, color="#999999", ls="--", lw=1)
        ax.text(
            start, 0.98, f"phase {phase}", transform=ax.get_xaxis_transform(),
            fontsize=8, color="#555555", va="top",
        )
    for s in summaries:
        ax.annotate(
            "R=" + ",".join(str(v) for v in s["promising_rank"]),
            xy=(0.02, 0.02 + 0.06 * (s["phase"] - 1)),
            xycoords="axes fraction", fontsize=8, color="#444444",
        )
    ax.set_xlabel("evaluations")
    ax.set_ylabel("best test MSE so far")
    ax.set_title("progressive search trajectory")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def rank_distribution(genomes: np.ndarray, report: dict, path: str | Path) -> None:
    """Per-element value histograms over the top set, interest region
    shaded, one panel per rank element."""
    top, d = genomes.shape
    r_min = report["bounds"]["r_min"]
    r_max = report["bounds"]["r_max"]
    values = np.arange(r_min, r_max + 1)
    fig, axes = plt.subplots(1, d, figsize=(2.6 * d, 3.2), sharey=True)
    if d == 1:
        axes = [axes]
    for i, ax in enumerate(axes):
        counts = [(genomes[:, i] == v).sum() for v in values]
        info = report["per_element"][i]
        color = "#c23b22" if info["sensitive"] else "#4878a8"
        ax.bar(values, counts, width=0.8, color=color, alpha=0.85)
        ax.axvspan(info["region"][0], info["region"][1], color="#f2c14e", alpha=0.25)
        ax.axvline(info["mean"], color="#333333", lw=1, ls=":")
        ax.set_title(
            f"element {i}\nmean {info['mean']:.2f}, delta {info['delta']:.2f}",
            fontsize=9,
        )
        ax.set_xticks(values)
        ax.set_xlabel("rank value")
    axes[0].set_ylabel(f"count in top {top}")
    fig.suptitle("rank value distribution of the top set", fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cooccurrence_heat(
    counts: Sequence[tuple[int, int, int, int, int]],
    d: int,
    bounds: dict,
    path: str | Path,
) -> None:
    """One heat panel per element pair i<j with cell (vi, vj) counts."""
    r_min, r_max = bounds["r_min"], bounds["r_max"]
    width = r_max - r_min + 1
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    grids = {p: np.zeros((width, width)) for p in pairs}
    for i, j, vi, vj, n in counts:
        if (i, j) in grids and r_min <= vi <= r_max and r_min <= vj <= r_max:
            grids[(i, j)][vi - r_min, vj - r_min] = n
    cols = min(3, len(pairs)) or 1
    rows_n = (len(pairs) + cols - 1) // cols
    fig, axes = plt.subplots(
        rows_n, cols, figsize=(3.0 * cols, 2.8 * rows_n), squeeze=False
    )
    vmax = max((g.max() for g in grids.values()), default=1) or 1
    ticks = np.arange(r_min, r_max + 1)
    for ax, (i, j) in zip(axes.flat, pairs):
        im = ax.imshow(
            grids[(i, j)].T, origin="lower", cmap="viridis", vmin=0, vmax=vmax,
            extent=(r_min - 0.5, r_max + 0.5, r_min - 0.5, r_max + 0.5),
        )
        ax.set_xlabel(f"element {i}")
        ax.set_ylabel(f"element {j}")
        ax.set_xticks(ticks)
        ax.set_yticks(ticks)
    for ax in axes.flat[len(pairs):]:
        ax.axis("off")
    fig.colorbar(im, ax=axes, shrink=0.8, label="count")
    fig.suptitle("top-set value co-occurrence", fontsize=11)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_plot(rows: Sequence[dict], path: str | Path) -> None:
    """Enumeration rank of the best-so-far genome at each generation
    checkpoint, one line per method."""
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    styles = {
        "progressive": {"color": "#c23b22", "marker": "o"},
        "plain_nsga2": {"color": "#4878a8", "marker": "s"},
    }
    methods = sorted({r["method"] for r in rows})
    for method in methods:
        pts = [(r["checkpoint"], r["rank"]) for r in rows if r["method"] == method]
        pts.sort()
        style = styles.get(method, {})
        ax.plot(
            [p[0] for p in pts], [p[1] for p in pts], lw=1.8, label=method, **style
        )
    ax.set_yscale("log")
    ax.set_xlabel("generations consumed")
    ax.set_ylabel("rank among all enumerated models")
    ax.set_title("search quality at equal budgets")
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
