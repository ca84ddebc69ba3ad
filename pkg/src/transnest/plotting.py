"""Report figures rendered straight to PNG files.

Figures are built on :class:`matplotlib.figure.Figure` (no pyplot state) and
saved without the software/date metadata, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import math

import numpy as np
from matplotlib.figure import Figure

COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3")


def new_figure(width: float = 6.4, height: float = 3.6) -> Figure:
    return Figure(figsize=(width, height), dpi=100, layout="constrained")


def save_figure(fig: Figure, path) -> None:
    fig.savefig(path, format="png", metadata={"Software": None})


def _style(ax):
    ax.tick_params(labelsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)


def grouped_bars(rows, keys, path, title="", ylabel="", ylim=None) -> None:
    """One bar group per metric key, one bar per method.

    Parameters
    ----------
    rows : list of (method, dict)
        Metric values per method; ``None`` or NaN values are drawn as gaps.
    keys : sequence of str
        Metric keys to show, in order.
    """
    fig = new_figure()
    ax = fig.add_subplot()
    n_methods = max(len(rows), 1)
    width = 0.8 / n_methods
    x = np.arange(len(keys))
    for j, (method, values) in enumerate(rows):
        heights = [values.get(k) for k in keys]
        heights = [np.nan if h is None else float(h) for h in heights]
        ax.bar(x + (j - (n_methods - 1) / 2) * width, heights, width,
               label=method, color=COLORS[j % len(COLORS)])
    ax.set_xticks(x, [k.replace("_", ".") for k in keys], rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if ylim is not None:
        ax.set_ylim(*ylim)
    ax.legend(frameon=False, ncols=min(n_methods, 5), loc="upper center", bbox_to_anchor=(0.5, -0.25))
    _style(ax)
    save_figure(fig, path)


def statistic_histogram(values, path, threshold=None, title="", xlabel="statistic", bins=40) -> None:
    """Histogram of nonnegative statistics on a log axis with the threshold marked."""
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    fig = new_figure(5.0, 3.2)
    ax = fig.add_subplot()
    pos = v[v > 0]
    if pos.size:
        lo, hi = pos.min(), pos.max()
        edges = np.geomspace(lo, hi * (1 + 1e-9), bins + 1) if hi > lo else np.array([lo * 0.9, lo * 1.1])
        ax.hist(pos, bins=edges, color=COLORS[0])
        ax.set_xscale("log")
    zeros = int((v == 0).sum())
    if zeros:
        ax.text(0.98, 0.95, f"{zeros} exact zeros", transform=ax.transAxes, ha="right", va="top")
    if threshold is not None and math.isfinite(threshold) and threshold > 0:
        ax.axvline(threshold, color=COLORS[3], linestyle="--", label=f"threshold {threshold:.3g}")
        ax.legend(frameon=False)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("features")
    ax.set_title(title)
    _style(ax)
    save_figure(fig, path)


def tuning_heatmap(table, path, title="tuning AUC") -> None:
    """Tuning-split AUC over the ``(lambda, mu)`` grid; failed points are blank."""
    lams = sorted({r["lambda"] for r in table})
    mus = sorted({r["mu"] for r in table})
    grid = np.full((len(lams), len(mus)), np.nan)
    li = {v: i for i, v in enumerate(lams)}
    mi = {v: i for i, v in enumerate(mus)}
    for r in table:
        if r["auc"] is not None:
            grid[li[r["lambda"]], mi[r["mu"]]] = r["auc"]
    fig = new_figure(5.6, 4.2)
    ax = fig.add_subplot()
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
    label = lambda v: "inf" if not math.isfinite(v) else f"{v:.2g}"  # noqa: E731
    ax.set_xticks(range(len(mus)), [label(v) for v in mus], rotation=60)
    ax.set_yticks(range(len(lams)), [label(v) for v in lams])
    ax.set_xlabel("mu")
    ax.set_ylabel("lambda")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="AUC")
    save_figure(fig, path)
