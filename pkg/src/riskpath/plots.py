"""Matplotlib report figures: collisions per lap and the grid-search heatmap."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def collisions_bar(rows, path):
    """Grouped bars of collisions per lap.

    ``rows`` maps a group label (e.g. a noise kind) to ``{controller: value}``.
    """
    groups = list(rows)
    kinds = sorted({k for r in rows.values() for k in r})
    x = np.arange(len(groups))
    width = 0.8 / max(len(kinds), 1)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for i, kind in enumerate(kinds):
        vals = [rows[g].get(kind, math.nan) for g in groups]
        ax.bar(x + (i - (len(kinds) - 1) / 2) * width, vals, width, label=kind)
    ax.set_xticks(x)
    ax.set_xticklabels(groups)
    ax.set_ylabel("collisions per lap")
    ax.legend(frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def grid_heatmap(result, path):
    """Heatmap of RA-MPPI / MPPI collision ratios over (alpha, C_u)."""
    data = np.array([[np.nan if result.ratios.get((a, cu)) is None else result.ratios[(a, cu)]
                      for cu in result.c_us] for a in result.alphas], dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 3.8))
    im = ax.imshow(data, cmap="viridis_r", origin="lower", aspect="auto")
    ax.set_xticks(range(len(result.c_us)))
    ax.set_xticklabels([f"{c:g}" for c in result.c_us])
    ax.set_yticks(range(len(result.alphas)))
    ax.set_yticklabels([f"{a:g}" for a in result.alphas])
    ax.set_xlabel("C_u")
    ax.set_ylabel("alpha")
    for i in range(data.shape[0]):
        for j in range(data.shape[1]):
            txt = "NA" if np.isnan(data[i, j]) else f"{data[i, j]:.2f}"
            ax.text(j, i, txt, ha="center", va="center", color="white", fontsize=9)
    fig.colorbar(im, ax=ax, label="collision ratio")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def speed_trace(metrics_list, path):
    """Speed over time for one or more episodes, labelled by controller."""
    fig, ax = plt.subplots(figsize=(6, 3))
    for m in metrics_list:
        tr = m.trajectory
        if tr is None or not len(tr):
            continue
        ax.plot(tr[:, 0], tr[:, 4], lw=0.8, label=f"{m.controller} (seed {m.seed})")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("v [m/s]")
    ax.legend(frameon=False, fontsize=8)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
