"""Figures: configurations with their graphs, and experiment summaries."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402

from .configuration import Configuration  # noqa: E402
from .graph import FactorGraph  # noqa: E402

__all__ = ["render_configuration", "plot_gxz", "plot_cost"]


def _plane_coords(config: Configuration) -> np.ndarray:
    space = config.space
    if space.kind == "hyperbolic":
        return config.coords
    emb = config.embedded
    if emb.shape[1] == 1:
        return np.column_stack([emb[:, 0], np.zeros(len(emb))])
    return emb[:, :2]


def _segments(config: Configuration, graph: FactorGraph) -> np.ndarray:
    xy = _plane_coords(config)
    e = graph.edges
    if not len(e):
        return np.empty((0, 2, 2))
    space = config.space
    if space.kind == "hyperbolic":
        return np.stack([xy[e[:, 0]], xy[e[:, 1]]], axis=1)
    emb = config.embedded
    d = space.delta(emb[e[:, 0]], emb[e[:, 1]])
    if d.shape[1] == 1:
        d = np.column_stack([d, np.zeros(len(d))])
    d = d[:, :2]
    a, b = xy[e[:, 0]], xy[e[:, 1]]
    # wrapped edges are drawn from both ends and clipped by the axes
    return np.concatenate([np.stack([a, a + d], axis=1), np.stack([b, b - d], axis=1)])


def render_configuration(
    config: Configuration,
    path,
    graph: Optional[FactorGraph] = None,
    title: Optional[str] = None,
    radius: Optional[float] = None,
) -> Path:
    """Draw points as circles, edges as segments and marks as a colour ramp.

    The format follows the file extension (``.svg``, ``.png``, ``.pdf``).
    """
    path = Path(path)
    space = config.space
    xy = _plane_coords(config)
    fig, ax = plt.subplots(figsize=(6, 6))
    if space.kind == "hyperbolic":
        ax.add_patch(Circle((0, 0), 1.0, fill=False, color="0.6", lw=0.8))
        lim = (-1.02, 1.02), (-1.02, 1.02)
    else:
        box = space.box
        lim = (0, box[0]), (-0.5, 0.5) if len(box) == 1 else (0, box[1])
        if space.has_levels:
            lim = (0, box[0]), (-0.5, box[1] - 0.5)
    if graph is not None and graph.m:
        ax.add_collection(LineCollection(_segments(config, graph), colors="0.45", linewidths=0.6, zorder=1))
    if radius is None:
        span = max(lim[0][1] - lim[0][0], lim[1][1] - lim[1][0])
        radius = span / 150
    cmap = plt.get_cmap("viridis")
    colours = cmap(config.marks) if config.marked else ["#1f4e79"] * len(config)
    for (x, y), c in zip(xy, colours):
        ax.add_patch(Circle((x, y), radius, color=c, zorder=2))
    if config.marked:
        sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(0, 1))
        fig.colorbar(sm, ax=ax, fraction=0.046, pad=0.04, label="mark")
    ax.set_xlim(*lim[0])
    ax.set_ylim(*lim[1])
    if not space.has_levels:
        ax.set_aspect("equal")
    ax.set_title(title or f"{space.descriptor}  n={len(config)}" + (f"  m={graph.m}" if graph is not None else ""))
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_gxz(rows: Sequence, path) -> Path:
    """Successor probability against ``(n - 1) / n`` for the straightening maps."""
    path = Path(path)
    ns = np.array([r.n for r in rows])
    p = np.array([r.successor_prob for r in rows])
    se = np.array([r.successor_stderr for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    grid = np.linspace(ns.min(), ns.max(), 200)
    ax.plot(grid, (grid - 1) / grid, color="0.5", lw=1, label="(n-1)/n")
    ax.errorbar(ns, p, yerr=3 * se, fmt="o", capsize=3, label="successor probability")
    ax.set_xlabel("n")
    ax.set_ylabel("probability")
    ax.legend(loc="lower right")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_cost(estimates: Sequence, path, x: str = "eps") -> Path:
    """Cost bounds with three-standard-error bars against ``x``."""
    path = Path(path)
    xs = np.array([getattr(e, x) for e in estimates], dtype=float)
    cost = np.array([e.cost for e in estimates])
    se = np.array([e.cost_stderr for e in estimates])
    order = np.argsort(xs)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(xs[order], cost[order], yerr=3 * se[order], fmt="o-", capsize=3)
    ax.axhline(1.0, color="0.6", lw=0.8)
    ax.set_xlabel(x)
    ax.set_ylabel("cost bound")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path
