"""Factor graphs on configurations: builders, connectivity and degrees."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .configuration import Configuration, ConfigurationError, _parse_block, format_config
from .space import EQUALITY_TOL, Box, window_mask, window_volume
from .stats import EstimateReport, mean_report, ratio_report

__all__ = [
    "FactorGraph",
    "ComponentReport",
    "distance_graph",
    "cayley_graph",
    "nn_graph",
    "nearest_neighbours",
    "percolate_edges",
    "vertical_edges",
    "lift_graph",
    "union_graphs",
    "connected_components",
    "degree_stats",
    "format_graph",
    "parse_graph",
    "save_graph",
    "load_graph",
]

# tolerance for locating translated lattice / column points
_LOCATE_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Edges over the points of a configuration.

    Undirected graphs store each edge once as ``(i, j)`` with ``i < j``;
    directed graphs store ``(source, target)`` pairs.
    """

    config: Configuration
    edges: np.ndarray
    directed: bool = False

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = len(self.config)
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("self-loops are not allowed")
            if not self.directed:
                e = np.sort(e, axis=1)
            if len(np.unique(e, axis=0)) != len(e):
                raise ValueError("duplicate edges")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def n(self) -> int:
        return len(self.config)

    @property
    def m(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        """Undirected degree (out-degree for directed graphs)."""
        if self.directed:
            return self.out_degrees()
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.n)

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 1], minlength=self.n)

    def undirected(self) -> "FactorGraph":
        if not self.directed:
            return self
        e = np.unique(np.sort(self.edges, axis=1), axis=0) if self.m else self.edges
        return FactorGraph(self.config, e)

    def edge_set(self) -> set:
        return {tuple(map(int, e)) for e in self.edges}


def _canonical(pairs) -> np.ndarray:
    e = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64).reshape(-1, 2)
    if not len(e):
        return e
    e = np.unique(np.sort(e, axis=1), axis=0)
    return e[e[:, 0] != e[:, 1]]


# -- builders ----------------------------------------------------------------


def distance_graph(config: Configuration, R: float) -> FactorGraph:
    """Edge between every pair at distance at most ``R``."""
    if not R > 0:
        raise ValueError("R must be positive")
    space = config.space
    space.check_range(R, "R")
    if len(config) < 2:
        return FactorGraph(config, np.empty((0, 2), np.int64))
    if space.periodic:
        pairs = config.tree().query_pairs(R, output_type="ndarray")
    else:
        d = space.pairwise(config.coords, config.coords)
        i, j = np.nonzero(np.triu(d <= R, k=1))
        pairs = np.column_stack([i, j])
    return FactorGraph(config, _canonical(pairs))


def _locate(config: Configuration, targets: np.ndarray, tree=None) -> np.ndarray:
    """Index of the point at each embedded target location, or -1."""
    tree = tree or config.tree()
    d, idx = tree.query(config.space.wrap(targets), k=1)
    return np.where(d <= _LOCATE_TOL, idx, -1)


def cayley_graph(config: Configuration, S: Sequence, spacing: Optional[float] = None) -> FactorGraph:
    """Cayley factor graph of a lattice orbit for the generators ``S``.

    ``S`` is given in lattice units; ``spacing`` defaults to the lattice
    spacing of a ``lat2`` window and to 1 otherwise.
    """
    space = config.space
    if space.kind not in ("torus", "lattice"):
        raise ValueError("Cayley graphs need a lattice orbit on a torus")
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[1] != space.dim:
        raise ValueError("generator dimension mismatch")
    for s in S:
        if not np.any(np.all(np.abs(S + s) < 1e-12, axis=1)):
            raise ValueError("generating set must be symmetric")
    if spacing is None:
        spacing = space.covol ** (1.0 / space.dim) if space.covol else 1.0
    if len(config) == 0:
        return FactorGraph(config, np.empty((0, 2), np.int64))
    tree = config.tree()
    emb = config.embedded
    pairs = []
    for s in S:
        j = _locate(config, emb + spacing * s, tree)
        if np.any(j < 0):
            raise ValueError("configuration is not an orbit of the lattice generated by S")
        pairs.append(np.column_stack([np.arange(len(config)), j]))
    return FactorGraph(config, _canonical(np.concatenate(pairs)))


def _tie_sorted(dist: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Order candidates by distance, breaking near-ties lexicographically."""
    order = np.argsort(dist, kind="stable")
    dist, disp = dist[order], disp[order]
    group = np.concatenate([[0], np.cumsum(np.diff(dist) > EQUALITY_TOL)])
    key = np.round(disp, 9)
    sub = np.lexsort(tuple(key.T[::-1]) + (group,))
    return order[sub]


def nearest_neighbours(config: Configuration, k: int = 1) -> np.ndarray:
    """``(n, k)`` indices of the ``k`` nearest other points, tie-broken."""
    n = len(config)
    if k < 1:
        raise ValueError("k must be at least 1")
    if n <= k:
        raise ValueError(f"need more than {k} points, got {n}")
    space = config.space
    out = np.empty((n, k), dtype=np.int64)
    if space.periodic:
        kq = min(n, k + 2)
        dist, idx = config.tree().query(config.embedded, k=kq)
        dist = dist.reshape(n, kq)[:, 1:]
        idx = idx.reshape(n, kq)[:, 1:]
        # only a tie at the k-th place changes which neighbours are chosen
        tied = np.zeros(n, dtype=bool)
        if kq - 1 > k:
            tied = dist[:, k] - dist[:, k - 1] <= EQUALITY_TOL
        out[~tied] = idx[~tied, :k]
        rows = np.flatnonzero(tied)
    else:
        rows = np.arange(n)
    if len(rows):
        emb = config.embedded if space.periodic else config.coords
        for i in rows:
            others = np.delete(np.arange(n), i)
            if space.periodic:
                disp = space.delta(emb[i], emb[others])
                dist = np.sqrt(np.sum(disp * disp, axis=1))
            else:
                disp = space.recenter(config.coords[others], config.coords[i])
                dist = space.pairwise(config.coords[i], config.coords[others])[0]
            out[i] = others[_tie_sorted(dist, disp)[:k]]
    return out


def nn_graph(config: Configuration, k: int = 1) -> FactorGraph:
    """Directed graph from every point to its ``k`` nearest neighbours."""
    nb = nearest_neighbours(config, k)
    src = np.repeat(np.arange(len(config)), k)
    return FactorGraph(config, np.column_stack([src, nb.ravel()]), directed=True)


def percolate_edges(graph: FactorGraph, eps: float) -> FactorGraph:
    """Keep edge ``(g, h)`` iff ``(mark_g + mark_h) mod 1 < eps``."""
    marks = graph.config.marks
    if marks is None:
        raise ValueError("edge percolation needs a marked configuration")
    if not 0 <= eps <= 1:
        raise ValueError("eps must lie in [0, 1]")
    e = graph.edges
    keep = np.mod(marks[e[:, 0]] + marks[e[:, 1]], 1.0) < eps
    return FactorGraph(graph.config, e[keep], graph.directed)


def _vertical_step(space) -> np.ndarray:
    if space.kind in ("cylinder", "cylinder_r"):
        return np.array([0.0, 1.0])
    raise ValueError("vertical edges need a cylinder space")


def vertical_edges(config: Configuration) -> FactorGraph:
    """Edges ``(g, l) -- (g, l + 1)`` of a column-closed configuration."""
    step = _vertical_step(config.space)
    if len(config) == 0:
        return FactorGraph(config, np.empty((0, 2), np.int64))
    up = _locate(config, config.embedded + step)
    if np.any(up < 0):
        raise ValueError("configuration is not vertical (columns are not closed)")
    return FactorGraph(config, _canonical(np.column_stack([np.arange(len(config)), up])))


def lift_graph(base: FactorGraph, vertical: Configuration) -> FactorGraph:
    """Copy a graph on the base torus onto every level of a vertical configuration."""
    space = vertical.space
    if space.kind != "cylinder":
        raise ValueError("lifting targets a cylinder configuration")
    bspace = base.config.space
    if bspace.kind != "torus" or bspace.dim != 1 or bspace.sides[0] != space.sides[0]:
        raise ValueError(f"base graph lives on {bspace}, not on the base of {space}")
    nb = len(base.config)
    if len(vertical) != nb * space.levels:
        raise ValueError("configuration is not the vertical coupling of the base")
    if nb == 0 or base.m == 0:
        return FactorGraph(vertical, np.empty((0, 2), np.int64))
    tree = vertical.tree()
    idx = np.empty((space.levels, nb), dtype=np.int64)
    for lv in range(space.levels):
        targets = space.embed(base.config.coords, np.full(nb, lv))
        idx[lv] = _locate(vertical, targets, tree)
    if np.any(idx < 0):
        raise ValueError("configuration is not the vertical coupling of the base")
    e = base.edges
    lifted = np.stack([idx[:, e[:, 0]].ravel(), idx[:, e[:, 1]].ravel()], axis=1)
    return FactorGraph(vertical, _canonical(lifted))


def union_graphs(*graphs: FactorGraph) -> FactorGraph:
    """Union of undirected graphs over the same configuration."""
    if not graphs:
        raise ValueError("nothing to merge")
    cfg = graphs[0].config
    if any(g.config is not cfg for g in graphs):
        raise ValueError("graphs must share one configuration")
    e = np.concatenate([g.undirected().edges for g in graphs])
    return FactorGraph(cfg, _canonical(e))


# -- connectivity --------------------------------------------------------------


@dataclass(frozen=True)
class ComponentReport:
    count: int
    largest: int
    connected: bool
    labels: np.ndarray


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def connected_components(graph: FactorGraph) -> ComponentReport:
    """Weakly connected components; labels are numbered by first vertex."""
    n = graph.n
    uf = _UnionFind(n)
    for a, b in graph.edges.tolist():
        uf.union(a, b)
    roots = np.fromiter((uf.find(i) for i in range(n)), dtype=np.int64, count=n)
    _, first, labels = np.unique(roots, return_index=True, return_inverse=True)
    # renumber so component ids follow the smallest vertex index
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    labels = rank[labels.ravel()]
    count = len(first)
    largest = int(np.bincount(labels).max()) if n else 0
    return ComponentReport(count, largest, count <= 1, labels)


# -- degree statistics ---------------------------------------------------------


def degree_stats(
    graphs: Union[FactorGraph, Iterable[FactorGraph]],
    window: Optional[Box] = None,
    intensity: Optional[float] = None,
    name: str = "mean_degree",
    seed=None,
) -> EstimateReport:
    """Mean Palm degree from degree sums over a statistics window.

    With a known ``intensity`` the sums are normalised by
    ``intensity * volume(window)``; otherwise the point count in the window
    is used (ratio estimator).
    """
    if isinstance(graphs, FactorGraph):
        graphs = [graphs]
    graphs = list(graphs)
    if not graphs:
        raise ValueError("no graphs")
    sums, counts = [], []
    for g in graphs:
        mask = window_mask(g.config, window)
        sums.append(float(g.degrees()[mask].sum()))
        counts.append(int(mask.sum()))
    wdesc = window.descriptor if window is not None else "full"
    if intensity is not None:
        if intensity <= 0:
            raise ValueError("zero-intensity process")
        scale = intensity * window_volume(graphs[0].config.space, window)
        return mean_report(name, np.asarray(sums) / scale, seed, wdesc)
    if sum(counts) == 0:
        raise ValueError("empty process: no points in the statistics window")
    return ratio_report(name, sums, counts, seed, wdesc)


# -- PPG1 text format ------------------------------------------------------------


def format_graph(graph: FactorGraph) -> str:
    head = f"PPG1 n={graph.n} m={graph.m}" + (" directed=1" if graph.directed else "")
    body = "".join(f"{a} {b}\n" for a, b in graph.edges.tolist())
    return head + "\n" + format_config(graph.config) + body


def parse_graph(text: str, *, source: str = "<string>") -> FactorGraph:
    lines = [(no, ln.strip()) for no, ln in enumerate(text.splitlines(), start=1)]
    lines = [(no, ln) for no, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ConfigurationError(f"{source}: empty file")
    no, header = lines[0]
    parts = header.split()
    try:
        if parts[0] != "PPG1":
            raise ValueError
        kv = dict(p.split("=", 1) for p in parts[1:])
        n, m = int(kv["n"]), int(kv["m"])
        directed = kv.get("directed", "0") == "1"
    except (ValueError, KeyError, IndexError) as exc:
        raise ConfigurationError(f"{source}:{no}: malformed PPG1 header") from exc
    if len(lines) < 2:
        raise ConfigurationError(f"{source}:{no}: missing configuration block")
    config, used = _parse_block(lines[1:], source)
    if len(config) != n:
        raise ConfigurationError(f"{source}:{no}: header says n={n}, configuration has {len(config)} points")
    rest = lines[1 + used:]
    if len(rest) != m:
        where = rest[-1][0] if rest else lines[-1][0]
        raise ConfigurationError(f"{source}:{where}: expected {m} edges, found {len(rest)}")
    edges = np.empty((m, 2), dtype=np.int64)
    for k, (no, ln) in enumerate(rest):
        f = ln.split()
        if len(f) != 2:
            raise ConfigurationError(f"{source}:{no}: expected 'i j'")
        try:
            edges[k] = [int(f[0]), int(f[1])]
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{no}: unparsable edge") from exc
    try:
        return FactorGraph(config, edges, directed)
    except ValueError as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc


def save_graph(graph: FactorGraph, path) -> None:
    Path(path).write_text(format_graph(graph))


def load_graph(path) -> FactorGraph:
    return parse_graph(Path(path).read_text(), source=str(path))
