"""Cost upper bounds from factor graphings, and the vertical constructions on G x Z."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .configuration import Configuration
from .graph import (
    FactorGraph,
    cayley_graph,
    connected_components,
    distance_graph,
    lift_graph,
    nn_graph,
    percolate_edges,
    union_graphs,
    vertical_edges,
)
from .process import ProcessSpec, iid_mark, sample_poisson, sample_vertical_poisson, straighten_phi_n, vertical_coupling
from .space import Box, Space, make_space, window_mask, window_volume
from .stats import poisson_gof, ratio_report, replica_rng
from .weakconv import (
    FddWindowSet,
    column_domination_bound,
    fdd_compare,
    tightness_check,
    wobble_distance,
)
from .palm import reroot

__all__ = [
    "COST_FIELDS",
    "CostEstimate",
    "GraphingRule",
    "parse_graphing",
    "lattice_cost",
    "graphing_cost",
    "vertical_cost_experiment",
    "GxzRow",
    "cross_windows",
    "column_windows",
    "gxz_convergence_experiment",
    "MonotonicityReport",
    "monotonicity_spotcheck",
]

COST_FIELDS = (
    "graphing", "eps", "n", "levels", "replicas", "mean_degree", "stderr",
    "intensity", "cost", "cost_stderr", "connected_frac", "seed",
)


def lattice_cost(d_rank: int, covol: float) -> float:
    """Cost of a lattice shift: ``1 + (rank - 1) / covol``."""
    if d_rank < 1 or not covol > 0:
        raise ValueError("need rank >= 1 and covol > 0")
    return 1.0 + (d_rank - 1) / covol


@dataclass
class CostEstimate:
    """Cost upper bound attached to a named graphing."""

    graphing: str
    mean_degree: float
    stderr: float
    intensity: float
    connected_frac: float
    replicas: int
    seed: int
    eps: Optional[float] = None
    n: Optional[int] = None
    levels: Optional[int] = None
    detail: dict = field(default_factory=dict)

    @property
    def cost(self) -> float:
        return 1.0 + self.intensity * (0.5 * self.mean_degree - 1.0)

    @property
    def cost_stderr(self) -> float:
        return 0.5 * self.intensity * self.stderr

    def row(self) -> dict:
        d = asdict(self)
        d["cost"] = self.cost
        d["cost_stderr"] = self.cost_stderr
        return {k: ("" if d[k] is None else d[k]) for k in COST_FIELDS}


@dataclass(frozen=True)
class GraphingRule:
    name: str
    build: Callable[[Configuration], FactorGraph]


def _cayley(S, cfg):
    return cayley_graph(cfg, S)


def _dist(R, cfg):
    return distance_graph(cfg, R)


def _nn(k, cfg):
    return nn_graph(cfg, k).undirected()


def parse_graphing(desc: str) -> GraphingRule:
    """``cayley`` (all unit generators), ``cayley:e1`` (one axis),
    ``dist:R``, ``nn:k`` (undirected closure) or ``vertical``."""
    from functools import partial

    name, _, arg = desc.partition(":")
    if name == "cayley":
        if arg in ("", "std"):
            S = ((1, 0), (-1, 0), (0, 1), (0, -1))
        elif arg == "e1":
            S = ((1, 0), (-1, 0))
        else:
            raise ValueError(f"unknown generating set {arg!r}")
        return GraphingRule(desc, partial(_cayley, S))
    if name == "dist":
        return GraphingRule(desc, partial(_dist, float(arg)))
    if name == "nn":
        return GraphingRule(desc, partial(_nn, int(arg or 1)))
    if name == "vertical":
        return GraphingRule(desc, vertical_edges)
    raise ValueError(f"unknown graphing {desc!r}")


def _finish(name, sums, counts, connected, lam, space, window, replicas, seed, **kw) -> CostEstimate:
    # ratio of totals: exact whenever every point has the same degree
    counts = np.asarray(counts, float)
    if counts.sum() == 0 or (lam is not None and lam <= 0):
        raise ValueError("zero-intensity process")
    rep = ratio_report(name, np.asarray(sums, float), counts)
    if lam is None:
        lam = float(counts.mean() / window_volume(space, window))
    se = rep.stderr if np.isfinite(rep.stderr) else 0.0
    return CostEstimate(name, rep.value, se, lam, float(np.mean(connected)), replicas, seed, **kw)


def graphing_cost(
    spec: ProcessSpec,
    space: Space,
    rule: GraphingRule,
    replicas: int,
    seed: int,
    window: Optional[Box] = None,
) -> CostEstimate:
    """Cost bound ``1 + intensity * (mean degree / 2 - 1)`` of one graphing family.

    ``connected_frac`` is the fraction of replicas whose graph is connected;
    a bound only counts for graphings that are connected.
    """
    sums, counts, connected = [], [], []
    for r in range(replicas):
        cfg = spec.sample(space, replica_rng(seed, r, "cost"))
        g = rule.build(cfg)
        mask = window_mask(cfg, window)
        sums.append(float(g.degrees()[mask].sum()))
        counts.append(int(mask.sum()))
        connected.append(connected_components(g).connected)
    est = _finish(rule.name, sums, counts, connected, spec.intensity, space, window, replicas, seed)
    if est.connected_frac < 1:
        est.detail["warning"] = "graphing is not connected in every replica"
    return est


# -- vertical coupling ---------------------------------------------------------------


def vertical_cost_experiment(
    t: float,
    L: float,
    R: float,
    eps: Sequence[float],
    levels: int,
    replicas: int,
    seed: int,
    min_base_connected: float = 0.5,
) -> list:
    """Cost of ``V u percolate(lift(G), eps)`` on the vertically coupled Poisson.

    ``G`` is the distance-``R`` graph of a Poisson(``t``) sample on the circle
    of length ``L``; ``V`` joins each point to the copies directly above and
    below it.  All values of ``eps`` share the same marks in each replica,
    so the returned estimates (one per ``eps``) are coupled.
    """
    eps = [float(e) for e in np.atleast_1d(eps)]
    if any(not 0 <= e <= 1 for e in eps):
        raise ValueError("eps must lie in [0, 1]")
    base_space = make_space("torus1", L=L)
    cyl = make_space("cylinder", L=L, levels=levels)
    sums = np.zeros((len(eps), replicas))
    conn = np.zeros((len(eps), replicas), dtype=bool)
    counts = np.zeros(replicas)
    base_conn = np.zeros(replicas, dtype=bool)
    base_deg, base_cnt = np.zeros(replicas), np.zeros(replicas)
    for r in range(replicas):
        rng = replica_rng(seed, r, "vertical")
        base = sample_poisson(base_space, t, rng)
        g = distance_graph(base, R)
        base_conn[r] = connected_components(g).connected and len(base) > 0
        base_deg[r] = g.degrees().sum()
        base_cnt[r] = len(base)
        vert = iid_mark(vertical_coupling(base, cyl), rng)
        V = vertical_edges(vert)
        lifted = lift_graph(g, vert)
        counts[r] = len(vert)
        for k, e in enumerate(eps):
            G = union_graphs(V, percolate_edges(lifted, e))
            sums[k, r] = G.degrees().sum()
            conn[k, r] = connected_components(G).connected
    frac = float(base_conn.mean())
    if frac < min_base_connected:
        raise ValueError(
            f"base graphing is connected in only {frac:.1%} of replicas "
            f"(need {min_base_connected:.0%}); increase R or the intensity"
        )
    base_rep = ratio_report("base_degree", base_deg, base_cnt) if base_cnt.sum() else None
    out = []
    for k, e in enumerate(eps):
        est = _finish(f"vertical+lift:dist:{R:g}", sums[k], counts, conn[k], t, cyl, None, replicas, seed,
                      eps=e, levels=levels)
        cond = float(conn[k][base_conn].mean()) if base_conn.any() else float("nan")
        est.detail.update(
            base_mean_degree=base_rep.value if base_rep else 0.0,
            base_degree_stderr=base_rep.stderr if base_rep else 0.0,
            base_connected_frac=frac,
            connected_given_base=cond,
            target_cost=1.0 + e * 0.5 * (base_rep.value if base_rep else 0.0) * t,
        )
        out.append(est)
    return out


# -- straightening on G x Z ------------------------------------------------------------


def cross_windows(L: float = 20.0, levels: int = 40) -> FddWindowSet:
    """Windows on distinct base intervals spread over several levels."""
    if L < 16 or levels < 8:
        raise ValueError("cross windows need L >= 16 and at least 8 levels")
    ws = (
        Box((0.0,), (2.0,), level=0),
        Box((3.0,), (5.0,), level=1),
        Box((6.0,), (8.0,), level=7),
        Box((10.0,), (12.0,), level=3),
        Box((13.0,), (15.0,), level=3),
    )
    return FddWindowSet(ws, "cross")


def column_windows(L: float = 20.0, levels: int = 40) -> FddWindowSet:
    """Windows stacked over one base interval on adjacent levels."""
    if L < 2 or levels < 3:
        raise ValueError("column windows need L >= 2 and at least 3 levels")
    ws = tuple(Box((0.0,), (2.0,), level=k) for k in range(3))
    return FddWindowSet(ws, "column")


@dataclass
class GxzRow:
    n: int
    successor_prob: float
    successor_stderr: float
    bound: float
    strip_chi2: float
    strip_dof: int
    strip_pvalue: float
    wobble_exact_frac: float
    tightness_q: int
    progenitor_frac: float

    def row(self) -> dict:
        return asdict(self)


def _successors(cfg: Configuration, eps: float) -> np.ndarray:
    """For each point, whether a point lies within ``eps`` directly one level up."""
    if not len(cfg):
        return np.zeros(0, dtype=bool)
    emb = cfg.embedded
    up = cfg.space.wrap(emb + np.array([0.0, 1.0]))
    return cfg.tree().query_ball_point(up, eps, return_length=True) > 0


def _vertical_slice(sample: Configuration) -> Configuration:
    """Vertical configuration built from the level-0 slice of a rooted sample."""
    space = sample.space
    base = sample.coords[sample.levels == 0]
    coords = np.tile(base, (space.levels, 1))
    lv = np.repeat(np.arange(space.levels), len(base))
    return Configuration(space, coords, lv, check=False)


def gxz_convergence_experiment(
    t: float,
    ns: Sequence[int],
    L: float,
    levels: int,
    replicas: int,
    seed: int,
    eps_succ: float = 0.05,
    wobble_R: float = 1.5,
    fdd_n: Optional[int] = None,
    windows: Optional[FddWindowSet] = None,
    diagnostic_windows: Optional[FddWindowSet] = None,
    tight_box: Optional[Box] = None,
    q: float = 0.01,
) -> dict:
    """Diagnostics of the straightening maps on the cylinder ``L x levels``.

    For every ``n`` (same IID Poisson input across ``n``): the probability
    that a Palm root has a point within ``eps_succ`` one level up, compared
    with ``(n - 1) / n``; a Poisson goodness of fit for the count on level 0;
    the fraction of roots whose ``wobble_R``-ball coincides with the vertical
    extension of the root's level; and the count quantile in ``tight_box``.
    The ensemble for ``fdd_n`` (default: largest ``n``) is compared with the
    vertically coupled Poisson over ``windows`` and ``diagnostic_windows``.
    """
    ns = [int(n) for n in ns]
    if any(n < 1 or n > levels / 2 for n in ns):
        raise ValueError(f"every n must satisfy 1 <= n <= levels/2 = {levels / 2:g}")
    cyl = make_space("cylinder", L=L, levels=levels)
    fdd_n = max(ns) if fdd_n is None else int(fdd_n)
    windows = windows or cross_windows(L, levels)
    diagnostic_windows = diagnostic_windows or column_windows(L, levels)
    windows.check_space(cyl)
    diagnostic_windows.check_space(cyl)
    tight_box = tight_box or Box((0.0,), (1.0,), level=None)
    tight_levels = (0, 1)
    succ = {n: np.zeros((replicas, 2)) for n in ns}
    strip = {n: np.zeros(replicas, dtype=np.int64) for n in ns}
    exact = {n: np.zeros(replicas, dtype=bool) for n in ns}
    tight = {n: np.zeros(replicas, dtype=np.int64) for n in ns}
    prog = {n: np.zeros((replicas, 2)) for n in ns}
    fdd_a = {"main": [], "diag": []}
    for r in range(replicas):
        rng = replica_rng(seed, r, "gxz")
        marked = sample_poisson(cyl, t, rng, marked=True)
        pick = rng.random()
        for n in ns:
            cfg = straighten_phi_n(marked, n)
            s = _successors(cfg, eps_succ)
            succ[n][r] = (s.sum(), len(cfg))
            strip[n][r] = int(np.sum(cfg.levels == 0))
            prog[n][r] = (np.sum(marked.marks <= 1.0 / n), len(marked))
            tmask = np.isin(cfg.levels, tight_levels) & (cfg.coords[:, 0] >= tight_box.lo[0]) & (cfg.coords[:, 0] < tight_box.hi[0])
            tight[n][r] = int(tmask.sum())
            if len(cfg):
                rs = reroot(cfg, int(pick * len(cfg)))
                w = wobble_distance(rs.config, _vertical_slice(rs.config), wobble_R)
                exact[n][r] = w.feasible and w.eps <= 1e-9
            else:
                exact[n][r] = True
            if n == fdd_n:
                fdd_a["main"].append(windows.counts(cfg))
                fdd_a["diag"].append(diagnostic_windows.counts(cfg))
    fdd_b = {"main": [], "diag": []}
    for r in range(replicas):
        v = sample_vertical_poisson(cyl, t, replica_rng(seed, r, "gxz-vertical"))
        fdd_b["main"].append(windows.counts(v))
        fdd_b["diag"].append(diagnostic_windows.counts(v))
    rows = []
    for n in ns:
        rep = ratio_report("successor", succ[n][:, 0], succ[n][:, 1])
        chi2, dof, p = poisson_gof(strip[n], t * L)
        pf = prog[n].sum(axis=0)
        rows.append(GxzRow(
            n=n,
            successor_prob=rep.value,
            successor_stderr=rep.stderr,
            bound=(n - 1) / n,
            strip_chi2=chi2,
            strip_dof=dof,
            strip_pvalue=p,
            wobble_exact_frac=float(exact[n].mean()),
            tightness_q=int(np.quantile(tight[n], 1 - q, method="higher")),
            progenitor_frac=float(pf[0] / pf[1]) if pf[1] else float("nan"),
        ))
    bound = column_domination_bound(t, tight_box.hi[0] - tight_box.lo[0], len(tight_levels), q)
    tightness = tightness_check({n: tight[n] for n in ns}, tight_box, q, bound)
    main = fdd_compare(np.array(fdd_a["main"]), np.array(fdd_b["main"]), windows)
    diag = fdd_compare(np.array(fdd_a["diag"]), np.array(fdd_b["diag"]), diagnostic_windows)
    return {"rows": rows, "fdd": main, "fdd_column": diag, "fdd_n": fdd_n, "tightness": tightness}


# -- monotonicity spot check ------------------------------------------------------------------


@dataclass
class MonotonicityReport:
    source: list
    factor: list
    best_source: CostEstimate
    best_factor: CostEstimate
    warned: bool


def _best(ests):
    conn = [e for e in ests if e.connected_frac == 1.0] or ests
    return min(conn, key=lambda e: e.cost)


def monotonicity_spotcheck(
    source: ProcessSpec,
    factor: ProcessSpec,
    space: Space,
    source_rules: Sequence[GraphingRule],
    factor_rules: Sequence[GraphingRule],
    replicas: int,
    seed: int,
    k: float = 3.0,
) -> MonotonicityReport:
    """Compare cost bounds of a process and of a factor of it.

    Costs can only go up under factors, so a source bound clearly above the
    factor bound only means the source graphings are poor; a warning is
    issued and nothing is asserted.
    """
    src = [graphing_cost(source, space, rule, replicas, seed) for rule in source_rules]
    fac = [graphing_cost(factor, space, rule, replicas, seed) for rule in factor_rules]
    bs, bf = _best(src), _best(fac)
    gap = bs.cost - bf.cost
    se = math.hypot(bs.cost_stderr, bf.cost_stderr)
    warned = gap > k * se and gap > 0
    if warned:
        warnings.warn(
            f"source bound {bs.cost:.4g} ({bs.graphing}) exceeds factor bound {bf.cost:.4g} "
            f"({bf.graphing}) by {gap:.3g}; the source graphings are far from optimal",
            stacklevel=2,
        )
    return MonotonicityReport(src, fac, bs, bf, warned)
