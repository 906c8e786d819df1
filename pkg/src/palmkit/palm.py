"""Palm expectations by rerooting, and Monte Carlo checks of Palm identities."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np
from scipy import sparse, stats

from .configuration import Configuration
from .graph import distance_graph, nearest_neighbours
from .process import ProcessSpec, constant_thicken, sample_poisson
from .space import Box, Space, window_mask, window_volume
from .stats import EstimateReport, mean_report, ratio_report, replica_rng, replicate

__all__ = [
    "RootedSample",
    "Functional",
    "PairFunctional",
    "Transport",
    "VerifierReport",
    "VERIFIER_FIELDS",
    "reroot",
    "palm_reroot",
    "sample_palm",
    "estimate_palm_expectation",
    "nearest_distance",
    "isolated",
    "ball_count",
    "constant",
    "window_ball_count",
    "ball_transport",
    "nn_transport",
    "spawn_transport",
    "verify_mecke_slivnyak",
    "verify_clmm",
    "verify_mtp",
    "verify_palm_of_thickening",
]

VERIFIER_FIELDS = ("verifier", "statistic", "n", "lhs", "rhs", "stderr", "pvalue", "seed")


# -- rooted configurations -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class RootedSample:
    """A configuration seen from one of its points.

    ``config`` is recentred so the root sits at the origin (level 0 on
    cylinders); ``root`` is the root's index, which is also its index in the
    original configuration, and ``origin`` its original coordinates.
    """

    config: Configuration
    root: int
    origin: tuple

    def distances(self) -> np.ndarray:
        """Distance from the root to every point (0 for the root itself)."""
        space = self.config.space
        if space.kind == "hyperbolic":
            return space.radial(self.config.coords)
        emb = self.config.embedded
        d = space.delta(np.zeros(emb.shape[1]), emb)
        return np.sqrt(np.sum(d * d, axis=1))

    def others(self) -> np.ndarray:
        """Distances to the points other than the root."""
        return np.delete(self.distances(), self.root)


def reroot(config: Configuration, i: int) -> RootedSample:
    space = config.space
    i = int(i)
    if space.kind == "hyperbolic":
        at = config.coords[i]
        coords = space.recenter(config.coords, at)
        coords[i] = 0.0
        moved = Configuration(space, coords, None, config.marks, seed=config.seed, check=False)
        return RootedSample(moved, i, tuple(at))
    emb = config.embedded
    at = emb[i]
    moved = config.from_embedded(space.wrap(emb - at), config.marks)
    return RootedSample(moved, i, tuple(at))


def palm_reroot(config: Configuration, window: Optional[Box] = None) -> list:
    """One :class:`RootedSample` per point of ``config`` in the statistics window."""
    return [reroot(config, i) for i in np.flatnonzero(window_mask(config, window))]


# -- functionals ---------------------------------------------------------------


@dataclass(frozen=True)
class Functional:
    """A nonnegative statistic of a rooted configuration.

    ``range`` bounds how far from the root the statistic looks.  ``batch``,
    when given, evaluates the statistic at many roots of one configuration at
    once and must agree with ``evaluate`` on every root.
    """

    name: str
    evaluate: Callable[[RootedSample], float]
    range: float = 0.0
    batch: Optional[Callable[[Configuration, np.ndarray], np.ndarray]] = None

    def values(self, config: Configuration, roots: np.ndarray) -> np.ndarray:
        roots = np.asarray(roots, dtype=np.int64)
        if len(roots) == 0:
            return np.empty(0)
        if self.batch is not None:
            return np.asarray(self.batch(config, roots), dtype=float)
        return np.array([self.evaluate(reroot(config, i)) for i in roots], dtype=float)


def _check_range(space: Space, r: float, what: str) -> None:
    if space.kind == "hyperbolic":
        if r > space.margin + 1e-12:
            raise ValueError(f"{what} range {r} exceeds the margin {space.margin} of {space}")
    else:
        space.check_range(r, f"{what} range")


def _nn_eval(cap, sample):
    d = sample.others()
    return float(min(d.min(initial=np.inf), cap))


def _nn_batch(cap, config, roots):
    n = len(config)
    if n < 2:
        return np.full(len(roots), float(cap))
    space = config.space
    if space.periodic:
        d, _ = config.tree().query(config.embedded[roots], k=2)
        d = d[:, 1]
    else:
        dm = space.pairwise(config.coords[roots], config.coords)
        dm[np.arange(len(roots)), roots] = np.inf
        d = dm.min(axis=1)
    return np.minimum(d, cap)


def nearest_distance(cap: float = 5.0) -> Functional:
    """Distance from the root to the nearest other point, truncated at ``cap``."""
    return Functional("nn_distance", partial(_nn_eval, cap), cap, partial(_nn_batch, cap))


def _iso_eval(r, sample):
    return float(_nn_eval(np.inf, sample) > r)


def _iso_batch(r, config, roots):
    return (_nn_batch(np.inf, config, roots) > r).astype(float)


def isolated(r: float) -> Functional:
    """1 if no other point lies within distance ``r`` of the root."""
    return Functional(f"isolated_{r:g}", partial(_iso_eval, r), r, partial(_iso_batch, r))


def _count_eval(r, cap, sample):
    c = float(np.sum(sample.others() <= r))
    return c if cap is None else min(c, cap)


def _count_batch(r, cap, config, roots):
    space = config.space
    if space.periodic:
        c = config.tree().query_ball_point(config.embedded[roots], r, return_length=True) - 1
    else:
        c = np.sum(space.pairwise(config.coords[roots], config.coords) <= r, axis=1) - 1
    c = np.asarray(c, dtype=float)
    return c if cap is None else np.minimum(c, cap)


def ball_count(r: float, cap: Optional[float] = None) -> Functional:
    """Number of other points within distance ``r`` of the root, optionally capped."""
    name = f"ball_count_{r:g}" + ("" if cap is None else f"_cap{cap:g}")
    return Functional(name, partial(_count_eval, r, cap), r, partial(_count_batch, r, cap))


def _const_eval(c, sample):
    return float(c)


def _const_batch(c, config, roots):
    return np.full(len(roots), float(c))


def constant(c: float = 1.0) -> Functional:
    return Functional(f"const_{c:g}", partial(_const_eval, c), 0.0, partial(_const_batch, c))


_STATISTICS = {
    "nn": nearest_distance,
    "nn_distance": nearest_distance,
    "ball_count": ball_count,
    "isolated": isolated,
    "const": constant,
}


def functional_by_name(desc: str) -> Functional:
    """``nn``, ``ball_count:1``, ``ball_count:1:10``, ``isolated:1`` or ``const``."""
    name, *args = desc.split(":")
    if name not in _STATISTICS:
        raise ValueError(f"unknown statistic {desc!r}")
    return _STATISTICS[name](*[float(a) for a in args])


@dataclass(frozen=True)
class PairFunctional:
    """A two-argument functional ``f(x, omega)`` with ``omega`` rooted.

    ``evaluate(xs, sample)`` returns ``f`` at the locations ``xs`` (embedded
    coordinates).  Product functionals ``a(x) * h(omega)`` set ``spatial``
    and ``palm`` instead, which lets both sides use vectorised paths.
    """

    name: str
    range: float
    evaluate: Optional[Callable[[np.ndarray, RootedSample], np.ndarray]] = None
    spatial: Optional[Callable[[np.ndarray], np.ndarray]] = None
    palm: Optional[Functional] = None

    def __post_init__(self):
        if self.evaluate is None and (self.spatial is None or self.palm is None):
            raise ValueError("give either evaluate or both spatial and palm")

    @property
    def product(self) -> bool:
        return self.spatial is not None and self.palm is not None


def _box_indicator(lo, hi, xs):
    xs = np.atleast_2d(xs)
    k = len(lo)
    return np.all((xs[:, :k] >= lo) & (xs[:, :k] < hi), axis=1).astype(float)


def window_ball_count(U: Box, r: float = 1.0, cap: float = 10.0) -> PairFunctional:
    """``f(x, omega) = 1[x in U] * min(N_B(0, r)(omega), cap)``."""
    h = ball_count(r, cap)
    ind = partial(_box_indicator, np.asarray(U.lo, float), np.asarray(U.hi, float))
    return PairFunctional(f"window_{h.name}", r, spatial=ind, palm=h)


# -- Palm sampling and estimation --------------------------------------------------


def sample_palm(
    spec: ProcessSpec,
    space: Space,
    rng: np.random.Generator,
    window: Optional[Box] = None,
    cap: Optional[float] = None,
    max_tries: int = 100_000,
) -> RootedSample:
    """One draw from the Palm version of ``spec``.

    A realization is accepted with probability proportional to its number of
    points in the window, then a uniformly chosen point there becomes the root.
    """
    if cap is None:
        lam = spec.intensity
        if lam is None:
            raise ValueError("Palm sampling needs a known intensity or an explicit cap")
        if lam <= 0:
            raise ValueError("zero-intensity process has no Palm version")
        mu = lam * window_volume(space, window)
        cap = mu + 10.0 * math.sqrt(mu) + 10.0
    for _ in range(max_tries):
        cfg = spec.sample(space, rng)
        idx = np.flatnonzero(window_mask(cfg, window))
        if len(idx) and rng.random() * cap < len(idx):
            return reroot(cfg, rng.choice(idx))
    raise RuntimeError("Palm sampler did not accept any realization")


def _palm_replica(seed, r, spec, space, h, window):
    cfg = spec.sample(space, replica_rng(seed, r, "palm"))
    roots = np.flatnonzero(window_mask(cfg, window))
    return float(h.values(cfg, roots).sum()), len(roots)


def estimate_palm_expectation(
    spec: ProcessSpec,
    space: Space,
    h: Functional,
    replicas: int,
    seed: int,
    window: Optional[Box] = None,
    workers: int = 1,
) -> EstimateReport:
    """Palm mean of ``h`` from exhaustive rerooting over the statistics window."""
    _check_range(space, h.range, h.name)
    lam = spec.intensity
    if lam is not None and lam <= 0:
        raise ValueError("zero-intensity process")
    out = replicate(_palm_replica, replicas, seed, spec, space, h, window, workers=workers)
    sums = np.array([s for s, _ in out])
    counts = np.array([c for _, c in out])
    wdesc = window.descriptor if window is not None else "full"
    if lam is not None:
        return mean_report(h.name, sums / (lam * window_volume(space, window)), seed, wdesc)
    if counts.sum() == 0:
        raise ValueError("zero-intensity process")
    return ratio_report(h.name, sums, counts, seed, wdesc)


# -- verifier reports ----------------------------------------------------------------


@dataclass
class VerifierReport:
    verifier: str
    statistic: str
    n: int
    lhs: float
    rhs: float
    stderr: float
    pvalue: float
    seed: int
    passed: bool = True
    detail: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in VERIFIER_FIELDS}


def _z_pvalue(diff: float, se: float) -> float:
    if se == 0 or not np.isfinite(se):
        return 1.0 if diff == 0 else 0.0
    return float(2 * stats.norm.sf(abs(diff) / se))


def _ks_report(name, stat_name, a, b, seed, alpha, detail=None) -> VerifierReport:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    res = stats.ks_2samp(a, b)
    se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    d = {"ks": float(res.statistic), **(detail or {})}
    return VerifierReport(name, stat_name, len(a), float(a.mean()), float(b.mean()), se,
                          float(res.pvalue), seed, bool(res.pvalue > alpha), d)


def _with_origin(cfg: Configuration) -> Configuration:
    """Adjoin the origin as the last point."""
    space = cfg.space
    coords = np.concatenate([cfg.coords, np.zeros((1, space.dim))])
    levels = None if cfg.levels is None else np.append(cfg.levels, 0)
    return Configuration(space, coords, levels, check=False)


def verify_mecke_slivnyak(
    t: float,
    space: Space,
    statistic: Functional,
    replicas: int,
    seed: int,
    alpha: float = 0.01,
) -> VerifierReport:
    """KS comparison of a statistic under the Palm version of Poisson(t)
    against the same statistic of Poisson(t) with the origin adjoined."""
    if replicas < 100:
        raise ValueError("too few samples: need at least 100 per arm")
    _check_range(space, statistic.range, statistic.name)
    spec = ProcessSpec("poisson", t)
    arm_a, arm_b = [], []
    for r in range(replicas):
        plain = _with_origin(sample_poisson(space, t, replica_rng(seed, r, "adjoin")))
        arm_b.append(statistic.evaluate(reroot(plain, len(plain) - 1)))
        if t == 0:
            arm_a.append(arm_b[-1])
            continue
        arm_a.append(statistic.evaluate(sample_palm(spec, space, replica_rng(seed, r, "palm"))))
    detail = {"trivial": True} if t == 0 else {}
    return _ks_report("mecke", statistic.name, arm_a, arm_b, seed, alpha, detail)


def _quadrature_grid(space: Space, cells: int):
    """Midpoint grid over the window (embedded coordinates) and the cell volume."""
    if not space.periodic:
        raise ValueError("window quadrature is implemented on periodic spaces")
    axes, vol = [], 1.0
    for k, side in enumerate(space.sides):
        h = side / cells
        axes.append((np.arange(cells) + 0.5) * h)
        vol *= h
    if space.has_levels:
        axes.append(np.arange(space.levels, dtype=float))
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return grid, vol


def _clmm_lhs(seed, r, spec, space, f):
    cfg = spec.sample(space, replica_rng(seed, r, "clmm-lhs"))
    if not len(cfg):
        return 0.0
    pos = cfg.embedded
    if f.product:
        a = f.spatial(pos)
        idx = np.flatnonzero(a)
        return float(np.sum(a[idx] * f.palm.values(cfg, idx)))
    return float(sum(f.evaluate(pos[i:i + 1], reroot(cfg, i))[0] for i in range(len(cfg))))


def _clmm_rhs(seed, r, spec, space, f, grid, cell, max_roots):
    rng = replica_rng(seed, r, "clmm-rhs")
    cfg = spec.sample(space, rng)
    n = len(cfg)
    if n == 0:
        return 0.0, 0
    if f.product:
        return float(f.palm.values(cfg, np.arange(n)).sum()), n
    roots = np.arange(n) if n <= max_roots else rng.choice(n, max_roots, replace=False)
    total = sum(float(np.sum(f.evaluate(grid, reroot(cfg, i))) * cell) for i in roots)
    return total * n / len(roots), n


def verify_clmm(
    spec: ProcessSpec,
    space: Space,
    f: PairFunctional,
    replicas: int,
    seed: int,
    quad_cells: int = 200,
    max_roots: int = 20,
    workers: int = 1,
    k: float = 3.0,
) -> VerifierReport:
    """Compare ``E sum_x f(x, x^-1 omega)`` with ``intensity * E_0 int f(x, omega) dx``.

    The left side is a direct Monte Carlo average; the right side uses
    independent realizations, rerooting for the Palm mean and midpoint
    quadrature over the window for the integral.
    """
    _check_range(space, f.range, f.name)
    grid, cell = _quadrature_grid(space, quad_cells)
    lhs = np.array(replicate(_clmm_lhs, replicas, seed, spec, space, f, workers=workers))
    rhs_parts = replicate(_clmm_rhs, replicas, seed, spec, space, f, grid, cell, max_roots, workers=workers)
    num = np.array([a for a, _ in rhs_parts])
    den = np.array([b for _, b in rhs_parts])
    lam = spec.intensity
    if f.product:
        integral = float(np.sum(f.spatial(grid)) * cell)
        if lam is None:
            # intensity * Palm mean = E[sum h] / volume
            rhs_vals = num * integral / space.volume
            rhs, rhs_se = float(rhs_vals.mean()), float(rhs_vals.std(ddof=1) / math.sqrt(replicas))
        elif den.sum() == 0:
            rhs, rhs_se = 0.0, 0.0
        else:
            rep = ratio_report("palm", num, den)
            rhs, rhs_se = lam * integral * rep.value, lam * integral * rep.stderr
    else:
        if lam is None:
            rhs_vals = num / space.volume
            rhs, rhs_se = float(rhs_vals.mean()), float(rhs_vals.std(ddof=1) / math.sqrt(replicas))
        elif den.sum() == 0:
            rhs, rhs_se = 0.0, 0.0
        else:
            rep = ratio_report("palm", num, den)
            rhs, rhs_se = lam * rep.value, lam * rep.stderr
    lhs_mean = float(lhs.mean())
    lhs_se = float(lhs.std(ddof=1) / math.sqrt(replicas))
    se = math.sqrt(lhs_se**2 + rhs_se**2)
    diff = lhs_mean - rhs
    z = abs(diff) / se if se > 0 else (0.0 if diff == 0 else math.inf)
    return VerifierReport("clmm", f.name, replicas, lhs_mean, rhs, se, _z_pvalue(diff, se), seed,
                          bool(z < k), {"z": z})


# -- mass transport --------------------------------------------------------------------


@dataclass(frozen=True)
class Transport:
    """Mass ``T(x, y; omega)`` sent between points of one realization.

    ``mass(config, parents)`` returns an ``n x n`` sparse matrix whose entry
    ``(i, j)`` is the mass sent from point ``i`` to point ``j``; it may only
    depend on relative positions.
    """

    name: str
    mass: Callable
    range: float
    needs_parents: bool = False


def _ball_mass(R, config, parents):
    n = len(config)
    g = distance_graph(config, R)
    e = g.edges
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()


def ball_transport(R: float) -> Transport:
    """Unit mass between every pair at distance at most ``R``."""
    return Transport(f"ball_{R:g}", partial(_ball_mass, R), R)


def _nn_mass(config, parents):
    n = len(config)
    if n < 2:
        return sparse.csr_matrix((n, n))
    nb = nearest_neighbours(config, 1)[:, 0]
    return sparse.coo_matrix((np.ones(n), (np.arange(n), nb)), shape=(n, n)).tocsr()


def nn_transport(range_bound: float = 5.0) -> Transport:
    """Unit mass from each point to its nearest neighbour."""
    return Transport("nearest_neighbour", _nn_mass, range_bound)


def _spawn_mass(config, parents):
    n = len(config)
    if parents is None:
        raise ValueError("the spawn transport needs thickening provenance")
    return sparse.coo_matrix((np.ones(n), (np.asarray(parents), np.arange(n))), shape=(n, n)).tocsr()


def spawn_transport(range_bound: float = 1.0) -> Transport:
    """Unit mass from every progenitor to each point it spawned (itself included)."""
    return Transport("spawn", _spawn_mass, range_bound, needs_parents=True)


def _moved(config: Configuration, rng: np.random.Generator) -> Configuration:
    space = config.space
    if space.kind == "hyperbolic":
        th = rng.random() * 2 * math.pi
        c, s = math.cos(th), math.sin(th)
        xy = config.coords @ np.array([[c, s], [-s, c]])
        return Configuration(space, xy, None, config.marks, check=False)
    g = rng.random(len(space.box)) * space.box
    if space.has_levels:
        g[-1] = np.floor(g[-1])
    return config.translated(g)


def _mtp_replica(seed, r, spec, space, T, window, probe):
    cfg, parents = spec.sample(space, replica_rng(seed, r, "mtp"), provenance=True)
    M = T.mass(cfg, parents)
    if probe and len(cfg):
        moved = _moved(cfg, replica_rng(seed, r, "mtp-probe"))
        M2 = T.mass(moved, parents)
        if abs(M - M2).max() > 1e-9:
            raise ValueError(f"transport {T.name} depends on absolute coordinates")
    out = np.asarray(M.sum(axis=1)).ravel()
    inn = np.asarray(M.sum(axis=0)).ravel()
    tot_out, tot_in = float(out.sum()), float(inn.sum())
    rel = abs(tot_out - tot_in) / max(tot_out, tot_in, 1e-300) if (tot_out or tot_in) else 0.0
    mask = window_mask(cfg, window)
    prog = None
    if parents is not None:
        isp = np.asarray(parents) == np.arange(len(cfg))
        prog = (float(out[isp].sum()), int(isp.sum()))
    return float(out[mask].sum()), float(inn[mask].sum()), int(mask.sum()), rel, prog


def verify_mtp(
    spec: ProcessSpec,
    space: Space,
    T: Transport,
    replicas: int,
    seed: int,
    window: Optional[Box] = None,
    probe: bool = True,
    tol: float = 1e-9,
    k: float = 3.0,
) -> VerifierReport:
    """Mass out of the root against mass into the root.

    On periodic windows the two totals agree per realization and the check is
    ``max relative difference < tol``; on the free-boundary disk the Palm
    means over the eroded window are compared within ``k`` standard errors.
    """
    _check_range(space, T.range, T.name)
    parts = [_mtp_replica(seed, r, spec, space, T, window, probe and r == 0) for r in range(replicas)]
    out = np.array([p[0] for p in parts])
    inn = np.array([p[1] for p in parts])
    cnt = np.array([p[2] for p in parts])
    rel = max(p[3] for p in parts)
    if cnt.sum() == 0:
        raise ValueError("no roots in the statistics window")
    r_out = ratio_report("out", out, cnt)
    r_in = ratio_report("in", inn, cnt)
    diff = ratio_report("diff", out - inn, cnt)
    detail = {"max_rel_error": rel}
    progs = [p[4] for p in parts if p[4] is not None]
    if progs:
        detail["sent_by_progenitors"] = sum(a for a, _ in progs) / max(sum(b for _, b in progs), 1)
    if space.periodic:
        passed = rel < tol
    else:
        passed = abs(diff.value) <= k * diff.stderr + 1e-12
    return VerifierReport("mtp", T.name, replicas, r_out.value, r_in.value, diff.stderr,
                          _z_pvalue(diff.value, diff.stderr), seed, bool(passed), detail)


# -- Palm version of a constant thickening ------------------------------------------------


def verify_palm_of_thickening(
    t: float,
    space: Space,
    F,
    statistic: Functional,
    replicas: int,
    seed: int,
    alpha: float = 0.01,
) -> VerifierReport:
    """KS comparison of the Palm version of a thickened Poisson process
    against the thickening of the Poisson Palm version, re-rooted at a
    uniformly chosen element of ``F``."""
    if replicas < 100:
        raise ValueError("too few samples: need at least 100 per arm")
    _check_range(space, statistic.range, statistic.name)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    spec = ProcessSpec("poisson", t, (("thicken", tuple(map(tuple, F))),))
    arm_a, arm_b = [], []
    for r in range(replicas):
        arm_a.append(statistic.evaluate(sample_palm(spec, space, replica_rng(seed, r, "palm"))))
        rng = replica_rng(seed, r, "thicken")
        base = _with_origin(sample_poisson(space, t, rng))
        thick = constant_thicken(base, F)
        block = int(rng.integers(len(F)))
        arm_b.append(statistic.evaluate(reroot(thick, block * len(base) + len(base) - 1)))
    return _ks_report("thickening", statistic.name, arm_a, arm_b, seed, alpha, {"F": len(F)})
