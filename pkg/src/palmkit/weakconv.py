"""Diagnostics for weak convergence of point processes.

Configurations are compared locally by bottleneck matchings of their points
in a ball (the ``(eps, R)``-wobble), and ensembles by the joint law of counts
in a fixed family of windows.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import sparse, stats
from scipy.sparse.csgraph import maximum_bipartite_matching

from .configuration import Configuration
from .space import Box, Space
from .stats import chi2_homogeneity

__all__ = [
    "WobbleResult",
    "wobble_distance",
    "FddWindowSet",
    "FddReport",
    "window_counts",
    "fdd_compare",
    "scan_continuity",
    "TightnessReport",
    "tightness_check",
    "column_domination_bound",
    "factor_colouring",
    "colours",
]


# -- (eps, R)-wobble ------------------------------------------------------------


@dataclass(frozen=True)
class WobbleResult:
    """Outcome of a wobble comparison.

    When ``feasible``, ``eps`` is the bottleneck value (the smallest possible
    largest displacement) and ``matching`` pairs indices of ``a`` with indices
    of ``b``.  Otherwise ``eps`` is infinite and ``n_a != n_b`` is the witness.
    """

    feasible: bool
    eps: float
    R: float
    n_a: int
    n_b: int
    matching: np.ndarray = field(default_factory=lambda: np.empty((0, 2), np.int64))


def _ball_points(config: Configuration, R: float, center=None):
    space = config.space
    if not len(config):
        return np.empty(0, np.int64), np.empty((0, space.dim))
    if space.kind == "hyperbolic":
        c = np.zeros(2) if center is None else np.asarray(center, float)
        d = space.pairwise(c, config.coords)[0]
        idx = np.flatnonzero(d <= R)
        return idx, config.coords[idx]
    emb = config.embedded
    c = np.zeros(emb.shape[1]) if center is None else np.asarray(center, float)
    disp = space.delta(c, emb)
    idx = np.flatnonzero(np.sqrt(np.sum(disp * disp, axis=1)) <= R)
    return idx, disp[idx]


def _perfect_at(dist: np.ndarray, tau: float):
    adj = sparse.csr_matrix(dist <= tau)
    match = maximum_bipartite_matching(adj, perm_type="column")
    return match if np.all(match >= 0) else None


def wobble_distance(a: Configuration, b: Configuration, R: float, center=None) -> WobbleResult:
    """Bottleneck matching between the points of ``a`` and ``b`` in ``B(center, R)``.

    ``center`` defaults to the origin, where rooted samples keep their root.
    """
    if a.space != b.space:
        raise ValueError("configurations live on different spaces")
    space = a.space
    if space.kind == "hyperbolic":
        if R > space.radius:
            raise ValueError("R exceeds the disk radius")
    else:
        space.check_range(R, "R")
    ia, pa = _ball_points(a, R, center)
    ib, pb = _ball_points(b, R, center)
    if len(ia) != len(ib):
        return WobbleResult(False, math.inf, R, len(ia), len(ib))
    if len(ia) == 0:
        return WobbleResult(True, 0.0, R, 0, 0)
    dist = space.pairwise(pa, pb)
    cand = np.unique(dist)
    # feasibility is monotone in the threshold, and the largest distance always works
    lo, hi = 0, len(cand) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _perfect_at(dist, cand[mid]) is None:
            lo = mid + 1
        else:
            hi = mid
    best = _perfect_at(dist, cand[lo])
    pairs = np.column_stack([ia, ib[best]])
    return WobbleResult(True, float(cand[lo]), R, len(ia), len(ib), pairs)


# -- finite-dimensional distributions --------------------------------------------------


def _disjoint(u: Box, v: Box) -> bool:
    if u.level is not None and v.level is not None and u.level != v.level:
        return True
    if u.marks is not None and v.marks is not None:
        if u.marks[1] <= v.marks[0] or v.marks[1] <= u.marks[0]:
            return True
    return any(uh <= vl or vh <= ul for ul, uh, vl, vh in zip(u.lo, u.hi, v.lo, v.hi))


@dataclass(frozen=True)
class FddWindowSet:
    """Pairwise disjoint windows whose joint counts are compared."""

    windows: tuple
    name: str = ""

    def __post_init__(self):
        ws = tuple(self.windows)
        object.__setattr__(self, "windows", ws)
        if not ws:
            raise ValueError("empty window set")
        for i in range(len(ws)):
            for j in range(i + 1, len(ws)):
                if not _disjoint(ws[i], ws[j]):
                    raise ValueError(f"windows {ws[i].descriptor} and {ws[j].descriptor} overlap")

    def __len__(self):
        return len(self.windows)

    def check_space(self, space: Space) -> None:
        if not space.periodic:
            return
        sides = np.asarray(space.sides, float)
        for w in self.windows:
            if np.any(np.asarray(w.lo) < 0) or np.any(np.asarray(w.hi) > sides + 1e-12):
                raise ValueError(f"window {w.descriptor} leaves {space}")
            if w.level is not None and not 0 <= w.level < max(space.levels, 1):
                raise ValueError(f"window {w.descriptor} has no level in {space}")

    def counts(self, config: Configuration) -> np.ndarray:
        return np.array([w.count(config) for w in self.windows], dtype=np.int64)

    @property
    def descriptor(self) -> str:
        return ";".join(w.descriptor for w in self.windows)


def window_counts(samples, windows: FddWindowSet) -> np.ndarray:
    """``(samples, windows)`` count matrix; count arrays pass through."""
    if isinstance(samples, np.ndarray):
        arr = np.asarray(samples, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != len(windows):
            raise ValueError("count matrix does not match the window set")
        return arr
    return np.array([windows.counts(c) for c in samples], dtype=np.int64).reshape(-1, len(windows))


@dataclass(frozen=True)
class FddReport:
    tv: float
    chi2: float
    dof: int
    pvalue: float
    windows: str
    n_a: int
    n_b: int
    max_count: int

    def row(self) -> dict:
        return {
            "tv": self.tv, "chi2": self.chi2, "dof": self.dof, "pvalue": self.pvalue,
            "n_a": self.n_a, "n_b": self.n_b, "max_count": self.max_count, "windows": self.windows,
        }


def fdd_compare(samples_a, samples_b, windows: FddWindowSet, max_count: Optional[int] = None) -> FddReport:
    """Compare the joint count laws of two ensembles over ``windows``.

    Counts are truncated at ``max_count`` (default: the pooled 0.999
    quantile) and the joint tables compared by total variation and a
    chi-square homogeneity test.
    """
    ca = window_counts(samples_a, windows)
    cb = window_counts(samples_b, windows)
    if len(ca) == 0 or len(cb) == 0:
        raise ValueError("empty sample arm")
    pooled = np.concatenate([ca, cb])
    if max_count is None:
        max_count = int(np.ceil(np.quantile(pooled, 0.999)))
    ca = np.minimum(ca, max_count)
    cb = np.minimum(cb, max_count)
    cells, inv = np.unique(np.concatenate([ca, cb]), axis=0, return_inverse=True)
    inv = inv.ravel()
    ta = np.bincount(inv[: len(ca)], minlength=len(cells)).astype(float)
    tb = np.bincount(inv[len(ca):], minlength=len(cells)).astype(float)
    tv = 0.5 * float(np.abs(ta / ta.sum() - tb / tb.sum()).sum())
    stat, dof, p = chi2_homogeneity(ta, tb)
    return FddReport(tv, stat, dof, p, windows.descriptor, len(ca), len(cb), int(max_count))


# -- stochastic continuity sets -----------------------------------------------------------


def _radii_from(config: Configuration, center=None) -> np.ndarray:
    space = config.space
    if not len(config):
        return np.empty(0)
    if space.kind == "hyperbolic":
        c = np.zeros(2) if center is None else np.asarray(center, float)
        return space.pairwise(c, config.coords)[0]
    emb = config.embedded
    c = np.zeros(emb.shape[1]) if center is None else np.asarray(center, float)
    d = space.delta(c, emb)
    return np.sqrt(np.sum(d * d, axis=1))


def scan_continuity(
    samples: Sequence[Configuration],
    radii: Sequence[float],
    center=None,
    tol: float = 1e-3,
    threshold: float = 0.05,
) -> list:
    """Radii whose spheres carry points with non-negligible probability.

    A radius is flagged when the fraction of samples with a point within
    ``tol`` of the sphere exceeds ``threshold`` and the hit rate persists at
    a thousandfold finer tolerance, which separates atoms from thin shells.
    """
    radii = np.asarray(radii, dtype=float)
    if not len(samples) or not len(radii):
        return []
    coarse = np.zeros(len(radii))
    fine = np.zeros(len(radii))
    for cfg in samples:
        d = _radii_from(cfg, center)
        if not len(d):
            continue
        gap = np.abs(d[None, :] - radii[:, None]).min(axis=1)
        coarse += gap <= tol
        fine += gap <= tol * 1e-3
    coarse /= len(samples)
    fine /= len(samples)
    flagged = (coarse > threshold) & (fine > threshold / 2)
    return [float(r) for r in radii[flagged]]


# -- tightness ------------------------------------------------------------------------------


@dataclass(frozen=True)
class TightnessReport:
    quantiles: dict
    sup: int
    stable: bool
    bound: Optional[float] = None

    @property
    def bounded(self) -> bool:
        return self.bound is None or self.sup <= self.bound


def column_domination_bound(t: float, base_length: float, levels: int, q: float) -> float:
    """n-independent ``(1 - q)`` quantile bound for counts of straightened
    configurations in a box of ``levels`` consecutive levels.

    Such a count is at most ``levels`` times a Poisson variable with mean at
    most ``t * base_length * levels``.
    """
    return float(levels * stats.poisson.ppf(1 - q, t * base_length * levels))


def tightness_check(
    ensembles: Mapping,
    box: Box,
    q: float = 0.01,
    bound: Optional[float] = None,
) -> TightnessReport:
    """Empirical ``(1 - q)`` quantiles of the count in ``box`` for each ensemble.

    Each ensemble is a list of configurations or a 1-d array of counts.
    """
    M = {}
    for key, ens in ensembles.items():
        if isinstance(ens, np.ndarray):
            counts = ens
        else:
            counts = np.array([box.count(c) for c in ens])
        M[key] = int(np.quantile(counts, 1 - q, method="higher")) if len(counts) else 0
    vals = [M[k] for k in M]
    sup = max(vals) if vals else 0
    tail = vals[len(vals) // 2:]
    stable = (max(tail) - min(tail) <= 1) if tail else True
    return TightnessReport(M, sup, stable, bound)


# -- factor colourings from local signatures ----------------------------------------------------


def _signature(disp: np.ndarray, cell: float) -> bytes:
    q = np.floor(disp / cell).astype(np.int64)
    if len(q):
        q = q[np.lexsort(q.T[::-1])]
    return len(q).to_bytes(4, "little") + q.tobytes()


def factor_colouring(
    config: Configuration,
    d: int,
    rho: float,
    cell: float,
    seed: int,
) -> Configuration:
    """Colour each point by a seeded hash of its quantized ``rho``-neighbourhood.

    Colours ``0..d-1`` are stored as marks ``c / d``.  Two points with the
    same quantized neighbourhood would be indistinguishable to any local
    rule, so that case raises.
    """
    if d < 1:
        raise ValueError("need at least one colour")
    if not (rho > 0 and cell > 0):
        raise ValueError("rho and cell must be positive")
    space = config.space
    n = len(config)
    if space.periodic:
        space.check_range(rho, "rho")
        emb = config.embedded
        nbrs = config.tree().query_ball_point(emb, rho) if n else []
    key = int(seed).to_bytes(8, "little", signed=False)
    sigs = []
    cols = np.empty(n, dtype=np.int64)
    for i in range(n):
        if space.periodic:
            js = [j for j in nbrs[i] if j != i]
            disp = space.delta(emb[i], emb[js]) if js else np.empty((0, emb.shape[1]))
        else:
            w = space.recenter(config.coords, config.coords[i])
            r = space.radial(w)
            sel = (r <= rho)
            sel[i] = False
            disp = w[sel]
        sig = _signature(disp, cell)
        sigs.append(sig)
        h = hashlib.blake2b(sig, digest_size=8, key=key).digest()
        cols[i] = int.from_bytes(h, "little") % d
    if len(set(sigs)) != n:
        raise ValueError("two points share a quantized neighbourhood; the configuration is not free at this resolution")
    return config.replace(marks=cols / d)


def colours(config: Configuration, d: int) -> np.ndarray:
    """Integer colours from marks written by :func:`factor_colouring`."""
    return np.rint(np.asarray(config.marks) * d).astype(np.int64)
