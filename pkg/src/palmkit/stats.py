"""Seed derivation, replica loops and the small statistical toolkit."""
from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "SEED_ENV",
    "EstimateReport",
    "replica_rng",
    "master_seed",
    "replicate",
    "mean_report",
    "ratio_report",
    "poisson_gof",
    "chi2_homogeneity",
]

#: Environment variable overriding the master seed of CLI runs.
SEED_ENV = "PALMKIT_SEED"


def _role_id(role: str) -> int:
    return zlib.crc32(role.encode())


def replica_rng(seed: int, replica: int, role: str = "sample") -> np.random.Generator:
    """Independent generator for ``(seed, replica, role)``.

    Streams are derived by counter-based splitting, so results do not depend
    on the order (or the process) in which replicas are evaluated.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replica), _role_id(role)))
    return np.random.default_rng(ss)


def master_seed(seed: Optional[int]) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        return int(env)
    return 0 if seed is None else int(seed)


def replicate(fn: Callable, replicas: int, seed: int, *args, workers: int = 1, **kw) -> list:
    """Call ``fn(seed, replica, *args, **kw)`` for every replica, in index order.

    With ``workers > 1`` a process pool is used; results still come back in
    replica order.
    """
    if workers <= 1:
        return [fn(seed, r, *args, **kw) for r in range(replicas)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(fn, seed, r, *args, **kw) for r in range(replicas)]
        return [f.result() for f in futs]


@dataclass
class EstimateReport:
    name: str
    value: float
    stderr: float
    replicas: int
    seed: Optional[int] = None
    window: str = ""

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr + 1e-12

    def asdict(self):
        return asdict(self)


def mean_report(name: str, values: Sequence[float], seed=None, window="") -> EstimateReport:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
    return EstimateReport(name, float(v.mean()), se, len(v), seed, window)


def ratio_report(name: str, num: Sequence[float], den: Sequence[float], seed=None, window="") -> EstimateReport:
    """Ratio-of-means estimate ``sum(num)/sum(den)`` with a delta-method stderr."""
    x = np.asarray(num, dtype=float)
    y = np.asarray(den, dtype=float)
    r = len(x)
    if y.sum() == 0:
        raise ValueError("ratio estimator with zero denominator")
    q = x.sum() / y.sum()
    if r > 1:
        resid = x - q * y
        se = float(math.sqrt(resid.var(ddof=1) / r) / y.mean())
    else:
        se = float("nan")
    return EstimateReport(name, float(q), se, r, seed, window)


def _pool_bins(expected: np.ndarray, observed: np.ndarray, min_expected: float = 5.0):
    """Merge adjacent bins (left to right) until each expected count >= min_expected."""
    exp_out, obs_out = [], []
    e_acc = o_acc = 0.0
    for e, o in zip(expected, observed):
        e_acc += e
        o_acc += o
        if e_acc >= min_expected:
            exp_out.append(e_acc)
            obs_out.append(o_acc)
            e_acc = o_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_out:
            exp_out[-1] += e_acc
            obs_out[-1] += o_acc
        else:
            exp_out.append(e_acc)
            obs_out.append(o_acc)
    return np.array(exp_out), np.array(obs_out)


def poisson_gof(counts: Sequence[int], mean: float):
    """Chi-square goodness of fit of integer counts to Poisson(mean).

    Returns ``(statistic, dof, pvalue)``; tail bins are pooled so every
    expected cell count is at least 5.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n = len(counts)
    if mean == 0:
        ok = bool(np.all(counts == 0))
        return 0.0 if ok else math.inf, 0, 1.0 if ok else 0.0
    kmax = int(max(counts.max(), stats.poisson.ppf(1 - 1e-12, mean))) + 1
    ks = np.arange(kmax + 1)
    probs = stats.poisson.pmf(ks, mean)
    probs[-1] += stats.poisson.sf(kmax, mean)
    observed = np.bincount(counts, minlength=kmax + 1)[: kmax + 1].astype(float)
    expected, observed = _pool_bins(probs * n, observed)
    stat = float(np.sum((observed - expected) ** 2 / expected))
    dof = len(expected) - 1
    if dof < 1:
        return stat, dof, 1.0
    return stat, dof, float(stats.chi2.sf(stat, dof))


def chi2_homogeneity(table_a: np.ndarray, table_b: np.ndarray, min_expected: float = 5.0):
    """Two-sample chi-square homogeneity test over matching cell counts.

    Cells are sorted by pooled count and sparse ones merged so expected
    counts reach ``min_expected``.  Returns ``(statistic, dof, pvalue)``.
    """
    a = np.asarray(table_a, dtype=float).ravel()
    b = np.asarray(table_b, dtype=float).ravel()
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    if len(a) == 0:
        return 0.0, 0, 1.0
    na, nb = a.sum(), b.sum()
    order = np.argsort(a + b, kind="stable")
    a, b = a[order], b[order]
    tot = a + b
    frac = min(na, nb) / (na + nb)
    # merge the sparsest cells first so the expected count in both rows is large enough
    cells_a, cells_b = [], []
    acc_a = acc_b = 0.0
    for x, y, t in zip(a, b, tot):
        acc_a += x
        acc_b += y
        if (acc_a + acc_b) * frac >= min_expected:
            cells_a.append(acc_a)
            cells_b.append(acc_b)
            acc_a = acc_b = 0.0
    if acc_a + acc_b > 0:
        if cells_a:
            cells_a[0] += acc_a
            cells_b[0] += acc_b
        else:
            cells_a.append(acc_a)
            cells_b.append(acc_b)
    if len(cells_a) < 2:
        return 0.0, 0, 1.0
    table = np.array([cells_a, cells_b])
    stat, p, dof, _ = stats.chi2_contingency(table, correction=False)
    return float(stat), int(dof), float(p)
