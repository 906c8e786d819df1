"""The twelve acceptance experiments, shared by the test suite and the CLI.

Every function takes a master seed and returns a :class:`CriterionResult`
whose ``checks`` map a short label to a pass flag.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np
from scipy import stats

from .cost import graphing_cost, gxz_convergence_experiment, lattice_cost, parse_graphing, vertical_cost_experiment
from .graph import distance_graph, percolate_edges
from .palm import (
    ball_transport,
    nearest_distance,
    nn_transport,
    spawn_transport,
    verify_clmm,
    verify_mecke_slivnyak,
    verify_mtp,
    window_ball_count,
)
from .process import (
    constant_thicken,
    decode_marks,
    delta_thin,
    encode_marks,
    p_thin,
    parse_process,
    quantize_marks,
    sample_poisson,
)
from .space import Box, parse_space
from .stats import poisson_gof, replica_rng
from .weakconv import FddWindowSet, factor_colouring, colours, fdd_compare, wobble_distance

__all__ = ["CriterionResult", "CRITERIA", "DEFAULT_SEEDS", "run_criterion"]


@dataclass
class CriterionResult:
    number: int
    name: str
    checks: Dict[str, bool]
    values: Dict[str, object] = field(default_factory=dict)
    seconds: float = 0.0
    budget: float = math.inf

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and self.seconds < self.budget

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        failed = [k for k, ok in self.checks.items() if not ok]
        if self.seconds >= self.budget:
            failed.append(f"runtime {self.seconds:.1f}s >= {self.budget:g}s")
        tail = f" (failed: {', '.join(failed)})" if failed else ""
        return f"[{status}] criterion {self.number:2d} {self.name} [{self.seconds:.1f}s]{tail}"


def _poisson_law(seed: int) -> CriterionResult:
    space = parse_space("torus2:10")
    reps = 10_000
    counts = np.empty(reps, dtype=np.int64)
    na = np.empty(reps)
    nb = np.empty(reps)
    A = Box((0.0, 0.0), (5.0, 5.0))
    B = Box((5.0, 0.0), (10.0, 5.0))
    for r in range(reps):
        cfg = sample_poisson(space, 1.0, replica_rng(seed, r))
        counts[r] = len(cfg)
        na[r] = A.count(cfg)
        nb[r] = B.count(cfg)
    mean = counts.mean()
    tol = 3 * math.sqrt(100 / reps) * math.sqrt(100)
    _, _, p = poisson_gof(counts, 100.0)
    rho = float(np.corrcoef(na, nb)[0, 1])
    return CriterionResult(1, "Poisson law", {
        "mean count": abs(mean - 100) <= tol,
        "gof": p > 0.01,
        "box independence": abs(rho) < 0.05,
    }, {"mean": mean, "var": counts.var(ddof=1), "gof_p": p, "corr": rho}, budget=30.0)


def _mecke(seed: int) -> CriterionResult:
    rep = verify_mecke_slivnyak(1.0, parse_space("torus2:20"), nearest_distance(), 2000, seed)
    return CriterionResult(2, "Mecke-Slivnyak", {"ks": rep.pvalue > 0.01},
                           {"p": rep.pvalue, "lhs": rep.lhs, "rhs": rep.rhs}, budget=60.0)


def _clmm(seed: int) -> CriterionResult:
    f = window_ball_count(Box((0.0, 0.0), (2.0, 2.0)), r=1.0, cap=10.0)
    rep = verify_clmm(parse_process("poisson:1"), parse_space("torus2:10"), f, 10_000, seed)
    return CriterionResult(3, "refined Campbell", {"within 3 se": rep.passed},
                           {"lhs": rep.lhs, "rhs": rep.rhs, "se": rep.stderr, "z": rep.detail["z"]})


def _mtp(seed: int) -> CriterionResult:
    space = parse_space("torus2:20")
    runs = {
        "ball": (parse_process("poisson:1"), ball_transport(1.0)),
        "nearest": (parse_process("poisson:1"), nn_transport()),
        "spawn": (parse_process("poisson:1|thicken:0.5,0+0,0.5"), spawn_transport()),
    }
    checks, values = {}, {}
    for label, (spec, T) in runs.items():
        rep = verify_mtp(spec, space, T, 100, seed)
        checks[label] = rep.passed and rep.detail["max_rel_error"] < 1e-9
        values[label] = (rep.lhs, rep.rhs, rep.detail["max_rel_error"])
        if label == "spawn":
            values["sent_by_progenitors"] = rep.detail["sent_by_progenitors"]
    return CriterionResult(4, "mass transport", checks, values)


def _thin_thicken(seed: int) -> CriterionResult:
    space = parse_space("torus2:10")
    reps = 5000
    counts = np.empty(reps, dtype=np.int64)
    for r in range(reps):
        rng = replica_rng(seed, r, "thin")
        counts[r] = len(p_thin(sample_poisson(space, 1.0, rng, marked=True), 0.3))
    _, _, p = poisson_gof(counts, 0.3 * space.volume)
    F = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]])
    exact = True
    for r in range(1000):
        cfg = sample_poisson(space, 1.0, replica_rng(seed, r, "thicken"))
        exact &= len(constant_thicken(cfg, F)) == len(F) * len(cfg)
    return CriterionResult(5, "thinning and thickening", {"thinning gof": p > 0.01, "thickening count": bool(exact)},
                           {"gof_p": p, "mean": counts.mean()})


def _lattice_cost(seed: int) -> CriterionResult:
    est = graphing_cost(parse_process("lattice:1"), parse_space("torus2:16"), parse_graphing("cayley"), 100, seed)
    target = lattice_cost(2, 1.0)
    return CriterionResult(6, "lattice cost", {
        "cost exact": est.cost == target == 2.0,
        "zero variance": est.stderr == 0.0,
        "connected": est.connected_frac == 1.0,
    }, {"cost": est.cost, "stderr": est.stderr})


def _vertical(seed: int) -> CriterionResult:
    lo, hi = vertical_cost_experiment(1.0, 20.0, 3.0, [0.05, 0.2], 40, 500, seed)
    target = hi.detail["target_cost"]
    return CriterionResult(7, "vertical cost one", {
        "connected >= 90%": hi.connected_frac >= 0.9,
        "cost within 5%": abs(hi.cost - target) <= 0.05 * target,
        "eps monotone": lo.cost < hi.cost,
    }, {
        "connected": hi.connected_frac,
        "base_connected": hi.detail["base_connected_frac"],
        "connected_given_base": hi.detail["connected_given_base"],
        "cost": hi.cost,
        "target": target,
        "cost_eps_0.05": lo.cost,
    }, budget=300.0)


def _gxz(seed: int) -> CriterionResult:
    res = gxz_convergence_experiment(1.0, [2, 5, 10, 20], 20.0, 40, 2000, seed)
    checks, values = {}, {}
    for row in res["rows"]:
        checks[f"successor n={row.n}"] = row.successor_prob >= row.bound - 0.02
        checks[f"strip gof n={row.n}"] = row.strip_pvalue > 0.01
        values[row.n] = (row.successor_prob, row.strip_pvalue)
    checks["fdd n=20"] = res["fdd"].pvalue > 0.01
    values["fdd_p"] = res["fdd"].pvalue
    values["fdd_column_tv"] = res["fdd_column"].tv
    return CriterionResult(8, "G x Z straightening", checks, values)


def _percolation(seed: int) -> CriterionResult:
    space = parse_space("torus2:20")
    eps = 0.3
    kept = total = 0
    nested = True
    for r in range(10):
        cfg = sample_poisson(space, 1.0, replica_rng(seed, r, "perc"), marked=True)
        g = distance_graph(cfg, 2.0)
        total += g.m
        kept += percolate_edges(g, eps).m
        prev = set()
        for e in np.linspace(0, 1, 21):
            cur = percolate_edges(g, e).edge_set()
            nested &= prev <= cur
            prev = cur
    frac = kept / total
    sigma = math.sqrt(eps * (1 - eps) / total)
    return CriterionResult(9, "edge percolation", {
        ">= 1e4 edges": total >= 10_000,
        "survival": abs(frac - eps) <= 3 * sigma,
        "monotone": bool(nested),
    }, {"edges": total, "fraction": frac, "sigma": sigma})


def _jitter_radius(a, eta, lo=3.0, hi=4.9):
    """A radius with no point of ``a`` within ``2 * eta`` of its sphere."""
    d = np.sqrt(np.sum(a.space.delta(np.zeros(2), a.embedded) ** 2, axis=1))
    for R in np.linspace(hi, lo, 200):
        if not np.any(np.abs(d - R) <= 2 * eta):
            return float(R)
    raise RuntimeError("no clean radius")


def _wobble_fdd(seed: int) -> CriterionResult:
    space = parse_space("torus2:10")
    eta = 0.01
    rng = replica_rng(seed, 0, "wobble")
    a = sample_poisson(space, 1.0, rng)
    R = _jitter_radius(a, eta)
    b = a.from_embedded(space.wrap(a.embedded + rng.uniform(-eta, eta, a.embedded.shape) / math.sqrt(2)))
    w0 = wobble_distance(a, a, R)
    w1 = wobble_distance(a, b, R)
    ws = FddWindowSet((Box((0.0, 0.0), (1.0, 1.0)),))
    small = parse_space("torus2:2")
    arm = lambda t, role: np.array([[ws.windows[0].count(sample_poisson(small, t, replica_rng(seed, r, role)))]
                                    for r in range(5000)])
    p1 = arm(1.0, "fdd-a")
    sep = fdd_compare(p1, arm(1.2, "fdd-b"), ws)
    same = fdd_compare(p1, arm(1.0, "fdd-c"), ws)
    return CriterionResult(10, "wobble and fdd", {
        "wobble(a,a)=0": w0.feasible and w0.eps == 0.0,
        "jitter": w1.feasible and w1.eps <= eta,
        "separates 1 vs 1.2": sep.pvalue < 0.01,
        "same law passes": same.pvalue > 0.01,
    }, {"jitter_eps": w1.eps, "sep_p": sep.pvalue, "sep_tv": sep.tv, "same_p": same.pvalue})


def _colouring(seed: int) -> CriterionResult:
    space = parse_space("torus2:10")
    d, rho, cell = 2, 2.0, 0.05
    marg = np.zeros(d)
    table = np.zeros((d, d))
    reproducible = True
    for r in range(5000):
        rng = replica_rng(seed, r, "colour")
        cfg = sample_poisson(space, 1.0, rng)
        if len(cfg) < 2:
            continue
        col = colours(factor_colouring(cfg, d, rho, cell, seed), d)
        if r < 50:
            again = colours(factor_colouring(cfg, d, rho, cell, seed), d)
            reproducible &= bool(np.array_equal(col, again))
        i = int(rng.integers(len(cfg)))
        marg[col[i]] += 1
        dist = space.pairwise(cfg.embedded[i], cfg.embedded)[0]
        far = np.flatnonzero(dist > 2 * rho)
        if len(far):
            j = int(far[rng.integers(len(far))])
            table[col[i], col[j]] += 1
    p_marg = float(stats.chisquare(marg).pvalue)
    p_pair = float(stats.chi2_contingency(table, correction=False).pvalue)
    return CriterionResult(11, "factor colouring", {
        "marginal uniform": p_marg > 0.01,
        "far pairs independent": p_pair > 0.01,
        "reproducible": reproducible,
    }, {"marginal": marg.tolist(), "p_marginal": p_marg, "p_pairs": p_pair})


def _encoding(seed: int) -> CriterionResult:
    space = parse_space("torus2:10")
    delta = 0.5
    ok = True
    for r in range(1000):
        rng = replica_rng(seed, r, "encode")
        cfg = delta_thin(sample_poisson(space, 1.0, rng), delta)
        cfg = cfg.replace(marks=quantize_marks(rng.random(len(cfg))))
        ok &= decode_marks(encode_marks(cfg, delta), delta).equals(cfg)
    return CriterionResult(12, "local encoding", {"round trip": bool(ok)})


CRITERIA: Dict[int, Callable[[int], CriterionResult]] = {
    1: _poisson_law,
    2: _mecke,
    3: _clmm,
    4: _mtp,
    5: _thin_thicken,
    6: _lattice_cost,
    7: _vertical,
    8: _gxz,
    9: _percolation,
    10: _wobble_fdd,
    11: _colouring,
    12: _encoding,
}

#: Master seed used for each criterion by the test suite and ``palmkit accept``.
DEFAULT_SEEDS = {k: 20240 + k for k in CRITERIA}


def run_criterion(number: int, seed: int | None = None) -> CriterionResult:
    if number not in CRITERIA:
        raise ValueError(f"no criterion {number}")
    seed = DEFAULT_SEEDS[number] if seed is None else seed
    t0 = time.perf_counter()
    res = CRITERIA[number](seed)
    res.seconds = time.perf_counter() - t0
    res.values.setdefault("seed", seed)
    return res
