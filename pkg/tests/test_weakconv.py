import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import stats

from palmkit.configuration import Configuration
from palmkit.process import parse_process, sample_lattice_shift, sample_poisson
from palmkit.space import Box, parse_space
from palmkit.stats import replica_rng
from palmkit.weakconv import (
    FddWindowSet,
    factor_colouring,
    colours,
    column_domination_bound,
    fdd_compare,
    scan_continuity,
    tightness_check,
    wobble_distance,
)

# TV distance between Poisson(1) and Poisson(1.2), summed in closed form.
TV_POISSON_1_12 = 0.07313161613604001

T10 = parse_space("torus2:10")
UNIT = FddWindowSet((Box((0.0, 0.0), (1.0, 1.0)),))


def _jitter(cfg, eta, seed):
    rng = np.random.default_rng(seed)
    step = rng.uniform(-eta, eta, cfg.embedded.shape) / math.sqrt(cfg.embedded.shape[1])
    return cfg.from_embedded(cfg.space.wrap(cfg.embedded + step))


def test_wobble_identity():
    a = sample_poisson(T10, 1.0, replica_rng(40, 0))
    w = wobble_distance(a, a, 3.0)
    assert w.feasible and w.eps == 0.0


def test_wobble_jitter_bound():
    a = sample_poisson(T10, 1.0, replica_rng(41, 0))
    b = _jitter(a, 0.01, 1)
    d = np.sqrt(np.sum(T10.delta(np.zeros(2), a.embedded) ** 2, axis=1))
    # pick a radius with no point near the sphere so counts agree
    R = next(r for r in np.linspace(4.5, 3.0, 100) if not np.any(np.abs(d - r) < 0.02))
    w = wobble_distance(a, b, float(R))
    assert w.feasible and w.eps <= 0.01


def test_wobble_count_mismatch_infeasible():
    a = Configuration(T10, np.array([[0.5, 0.0], [0.0, 0.5], [9.5, 0.0]]))
    b = Configuration(T10, np.array([[0.5, 0.0], [0.0, 0.5], [9.5, 0.0], [0.0, 9.5]]))
    w = wobble_distance(a, b, 1.0)
    assert not w.feasible
    assert (w.n_a, w.n_b) == (3, 4)


def test_fdd_same_law_passes():
    a = [UNIT.counts(sample_poisson(parse_space("torus2:2"), 1.0, replica_rng(42, r, "a"))) for r in range(5000)]
    b = [UNIT.counts(sample_poisson(parse_space("torus2:2"), 1.0, replica_rng(42, r, "b"))) for r in range(5000)]
    rep = fdd_compare(np.array(a), np.array(b), UNIT)
    assert rep.pvalue > 0.01 and rep.tv < 0.05


def test_fdd_separates_intensities():
    a = stats.poisson.rvs(1.0, size=(5000, 1), random_state=np.random.default_rng(0))
    b = stats.poisson.rvs(1.2, size=(5000, 1), random_state=np.random.default_rng(1))
    rep = fdd_compare(a, b, UNIT)
    assert rep.pvalue < 0.01
    # empirical TV within sampling noise of the closed form
    assert abs(rep.tv - TV_POISSON_1_12) < 0.03


def test_fdd_windows_must_be_disjoint():
    with pytest.raises(ValueError):
        FddWindowSet((Box((0.0, 0.0), (2.0, 2.0)), Box((1.0, 1.0), (3.0, 3.0))))
    FddWindowSet((Box((0.0,), (2.0,), level=0), Box((0.0,), (2.0,), level=1)))


def test_fdd_report_row():
    a = np.zeros((10, 1), dtype=int)
    rep = fdd_compare(a, a, UNIT)
    row = rep.row()
    assert row["tv"] == 0.0 and row["windows"] == UNIT.descriptor


def test_scan_continuity_lattice_flagged():
    s = parse_space("torus2:16")
    lat = [sample_lattice_shift(s, 1.0, replica_rng(43, r)) for r in range(200)]
    # from a lattice point, integer radii are hit every time
    centred = [c.from_embedded(s.wrap(c.embedded - c.embedded[0])) for c in lat]
    assert scan_continuity(centred, [1.0, 2.0, 1.37]) == [1.0, 2.0]


def test_scan_continuity_poisson_and_empty():
    ens = [sample_poisson(T10, 1.0, replica_rng(44, r)) for r in range(200)]
    assert scan_continuity(ens, [1.0, 2.0, 3.0]) == []
    empty = [Configuration(T10, np.empty((0, 2)))] * 5
    assert scan_continuity(empty, [1.0]) == []


def test_tightness_quantiles():
    box = Box((0.0, 0.0), (1.0, 1.0))
    single = tightness_check({1: np.arange(101)}, box, q=0.01)
    assert single.quantiles[1] == 99 and single.sup == 99
    empty = tightness_check({1: [Configuration(T10, np.empty((0, 2)))] * 3}, box)
    assert empty.sup == 0


def test_tightness_of_straightened_counts():
    s = parse_space("cyl:20:40")
    box = Box((0.0,), (1.0,), level=0)
    ens = {}
    for n in (2, 5, 20):
        spec = parse_process(f"iidpoisson:1|phi:{n}")
        ens[n] = np.array([box.count(spec.sample(s, replica_rng(45, r, f"n{n}"))) for r in range(400)])
    bound = column_domination_bound(1.0, 1.0, 1, 0.01)
    rep = tightness_check(ens, box, 0.01, bound)
    assert rep.bounded


def test_colouring_single_colour_and_reproducible():
    cfg = sample_poisson(T10, 1.0, replica_rng(46, 0))
    assert set(colours(factor_colouring(cfg, 1, 2.0, 0.05, 1), 1)) == {0}
    c1 = colours(factor_colouring(cfg, 3, 2.0, 0.05, 7), 3)
    c2 = colours(factor_colouring(cfg, 3, 2.0, 0.05, 7), 3)
    assert np.array_equal(c1, c2)


def test_colouring_marginal_uniform():
    counts = np.zeros(3)
    for r in range(600):
        rng = replica_rng(47, r)
        cfg = sample_poisson(T10, 1.0, rng)
        col = colours(factor_colouring(cfg, 3, 2.0, 0.05, 1), 3)
        counts += np.bincount(col[:1], minlength=3)
    assert stats.chisquare(counts).pvalue > 0.01


def test_colouring_equivariant():
    cfg = sample_poisson(T10, 1.0, replica_rng(48, 0))
    c1 = colours(factor_colouring(cfg, 4, 2.0, 0.05, 3), 4)
    # shift by whole cells so quantized signatures are unchanged
    c2 = colours(factor_colouring(cfg.translated(np.array([1.25, 3.5])), 4, 2.0, 0.05, 3), 4)
    assert np.array_equal(c1, c2)


def test_colouring_lattice_collision_raises():
    lat = sample_lattice_shift(parse_space("torus2:8"), 1.0, replica_rng(49, 0))
    with pytest.raises(ValueError):
        factor_colouring(lat, 2, 2.0, 0.05, 0)


# -- properties -------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.5, 4.0))
def test_wobble_symmetric(seed, R):
    a = sample_poisson(T10, 1.0, replica_rng(seed, 0))
    b = _jitter(a, 0.05, seed)
    ab, ba = wobble_distance(a, b, R), wobble_distance(b, a, R)
    assert ab.feasible == ba.feasible
    if ab.feasible:
        assert ab.eps == pytest.approx(ba.eps)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.01, 0.3))
def test_wobble_bounded_by_jitter(seed, eta):
    a = sample_poisson(T10, 1.0, replica_rng(seed, 0))
    b = _jitter(a, eta, seed)
    d = np.sqrt(np.sum(T10.delta(np.zeros(2), a.embedded) ** 2, axis=1))
    clean = [r for r in np.linspace(0.5, 4.9, 200) if not np.any(np.abs(d - r) <= eta)]
    assume(clean)
    w = wobble_distance(a, b, float(clean[-1]))
    assert w.feasible and w.eps <= eta + 1e-12
