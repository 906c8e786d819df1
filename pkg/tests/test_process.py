import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palmkit.configuration import Configuration, ConfigurationError
from palmkit.process import (
    complete_to_net,
    constant_thicken,
    decode_marks,
    delta_thin,
    encode_marks,
    glue_poisson_in_cells,
    iid_mark,
    nearest_distances,
    p_thin,
    parse_process,
    quantize_marks,
    sample_lattice_shift,
    sample_poisson,
    sample_vertical_poisson,
    straighten_phi_n,
    vertical_coupling,
    voronoi_owner,
)
from palmkit.space import Box, parse_space
from palmkit.stats import poisson_gof, replica_rng

T2 = parse_space("torus2:10")


def test_poisson_mean_and_variance():
    counts = np.array([len(sample_poisson(T2, 1.0, replica_rng(5, r))) for r in range(4000)])
    se = math.sqrt(100 / len(counts))
    assert abs(counts.mean() - 100) < 3 * se
    # Var of the sample variance of Poisson(100) is about 2*100^2/n
    assert abs(counts.var(ddof=1) - 100) < 3 * math.sqrt(2 * 100**2 / len(counts))


def test_zero_intensity_is_empty():
    assert len(sample_poisson(T2, 0.0, replica_rng(0, 0))) == 0


def test_poisson_is_simple_and_inside():
    cfg = sample_poisson(T2, 5.0, replica_rng(1, 0), marked=True)
    assert T2.contains(cfg.coords).all()
    assert nearest_distances(cfg).min() > 1e-9
    assert cfg.marks.min() >= 0 and cfg.marks.max() <= 1


def test_lattice_counts_and_spacing():
    s = parse_space("torus2:16")
    cfg = sample_lattice_shift(s, 1.0, replica_rng(0, 0))
    assert len(cfg) == 256
    assert nearest_distances(cfg).min() == pytest.approx(1.0)
    cfg4 = sample_lattice_shift(s, 4.0, replica_rng(0, 1))
    assert len(cfg4) == 64
    assert nearest_distances(cfg4).min() == pytest.approx(2.0)


def test_lattice_intensity_deterministic():
    s = parse_space("torus2:16")
    counts = {len(sample_lattice_shift(s, 1.0, replica_rng(2, r))) for r in range(100)}
    assert counts == {256}


def test_iid_marks_uniform_and_points_unchanged():
    vals = []
    for r in range(1000):
        cfg = sample_poisson(parse_space("torus2:3"), 1.0, replica_rng(3, r))
        marked = iid_mark(cfg, replica_rng(3, r, "mark"))
        assert np.array_equal(marked.coords, cfg.coords)
        vals.append(marked.marks)
    vals = np.concatenate(vals)
    assert abs(vals.mean() - 0.5) < 3 * math.sqrt(1 / 12 / len(vals))


def test_iid_marked_half_box_is_poisson():
    box = Box((0.0, 0.0), (10.0, 10.0), marks=(0.0, 0.5))
    counts = [box.count(sample_poisson(T2, 1.0, replica_rng(4, r), marked=True)) for r in range(3000)]
    _, _, p = poisson_gof(counts, 50.0)
    assert p > 0.01


def test_p_thin_law_and_edges():
    counts = [len(p_thin(sample_poisson(T2, 1.0, replica_rng(6, r), marked=True), 0.3)) for r in range(3000)]
    _, _, p = poisson_gof(counts, 30.0)
    assert p > 0.01
    cfg = sample_poisson(T2, 1.0, replica_rng(6, 0), marked=True)
    assert p_thin(cfg, 1.0).equals(cfg.unmarked())
    assert len(p_thin(cfg, 0.0)) == 0


def test_p_thin_needs_marks():
    with pytest.raises(ValueError):
        p_thin(sample_poisson(T2, 1.0, replica_rng(0, 0)), 0.5)


def test_delta_thin_cases():
    pair = Configuration(T2, np.array([[1.0, 1.0], [1.5, 1.0], [5.0, 5.0]]))
    out = delta_thin(pair, 0.6)
    assert len(out) == 1 and tuple(out.coords[0]) == (5.0, 5.0)
    cfg = sample_poisson(T2, 1.0, replica_rng(7, 0))
    assert delta_thin(cfg, 0.0).equals(cfg)
    lat = sample_lattice_shift(parse_space("torus2:16"), 1.0, replica_rng(7, 1))
    assert delta_thin(lat, 0.5).equals(lat)
    assert len(delta_thin(lat, 1.5)) == 0


def test_constant_thicken_counts():
    cfg = Configuration(T2, sample_poisson(T2, 1.0, replica_rng(8, 0)).coords[:50])
    F = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]])
    assert len(constant_thicken(cfg, F)) == 150
    assert constant_thicken(cfg, np.zeros((1, 2))).sorted().equals(cfg.sorted())


def test_column_thickening_stacks_copies():
    s = parse_space("cyl:20:40")
    cfg = Configuration(s, np.array([[1.0], [7.0]]), levels=np.array([0, 0]))
    F = np.array([[0.0, float(k)] for k in range(5)])
    out = constant_thicken(cfg, F)
    assert len(out) == 10
    assert sorted(out.levels[out.coords[:, 0] == 1.0]) == [0, 1, 2, 3, 4]


def test_voronoi_owner_cases():
    one = Configuration(T2, np.array([[3.0, 3.0]]))
    q = np.random.default_rng(0).random((50, 2)) * 10
    assert (voronoi_owner(one, q) == 0).all()
    lat = sample_lattice_shift(parse_space("torus2:16"), 1.0, replica_rng(9, 0))
    centres = lat.coords[:20] + 0.3
    owners = voronoi_owner(lat, centres)
    assert np.array_equal(owners, np.arange(20))


def test_voronoi_ties_lexicographic_and_covariant():
    cfg = Configuration(T2, np.array([[2.0, 5.0], [4.0, 5.0]]))
    # equidistant along x = 3: displacement to point 0 is (-1, .), to point 1 is (+1, .)
    ys = np.linspace(0.05, 9.95, 40)
    q = np.column_stack([np.full_like(ys, 3.0), ys])
    assert (voronoi_owner(cfg, q) == 0).all()
    g = np.array([3.25, 1.5])
    moved = cfg.translated(g)
    assert (voronoi_owner(moved, T2.wrap(q + g)) == 0).all()


def test_glue_gives_poisson_counts():
    s = parse_space("torus2:6")
    counts = []
    for r in range(2000):
        base = sample_poisson(s, 0.2, replica_rng(10, r), marked=True)
        if len(base) == 0:
            continue
        counts.append(len(glue_poisson_in_cells(base, 1.0)))
    _, _, p = poisson_gof(counts, 36.0)
    assert p > 0.01


def test_glue_single_point_fills_window():
    s = parse_space("torus2:6")
    base = Configuration(s, np.array([[1.0, 1.0]]), marks=np.array([0.25]))
    out = glue_poisson_in_cells(base, 2.0)
    assert len(out) > 30  # Poisson(72) in the whole window
    assert s.contains(out.coords).all()


def test_encoding_round_trip_and_errors():
    for r in range(200):
        rng = replica_rng(11, r)
        cfg = delta_thin(sample_poisson(T2, 1.0, rng), 0.5)
        cfg = cfg.replace(marks=quantize_marks(rng.random(len(cfg))))
        enc = encode_marks(cfg, 0.5)
        assert not enc.marked
        assert T2.contains(enc.coords).all()
        assert nearest_distances(enc).min() > 1e-9
        assert decode_marks(enc, 0.5).equals(cfg)
    with pytest.raises((ValueError, ConfigurationError)):
        decode_marks(sample_poisson(T2, 1.0, replica_rng(11, 999)), 0.5)


def test_complete_to_net():
    s = parse_space("torus2:16")
    empty = Configuration(s, np.empty((0, 2)))
    net = complete_to_net(empty, 2.0)
    assert len(net) > 0
    again = complete_to_net(net, 2.0)
    assert again.sorted().equals(net.sorted())
    sparse = sample_poisson(s, 0.01, replica_rng(12, 0))
    out = complete_to_net(sparse, 2.0)
    g = np.arange(0, 16, 0.1)
    probe = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    d = out.tree().query(probe)[0]
    assert d.max() <= 2.0


def test_vertical_coupling_counts_and_closure():
    s = parse_space("cyl:20:40")
    base = sample_poisson(parse_space("torus1:20"), 0.5, replica_rng(13, 0))
    base = Configuration(base.space, base.coords[:10])
    out = vertical_coupling(base, s)
    assert len(out) == 400
    pts = {(float(x), int(l)) for x, l in zip(out.coords[:, 0], out.levels)}
    assert all((x, (l + 1) % 40) in pts for x, l in pts)
    empty = Configuration(base.space, np.empty((0, 1)))
    assert len(vertical_coupling(empty, s)) == 0


def test_phi_identity_and_progenitors():
    s = parse_space("cyl:20:40")
    cfg = sample_poisson(s, 1.0, replica_rng(14, 0), marked=True)
    assert straighten_phi_n(cfg, 1).unmarked().sorted().equals(cfg.unmarked().sorted())
    n = 5
    kept = total = 0
    for r in range(300):
        c = sample_poisson(s, 1.0, replica_rng(14, r), marked=True)
        kept += int(np.sum(c.marks < 1 / n))
        total += len(c)
    frac = kept / total
    assert abs(frac - 1 / n) < 3 * math.sqrt(frac * (1 - frac) / total)


def test_phi_strip_counts_poisson():
    s = parse_space("cyl:20:40")
    spec = parse_process("iidpoisson:1|phi:5")
    strip = Box((0.0,), (20.0,), level=3)
    counts = [strip.count(spec.sample(s, replica_rng(15, r))) for r in range(1500)]
    _, _, p = poisson_gof(counts, 20.0)
    assert p > 0.01


def test_process_descriptor_round_trip():
    for d in ["poisson:1", "lattice:4", "iidpoisson:1|phi:20", "poisson:2|pthin:0.5", "vpoisson:1"]:
        assert parse_process(parse_process(d).descriptor).descriptor == parse_process(d).descriptor
    assert parse_process("poisson:1|thicken:0.5,0+0,0.5").intensity == 3.0
    with pytest.raises(ValueError):
        parse_process("cube:1")


def test_vertical_poisson_is_vertical():
    s = parse_space("cyl:20:40")
    cfg = sample_vertical_poisson(s, 1.0, replica_rng(16, 0))
    assert len(cfg) % 40 == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_thinning_monotone_in_p(seed, p, q):
    cfg = sample_poisson(parse_space("torus2:5"), 2.0, replica_rng(seed, 0), marked=True)
    lo, hi = sorted((p, q))
    small = {tuple(x) for x in p_thin(cfg, lo).coords}
    big = {tuple(x) for x in p_thin(cfg, hi).coords}
    assert small <= big


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.0, 2.0))
def test_delta_thin_output_is_separated(seed, delta):
    cfg = delta_thin(sample_poisson(parse_space("torus2:5"), 2.0, replica_rng(seed, 0)), delta)
    if len(cfg) > 1:
        assert nearest_distances(cfg).min() >= delta
