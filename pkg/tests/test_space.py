import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palmkit.space import (
    Box,
    Point,
    distance,
    hyperbolic_area,
    parse_box,
    parse_space,
    sample_uniform,
    translate,
    window_volume,
)

# Frozen oracle values, computed by mpmath quadrature of 2*pi*sinh(r) and of
# the Poincare line element 2 / (1 - s^2).
HYP_AREA_2 = 17.355387381771437
HYP_RATIO_1_2 = 0.19661193324148185
HYP_DIST_HALF = 1.0986122886681098


def test_torus_volume():
    assert parse_space("torus2:10").volume == 100.0
    assert parse_space("torus3:2").volume == 8.0


def test_cylinder_cells():
    s = parse_space("cyl:20:40")
    assert s.levels == 40
    assert s.volume == 800.0


def test_hyperbolic_area_matches_quadrature():
    assert hyperbolic_area(2.0) == pytest.approx(HYP_AREA_2, rel=1e-12)
    assert parse_space("hyp:2:0.5").volume == pytest.approx(HYP_AREA_2, rel=1e-12)


def test_torus_wraparound_distance():
    s = parse_space("torus1:10")
    assert distance(s, Point((0.5,)), Point((9.8,))) == pytest.approx(0.7, abs=1e-12)


def test_hyperbolic_distance_from_origin():
    s = parse_space("hyp:2:0.5")
    assert distance(s, Point((0.0, 0.0)), Point((0.5, 0.0))) == pytest.approx(HYP_DIST_HALF, rel=1e-12)


@pytest.mark.parametrize("desc", ["torus1:10", "torus2:10", "torus3:4", "cyl:20:40", "hyp:2:0.5"])
def test_self_distance_zero(desc):
    s = parse_space(desc)
    x = sample_uniform(s, np.random.default_rng(3))
    assert distance(s, x, x) == 0.0


def test_translate_torus():
    s = parse_space("torus2:10")
    y = translate(s, (3, 4), Point((8.0, 8.0)))
    assert y.coords == pytest.approx((1.0, 2.0))
    assert translate(s, (0, 0), Point((8.0, 8.0))).coords == (8.0, 8.0)


def test_translate_cylinder_wraps_both():
    s = parse_space("cyl:20:40")
    y = translate(s, (1.5, 2), Point((19.0,), 39))
    assert y.coords[0] == pytest.approx(0.5)
    assert y.level == 1


def test_uniform_mean_torus1():
    s = parse_space("torus1:10")
    x, _ = sample_uniform(s, np.random.default_rng(11), 100_000)
    sigma = 10 / math.sqrt(12) / math.sqrt(len(x))
    assert abs(x.mean() - 5.0) < 3 * sigma


def test_uniform_hyperbolic_inner_fraction():
    s = parse_space("hyp:2:0.5")
    coords, _ = sample_uniform(s, np.random.default_rng(12), 100_000)
    frac = np.mean(s.radial(coords) < 1.0)
    sigma = math.sqrt(HYP_RATIO_1_2 * (1 - HYP_RATIO_1_2) / len(coords))
    assert abs(frac - HYP_RATIO_1_2) < 3 * sigma


def test_uniform_draws_in_window():
    s = parse_space("torus2:7")
    coords, _ = sample_uniform(s, np.random.default_rng(0), 1000)
    assert s.contains(coords).all()


@pytest.mark.parametrize("bad", ["torus2:0", "torus2:-1", "cube:3", "hyp:1:2", "cyl:10:0", ""])
def test_bad_descriptors(bad):
    with pytest.raises(ValueError):
        parse_space(bad)


def test_lattice_descriptor_default_side():
    s = parse_space("lat2:4")
    assert s.sides == (32.0, 32.0)


def test_box_parse_round_trip():
    b = parse_box("box:0,0:2,3@1#0,0.5")
    assert b.level == 1 and b.marks == (0.0, 0.5)
    assert parse_box(b.descriptor) == b
    s = parse_space("cyl:20:40")
    assert Box((0.0,), (2.0,)).volume(s) == 80.0
    assert parse_box("box:0:2@3").volume(s) == 2.0


def test_hyperbolic_default_window_is_eroded():
    s = parse_space("hyp:2:0.5")
    assert window_volume(s) == pytest.approx(hyperbolic_area(1.5))


# -- properties -------------------------------------------------------------------

coord = st.floats(0, 9.999, allow_nan=False)
pt2 = st.tuples(coord, coord).map(Point)


@settings(max_examples=200, deadline=None)
@given(pt2, pt2, pt2)
def test_torus_triangle_inequality(a, b, c):
    s = parse_space("torus2:10")
    assert distance(s, a, c) <= distance(s, a, b) + distance(s, b, c) + 1e-9


@settings(max_examples=200, deadline=None)
@given(pt2, pt2, st.tuples(st.floats(-30, 30), st.floats(-30, 30)))
def test_torus_translation_invariance(a, b, g):
    s = parse_space("torus2:10")
    d0 = distance(s, a, b)
    d1 = distance(s, translate(s, g, a), translate(s, g, b))
    assert d1 == pytest.approx(d0, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(pt2, pt2)
def test_torus_distance_bounded_and_symmetric(a, b):
    s = parse_space("torus2:10")
    d = distance(s, a, b)
    assert 0 <= d <= math.sqrt(50) + 1e-9
    assert d == distance(s, b, a)


disk = st.tuples(st.floats(0, 0.95), st.floats(0, 2 * math.pi)).map(
    lambda rt: Point((rt[0] * math.cos(rt[1]), rt[0] * math.sin(rt[1])))
)


@settings(max_examples=200, deadline=None)
@given(disk, disk, disk)
def test_hyperbolic_triangle_inequality(a, b, c):
    s = parse_space("hyp:4:0.5")
    assert distance(s, a, c) <= distance(s, a, b) + distance(s, b, c) + 1e-7


@settings(max_examples=100, deadline=None)
@given(disk, disk, st.floats(0, 2 * math.pi))
def test_hyperbolic_rotation_invariance(a, b, theta):
    s = parse_space("hyp:4:0.5")
    d1 = distance(s, translate(s, theta, a), translate(s, theta, b))
    assert d1 == pytest.approx(distance(s, a, b), rel=1e-9, abs=1e-9)
