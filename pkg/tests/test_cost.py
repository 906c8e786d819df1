import math
import warnings

import pytest

from palmkit.cost import (
    column_windows,
    cross_windows,
    graphing_cost,
    gxz_convergence_experiment,
    lattice_cost,
    monotonicity_spotcheck,
    parse_graphing,
    vertical_cost_experiment,
)
from palmkit.process import parse_process
from palmkit.space import parse_space

# Distance-3 graphing on Poisson(1): mean degree 9*pi, cost 1 + (9*pi/2 - 1).
DIST3_COST = 14.137166941154069


@pytest.mark.parametrize("d,covol,expected", [(2, 1.0, 2.0), (1, 1.0, 1.0), (1, 7.5, 1.0), (3, 2.0, 2.0)])
def test_lattice_cost_formula(d, covol, expected):
    assert lattice_cost(d, covol) == expected


def test_lattice_cost_rejects_bad_input():
    with pytest.raises(ValueError):
        lattice_cost(0, 1.0)
    with pytest.raises(ValueError):
        lattice_cost(2, 0.0)


def test_cayley_lattice_cost_exact():
    est = graphing_cost(parse_process("lattice:1"), parse_space("torus2:16"), parse_graphing("cayley"), 20, 1)
    assert est.cost == 2.0 and est.stderr == 0.0 and est.connected_frac == 1.0


def test_vertical_graphing_cost_is_one():
    est = graphing_cost(parse_process("vpoisson:1"), parse_space("cyl:20:10"), parse_graphing("vertical"), 20, 2)
    assert est.cost == pytest.approx(1.0, abs=1e-12)
    assert est.connected_frac == 0.0


def test_distance_graphing_cost():
    est = graphing_cost(parse_process("poisson:1"), parse_space("torus2:20"), parse_graphing("dist:3"), 60, 3)
    assert abs(est.cost - DIST3_COST) < 3 * est.cost_stderr + 1e-12
    assert est.connected_frac >= 0.99


def test_parse_graphing_errors():
    for bad in ("dist", "nn:x", "hex"):
        with pytest.raises(ValueError):
            parse_graphing(bad)


def test_vertical_experiment_extremes():
    lo, full = vertical_cost_experiment(1.0, 20.0, 3.0, [0.0, 1.0], 10, 30, 4)
    assert lo.cost == 1.0
    # full lift: every base edge on every level
    assert full.cost == pytest.approx(1.0 + 0.5 * full.detail["base_mean_degree"])


def test_vertical_experiment_shared_marks_monotone():
    ests = vertical_cost_experiment(1.0, 20.0, 3.0, [0.05, 0.1, 0.2, 0.4], 40, 40, 5)
    costs = [e.cost for e in ests]
    assert costs == sorted(costs) and len(set(costs)) == 4
    for e in ests:
        target = e.detail["target_cost"]
        assert abs(e.cost - target) <= 0.05 * target


def test_vertical_experiment_connectivity_tracks_base():
    (e,) = vertical_cost_experiment(1.0, 20.0, 3.0, [0.2], 40, 60, 6)
    assert e.detail["connected_given_base"] >= 0.9
    assert e.connected_frac <= e.detail["base_connected_frac"] + 1e-12


def test_window_sets_disjoint_and_fit():
    s = parse_space("cyl:20:40")
    for ws in (cross_windows(), column_windows()):
        ws.check_space(s)


def test_gxz_small_run():
    res = gxz_convergence_experiment(1.0, [1, 2, 5, 20], 20.0, 40, 300, 7, fdd_n=20)
    rows = {r.n: r for r in res["rows"]}
    assert rows[1].bound == 0.0
    assert rows[1].strip_pvalue > 0.01
    probs = [rows[n].successor_prob for n in (1, 2, 5, 20)]
    assert probs == sorted(probs)
    assert rows[20].successor_prob >= 0.95 - 0.02
    for n in (2, 5, 20):
        sigma = math.sqrt((1 / n) * (1 - 1 / n) / (300 * 20))
        assert abs(rows[n].progenitor_frac - 1 / n) < 4 * sigma
    assert res["tightness"].bounded


def test_monotonicity_identity_pipeline_no_warning():
    spec = parse_process("poisson:1")
    s = parse_space("torus2:10")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = monotonicity_spotcheck(spec, spec, s, [parse_graphing("dist:2")], [parse_graphing("dist:2")], 10, 8)
    assert rep.best_source.cost == rep.best_factor.cost and not rep.warned


def test_monotonicity_diagnostic_reports():
    s = parse_space("torus2:10")
    # the thinned factor has a far smaller bound here, which only triggers a warning
    with pytest.warns(UserWarning, match="far from optimal"):
        rep = monotonicity_spotcheck(
            parse_process("poisson:1"), parse_process("poisson:1|pthin:0.5"), s,
            [parse_graphing("dist:2")], [parse_graphing("dist:2.83")], 10, 9,
        )
    assert rep.warned and len(rep.source) == 1 and len(rep.factor) == 1
    rep = monotonicity_spotcheck(
        parse_process("poisson:1|dthin:0.3"), parse_process("poisson:1|dthin:0.3|thicken:0.1,0"), s,
        [parse_graphing("nn:2")], [parse_graphing("nn:2")], 10, 10,
    )
    assert rep.best_factor.graphing


def test_cost_row_fields():
    est = graphing_cost(parse_process("lattice:1"), parse_space("torus2:8"), parse_graphing("cayley"), 2, 0)
    row = est.row()
    assert row["cost"] == 2.0 and row["eps"] == ""
