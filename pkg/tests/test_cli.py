import csv
import io
import xml.etree.ElementTree as ET

import pytest

from palmkit.cli import run
from palmkit.configuration import load_config
from palmkit.graph import distance_graph, save_graph


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("PALMKIT_SEED", raising=False)


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_sample_is_reproducible(tmp_path):
    a, b = tmp_path / "a.ppc", tmp_path / "b.ppc"
    argv = ["sample", "--space", "torus2:10", "--process", "poisson:1", "--seed", "42", "--out"]
    assert run(argv + [str(a)]) == 0
    assert run(argv + [str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert load_config(a).space.descriptor == "torus2:10"


def test_env_seed_overrides_flag(tmp_path, monkeypatch):
    a, b = tmp_path / "a.ppc", tmp_path / "b.ppc"
    run(["sample", "--space", "torus2:5", "--process", "poisson:1", "--seed", "3", "--out", str(a)])
    monkeypatch.setenv("PALMKIT_SEED", "3")
    run(["sample", "--space", "torus2:5", "--process", "poisson:1", "--seed", "99", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_render_svg(tmp_path):
    a, svg = tmp_path / "a.ppc", tmp_path / "a.svg"
    run(["sample", "--space", "torus2:10", "--process", "iidpoisson:1", "--seed", "1", "--out", str(a)])
    assert run(["render", str(a), "--graph", "dist:2", "--out", str(svg)]) == 0
    root = ET.parse(svg).getroot()
    assert root.tag.endswith("svg")
    g = tmp_path / "a.ppg"
    save_graph(distance_graph(load_config(a), 1.5), g)
    assert run(["render", str(g), "--out", str(tmp_path / "g.png")]) == 0


def test_verify_mecke_assert(capsys):
    code = run(["verify", "mecke", "--t", "1", "--space", "torus2:20", "--replicas", "2000", "--seed", "7", "--assert"])
    out = capsys.readouterr().out
    assert code == 0
    (row,) = _rows(out)
    assert row["verifier"] == "mecke" and float(row["pvalue"]) > 0.01


def test_verify_assert_failure_exit_code(capsys):
    # an impossible significance level forces a failed check
    code = run(["verify", "poisson", "--space", "torus2:5", "--replicas", "200", "--alpha", "1.0", "--assert"])
    assert code == 3


@pytest.mark.parametrize("mode,extra", [
    ("poisson", ["--replicas", "200"]),
    ("thinning", ["--replicas", "200"]),
    ("percolation", ["--replicas", "3"]),
    ("encoding", ["--replicas", "20", "--space", "torus2:10"]),
    ("mtp", ["--transport", "spawn", "--replicas", "3"]),
    ("colouring", ["--replicas", "100", "--space", "torus2:10"]),
])
def test_verify_modes(mode, extra, capsys):
    assert run(["verify", mode, "--seed", "1"] + extra) == 0
    (row,) = _rows(capsys.readouterr().out)
    assert row["verifier"] == mode


def test_cost_csv(tmp_path):
    out = tmp_path / "cost.csv"
    assert run(["cost", "--replicas", "5", "--out", str(out), "--assert"]) == 0
    (row,) = _rows(out.read_text())
    assert float(row["cost"]) == 2.0


def test_cost_vertical_with_figure(tmp_path):
    out, fig = tmp_path / "v.csv", tmp_path / "v.png"
    code = run(["cost", "--vertical", "--eps", "0.05,0.2", "--replicas", "10", "--out", str(out), "--figure", str(fig)])
    assert code == 0 and fig.stat().st_size > 0
    assert [float(r["eps"]) for r in _rows(out.read_text())] == [0.05, 0.2]


def test_wobble_csv(tmp_path, capsys):
    a = tmp_path / "a.ppc"
    run(["sample", "--space", "torus2:10", "--process", "poisson:1", "--seed", "5", "--out", str(a)])
    assert run(["wobble", str(a), str(a), "--R", "3", "--assert"]) == 0
    (row,) = _rows(capsys.readouterr().out)
    assert list(row) == ["feasible", "eps", "R", "n_a", "n_b"]
    assert row["feasible"] == "1" and float(row["eps"]) == 0.0


def test_fdd_expectations(capsys):
    base = ["fdd", "--replicas", "3000", "--windows", "box:0,0:1,1", "--assert"]
    assert run(base + ["--a", "poisson:1", "--b", "poisson:1.2", "--expect", "different"]) == 0
    assert run(base + ["--a", "poisson:1", "--b", "poisson:1"]) == 0
    out = capsys.readouterr().out
    assert out.count("tv,chi2,dof,pvalue") == 2


def test_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["verify", "thinning", "--replicas", "100", "--seed", "11", "--out"]
    run(argv + [str(a)])
    run(argv + [str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# experiment\nspace = torus2:5\nprocess = poisson:2\nseed = 4\n")
    a, b = tmp_path / "a.ppc", tmp_path / "b.ppc"
    assert run(["--config", str(cfg), "sample", "--out", str(a)]) == 0
    assert load_config(a).space.descriptor == "torus2:5"
    assert run(["--config", str(cfg), "sample", "--space", "torus2:3", "--out", str(b)]) == 0
    assert load_config(b).space.descriptor == "torus2:3"


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert run(["--config", str(bad), "sample"]) == 2
    bad.write_text("no equals sign\n")
    assert run(["--config", str(bad), "sample"]) == 2
    assert run(["--config", str(tmp_path / "missing.cfg"), "sample"]) == 2


@pytest.mark.parametrize("argv", [
    ["sample", "--space", "bogus", "--process", "poisson:1"],
    ["sample", "--space", "torus2:10", "--process", "poisson:1", "--bogus"],
    ["sample", "--space", "torus2:10", "--process", "poisson:1", "--seed", "-1"],
    ["sample", "--space", "torus2:10", "--process", "poisson:1", "--seed", str(2**64)],
    ["render", "/nonexistent/file.ppc", "--out", "x.svg"],
    ["frobnicate"],
    ["accept", "--criterion", "99"],
])
def test_precondition_errors_exit_2(argv):
    assert run(argv) == 2


def test_accept_single_criterion(capsys):
    assert run(["accept", "--criterion", "6", "--assert"]) == 0
    assert "[PASS] criterion  6" in capsys.readouterr().out
