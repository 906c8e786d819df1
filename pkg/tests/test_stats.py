import numpy as np
import pytest
from scipy import stats

from palmkit.stats import (
    chi2_homogeneity,
    master_seed,
    mean_report,
    poisson_gof,
    ratio_report,
    replica_rng,
    replicate,
)


def _draw(seed, r):
    return float(replica_rng(seed, r).random())


def test_streams_depend_on_seed_replica_role():
    a = replica_rng(1, 0).random(4)
    assert np.array_equal(a, replica_rng(1, 0).random(4))
    assert not np.array_equal(a, replica_rng(1, 1).random(4))
    assert not np.array_equal(a, replica_rng(2, 0).random(4))
    assert not np.array_equal(a, replica_rng(1, 0, "palm").random(4))


def test_replicate_independent_of_workers():
    serial = replicate(_draw, 16, 5)
    parallel = replicate(_draw, 16, 5, workers=2)
    assert serial == parallel


def test_master_seed_env_override(monkeypatch):
    monkeypatch.delenv("PALMKIT_SEED", raising=False)
    assert master_seed(None) == 0 and master_seed(9) == 9
    monkeypatch.setenv("PALMKIT_SEED", "123")
    assert master_seed(9) == 123


def test_reports():
    rep = mean_report("x", [1.0, 2.0, 3.0])
    assert rep.value == 2.0 and rep.stderr == pytest.approx(np.std([1, 2, 3], ddof=1) / np.sqrt(3))
    r = ratio_report("r", [2.0, 4.0], [1.0, 2.0])
    assert r.value == 2.0 and r.stderr == 0.0
    with pytest.raises(ValueError):
        ratio_report("r", [1.0], [0.0])


def test_poisson_gof_accepts_and_rejects():
    rng = np.random.default_rng(0)
    _, _, p_ok = poisson_gof(rng.poisson(20, 3000), 20.0)
    _, _, p_bad = poisson_gof(rng.poisson(22, 3000), 20.0)
    assert p_ok > 0.01 and p_bad < 1e-6


def test_chi2_homogeneity_matches_scipy():
    a = np.array([30, 50, 20])
    b = np.array([25, 55, 20])
    chi2, dof, p = chi2_homogeneity(a, b)
    ref = stats.chi2_contingency(np.vstack([a, b]), correction=False)
    assert chi2 == pytest.approx(ref.statistic) and dof == ref.dof and p == pytest.approx(ref.pvalue)
