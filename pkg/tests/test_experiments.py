import csv

import numpy as np
import pytest

from hcrnn.experiments import (
    BIMODAL_MIXTURE,
    REPORT_HEADER,
    ExperimentReport,
    bimodal_ll,
    bimodal_sample,
    indep_rotation,
    kanlike,
    kanlike_target,
    rotated_pair,
    run_experiment,
    write_report,
)


def test_kanlike_target():
    x = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 1.0], [0.5, -0.5, -0.5, 0.5]])
    np.testing.assert_allclose(kanlike_target(x), [np.e, np.exp(-1.0), np.exp(0.125 + 0.0625)])


@pytest.mark.parametrize("seed", [0, 1])
def test_kanlike(seed):
    rep = kanlike(seed)
    assert rep.value("all", "spearman") > 0.9
    signs = [np.sign(rep.value(f"x{k}", "edge_slope")) for k in range(1, 5)]
    assert signs == [1, -1, -1, 1]


def test_bimodal_sample_matches_mixture():
    data = bimodal_sample(np.random.default_rng(0), 20_000)
    w = np.array(BIMODAL_MIXTURE["weights"])
    mean = w @ np.array(BIMODAL_MIXTURE["means"])
    np.testing.assert_allclose(data.mean(axis=0), mean, atol=0.03)


def test_bimodal_ll():
    rep = bimodal_ll(seed=0, degrees=[1, 4])
    assert rep.value("m=4", "cv_log2_likelihood") > 0
    assert rep.value("m=4", "cv_log2_likelihood") > rep.value("m=1", "cv_log2_likelihood")


def test_rotated_pair_geometry():
    rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
    x0, y0 = rotated_pair(rng_a, 100, 0)
    x9, y9 = rotated_pair(rng_b, 100, 90)
    np.testing.assert_allclose(x9, -y0, atol=1e-12)
    np.testing.assert_allclose(y9, x0, atol=1e-12)


def test_indep_rotation_small():
    rep = indep_rotation(seed=0, trials=30, angles=(0, 5), mc_samples=10_000)
    assert rep.value("angle=0", "rejection_rate") < 0.2
    assert rep.value("angle=5", "rejection_rate") > 0.5


def test_run_experiment_dispatch():
    rep = run_experiment("bimodal-ll", seed=2, degrees=[2], folds=2)
    assert rep.name == "bimodal-ll" and rep.seed == 2
    with pytest.raises(ValueError):
        run_experiment("mnist")


def test_report_roundtrip(tmp_path):
    path = tmp_path / "r.csv"
    rep = ExperimentReport("demo", 7)
    rep.add("a", "score", 0.1)
    rep.add(3, "score", 2)
    write_report(rep, path)
    write_report(rep, path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == REPORT_HEADER
    assert rows[1] == ["demo", "7", "a", "score", "0.1"]
    assert len(rows) == 5
    assert rep.summary()["metrics"] == {"a": {"score": 0.1}, "3": {"score": 2.0}}
    with pytest.raises(KeyError):
        rep.value("b", "score")


def test_report_refuses_foreign_file(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(ValueError):
        write_report(ExperimentReport("demo", 0), path)
