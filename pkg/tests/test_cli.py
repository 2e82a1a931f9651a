import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hcrnn.cli import (
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    UsageError,
    coefficient_table,
    main,
    moment_label,
    parse_config,
    parse_evidence,
)
from hcrnn.density import JointDensityModel
from hcrnn.experiments import REPORT_HEADER
from hcrnn.propagate import MomentVector, conditional_density


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def json_tail(text):
    """The JSON document printed after any table lines."""
    return json.loads(text[text.index("{"):])


@pytest.fixture
def uniform_csv(tmp_path):
    data = np.random.default_rng(0).uniform(size=(2000, 2))
    return write_csv(tmp_path / "u.csv", ["a", "b"], data.tolist())


@pytest.fixture
def dependent_csv(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.normal(size=600)
    y = x + 0.5 * rng.normal(size=600)
    z = rng.normal(size=600)
    return write_csv(tmp_path / "d.csv", ["x", "y", "z"], np.column_stack([x, y, z]).tolist())


class TestFit:
    def test_uniform_near_zero(self, capsys, uniform_csv, tmp_path):
        model_path = str(tmp_path / "m.json")
        code, out, _ = run(capsys, "fit", "--input", uniform_csv, "--degree", "3", "--output", model_path)
        assert code == EXIT_OK
        doc = json_tail(out)
        assert max(abs(r["coefficient"]) for r in doc["coefficients"]) < 0.1
        assert out.splitlines()[0].startswith("moments")
        model = JointDensityModel.loads(open(model_path).read())
        assert model.normalizer.columns == ("a", "b")

    def test_table_sorted_with_labels(self, capsys, dependent_csv):
        code, out, _ = run(capsys, "fit", "--input", dependent_csv, "--columns", "x,y", "--degree", "2")
        rows = json_tail(out)["coefficients"]
        mags = [abs(r["coefficient"]) for r in rows]
        assert mags == sorted(mags, reverse=True)
        assert rows[0]["moments"] == "x:mean x y:mean"

    def test_then_eval(self, capsys, dependent_csv, tmp_path):
        model_path = str(tmp_path / "m.json")
        run(capsys, "fit", "--input", dependent_csv, "--columns", "x,y", "--output", model_path)
        code, out, _ = run(capsys, "eval", "--input", dependent_csv, "--model", model_path)
        assert code == EXIT_OK
        ll = json.loads(out)["log2_likelihood"]
        assert np.isfinite(ll) and ll > 0

    def test_deterministic(self, capsys, dependent_csv, tmp_path):
        a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        run(capsys, "fit", "--input", dependent_csv, "--output", a, "--seed", "3")
        run(capsys, "fit", "--input", dependent_csv, "--output", b, "--seed", "3")
        assert open(a).read() == open(b).read()

    def test_missing_cells(self, capsys, tmp_path):
        rng = np.random.default_rng(2)
        rows = rng.normal(size=(200, 2)).tolist()
        rows[5][1] = ""
        path = write_csv(tmp_path / "gap.csv", ["p", "q"], rows)
        code, out, _ = run(capsys, "fit", "--input", path, "--degree", "2")
        assert code == EXIT_OK
        assert json_tail(out)["rows"] == 200

    def test_parse_error_diagnostics(self, capsys, tmp_path):
        path = write_csv(tmp_path / "bad.csv", ["a", "b"], [[1, 2], [3, "oops"]])
        code, _, err = run(capsys, "fit", "--input", path)
        assert code == EXIT_DATA
        assert "line 3" in err and "'b'" in err

    def test_ragged_rows(self, capsys, tmp_path):
        path = write_csv(tmp_path / "ragged.csv", ["a", "b"], [[1, 2], [3]])
        assert run(capsys, "fit", "--input", path)[0] == EXIT_DATA

    def test_unknown_column(self, capsys, uniform_csv):
        assert run(capsys, "fit", "--input", uniform_csv, "--columns", "a,nope")[0] == EXIT_DATA

    def test_moment_labels(self):
        assert moment_label((2, 0, 1), ["u", "v", "w"]) == "u:variance x w:mean"
        assert moment_label((6,), ["u"]) == "u:order-6"


class TestPredict:
    @pytest.fixture
    def model_path(self, capsys, dependent_csv, tmp_path):
        path = str(tmp_path / "m.json")
        run(capsys, "fit", "--input", dependent_csv, "--output", path, "--degree", "3")
        return path

    def test_no_unknown(self, capsys, model_path):
        code, _, err = run(capsys, "predict", "--model", model_path, "--evidence", "x=0.1;y=0.2;z=0")
        assert code == EXIT_USAGE
        assert "col=?" in err

    def test_unknown_column(self, capsys, model_path):
        assert run(capsys, "predict", "--model", model_path, "--evidence", "w=?")[0] == EXIT_USAGE

    def test_matches_propagate(self, capsys, model_path):
        code, out, _ = run(capsys, "predict", "--model", model_path, "--evidence", "x=0.7",
                           "--evidence", "y=?;z=dist:0.1,0.05", "--moments-out", "2")
        assert code == EXIT_OK
        got = json.loads(out)["targets"]["y"]
        model = JointDensityModel.loads(open(model_path).read())
        c = conditional_density(model, [model.normalizer.forward(0, 0.7), None, MomentVector([1.0, 0.1, 0.05])], 1)
        assert got["normalized_mean"] == c.mean()
        assert got["prediction"] == model.normalizer.inverse(1, c.mean())
        assert got["moments"] == c.coeffs[:3].tolist()
        assert got["prediction"] > 0

    def test_independence_model_predicts_median(self, capsys, tmp_path):
        rng = np.random.default_rng(3)
        data = np.column_stack([rng.normal(size=501), rng.exponential(size=501)])
        csv_path = write_csv(tmp_path / "i.csv", ["a", "b"], data.tolist())
        model_path = str(tmp_path / "i.json")
        run(capsys, "fit", "--input", csv_path, "--output", model_path, "--degree", "2")
        doc = json.loads(open(model_path).read())
        doc["coeffs"] = [1.0] + [0.0] * (len(doc["coeffs"]) - 1)
        open(model_path, "w").write(json.dumps(doc))
        code, out, _ = run(capsys, "predict", "--model", model_path, "--evidence", "a=1.5;b=?")
        assert code == EXIT_OK
        got = json.loads(out)["targets"]["b"]
        assert got["normalized_mean"] == 0.5
        assert got["prediction"] == pytest.approx(np.median(data[:, 1]), abs=1e-12)

    def test_degenerate_is_numeric_failure(self, capsys, tmp_path):
        rng = np.random.default_rng(4)
        csv_path = write_csv(tmp_path / "g.csv", ["a", "b"], rng.normal(size=(100, 2)).tolist())
        model_path = str(tmp_path / "g.json")
        run(capsys, "fit", "--input", csv_path, "--output", model_path, "--degree", "1")
        doc = json.loads(open(model_path).read())
        ub = JointDensityModel.loads(json.dumps(doc)).normalizer.forward(1, 0.3)
        # (0, 1) coefficient chosen so that N_0 vanishes at the evidence
        doc["coeffs"] = [1.0, -1 / (np.sqrt(3) * (2 * ub - 1)), 0.0, 0.0]
        open(model_path, "w").write(json.dumps(doc))
        code, _, _ = run(capsys, "predict", "--model", model_path, "--evidence", "a=?;b=0.3")
        assert code == EXIT_NUMERIC

    def test_parse_evidence(self):
        ev, targets = parse_evidence(["a=1", "b=?; c=dist:0.2"], ["a", "b", "c"])
        assert ev[0] == 1.0 and ev[1] is None and ev[2].coeffs.tolist() == [1.0, 0.2]
        assert targets == [1]
        with pytest.raises(UsageError):
            parse_evidence(["a"], ["a"])
        with pytest.raises(UsageError):
            parse_evidence(["a=x", "b=?"], ["a", "b"])


class TestBlocks:
    def test_mi(self, capsys, dependent_csv):
        code, out, _ = run(capsys, "mi", "--input", dependent_csv, "--columns", "x", "--y-columns", "y")
        doc = json.loads(out)
        assert code == EXIT_OK
        assert doc["mi_uncorrected"] > doc["mi_corrected"] > 0.2
        assert doc["mi_model"] == pytest.approx(doc["mi_uncorrected"], rel=1e-10)

    def test_mi_independent_columns(self, capsys, dependent_csv):
        doc = json.loads(run(capsys, "mi", "--input", dependent_csv, "--columns", "x", "--y-columns", "z")[1])
        assert abs(doc["mi_corrected"]) < 0.02

    def test_blocks_required(self, capsys, dependent_csv):
        assert run(capsys, "mi", "--input", dependent_csv, "--columns", "x")[0] == EXIT_USAGE
        assert run(capsys, "mi", "--input", dependent_csv, "--columns", "x", "--y-columns", "x")[0] == EXIT_USAGE

    def test_indep(self, capsys, dependent_csv):
        code, out, _ = run(capsys, "indep", "--input", dependent_csv, "--columns", "x", "--y-columns", "y",
                           "--mc-samples", "10000")
        assert code == EXIT_OK
        assert json.loads(out)["p_value"] < 0.01
        code, out, _ = run(capsys, "indep", "--input", dependent_csv, "--columns", "x", "--y-columns", "z",
                           "--mc-samples", "10000")
        assert json.loads(out)["p_value"] > 0.001
        assert run(capsys, "indep", "--input", dependent_csv, "--columns", "x", "--y-columns", "z",
                   "--mc-samples", "50")[0] == EXIT_DATA

    def test_ib_train(self, capsys, dependent_csv, tmp_path):
        trace, layer = str(tmp_path / "trace.csv"), str(tmp_path / "t.csv")
        code, out, _ = run(capsys, "ib-train", "--input", dependent_csv, "--columns", "x,y", "--y-columns", "z",
                           "--beta", "5", "--epochs", "3", "--output", trace, "--layer-output", layer,
                           "--hidden", "2")
        assert code == EXIT_OK
        doc = json.loads(out)
        assert doc["config"]["beta"] == 5.0
        assert next(csv.reader(open(trace))) == ["epoch", "compression_term", "prediction_term", "objective"]
        t = np.loadtxt(layer, delimiter=",", skiprows=1)
        assert t.shape == (600, 2) and 0 < t.min() and t.max() < 1

    def test_ib_divergence_exit(self, capsys, tmp_path):
        x = np.random.default_rng(1).uniform(size=(200, 2))
        path = write_csv(tmp_path / "c.csv", ["a", "b", "c", "d"], np.column_stack([x, x]).tolist())
        code, _, err = run(capsys, "ib-train", "--input", path, "--columns", "a,b", "--y-columns", "c,d",
                           "--beta", "10", "--lr", "10", "--epochs", "40", "--seed", "0", "--patience", "2")
        assert code == EXIT_NUMERIC
        assert "lower alpha" in err


class TestConfig:
    def test_unknown_key(self, capsys, tmp_path, uniform_csv):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"degree": 3, "colour": "red"}))
        code, _, err = run(capsys, "fit", "--input", uniform_csv, "--config", str(cfg))
        assert code == EXIT_USAGE and "colour" in err

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"degree": 3, "scheme": "total", "input": "x.csv"}))
        got = parse_config(["fit", "--config", str(cfg), "--degree", "5"])
        assert (got.degree, got.scheme, got.input) == (5, "total", "x.csv")

    @pytest.mark.parametrize("argv", [
        ["fit"],
        ["fit", "--input", "a.csv", "--degree", "31"],
        ["fit", "--input", "a.csv", "--scheme", "diagonal"],
        ["eval", "--input", "a.csv"],
        ["predict"],
        ["experiment", "nope"],
        ["frobnicate"],
    ])
    def test_usage_errors(self, capsys, argv):
        assert run(capsys, *argv)[0] == EXIT_USAGE

    def test_missing_input_file(self, capsys, tmp_path):
        assert run(capsys, "fit", "--input", str(tmp_path / "none.csv"))[0] == EXIT_DATA

    def test_thread_env(self, capsys, uniform_csv, monkeypatch):
        monkeypatch.setenv("HCR_THREADS", "1")
        assert run(capsys, "fit", "--input", uniform_csv, "--degree", "2")[0] == EXIT_OK
        monkeypatch.setenv("HCR_THREADS", "zero")
        assert run(capsys, "fit", "--input", uniform_csv, "--degree", "2")[0] == EXIT_USAGE


class TestExperiment:
    def test_report_appends(self, capsys, tmp_path):
        out = str(tmp_path / "report.csv")
        for seed in ("0", "1"):
            code, text, _ = run(capsys, "experiment", "indep-rotation", "--trials", "5", "--seed", seed,
                                "--output", out)
            assert code == EXIT_OK
        rows = list(csv.reader(open(out)))
        assert tuple(rows[0]) == REPORT_HEADER
        assert rows.count(list(REPORT_HEADER)) == 1
        assert len(rows) == 1 + 2 * 6
        assert {r[1] for r in rows[1:]} == {"0", "1"}

    def test_header_mismatch(self, capsys, tmp_path):
        out = tmp_path / "report.csv"
        out.write_text("something,else\n")
        assert run(capsys, "experiment", "indep-rotation", "--trials", "2", "--output", str(out))[0] != EXIT_OK


def test_module_entry_point(uniform_csv):
    proc = subprocess.run([sys.executable, "-m", "hcrnn.cli", "fit", "--input", uniform_csv, "--degree", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json_tail(proc.stdout)["basis_size"] == 4


def test_coefficient_table_covers_basis():
    from hcrnn.basis import make_basis
    from hcrnn.density import uniform_model
    table = coefficient_table(uniform_model(make_basis(2, 2)), ["a", "b"])
    assert len(table) == 8
