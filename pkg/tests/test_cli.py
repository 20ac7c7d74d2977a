import json

import numpy as np
import pytest

from panel_dce.cli import main


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--n-units", "40", "--n-periods", "4", "--beta", "1.0", "--seed", "3",
                 "--out-dir", str(out)]) == 0
    return out


def test_simulate_outputs(simulated):
    for name in ("panel.csv", "mechanism.json", "outcome_spec.json", "truth.json"):
        assert (simulated / name).exists()
    truth = json.loads((simulated / "truth.json").read_text())
    assert truth["true_effects"][0]["total"] == pytest.approx(1.0)


def test_estimate_and_tests(simulated, tmp_path):
    panel = str(simulated / "panel.csv")
    out = tmp_path / "out"
    assert main(["estimate", "--panel", panel, "--lag", "0", "--lag", "1", "--level", "time",
                 "--out-dir", str(out)]) == 0
    assert (out / "estimates.csv").read_text().count("\n") == 1 + 4 + 3
    assert main(["test-weak", "--panel", panel, "--lag", "0", "--out-dir", str(out)]) == 0
    assert main(["test-sharp", "--panel", panel, "--lag", "0", "--mechanism", str(simulated / "mechanism.json"),
                 "--reps", "99", "--out-dir", str(out)]) == 0
    doc = json.loads((out / "sharp_tests.json").read_text())
    assert doc["tests"][0]["B"] == 99
    assert (out / "null_draws_lag0.csv").read_text().count("\n") == 100


def test_deterministic_reports(simulated, tmp_path):
    args = ["test-sharp", "--panel", str(simulated / "panel.csv"), "--lag", "1",
            "--mechanism", str(simulated / "mechanism.json"), "--reps", "50", "--seed", "4"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("sharp_tests.json", "null_draws_lag1.csv", "null_histogram_lag1.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fe_bias(simulated, tmp_path):
    assert main(["fe-bias", "--panel", str(simulated / "panel.csv"), "--spec", str(simulated / "outcome_spec.json"),
                 "--mechanism", str(simulated / "mechanism.json"), "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "fe_bias.json").read_text())
    assert set(doc) == {"estimates", "problimit_unit_fe", "problimit_twoway_fe"}


def test_analyze(simulated, tmp_path):
    assert main(["analyze", "--panel", str(simulated / "panel.csv"), "--lag", "0", "--lag", "1",
                 "--mechanism", str(simulated / "mechanism.json"), "--reps", "99", "--out-dir", str(tmp_path)]) == 0
    table = (tmp_path / "analysis_table.csv").read_text().splitlines()
    assert table[0] == "provenance,statistic,lag0,lag1"
    assert [line.split(",")[1] for line in table[1:]] == ["point_estimate", "conservative_p", "randomization_p"]
    assert "provenance" in (tmp_path / "analysis_series.csv").read_text().splitlines()[0]


def test_analyze_without_lags_writes_nothing(simulated, tmp_path, capsys):
    out = tmp_path / "none"
    assert main(["analyze", "--panel", str(simulated / "panel.csv"), "--out-dir", str(out)]) == 2
    assert not out.exists()
    assert "lag" in capsys.readouterr().err


def test_exit_codes(tmp_path):
    assert main(["estimate", "--panel", str(tmp_path / "missing.csv"), "--lag", "0"]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("unit_id,time,treatment,outcome,step_prob\na,1,1,1.0,1.0\n")
    assert main(["estimate", "--panel", str(bad), "--lag", "0"]) == 2
    const = tmp_path / "const.csv"
    const.write_text("unit_id,time,treatment,outcome,step_prob\na,1,1,1.0,0.5\na,2,1,2.0,0.5\n"
                     "b,1,0,1.0,0.5\nb,2,0,3.0,0.5\n")
    assert main(["fe-bias", "--panel", str(const), "--out-dir", str(tmp_path)]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["reproduce", "--target", "tableZ"])
    assert exc.value.code == 2


def test_reproduce_small(tmp_path, monkeypatch):
    monkeypatch.setenv("PANEL_DCE_THREADS", "2")
    assert main(["reproduce", "--target", "qq", "--reps", "20", "--out-dir", str(tmp_path)]) == 0
    rows = (tmp_path / "qq_normal.csv").read_text().splitlines()
    assert rows[0].startswith("provenance,") and len(rows) == 10
    pairs = np.loadtxt(tmp_path / "qq_normal_pairs.csv", delimiter=",", skiprows=1)
    assert pairs.shape == (9 * 20, 4)
    doc = json.loads((tmp_path / "qq_normal.json").read_text())
    assert doc["kind"] == "qq"
