import json

import numpy as np
import pytest

from panel_dce.assignment import BernoulliMechanism, ObservedPanel, draw_panel
from panel_dce.errors import AssumptionViolation, ValidationError
from panel_dce.panel_io import ingest_panel, read_json, write_json, write_panel, write_rows
from panel_dce.panel_core import ARPanelSpec
from panel_dce.sim_harness import PairedBinaryDesign, paired_binary_panel

HEADER = "unit_id,time,treatment,outcome,step_prob\n"


def write(tmp_path, text, name="panel.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_round_trip_is_bit_identical(tmp_path):
    panel = ARPanelSpec.constant(2, 3, 0.5, 1.0, np.random.default_rng(0).normal(size=(2, 3)))
    obs = draw_panel(BernoulliMechanism(0.3), panel, 1)
    write_panel(obs, tmp_path / "a.csv")
    back = ingest_panel(tmp_path / "a.csv")
    assert (back.n_units, back.n_periods) == (2, 3)
    assert back == obs
    write_panel(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_unit_order_and_ids(tmp_path):
    path = write(tmp_path, HEADER + "b,2,1,1.0,0.5\nb,1,0,0.0,0.5\na,1,1,2.0,0.5\na,2,1,3.0,0.5\n")
    obs = ingest_panel(path)
    assert obs.unit_ids == ("b", "a")
    np.testing.assert_array_equal(obs.assignments, [[0, 1], [1, 1]])


def test_step_prob_one_rejected(tmp_path):
    path = write(tmp_path, HEADER + "a,1,1,2.0,1.0\n")
    with pytest.raises(AssumptionViolation, match="line 2.*probabilistic assignment"):
        ingest_panel(path)


@pytest.mark.parametrize("body,pattern", [
    ("a,1,1,2.0,0.5\na,1,0,1.0,0.5\n", "line 3: duplicate"),
    ("a,1,1,2.0,0.5\na,3,0,1.0,0.5\n", "missing time"),
    ("a,1,7,2.0,0.5\na,2,x,1.0,0.5\n", "line 3"),
    ("a,1,1,abc,0.5\n", "line 2: column 'outcome'"),
    (",1,1,2.0,0.5\n", "line 2: empty unit_id"),
    ("a,0,1,2.0,0.5\n", "line 2: time 0"),
])
def test_row_diagnostics(tmp_path, body, pattern):
    with pytest.raises(ValidationError, match=pattern):
        ingest_panel(write(tmp_path, HEADER + body), alphabet=(0, 1, 7) if "7" in body else None)


def test_missing_column(tmp_path):
    with pytest.raises(ValidationError, match="missing required column"):
        ingest_panel(write(tmp_path, "unit_id,time,treatment,outcome\na,1,1,2.0\n"))


def test_binary_inferred_from_single_label(tmp_path):
    obs = ingest_panel(write(tmp_path, HEADER + "a,1,1,2.0,0.5\na,2,1,1.0,0.5\n"))
    assert obs.alphabet.values == (0, 1)


def test_string_labels_need_two(tmp_path):
    with pytest.raises(ValidationError):
        ingest_panel(write(tmp_path, HEADER + "a,1,hi,2.0,0.5\n"))
    obs = ingest_panel(write(tmp_path, HEADER + "a,1,hi,2.0,0.5\na,2,lo,1.0,0.5\n"))
    assert obs.alphabet.values == ("hi", "lo")


def test_groups_round_trip(tmp_path):
    spec, groups = paired_binary_panel(PairedBinaryDesign(n_units=10, n_periods=4), 0)
    obs = draw_panel(BernoulliMechanism(0.5), spec, 0, group_ids=groups)
    write_panel(obs, tmp_path / "g.csv")
    back = ingest_panel(tmp_path / "g.csv")
    np.testing.assert_array_equal(back.group_ids, obs.group_ids)


def test_inconsistent_groups_rejected(tmp_path):
    text = "unit_id,time,treatment,outcome,step_prob,group_id\na,1,1,1.0,0.5,g\nb,1,0,1.0,0.5,g\n"
    with pytest.raises(ValidationError, match="group"):
        ingest_panel(write(tmp_path, text))


def test_paired_fixture_share(tmp_path):
    d = PairedBinaryDesign()
    spec, groups = paired_binary_panel(d, 1)
    obs = draw_panel(BernoulliMechanism(d.p_treat), spec, 1, group_ids=groups)
    write_panel(obs, tmp_path / "p.csv")
    summary = ingest_panel(tmp_path / "p.csv").summary()
    assert (summary["n_units"], summary["n_periods"]) == (110, 20)
    # 1100 independent pair draws
    assert abs(summary["treatment_shares"]["1"] - 5 / 11) < 4 * np.sqrt(5 / 11 * 6 / 11 / 1100)


def test_json_writer(tmp_path):
    write_json({"b": np.float64(np.nan), "a": np.arange(2)}, tmp_path / "x.json")
    text = (tmp_path / "x.json").read_text()
    assert json.loads(text) == {"a": [0, 1], "b": None}
    assert text.index('"a"') < text.index('"b"')
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ValidationError):
        read_json(tmp_path / "bad.json")


def test_rows_writer(tmp_path):
    write_rows([{"x": 0.1, "y": None}], tmp_path / "r.csv", ["y", "x"])
    assert (tmp_path / "r.csv").read_text() == "y,x\n,0.1\n"


def test_observed_unit_ids_validated():
    with pytest.raises(ValidationError):
        ObservedPanel(np.zeros((2, 1)), np.zeros((2, 1)), np.full((2, 1), 0.5), unit_ids=("a", "a"))
