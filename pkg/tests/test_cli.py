import io
import json
from pathlib import Path

import pytest

from relpool.cli import run

SAMPLES = Path(__file__).resolve().parent.parent / "samples"

SCHEMA = {"attributes": [
    {"name": "day", "values": ["mon", "sat"]},
    {"name": "weather", "values": ["fine", "rain"]},
    {"name": "traffic", "values": ["light", "heavy"]},
]}
DATA = "day,weather,traffic\n" + "mon,fine,heavy\n" * 3 + "mon,rain,light\n" * 5 + "sat,fine,light\n" * 2
MATRIX = "attributes,traffic\nactions,drive,walk\ndrive,-10,-40\nwalk,-25,-25\n"


@pytest.fixture
def files(tmp_path):
    (tmp_path / "schema.json").write_text(json.dumps(SCHEMA))
    (tmp_path / "data.csv").write_text(DATA)
    (tmp_path / "matrix.csv").write_text(MATRIX)
    return tmp_path


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


def test_estimate_empty_condition_gives_marginal(files):
    code, out, err = call("estimate", "--schema", files / "schema.json", "--data", files / "data.csv", "--target", "traffic=heavy")
    assert code == 0 and err == ""
    doc = json.loads(out)
    assert doc["probability"] == 0.3
    assert doc["trace"] == [] and doc["effective_n"] == 10


def test_estimate_trace_is_reverifiable(files):
    code, out, _ = call(
        "estimate", "--schema", files / "schema.json", "--data", files / "data.csv",
        "--target", "traffic=heavy", "--given", "day=mon,weather=fine",
    )
    assert code == 0
    doc = json.loads(out)
    step = doc["trace"][0]
    assert step["attribute"] == "day"
    assert [(c["label"], c["n"], c["successes"]) for c in step["cells"]] == [("mon", 3, 3), ("sat", 2, 0)]
    # recount straight from the raw file
    rows = [line.split(",") for line in DATA.splitlines()[1:]]
    for cell in step["cells"]:
        match = [r for r in rows if r[0] == cell["label"] and r[1] == "fine"]
        assert cell["n"] == len(match)
        assert cell["successes"] == sum(r[2] == "heavy" for r in match)


def test_estimate_tsv(files):
    code, out, _ = call(
        "estimate", "--schema", files / "schema.json", "--data", files / "data.csv",
        "--target", "traffic=heavy", "--given", "weather=rain", "--tsv",
    )
    assert code == 0
    summary, steps = out.split("\n\n")
    assert summary.splitlines()[0].startswith("target\tcondition\tprobability")
    assert steps.splitlines()[0].split("\t")[:3] == ["step", "attribute", "condition"]


def test_estimate_out_file(files):
    target = files / "est.json"
    code, out, _ = call(
        "estimate", "--schema", files / "schema.json", "--data", files / "data.csv",
        "--target", "traffic=heavy", "--out", target,
    )
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["probability"] == 0.3


def test_decide_starved_column(files):
    (files / "blind.csv").write_text("day,weather,traffic\nmon,fine,?\nsat,rain,?\n")
    code, out, err = call(
        "decide", "--schema", files / "schema.json", "--data", files / "blind.csv",
        "--matrix", files / "matrix.csv", "--given", "day=mon",
    )
    assert code == 3
    assert out == ""
    assert "traffic=light" in err and "traffic=heavy" in err


def test_decide_estimated_and_override(files):
    code, out, _ = call(
        "decide", "--schema", files / "schema.json", "--data", files / "data.csv",
        "--matrix", files / "matrix.csv", "--given", "weather=rain",
    )
    assert code == 0
    assert json.loads(out)["chosen"] == "drive"
    code, out, _ = call("decide", "--schema", files / "schema.json", "--matrix", files / "matrix.csv", "--override", "0,1")
    assert code == 0
    doc = json.loads(out)
    assert doc["chosen"] == "walk" and doc["probability_source"] == "supplied"
    (files / "p.txt").write_text("0.9\n0.1\n")
    code, out, _ = call("decide", "--schema", files / "schema.json", "--matrix", files / "matrix.csv", "--override", f"@{files / 'p.txt'}", "--tsv")
    assert code == 0
    assert out.splitlines()[1] == "drive\t-13.0\t1"


def test_decide_needs_data_or_override(files):
    code, _, err = call("decide", "--schema", files / "schema.json", "--matrix", files / "matrix.csv")
    assert code == 1 and "--data" in err


def test_simulate_is_byte_identical(files):
    spec = files / "spec.json"
    spec.write_text(json.dumps({"experiment": "pool_rate", "k": 3, "p": 0.5, "points_per_cell": 40, "trials": 10}))
    outputs = []
    for name in ("a", "b"):
        code, out, _ = call("simulate", spec, "--seed", 5, "--out", files / name)
        assert code == 0
        outputs.append(out)
    for fname in ("trials.tsv", "summary.json"):
        assert (files / "a" / fname).read_bytes() == (files / "b" / fname).read_bytes()
    assert outputs[0] == outputs[1]
    assert json.loads(outputs[0])["params"]["seed"] == 5


def test_simulate_trials_flag_and_config(files):
    spec = files / "spec.json"
    spec.write_text(json.dumps({
        "experiment": "stabilization", "cell_probs": [0.0, 1.0], "max_points": 100,
        "config": {"alpha": {"kind": "fixed", "alpha": 0.01}},
    }))
    code, out, _ = call("simulate", spec, "--trials", 3, "--out", files / "s", "--tsv")
    assert code == 0
    assert len(out.splitlines()) == 4


@pytest.mark.parametrize(
    "doc", ['{"k": 2}', '{"experiment": "nope"}', '{"experiment": "pool_rate", "bogus": 1}', "{oops"]
)
def test_simulate_bad_spec(files, doc):
    spec = files / "spec.json"
    spec.write_text(doc)
    code, _, err = call("simulate", spec, "--out", files / "x")
    assert code == 2 and err.startswith("error:")


def test_validate(files):
    code, out, _ = call("validate", "--schema", files / "schema.json", "--data", files / "data.csv", "--matrix", files / "matrix.csv")
    assert code == 0 and json.loads(out)["valid"] is True
    (files / "bad.csv").write_text("day,weather,traffic\nmon,fine,light\ntue,fine,light\n")
    code, out, err = call("validate", "--schema", files / "schema.json", "--data", files / "bad.csv")
    assert code == 2
    assert json.loads(out)["data"]["rejected"] == 1
    assert "bad.csv:3" in err


def test_usage_errors(files):
    assert call()[0] == 1
    assert call("estimate", "--schema", files / "schema.json")[0] == 1
    assert call("frobnicate")[0] == 1


def test_data_errors(files):
    code, _, err = call("estimate", "--schema", files / "missing.json", "--data", files / "data.csv", "--target", "traffic=heavy")
    assert code == 2
    code, _, err = call("estimate", "--schema", files / "schema.json", "--data", files / "data.csv", "--target", "traffic=jammed")
    assert code == 2 and "jammed" in err
    (files / "m2.csv").write_text("attributes,traffic\nactions,drive\ndrive,1\n")
    code, _, err = call("decide", "--schema", files / "schema.json", "--matrix", files / "m2.csv", "--override", "1")
    assert code == 2 and "m2.csv:3" in err


def test_estimate_starved(files):
    (files / "blind.csv").write_text("day,weather,traffic\nmon,fine,?\n")
    code, out, err = call("estimate", "--schema", files / "schema.json", "--data", files / "blind.csv", "--target", "traffic=heavy")
    assert code == 3 and out == "" and "traffic=heavy" in err


def test_samples_validate():
    code, out, err = call(
        "validate", "--schema", SAMPLES / "schema.json", "--data", SAMPLES / "observations.csv",
        "--matrix", SAMPLES / "matrix.csv", "--config", SAMPLES / "config.json",
    )
    assert code == 0, err
    assert json.loads(out)["data"]["accepted"] == 2000
