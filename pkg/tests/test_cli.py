import csv
import io
import json

import jsonschema
import numpy as np
import pytest

from iresnet_bounds.adversary import SampleTrace, build_family, filter_grid
from iresnet_bounds.base_maps import identity_map
from iresnet_bounds.cli import RunConfig, invert_report, load_schema, main
from iresnet_bounds.hat import HatParams
from iresnet_bounds.learners import make_learner


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def validate(doc, name):
    jsonschema.validate(doc, load_schema(name))


def slope_of(csv_text):
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    summary = [r for r in rows if r["learner"].startswith("slope:")]
    assert len(summary) == 1
    return float(summary[0]["floor_c"]), rows


def test_verify_default_passes(capsys, tmp_path):
    out = tmp_path / "verify.json"
    code, text, _ = run(["verify", "--format", "json", "--out", str(out)], capsys)
    assert code == 0
    assert "PASS" in text and "FAIL" not in text
    doc = json.loads(out.read_text())
    validate(doc, "verify_report")
    assert len({e["lemma"] for e in doc["suites"]}) == len(doc["suites"]) >= 10


def test_verify_injected_fault_fails(capsys):
    code, text, err = run(["verify", "--inject-fault", "--format", "json"], capsys)
    assert code == 1
    doc = json.loads(text)
    validate(doc, "verify_report")
    assert any(e["status"] == "fail" for e in doc["suites"])
    assert "AmplitudeTooLarge" in err


def test_experiment_d1_slope(capsys):
    code, text, _ = run(["experiment", "--d", "1", "--m", "1,10,100", "--seeds", "2"], capsys)
    assert code == 0
    slope, rows = slope_of(text)
    assert abs(slope + 1) <= 0.1
    floors = {int(r["m"]): float(r["floor_c"]) for r in rows if r["m"]}
    assert floors == pytest.approx({1: 1 / 36, 10: 1 / 360, 100: 1 / 3600})


def test_experiment_d2_slope(capsys):
    code, text, _ = run(["experiment", "--d", "2", "--m", "4,16,64,256", "--seeds", "1"], capsys)
    assert code == 0
    slope, _ = slope_of(text)
    assert abs(slope + 0.5) <= 0.15


def test_experiment_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["experiment", "--variant", "conv", "--learner", "random", "--m", "4,16", "--seeds", "3", "--master-seed", "11"]
    assert run(args + ["--out", str(a)], capsys)[0] == 0
    assert run(args + ["--out", str(b)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert b"\r" not in a.read_bytes()
    header = a.read_text().splitlines()[0]
    assert header == "variant,d,p,m,learner,seed,n_samples,grid_size,filtered_size,floor_c,worst_err,mean_err,bound_C,bound_value"


def test_experiment_rows_sorted_and_json_schema(capsys):
    code, text, _ = run(["experiment", "--m", "16,4", "--seeds", "2", "--format", "json", "--p", "2", "--d", "1"], capsys)
    assert code == 0
    doc = json.loads(text)
    validate(doc, "experiment_report")
    keys = [(r["m"], r["seed"]) for r in doc["rows"]]
    assert keys == sorted(keys)
    assert doc["checks"]["indistinguishable"]


def test_foolingset_evidence(capsys):
    code, text, _ = run(["foolingset", "--d", "2", "--m", "4", "--format", "json", "--learner", "random", "--seed", "3"], capsys)
    assert code == 0
    doc = json.loads(text)
    validate(doc, "foolingset")
    assert len(doc["chosen"]) == 3
    for entry in doc["chosen"]:
        for ev in entry["evidence"]:
            assert np.max(np.abs(np.subtract(ev["plus"], ev["base"]))) <= 1e-15
            assert np.max(np.abs(np.subtract(ev["minus"], ev["base"]))) <= 1e-15
    # the filtered grid matches a direct filter of the same trace
    family = build_family("iresnet", 4, identity_map(2))
    trace = SampleTrace(np.array(doc["trace"]["points"]), np.array(doc["trace"]["values"]))
    assert np.array_equal(np.array(doc["filtered"]), filter_grid(family.grid, trace))
    assert len(doc["gamma"]) == family.grid.size


def test_foolingset_params_roundtrip(capsys):
    code, text, _ = run(["foolingset", "--variant", "conv", "--d", "3", "--m", "2", "--format", "json"], capsys)
    assert code == 0
    doc = json.loads(text)
    family = build_family("conv", 2, identity_map(3))
    x = np.random.default_rng(0).uniform(0, 1, (100, 3))
    for entry in doc["chosen"]:
        params = HatParams.from_dict(entry["params_plus"])
        z = family.grid.gamma[entry["index"]]
        assert params == family.params(z, 1)
        y = x + family.block(params.z, params.v)(x)
        assert np.array_equal(y, family.member(z, 1)(x))


def test_foolingset_csv(capsys):
    code, text, _ = run(["foolingset", "--m", "4", "--d", "2"], capsys)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert code == 0 and rows
    assert all(r["plus"] == r["base"] == r["minus"] for r in rows)


def test_invert_examples(capsys):
    code, text, _ = run(["invert", "--d", "3", "--blocks", "4", "--format", "json"], capsys)
    assert code == 0
    doc = json.loads(text)
    validate(doc, "invert_report")
    assert doc["roundtrip_max"] <= 1e-8 and len(doc["iterations"]) == 4
    code, text, _ = run(["invert", "--blocks", "0", "--format", "json"], capsys)
    assert code == 0 and json.loads(text)["roundtrip_max"] == 0.0


def test_invert_iterations_fall_with_amplitude():
    cfg = RunConfig("invert", d=2, master_seed=4)
    medians = [np.median(invert_report(cfg, 6, a, 400, 1e-12)["iterations"]) for a in (0.9, 0.5, 0.1)]
    assert medians[0] >= medians[1] >= medians[2]
    assert medians[0] > medians[2]


@pytest.mark.parametrize(
    "argv",
    [
        ["experiment", "--m", ""],
        ["experiment", "--m", "0,4"],
        ["experiment", "--d", "0"],
        ["experiment", "--seeds", "0"],
        ["experiment", "--p", "0.5"],
        ["experiment", "--variant", "dense"],
        ["invert", "--blocks", "-1"],
        ["nonsense"],
    ],
)
def test_config_errors_exit_2(argv, capsys):
    assert run(argv, capsys)[0] == 2


def test_io_error_exit_3(tmp_path, capsys):
    code, _, err = run(["experiment", "--m", "4", "--seeds", "1", "--out", str(tmp_path / "missing" / "x.csv")], capsys)
    assert code == 3 and "missing" in err


def test_runtime_error_exit_3(capsys):
    # a huge amplitude breaks the block certificate before inversion starts
    assert run(["invert", "--amplitude", "1.5"], capsys)[0] == 3


def test_grid_learner_trace_in_foolingset_matches_learner(capsys):
    code, text, _ = run(["foolingset", "--m", "9", "--d", "2", "--format", "json"], capsys)
    doc = json.loads(text)
    family = build_family("iresnet", 9, identity_map(2))
    learner = make_learner("grid")(9, 0, family)
    assert np.array_equal(np.array(doc["trace"]["points"]), learner.points)
