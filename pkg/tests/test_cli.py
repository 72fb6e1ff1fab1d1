import csv
import json

import numpy as np
import pytest

from advcali.cli import main
from advcali.graph import read_logits, write_logits
from advcali.models import load_checkpoint, softmax

SPEC = {"block_sizes": [30, 30], "p_in": 0.25, "p_out": 0.03, "seed": 5,
        "classifier": {"epochs": 60, "propagate": False}}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def dataset(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(SPEC))
    code, out, _ = run(capsys, "synth", "--spec", spec, "--out", tmp_path / "data")
    assert code == 0
    return tmp_path / "data"


def test_synth_contract(dataset, tmp_path, capsys):
    for name in ("edges.tsv", "logits.csv", "labels.csv", "masks.json", "manifest.json", "provenance.json"):
        assert (dataset / name).exists()
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert {"command", "inputs", "config_hash", "seed", "version", "duration_s"} <= set(manifest)
    run(capsys, "synth", "--spec", tmp_path / "spec.json", "--out", tmp_path / "again")
    for f in dataset.iterdir():
        if f.name != "manifest.json":
            assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes()


def test_synth_without_classifier(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"block_sizes": [5, 5], "p_in": 0.5, "p_out": 0.1}))
    assert run(capsys, "synth", "--spec", spec, "--out", tmp_path / "d")[0] == 0
    assert not (tmp_path / "d" / "logits.csv").exists()


def test_synth_invalid_field(tmp_path, capsys):
    spec = tmp_path / "bad.json"
    spec.write_text(json.dumps({"block_sizes": [5, 5], "p_in": 1.5, "p_out": 0.0}))
    code, _, err = run(capsys, "synth", "--spec", spec, "--out", tmp_path / "x")
    assert code == 3 and "p_in" in err


def test_calibrate_uncal(dataset, tmp_path, capsys):
    code, out, _ = run(capsys, "calibrate", "--data", dataset, "--method", "uncal", "--out", tmp_path / "u")
    assert code == 0 and json.loads(out)["method"] == "uncal"
    probs = read_logits(tmp_path / "u" / "probs.csv", tag="probs")
    assert np.array_equal(probs, softmax(read_logits(dataset / "logits.csv")))


def test_calibrate_ts_single_value(dataset, tmp_path, capsys):
    assert run(capsys, "calibrate", "--data", dataset, "--method", "ts", "--out", tmp_path / "t")[0] == 0
    rows = list(csv.DictReader(open(tmp_path / "t" / "temperatures.csv")))
    assert len(rows) == 60 and len({r["t"] for r in rows}) == 1


def test_calibrate_advcali_absolute(dataset, tmp_path, capsys):
    out_dir = tmp_path / "a"
    code, _, _ = run(capsys, "calibrate", "--data", dataset, "--method", "advcali", "--variant", "absolute",
                     "--epochs", 4, "--out", out_dir)
    assert code == 0
    header, sections = load_checkpoint(out_dir / "checkpoint.bin")
    assert header["config"]["dist"] == "absolute" and set(sections) == {"calibrator", "detector"}
    for name in ("temperatures.csv", "probs.csv", "trace.csv", "manifest.json"):
        assert (out_dir / name).exists()
    assert len((out_dir / "trace.csv").read_text().splitlines()) == 5


def test_calibrate_unknown_method(dataset, tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["calibrate", "--data", str(dataset), "--method", "platt", "--out", str(tmp_path / "x")])
    assert e.value.code == 2


def test_evaluate_contract(dataset, tmp_path, capsys):
    run(capsys, "calibrate", "--data", dataset, "--method", "ts", "--out", tmp_path / "t")
    code, out, _ = run(capsys, "evaluate", "--data", dataset, "--probs", tmp_path / "t" / "probs.csv",
                       "--metrics", "global,degree,class,subgraph", "--out", tmp_path / "e")
    assert code == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert {"global_ece", "degree_ece", "class_ece", "subgraph_ece"} <= set(metrics)
    assert (tmp_path / "e" / "partition.csv").exists()
    rows = list(csv.DictReader(open(tmp_path / "e" / "reliability.csv")))
    n = sum(int(r["count"]) for r in rows)
    total = sum(int(r["count"]) / n * abs(float(r["acc"]) - float(r["conf"])) for r in rows)
    assert abs(total - metrics["global_ece"]) <= 1e-12


def test_evaluate_perfect_and_null(dataset, tmp_path, capsys):
    labels = [int(x) for x in (dataset / "labels.csv").read_text().split()[1:]]
    perfect = np.eye(2)[labels]
    write_logits(tmp_path / "p.csv", perfect, tag="probs")
    code, out, err = run(capsys, "evaluate", "--data", dataset, "--probs", tmp_path / "p.csv",
                         "--metrics", "global,degree", "--fraction", 0.01, "--split", "labeled",
                         "--out", tmp_path / "e")
    assert code == 0
    m = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert m["global_ece"] < 1e-9
    if m["degree_ece"] is None:
        assert "degree_ece" in err


def test_crossval_grid_and_resume(dataset, tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"lam": [0.1, 1, 10, 100], "n_groups": [4, 8, 12, 16]}))
    code, out, _ = run(capsys, "crossval", "--data", dataset, "--grid", grid, "--epochs", 1,
                       "--out", tmp_path / "cv")
    assert code == 0
    cv = json.loads((tmp_path / "cv" / "cv.json").read_text())
    assert len(cv["configs"]) == 16 and all(len(r) == 3 for r in cv["fold_ece"])
    lines = (tmp_path / "cv" / "folds.jsonl").read_text().splitlines()
    assert len(lines) == 48
    # simulate an interruption: drop the last records and resume
    (tmp_path / "cv" / "folds.jsonl").write_text("\n".join(lines[:20]) + "\n")
    code, out, _ = run(capsys, "crossval", "--data", dataset, "--grid", grid, "--epochs", 1,
                       "--out", tmp_path / "cv")
    assert json.loads(out)["resumed_folds"] == 20
    assert json.loads((tmp_path / "cv" / "cv.json").read_text()) == cv


def test_crossval_singleton_and_empty(dataset, tmp_path, capsys):
    grid = tmp_path / "g.json"
    grid.write_text(json.dumps([{"lam": 1.0, "epochs": 1}]))
    code, out, _ = run(capsys, "crossval", "--data", dataset, "--grid", grid, "--out", tmp_path / "cv")
    assert code == 0 and json.loads(out)["selected"] == 0
    grid.write_text("[]")
    assert run(capsys, "crossval", "--data", dataset, "--grid", grid, "--out", tmp_path / "cv2")[0] == 2


def test_diagnose(dataset, tmp_path, capsys):
    run(capsys, "calibrate", "--data", dataset, "--method", "advcali", "--epochs", 3, "--out", tmp_path / "a")
    code, out, _ = run(capsys, "diagnose", "--trace", tmp_path / "a" / "trace.csv", "--out", tmp_path / "d")
    assert code == 0 and json.loads(out)["epochs"] == 3
    assert (tmp_path / "d" / "diagnostics.csv").read_text().startswith("epoch,degree_std,class0_std\n")
    assert run(capsys, "diagnose", "--trace", tmp_path / "none.csv", "--out", tmp_path / "d2")[0] == 2


def test_input_errors(dataset, tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    for f in dataset.iterdir():
        (bad / f.name).write_bytes(f.read_bytes())
    (bad / "edges.tsv").write_text("0\tx\n")
    code, _, err = run(capsys, "calibrate", "--data", bad, "--method", "ts", "--out", tmp_path / "o")
    assert code == 3 and "edges.tsv:1:" in err
    assert run(capsys, "calibrate", "--data", tmp_path / "nowhere", "--method", "ts", "--out", tmp_path / "o")[0] == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(capsys, "calibrate", "--data", dataset, "--method", "ts", "--out", blocker / "sub")[0] == 5
