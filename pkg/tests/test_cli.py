import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from eqgnn.cli import main, parse_seeds
from eqgnn.graph_data import build_dataset, save_dataset, write_manifest
from eqgnn.optim import load_checkpoint

QUICK = ["--max-epochs", "15", "--hidden", "8,8", "--disc-hidden", "8", "--lr", "0.01"]


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    assert main(["make-toy", "--out", str(d), "--nodes", "120", "--features", "6"]) == 0
    return str(d / "manifest.json")


def test_parse_seeds():
    assert parse_seeds("3") == [0, 1, 2]
    assert parse_seeds("4,9") == [4, 9]
    assert parse_seeds("5-7") == [5, 6, 7]


def test_train_writes_artifacts(manifest, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--manifest", manifest, "--out", str(out), "--seeds", "2",
                 "--lambda", "0.5", "--deterministic", *QUICK]) == 0
    for s in (0, 1):
        assert (out / f"seed_{s}" / "history.csv").read_text().startswith("epoch,L_task")
        json.loads((out / f"seed_{s}" / "metrics.json").read_text())
        arrays, meta = load_checkpoint(str(out / f"seed_{s}" / "checkpoint.npz"))
        assert meta["split_seed"] == s and meta["hidden"] == [8, 8] and meta["standardize"] is True
        assert meta["config"]["lam"] == 0.5
        assert set(arrays) == {"W1", "b1", "W2", "b2", "W_head", "b_head"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["runs"] == 2 and summary["seeds"] == [0, 1]
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert rows[0]["loss_variant"] == "permutation"
    assert "delta_eo" in capsys.readouterr().out


def test_manifest_train_section_and_precedence(manifest, tmp_path):
    doc = json.load(open(manifest))
    doc["train"] = {"lambda": 2.0, "gamma": 7.0, "max_epochs": 3, "hidden": [4, 4]}
    doc["nodes"] = os.path.join(os.path.dirname(manifest), doc["nodes"])
    doc["edges"] = os.path.join(os.path.dirname(manifest), doc["edges"])
    m2 = tmp_path / "m.json"
    m2.write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert main(["train", "--manifest", str(m2), "--out", str(out), "--gamma", "3"]) == 0
    cfg = json.loads((out / "summary.json").read_text())["config"]
    assert cfg["lam"] == 2.0 and cfg["gamma"] == 3.0 and cfg["max_epochs"] == 3 and cfg["hidden"] == [4, 4]
    assert cfg["lr"] == 1e-3


def test_bad_config_leaves_no_output(manifest, tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["train", "--manifest", manifest, "--out", str(out), "--lambda", "-1"]) != 0
    assert not out.exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".eqgnn-")]
    assert "error" in capsys.readouterr().err


def test_missing_manifest_fails(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) != 0


def test_training_failure_leaves_no_output(manifest, tmp_path, monkeypatch):
    import eqgnn.cli as cli

    def boom(*a, **k):
        raise ValueError("diverged")

    monkeypatch.setattr(cli, "run_many", boom)
    out = tmp_path / "x"
    assert main(["train", "--manifest", manifest, "--out", str(out)]) != 0
    assert not out.exists()


def test_lambda_zero_row(manifest, tmp_path, capsys):
    assert main(["train", "--manifest", manifest, "--out", str(tmp_path / "g"), "--lambda", "0", *QUICK]) == 0
    assert "GCN" in capsys.readouterr().out


def test_grid_rows(manifest, tmp_path):
    out = tmp_path / "grid"
    assert main(["grid", "--manifest", manifest, "--out", str(out), "--seeds", "2",
                 "--lambda-grid", "0,1", "--gamma-grid", "1,50", *QUICK]) == 0
    rows = list(csv.DictReader(open(out / "grid.csv")))
    assert len(rows) == 4 and {r["runs"] for r in rows} == {"2"}


def test_eval_reproduces_training_metrics(manifest, tmp_path):
    run = tmp_path / "r"
    assert main(["train", "--manifest", manifest, "--out", str(run), "--lambda", "1", *QUICK]) == 0
    out = tmp_path / "eval.json"
    assert main(["eval", "--manifest", manifest, "--checkpoint", str(run / "seed_0" / "checkpoint.npz"),
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text()) == json.loads((run / "seed_0" / "metrics.json").read_text())


def test_eval_rejects_foreign_checkpoint(manifest, tmp_path):
    run = tmp_path / "r"
    assert main(["train", "--manifest", manifest, "--out", str(run), *QUICK]) == 0
    other = tmp_path / "other"
    assert main(["make-toy", "--out", str(other), "--nodes", "50", "--features", "6"]) == 0
    assert main(["eval", "--manifest", str(other / "manifest.json"),
                 "--checkpoint", str(run / "seed_0" / "checkpoint.npz")]) != 0


def test_inspect_node(manifest, tmp_path, capsys):
    ck = []
    for lam in ("0", "1"):
        run = tmp_path / f"l{lam}"
        assert main(["train", "--manifest", manifest, "--out", str(run), "--lambda", lam, *QUICK]) == 0
        ck += ["--checkpoint", str(run / "seed_0" / "checkpoint.npz")]
    capsys.readouterr()
    assert main(["inspect-node", "--manifest", manifest, "--node", "3", "--json", *ck]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert len(rep["probabilities"]) == 2
    for entry in rep["probabilities"].values():
        assert abs(sum(entry["p"]) - 1.0) <= 1e-6
    assert rep["neighbourhood_size"] >= 1
    assert main(["inspect-node", "--manifest", manifest, "--node", "no-such-node"]) != 0


def test_inspect_isolated_node(tmp_path, capsys):
    ds = build_dataset(np.eye(5), [0, 1, 0, 1, 0], [0, 1, 0, 1, 1],
                       np.array([[0, 1], [1, 2], [2, 3]]), class_count=2)
    schema = save_dataset(ds, tmp_path / "n.csv", tmp_path / "e.txt")
    write_manifest(tmp_path / "m.json", "n.csv", "e.txt", schema)
    assert main(["inspect-node", "--manifest", str(tmp_path / "m.json"), "--node", "4", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["neighbourhood_size"] == 1 and rep["same_sensitive_fraction"] is None
    assert main(["inspect-node", "--manifest", str(tmp_path / "m.json"), "--node", "0", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["neighbourhood_size"] == 3


def test_synth_smoke(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["synth", "--n", "100", "--runs", "2", "--epochs", "20", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["test", "Shift", "Rotation"] and [r[0] for r in rows[1:]] == \
        ["T-test", "Paired T-test", "C2ST", "Permutation"]


def test_synth_identical(capsys):
    assert main(["synth", "--n", "200", "--runs", "1", "--epochs", "20", "--identical"]) == 0
    rows = dict(r.split(",") for r in capsys.readouterr().out.strip().splitlines()[1:])
    assert float(rows["Paired T-test"]) == 1.0
    assert all(float(v) >= 0.05 for v in rows.values())


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--trials", "2", "--component", "classifier", "--component", "covariance"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("component,") and len(lines) == 3
    assert main(["gradcheck", "--component", "nope"]) != 0


def test_console_script_runs(tmp_path):
    res = subprocess.run([sys.executable, "-m", "eqgnn.cli", "synth", "--n", "50", "--runs", "1",
                          "--epochs", "5"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("test,Shift,Rotation")


def test_reruns_are_byte_identical(manifest, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"r{i}"
        assert main(["train", "--manifest", manifest, "--out", str(out), "--seeds", "2",
                     "--lambda", "0.3", "--deterministic", *QUICK]) == 0
        outs.append(out)
    for rel in ("summary.json", "summary.csv", "seed_0/metrics.json", "seed_1/history.csv",
                "seed_1/checkpoint.npz"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
