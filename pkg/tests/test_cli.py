import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from replaykit import cli, metrics
from replaykit.cli import ConfigError, load_config, main, parse_config

MINIMAL = {
    "dataset": {"n_classes": 4, "dim": 8, "per_class_train": 20, "per_class_test": 10},
    "n_experiences": 2,
    "strategy": {"kind": "replay", "hidden": [16]},
    "memory": 8,
    "hyper": {"learning_rate": 0.05, "epochs": 2},
}


def write_config(tmp_path, tree, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(tree))
    return path


def run_cli(tmp_path, tree, *extra, command="run", out="out"):
    path = write_config(tmp_path, tree)
    return main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])


def test_run_writes_square_matrix(tmp_path):
    assert run_cli(tmp_path, MINIMAL, "--seed", "3") == 0
    rows = (tmp_path / "out" / "matrix.csv").read_text().splitlines()
    values = [float(v) for r in rows for v in r.split(",")]
    assert len(values) == 2 ** 2
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["seed"] == 3 and summary["memory_size"] == 8
    m = np.array(values).reshape(2, 2)
    assert summary["average_accuracy"] == pytest.approx(m[-1].mean())
    assert summary["forgetting"] == pytest.approx([m[0, 0] - m[1, 0]])


def test_unknown_key_exit_2(tmp_path, capsys):
    tree = dict(MINIMAL)
    tree["memroy"] = tree.pop("memory")
    assert run_cli(tmp_path, tree) == 2
    assert "memroy" in capsys.readouterr().err


def test_unknown_nested_key_named(tmp_path, capsys):
    tree = {**MINIMAL, "hyper": {"learning_rat": 0.1}}
    assert run_cli(tmp_path, tree) == 2
    assert "learning_rat" in capsys.readouterr().err


def test_bad_values_exit_2(tmp_path):
    assert run_cli(tmp_path, {**MINIMAL, "policy": {"kind": "middle", "factor": 0.5}}) == 2
    assert run_cli(tmp_path, {**MINIMAL, "memory": [8, 16]}) == 2
    assert run_cli(tmp_path, MINIMAL, "--seed", "1", "--seed", "2") == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_runtime_failure_exit_1(tmp_path, capsys):
    # augmentation on flat features is only detectable once the stream is built
    assert run_cli(tmp_path, {**MINIMAL, "augmentation": {"transforms": ["rotation"]}}) == 1
    assert "NotAnImage" in capsys.readouterr().err


def test_missing_idx_data_exit_3(tmp_path):
    tree = {**MINIMAL, "dataset": {"source": "idx", "train_images": str(tmp_path / "nope"),
                                   "train_labels": str(tmp_path / "nope"), "test_images": str(tmp_path / "nope"),
                                   "test_labels": str(tmp_path / "nope")}}
    assert run_cli(tmp_path, tree) == 3


def test_rerun_is_byte_identical(tmp_path):
    names = ("matrix.csv", "summary.json")
    assert run_cli(tmp_path, MINIMAL) == 0
    first = [(tmp_path / "out" / n).read_bytes() for n in names]
    for n in names:
        (tmp_path / "out" / n).unlink()
    assert run_cli(tmp_path, MINIMAL) == 0
    assert [(tmp_path / "out" / n).read_bytes() for n in names] == first


def test_flags_override_file(tmp_path):
    path = write_config(tmp_path, {**MINIMAL, "seeds": [4], "jobs": 1, "out": "x"})
    cfg = load_config(path, seeds=[9], jobs=2, out="y")
    assert (cfg.seeds, cfg.jobs, cfg.out) == ((9,), 2, "y")
    cfg = load_config(path)
    assert (cfg.seeds, cfg.jobs, cfg.out) == ((4,), 1, "x")
    assert load_config(None).memory == (200,)


def test_config_round_trip(tmp_path):
    tree = {**MINIMAL, "strategy": {"kind": ["replay", "gdumb"], "hidden": [16, 8]},
            "policy": {"kind": ["middle", "decreasing"], "factor": 2.0}, "memory": [4, 8, 16], "seeds": [0, 5],
            "augmentation": {"transforms": ["rotation"], "apply_to": "all"}}
    cfg = parse_config(tree)
    assert parse_config(cfg.to_dict()) == cfg
    assert parse_config(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert run_cli(tmp_path, MINIMAL) == 0
    echoed = json.loads((tmp_path / "out" / "summary.json").read_text())["config"]
    assert parse_config(echoed) == load_config(write_config(tmp_path, MINIMAL, "again.yaml"), out=tmp_path / "out")


SWEEP = {**MINIMAL, "memory": [4, 8, 16], "seeds": [0, 1]}


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_sweep_rows_and_reaggregation(tmp_path):
    assert run_cli(tmp_path, SWEEP, command="sweep") == 0
    rows = read_rows(tmp_path / "out" / "sweep.csv")
    assert len(rows) == 3 * 2
    assert list(rows[0]) == ["strategy", "memory_size", "seed", "avg_accuracy"]
    curve = json.loads((tmp_path / "out" / "curve.json").read_text())
    points = curve["series"]["replay/balanced"]["points"]
    for p in points:
        vals = [float(r["avg_accuracy"]) for r in rows if int(r["memory_size"]) == p["memory_size"]]
        mean = sum(vals) / len(vals)
        std = math.sqrt(sum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
        assert p["mean"] == pytest.approx(mean, abs=1e-12)
        assert p["std"] == pytest.approx(std, abs=1e-12)
        assert p["n_seeds"] == 2


def _fake_curve(monkeypatch, fn):
    monkeypatch.setattr(metrics, "run_cell", lambda strategy, spec, m, *a, **k: fn(m))


def test_sweep_elbow_present_for_knee(tmp_path, monkeypatch):
    _fake_curve(monkeypatch, lambda m: min(1.0, m / 8))
    tree = {**SWEEP, "memory": [1, 2, 4, 8, 16, 32, 64]}
    assert run_cli(tmp_path, tree, command="sweep") == 0
    elbow = json.loads((tmp_path / "out" / "curve.json").read_text())["series"]["replay/balanced"]["elbow"]
    assert elbow is not None and elbow["memory_size"] == 8


def test_sweep_elbow_absent_for_collinear(tmp_path, monkeypatch):
    _fake_curve(monkeypatch, lambda m: math.log2(m) / 10)
    tree = {**SWEEP, "memory": [1, 2, 4, 8, 16]}
    assert run_cli(tmp_path, tree, command="sweep") == 0
    assert json.loads((tmp_path / "out" / "curve.json").read_text())["series"]["replay/balanced"]["elbow"] is None


def test_sweep_series_labels(tmp_path, monkeypatch):
    _fake_curve(monkeypatch, lambda m: 0.5)
    tree = {**SWEEP, "strategy": {"kind": ["replay", "gdumb"]}, "policy": {"kind": ["balanced", "middle"]}}
    assert run_cli(tmp_path, tree, command="sweep") == 0
    series = json.loads((tmp_path / "out" / "curve.json").read_text())["series"]
    assert sorted(series) == ["gdumb", "replay/balanced", "replay/middle"]


def test_report_table(tmp_path, monkeypatch, capsys):
    _fake_curve(monkeypatch, lambda m: 0.5 + m / 100)
    tree = {**SWEEP, "memory": [10, 20], "policy": {"kind": ["balanced", "middle"]}}
    assert run_cli(tmp_path, tree, command="sweep") == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path / "out")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["memory", "replay/balanced", "replay/middle"]
    assert len(lines) == 3
    cells = [line.split()[1:] for line in lines[1:]]
    assert all(len(r) == 2 and all("±" in c for c in r) for r in cells)


def test_report_matches_files(tmp_path, capsys):
    assert run_cli(tmp_path, SWEEP, command="sweep") == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path / "out")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()[1:]
    curve = json.loads((tmp_path / "out" / "curve.json").read_text())["series"]["replay/balanced"]["points"]
    for line, p in zip(lines, curve):
        size, cell = line.split()
        mean, std = (float(v) for v in cell.split("±"))
        assert int(size) == p["memory_size"]
        assert mean == round(100 * p["mean"], 2) and std == round(100 * p["std"], 2)


def test_report_from_run_summaries(tmp_path, capsys):
    for seed in (0, 1):
        assert run_cli(tmp_path, MINIMAL, "--seed", str(seed), out=f"res/s{seed}") == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path / "res")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1].split()[0] == "8"


def test_report_empty_dir_exit_3(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["report", str(tmp_path / "empty")]) == 3
    assert main(["report", str(tmp_path / "absent")]) == 3


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "replaykit", "report", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 3 and "data error" in proc.stderr


def test_parse_config_rejects_bad_types():
    with pytest.raises(ConfigError):
        parse_config({"seeds": [-1]})
    with pytest.raises(ConfigError):
        parse_config({"n_experiences": 0})
    with pytest.raises(ConfigError):
        parse_config({"dataset": [1, 2]})


def test_sweep_rerun_is_byte_identical(tmp_path):
    assert run_cli(tmp_path, SWEEP, command="sweep", out="o") == 0
    first = [(tmp_path / "o" / n).read_bytes() for n in ("sweep.csv", "curve.json")]
    assert run_cli(tmp_path, SWEEP, "--jobs", "2", command="sweep", out="o") == 0
    second = [(tmp_path / "o" / n).read_bytes() for n in ("sweep.csv", "curve.json")]
    # the jobs setting is echoed in the config block; the numbers must not move
    assert first[0] == second[0]
    a, b = (json.loads(x) for x in (first[1], second[1]))
    assert a["series"] == b["series"]
