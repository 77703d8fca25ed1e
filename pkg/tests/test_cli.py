import json
import subprocess
import sys

import pytest

from msmcalib.cli import main
from msmcalib.dataset import FRAME_SCHEMA, LINES_SCHEMA, POSES_SCHEMA, read_json

CONFIG = {"scan": {"n_pulses": 24, "n_fast_pulses": 12, "fast_frames": 2}}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(CONFIG))
    data, out = root / "data", root / "run"
    steps = [
        ["simulate", "--config", str(cfg), "--out", str(data), "--seed", "3"],
        ["estimate-beams", str(data), "--run", str(out)],
        ["estimate-poses", str(data), "--run", str(out), "--holdout-beam", "1"],
        ["estimate-frame", str(out / "poses.json")],
        ["calibrate-hall", str(data), "--run", str(out), "--repeats", "3"],
        ["report", str(out), "--data", str(data)],
    ]
    codes = [main(s) for s in steps]
    return root, data, out, codes


def test_pipeline_round_trip(run):
    _, data, out, codes = run
    assert codes == [0] * 6
    read_json(str(out / "beam_lines.json"), LINES_SCHEMA)
    poses = read_json(str(out / "poses.json"), POSES_SCHEMA)
    frame = read_json(str(out / "frame.json"), FRAME_SCHEMA)
    assert poses["holdout_beam"] == 1 and poses["estimation_beams"] == [0, 2]
    assert {p["segment"] for p in poses["pulses"]} == {"scan", "fast", "static"}
    assert len(frame["poses"]) == len(poses["pulses"])
    hall = read_json(str(out / "hallmodel.json"))
    assert hall["model"]["kind"] == "sine" and set(hall["evaluation"]) == {"linear", "sine"}
    report = (out / "report.md").read_text()
    assert "Hall sensor calibration" in report and "Ground-truth deltas" in report
    assert (out / "scan_pattern.svg").exists() and (out / "pose_traces.svg").exists()


def test_corrupt_json_names_path(run, tmp_path, capsys):
    _, data, _, _ = run
    for f in data.iterdir():
        (tmp_path / f.name).write_bytes(f.read_bytes())
    (tmp_path / "scan.json").write_text('{"frames": [')
    assert main(["estimate-poses", str(tmp_path)]) == 2
    assert str(tmp_path / "scan.json") in capsys.readouterr().err


def test_absent_holdout_beam(run, tmp_path, capsys):
    _, data, _, _ = run
    assert main(["estimate-poses", str(data), "--run", str(tmp_path), "--holdout-beam", "7"]) == 2
    assert "--holdout-beam" in capsys.readouterr().err


def test_missing_inputs(tmp_path, capsys):
    assert main(["estimate-beams", str(tmp_path / "nowhere")]) == 2
    assert main(["estimate-frame", str(tmp_path / "poses.json")]) == 2
    assert main(["report", str(tmp_path)]) == 2
    assert "poses.json" in capsys.readouterr().err


def test_bad_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scan": {"warp_speed": 9}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2


def test_seed_from_environment(run, tmp_path, monkeypatch):
    root, _, _, _ = run
    monkeypatch.setenv("MSMCALIB_SEED", "3")
    assert main(["simulate", "--config", str(root / "cfg.json"), "--out", str(tmp_path)]) == 0
    assert read_json(str(tmp_path / "ground_truth.json"))["seed"] == 3
    monkeypatch.setenv("MSMCALIB_SEED", "three")
    assert main(["simulate", "--out", str(tmp_path / "x")]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "msmcalib", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "estimate-poses" in r.stdout
