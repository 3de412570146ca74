import json
import os
import re
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from roadsense.cli import main


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def field(text, name):
    return float(re.search(rf"{name}=([^\s]+)", text).group(1))


@pytest.fixture
def short_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"fleet": {"duration": 3.0}, "road": {"kind": "sinusoid"}}))
    return path


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code, _, err = run(["simulate", "--config", str(missing)], capsys)
    assert code != 0
    assert str(missing) in err


def test_unknown_keys_are_errors(tmp_path, capsys):
    for doc in ({"flet": {}}, {"fleet": {"n_agnts": 3}}, {"road": {"amplitud": 1}}, {"simulate": {"k": 1}}):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        code, _, err = run(["simulate", "--config", str(path), "--out", str(tmp_path)], capsys)
        assert code == 2, doc
        assert "unknown" in err


def test_bad_road_flag(tmp_path, capsys):
    code, _, _ = run(["simulate", "--road", "cobbles", "--out", str(tmp_path)], capsys)
    assert code == 2


def test_simulate_writes_log_and_dob_helps(short_config, tmp_path, capsys):
    code, out, _ = run(["simulate", "--config", str(short_config), "--out", str(tmp_path)], capsys)
    assert code == 0
    log = Path(re.search(r"log=(.+)", out).group(1))
    assert log.stat().st_size > 0
    assert log.read_text().splitlines()[0].startswith("t,z_r,z_s")
    with_dob = field(out, "rms_z_s_m")
    code, out, _ = run(["simulate", "--config", str(short_config), "--no-dob", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert field(out, "rms_z_s_m") > with_dob


def test_simulate_from_road_file(tmp_path, capsys):
    from roadsense.roads import RoadSpec, generate, save_road

    road = tmp_path / "road.csv"
    save_road(generate(RoadSpec(duration=2.0)), road)
    code, out, _ = run(["simulate", "--road", f"file:{road}", "--out", str(tmp_path)], capsys)
    assert code == 0 and "rmse_mm=" in out


def test_fleet_smoke_is_fast_and_deterministic(short_config, tmp_path, capsys):
    start = time.perf_counter()
    code, out, _ = run(["fleet", "--config", str(short_config), "--agents", "3", "--out", str(tmp_path)], capsys)
    assert time.perf_counter() - start < 10.0
    assert code == 0
    run_dir = Path(re.search(r"run_dir=(.+)", out).group(1))
    first = {p.relative_to(run_dir): p.read_bytes() for p in run_dir.rglob("*") if p.is_file()}
    code, _, _ = run(["fleet", "--config", str(short_config), "--agents", "3", "--out", str(tmp_path)], capsys)
    assert code == 0
    second = {p.relative_to(run_dir): p.read_bytes() for p in run_dir.rglob("*") if p.is_file()}
    assert set(first) == set(second)
    assert {"summary.csv", "config.json", "metadata.json", "agent_1.json", "logs/agent_3.csv"} <= {
        str(k) for k in first
    }
    for name in first:
        if name.name != "metadata.json":
            assert first[name] == second[name], name


def test_learning_beats_baseline(short_config, tmp_path, capsys):
    finals = {}
    for flag in ("--no-learning", "--learning"):
        code, out, _ = run(
            ["fleet", "--config", str(short_config), "--agents", "4", flag, "--out", str(tmp_path)], capsys
        )
        assert code == 0
        finals[flag] = field(out, "final_rmse_mm")
    assert finals["--learning"] < finals["--no-learning"]


def test_report_on_fresh_run(short_config, tmp_path, capsys):
    code, out, _ = run(["fleet", "--config", str(short_config), "--agents", "12", "--out", str(tmp_path)], capsys)
    assert code == 0
    run_dir = Path(re.search(r"run_dir=(.+)", out).group(1))
    code, out, _ = run(["report", str(run_dir)], capsys)
    assert code == 0
    figs = run_dir / "figures"
    for stem in ("rmse", "first_last_error", "estimates", "learning_signals"):
        assert (figs / f"{stem}.csv").exists() and (figs / f"{stem}.svg").exists()
    assert 0.0 < field(out, "fitted_rate") < 1.0


def test_report_on_empty_dir(tmp_path, capsys):
    code, _, err = run(["report", str(tmp_path)], capsys)
    assert code != 0 and err


def test_output_root_from_environment(short_config, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ROADSENSE_OUT", str(tmp_path / "envroot"))
    code, out, _ = run(["fleet", "--config", str(short_config), "--agents", "1"], capsys)
    assert code == 0
    assert str(tmp_path / "envroot") in out


def test_flags_override_file(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"fleet": {"duration": 2.0, "n_agents": 5, "alpha": 0.3}}))
    code, out, _ = run(["fleet", "--config", str(path), "--agents", "2", "--alpha", "0.4", "--out", str(tmp_path)], capsys)
    assert code == 0
    run_dir = Path(re.search(r"run_dir=(.+)", out).group(1))
    cfg = json.loads((run_dir / "config.json").read_text())["fleet"]
    assert cfg["n_agents"] == 2 and cfg["alpha"] == 0.4 and cfg["duration"] == 2.0
    summary = np.loadtxt(run_dir / "summary.csv", delimiter=",", skiprows=1, usecols=(0, 1, 2), ndmin=2)
    assert summary.shape[0] == 2


def test_console_entry_point(tmp_path):
    env = dict(os.environ, ROADSENSE_OUT=str(tmp_path))
    proc = subprocess.run(
        [sys.executable, "-m", "roadsense.cli", "simulate", "--config", str(tmp_path / "missing.json")],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 2
    assert "missing.json" in proc.stderr
