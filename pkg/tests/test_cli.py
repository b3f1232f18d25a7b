from __future__ import annotations

import json
import shutil
import subprocess
import sys

import pytest

from filebus.cli import main

from conftest import fixture_dir


@pytest.fixture
def toy(tmp_path):
    dst = tmp_path / "toy"
    shutil.copytree(fixture_dir("toy"), dst)
    return dst


def test_run_and_inspect(toy, capsys):
    assert main(["run", "--config", str(toy / "config.toml")]) == 0
    assert capsys.readouterr().out == "status: Completed\n"
    ws = str(toy / "workspace")
    assert main(["map", ws]) == 0
    assert capsys.readouterr().out.startswith("agent/  region")
    assert main(["trace", ws, "--filter", "kind=delegate", "--filter", "role=implementation"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["payload"]["role"] == "implementation"
    assert main(["audit", ws, "--verify"]) == 0
    assert capsys.readouterr().out.startswith("OK ")
    assert main(["audit", ws]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[0])["seq"] == 1


def test_budget_then_resume(toy, capsys):
    assert main(["run", "--config", str(toy / "config.toml"), "--step-limit", "2"]) == 2
    assert "BudgetExhausted" in capsys.readouterr().out
    assert main(["resume", str(toy / "workspace"), "--step-limit", "10"]) == 0


def test_ablation_flag(toy, capsys):
    cont = toy.parent / "cont"
    shutil.copytree(fixture_dir("continuity"), cont)
    assert main(["run", "--config", str(cont / "config.toml"), "--ablation", "filebus-off"]) == 3


def test_scenario_validate(tmp_path, capsys):
    assert main(["scenario", "validate", str(fixture_dir("toy") / "scenario.jsonl")]) == 0
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"match": {"role": "x"}, "respond": {"tool": 1}}\n')
    assert main(["scenario", "validate", str(bad)]) == 5
    assert "line 1" in capsys.readouterr().err


def test_usage_errors_exit_5(tmp_path):
    for argv in (["run"], ["run", "--config", "x", "--bogus"], ["frobnicate"], ["run", "--config", "x", "--ablation", "nope"]):
        with pytest.raises(SystemExit) as ei:
            main(argv)
        assert ei.value.code == 5


def test_config_errors_exit_5(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 5
    assert main(["resume", str(tmp_path)]) == 5
    assert main(["trace", str(tmp_path), "--filter", "nokv"]) == 5


def test_console_script(toy):
    proc = subprocess.run([sys.executable, "-m", "filebus.cli", "run", "--config", str(toy / "config.toml")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == "status: Completed\n"
