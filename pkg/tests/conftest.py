from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import pytest

from filebus import engine
from filebus.clock import FixedClock
from filebus.workspace_bus import TRACE_LOG, Workspace


def fixture_dir(name: str) -> Path:
    return Path(str(resources.files("filebus") / "fixtures" / name))


def fixture_config(name: str, workspace: Path, **overrides) -> engine.RunConfig:
    cfg = engine.load_config(fixture_dir(name) / "config.toml")
    cfg = engine.RunConfig.from_dict({**cfg.to_dict(), "workspace": str(workspace), "fixed_clock": True})
    return engine.apply_overrides(cfg, **overrides)


def read_trace(root: Path) -> list[dict]:
    path = Path(root) / TRACE_LOG
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def read_checkpoint(root: Path) -> dict:
    return engine.read_checkpoint(root)


@pytest.fixture
def ws(tmp_path):
    return Workspace.init(tmp_path / "ws", clock=FixedClock())


# acceptance reporting: one line per criterion at the end of the run
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
