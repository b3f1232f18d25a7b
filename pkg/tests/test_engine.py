from __future__ import annotations

import json

import pytest

from filebus import engine
from filebus.errors import CheckpointCorrupt, ConfigError, ConfigMismatch, NoCheckpoint
from filebus.model_backend import ModelResponse, ScriptedBackend, load_scenario
from filebus.workspace_bus import TRACE_LOG, Workspace

from conftest import fixture_config, fixture_dir, read_trace


def test_load_config_resolves_paths():
    cfg = engine.load_config(fixture_dir("toy") / "config.toml")
    assert cfg.scenario == str(fixture_dir("toy") / "scenario.jsonl")
    assert cfg.budget.wall_clock_limit == 3600
    assert cfg.fixed_clock


def test_config_errors(tmp_path):
    bad = tmp_path / "c.toml"
    bad.write_text('goal = "g"\nworkspace = "w"\nbackend = "scripted"\n')
    with pytest.raises(ConfigError):
        engine.load_config(bad)
    bad.write_text('goal = "g"\nworkspace = "w"\nscenario = "s"\ncolour = "blue"\n')
    with pytest.raises(ConfigError):
        engine.load_config(bad)
    bad.write_text("goal = ")
    with pytest.raises(ConfigError):
        engine.load_config(bad)
    with pytest.raises(ConfigError):
        engine.RunConfig("g", "w", scenario="s", budget=engine.Budget(wall_clock_limit=0))


def test_overrides():
    cfg = engine.load_config(fixture_dir("toy") / "config.toml", budget_s=5, step_limit=2, ablation="flat", seed=9)
    assert (cfg.budget.wall_clock_limit, cfg.budget.step_limit, cfg.orchestration, cfg.seed) == (5, 2, "flat", 9)
    assert engine.apply_overrides(cfg, step_limit="keep").budget.step_limit == 2
    assert engine.apply_overrides(cfg, step_limit=None).budget.step_limit is None
    assert engine.set_ablation(cfg, "filebus-off").ablation == "filebus-off"
    with pytest.raises(ConfigError):
        engine.set_ablation(cfg, "nope")


@pytest.mark.parametrize("elapsed,steps,limit,expect", [
    (0, 0, engine.Budget(10, 0), "Halt"),
    (0, 3, engine.Budget(10, 4), "Continue"),
    (10, 0, engine.Budget(10, None), "Halt"),
    (9.99, 100, engine.Budget(10, None), "Continue"),
    (1e9, 1e9, engine.Budget(None, None), "Continue"),
])
def test_enforce_budget(elapsed, steps, limit, expect):
    assert engine.enforce_budget(elapsed, steps, limit) == expect


def test_status_exit_codes():
    assert [engine.RunStatus(k).exit_code for k in ("Completed", "BudgetExhausted", "Failed", "Interrupted")] == [0, 2, 3, 4]


def test_toy_run_invariants(tmp_path, monkeypatch):
    cfg = fixture_config("toy", tmp_path / "ws")
    traces, contexts = [], []
    original = engine.Engine._checkpoint

    def spy(self, status, pending=""):
        original(self, status, pending)
        traces.append((self.ws.root / TRACE_LOG).read_bytes())
        contexts.append(self.context)

    monkeypatch.setattr(engine.Engine, "_checkpoint", spy)
    status = engine.run(cfg)
    assert status.kind == "Completed"
    # trace is append-only across steps
    for a, b in zip(traces, traces[1:]):
        assert b.startswith(a)
    # thin control at every step
    for c in contexts:
        assert c.total_bytes <= len(c.events) * c.cap
        assert c.total_bytes == c.recompute_bytes()
    ws = Workspace.open(tmp_path / "ws")
    assert contexts[-1].total_bytes < ws.artifact_bytes()
    # one tier-1 invocation in flight at a time
    open_ = 0
    for ev in read_trace(tmp_path / "ws"):
        if ev["payload"].get("tier") == 1:
            open_ += 1 if ev["kind"] == "delegate" else -1
            assert open_ in (0, 1)


def test_ingest_and_checkpoint(tmp_path):
    engine.run(fixture_config("toy", tmp_path / "ws"))
    ws = Workspace.open(tmp_path / "ws")
    assert ws.read_artifact("paper_analysis/paper/data.csv").startswith(b"value\n")
    cp = engine.read_checkpoint(tmp_path / "ws")
    assert cp["status"] == "Completed" and cp["step"] == 4
    # resuming a finished run is a no-op
    assert engine.resume(tmp_path / "ws").kind == "Completed"


def test_checkpoint_errors(tmp_path):
    with pytest.raises(NoCheckpoint):
        engine.resume(tmp_path)
    engine.run(fixture_config("toy", tmp_path / "ws", step_limit=1))
    with pytest.raises(ConfigMismatch):
        engine.resume(tmp_path / "ws", ablation="flat")
    cp = tmp_path / "ws" / engine.CHECKPOINT
    cp.write_bytes(cp.read_bytes().replace(b'"step": 1', b'"step": 2'))
    with pytest.raises(CheckpointCorrupt):
        engine.resume(tmp_path / "ws")


def test_failing_specialist_gets_fix_directive(tmp_path):
    status = engine.run(fixture_config("failing", tmp_path / "ws"))
    assert status.kind == "Failed"
    cp = engine.read_checkpoint(tmp_path / "ws")
    directives = [e for e in cp["context"]["events"] if e["type"] == "directive"]
    assert '"mode": "full"' in directives[0]["text"]
    assert '"mode": "fix"' in directives[1]["text"]


def test_orchestrator_malformed_actions(tmp_path):
    class Garbage:
        def complete(self, request):
            return ModelResponse(b"?")

    cfg = fixture_config("toy", tmp_path / "ws")
    status = engine.Engine(cfg, backend=Garbage()).run()
    assert status.kind == "Failed" and "malformed" in status.reason
    assert engine.read_checkpoint(tmp_path / "ws")["step"] == 3


def test_scenario_hole_is_failed(tmp_path):
    scn = tmp_path / "hole.jsonl"
    lines = (fixture_dir("toy") / "scenario.jsonl").read_text().splitlines()
    scn.write_text("\n".join(line for line in lines if '"role": "orchestrator", "turn": 1' not in line) + "\n")
    status = engine.run(fixture_config("toy", tmp_path / "ws", scenario=str(scn)))
    assert status.kind == "Failed" and "NoMatchingRule" in status.reason


def test_interrupt_then_resume(tmp_path):
    cfg = fixture_config("toy", tmp_path / "ws")
    inner = ScriptedBackend(load_scenario(cfg.scenario))
    eng = None

    class Interrupting:
        def complete(self, request):
            if request.role_id == "orchestrator" and request.turn == 2:
                eng._interrupted.set()
            return inner.complete(request)

    eng = engine.Engine(cfg, backend=Interrupting())
    assert eng.run().kind == "Interrupted"
    assert engine.read_checkpoint(tmp_path / "ws")["step"] == 3
    assert engine.resume(tmp_path / "ws").kind == "Completed"


def test_ablation_modes_traced(tmp_path):
    engine.run(fixture_config("continuity", tmp_path / "flat", ablation="flat"))
    kinds = {e["kind"] for e in read_trace(tmp_path / "flat")}
    assert "delegate" not in kinds
    cp = json.loads((tmp_path / "flat" / engine.CHECKPOINT).read_text())
    assert "orchestration=flat filebus=filebus-on" in json.dumps(cp["context"]["events"])
