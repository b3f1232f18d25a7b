from __future__ import annotations

import json

import pytest

from filebus.agent_core import (
    AGENT,
    COMPLETED,
    FAILED,
    NATIVE,
    AgentProfile,
    ControlContext,
    Directive,
    Runtime,
    ToolContext,
    ToolInvocation,
    ToolRegistry,
    append_context,
    capped_note,
    encoded_len,
    make_summary,
    note_event,
)
from filebus.clock import FixedClock
from filebus.errors import DuplicateToolId, OversizeEvent, TierViolation
from filebus.model_backend import ScriptedBackend, load_scenario
from filebus.native_tools import register_native_tools
from filebus.role_profiles import load_catalog, make_helper
from filebus.workspace_bus import PermissionScope

CAT = load_catalog()


def rule(role, respond, turn=None, **guards):
    m = {"role": role, **guards}
    if turn is not None:
        m["turn"] = turn
    return {"match": m, "respond": respond}


def fin(status="completed", summary="done", artifacts=()):
    return {"finish": {"status": status, "summary": summary, "artifacts": list(artifacts)}}


def make_runtime(ws, tmp_path, rules, filebus=True, traces=None, step_cap=64):
    path = tmp_path / "scn.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in rules))
    reg = ToolRegistry()
    register_native_tools(reg)
    for p in CAT.tier(1):
        reg.register_agent_as_tool(p)
    sink = traces if traces is not None else []
    return Runtime(ws, ScriptedBackend(load_scenario(path)), reg, subagents=CAT.subagents(), filebus=filebus,
                   trace=lambda k, p: sink.append((k, p)), clock=FixedClock(), step_cap=step_cap)


def orch_ctx(rt):
    return ToolContext(rt, CAT.orchestrator, rt.workspace, "orchestrator", rt.build_map(), 1, ("orchestrator",))


def test_summary_truncation():
    s = make_summary("x" * 10_000, COMPLETED, ("a",), "r", "i", cap=512)
    assert s.byte_len <= 512
    assert s.text.endswith(" [truncated]")
    assert make_summary("short", COMPLETED, cap=512).text == "short"


def test_context_append_and_cap():
    c = ControlContext("g", cap=256)
    c2 = append_context(c, note_event("hi"))
    assert c.events == () and len(c2.events) == 1
    assert c2.total_bytes == encoded_len(note_event("hi")) == c2.recompute_bytes()
    with pytest.raises(OversizeEvent):
        append_context(c2, note_event("x" * 300))
    assert encoded_len(capped_note("é" * 500, 256)) <= 256


def test_profile_validation():
    with pytest.raises(TierViolation):
        AgentProfile("x", 3, PermissionScope("x"))
    with pytest.raises(TierViolation):
        AgentProfile("x", 2, PermissionScope("x"), subagent_role_ids=("y",))


def test_registry_rules():
    reg = ToolRegistry()
    with pytest.raises(TierViolation):
        reg.register_agent_as_tool(CAT.orchestrator)
    reg.register_agent_as_tool(CAT.profiles["comprehension"])
    with pytest.raises(DuplicateToolId):
        reg.register_agent_as_tool(CAT.profiles["comprehension"])
    register_native_tools(reg)
    tier0 = [d.tool_id for d in reg.action_space(CAT.orchestrator)]
    assert "comprehension" in tier0 and "read" in tier0
    assert "comprehension" not in [d.tool_id for d in reg.action_space(CAT.orchestrator, include_agents=False)]
    assert "comprehension" not in [d.tool_id for d in reg.action_space(CAT.profiles["implementation"])]


def test_native_and_agent_share_dispatcher(ws, tmp_path):
    rt = make_runtime(ws, tmp_path, [rule("comprehension", fin())])
    ctx = orch_ctx(rt)
    visible = rt.registry.action_space(CAT.orchestrator)
    native = rt.registry.dispatch(ToolInvocation("search", {"query": "toy dataset mean"}, "c1"), ctx, visible)
    agent = rt.registry.dispatch(ToolInvocation("comprehension", {"directive": "read the paper"}, "c2"), ctx, visible)
    assert (native.kind, agent.kind) == (NATIVE, AGENT)
    assert native.shape() == agent.shape()
    assert native.status == agent.status == COMPLETED
    assert agent.summary is not None and agent.summary.invocation_id == "c2"


def test_tier1_cannot_call_agent_tools(ws, tmp_path):
    rt = make_runtime(ws, tmp_path, [
        rule("implementation", {"tool": "comprehension", "args": {"directive": "help"}}, 0),
        rule("implementation", fin(), 1, transcript_contains="TierViolation"),
    ])
    s, _ = rt.invoke_specialist(CAT.profiles["implementation"], Directive("go", "orchestrator", invocation_id="i"), None)
    assert s.status == COMPLETED


def test_spawn_and_depth(ws, tmp_path):
    traces = []
    rt = make_runtime(ws, tmp_path, [
        rule("comprehension", {"tool": "spawn", "args": {"tasks": [
            {"role": "structure_extractor", "directive": "a"}, {"role": "algorithm_analyst", "directive": "b"}]}}, 0),
        rule("comprehension", fin(summary="merged"), 1),
        # the analyst needs two turns, the extractor one: extractor's summary comes first
        rule("algorithm_analyst", {"tool": "read", "args": {"path": "submission/none"}}, 0),
        rule("algorithm_analyst", fin(summary="analysed"), 1),
        rule("structure_extractor", {"tool": "spawn", "args": {"role": "explorer", "directive": "deeper"}}, 0,
             transcript_contains="NEVER"),
        rule("structure_extractor", fin(summary="extracted"), 0),
    ], traces=traces)
    result = rt.registry.dispatch(
        ToolInvocation("comprehension", {"directive": "analyse"}, "c1"), orch_ctx(rt), rt.registry.action_space(CAT.orchestrator)
    )
    assert result.status == COMPLETED
    subs = [p["role"] for k, p in traces if k == "summary"]
    assert subs == ["structure_extractor", "algorithm_analyst"]
    assert max(p["depth"] for k, p in traces if "depth" in p) == 3


def test_tier2_spawn_is_violation(ws, tmp_path):
    traces = []
    rt = make_runtime(ws, tmp_path, [
        rule("explorer", {"tool": "spawn", "args": {"role": "explorer", "directive": "deeper"}}, 0),
        rule("explorer", fin(summary="saw TierViolation"), 1, transcript_contains="TierViolation"),
    ], traces=traces)
    s, _ = rt.spawn_subagent(CAT.profiles["experimentation"], "explorer", Directive("x", "experimentation", invocation_id="e"),
                             None)
    assert s.text == "saw TierViolation"
    assert any(p.get("error") == "TierViolation" for _, p in traces)


def test_unknown_subagent(ws, tmp_path):
    rt = make_runtime(ws, tmp_path, [
        rule("implementation", {"tool": "spawn", "args": {"role": "explorer", "directive": "x"}}, 0),
        rule("implementation", fin(), 1, transcript_contains="UnknownSubagent"),
    ])
    s, _ = rt.invoke_specialist(CAT.profiles["implementation"], Directive("go", "orchestrator", invocation_id="i"), None)
    assert s.status == COMPLETED


def test_denial_fails_summary(ws, tmp_path):
    rt = make_runtime(ws, tmp_path, [
        rule("comprehension", {"tool": "write", "args": {"path": "submission/x.py", "content": "x"}}, 0),
        rule("comprehension", fin(artifacts=["submission/x.py"]), 1),
    ])
    s, delta = rt.invoke_specialist(CAT.profiles["comprehension"], Directive("go", "orchestrator", invocation_id="i"), None)
    assert s.status == FAILED
    assert "PermissionDenied: OutOfScope" in s.text
    assert s.artifact_pointers == ()
    assert delta.ops == ()


def test_helper_with_write_tool_is_denied(ws, tmp_path):
    helper = make_helper(CAT, "scratch notes", ["write"])
    rt = make_runtime(ws, tmp_path, [
        rule("helper", {"tool": "write", "args": {"path": "agent/notes.md", "content": "x"}}, 0),
        rule("helper", fin(), 1),
    ])
    s, _ = rt.invoke_specialist(helper, Directive("go", "orchestrator", invocation_id="h"), None)
    assert s.status == FAILED and "OutOfScope" in s.text


def test_malformed_and_step_cap(ws, tmp_path):
    rt = make_runtime(ws, tmp_path, [rule("prioritization", {"tool": "read", "args": {"path": "agent/plan.md"}})],
                      step_cap=5)
    s, _ = rt.invoke_specialist(CAT.profiles["prioritization"], Directive("go", "orchestrator", invocation_id="i"), None)
    assert (s.status, s.text) == (FAILED, "step cap reached")

    class Garbage:
        def complete(self, request):
            from filebus.model_backend import ModelResponse
            return ModelResponse(b"not an action")

    rt.backends = {"default": Garbage()}
    s, _ = rt.invoke_specialist(CAT.profiles["prioritization"], Directive("go", "orchestrator", invocation_id="j"), None)
    assert s.status == FAILED and "malformed" in s.text


def test_no_matching_rule_is_failed_summary(ws, tmp_path):
    rt = make_runtime(ws, tmp_path, [rule("comprehension", fin())])
    s, _ = rt.invoke_specialist(CAT.profiles["prioritization"], Directive("go", "orchestrator", invocation_id="i"), None)
    assert s.status == FAILED and "NoMatchingRule" in s.text


def test_filebus_off_keeps_only_submission(ws, tmp_path):
    rt = make_runtime(ws, tmp_path, [
        rule("implementation", {"tool": "write", "args": {"path": "submission/a.py", "content": "a"}}, 0),
        rule("implementation", {"tool": "append", "args": {"path": "agent/impl_log.md", "content": "note"}}, 1),
        rule("implementation", fin(artifacts=["submission/a.py"]), 2),
    ], filebus=False)
    s, delta = rt.invoke_specialist(CAT.profiles["implementation"], Directive("go", "orchestrator", invocation_id="i"), None)
    assert s.status == COMPLETED
    assert ws.read_artifact("submission/a.py") == b"a"
    assert not ws.exists("agent/impl_log.md")
    assert [op.path for op in delta.ops] == ["submission/a.py"]


def test_specialist_sees_map_only_when_filebus_on(ws, tmp_path):
    seen = []

    class Spy:
        def complete(self, request):
            from filebus.model_backend import ModelResponse
            seen.append(request.rendered_map)
            return ModelResponse(json.dumps(fin()).encode())

    for on in (True, False):
        rt = make_runtime(ws, tmp_path, [rule("x", fin())], filebus=on)
        rt.backends = {"default": Spy()}
        ctx = orch_ctx(rt)
        rt.registry.dispatch(ToolInvocation("comprehension", {"directive": "go"}, f"c{on}"), ctx,
                             rt.registry.action_space(CAT.orchestrator))
    assert seen[0].startswith("agent/") and seen[1] == ""


def test_fresh_local_context_per_invocation(ws, tmp_path):
    sentinel = "LOCAL-SENTINEL-93c1"
    rt = make_runtime(ws, tmp_path, [
        rule("comprehension", {"tool": "search", "args": {"query": sentinel}, "thought": sentinel}, 0),
        rule("comprehension", fin(summary="found nothing"), 1),
    ])
    d = Directive("look", "orchestrator", invocation_id="i")
    s1, d1 = rt.invoke_specialist(CAT.profiles["comprehension"], d, None)
    s2, d2 = rt.invoke_specialist(CAT.profiles["comprehension"], d, None)
    assert s1.to_bytes() == s2.to_bytes() and d1.ops_bytes() == d2.ops_bytes()
    assert sentinel not in s1.text
