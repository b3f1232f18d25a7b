"""Control plane: profiles, the Agent-as-Tool registry, specialist loops, context algebra.

Specialists are registered in the same :class:`ToolRegistry` as native tools
and are dispatched by the same function. Each specialist invocation runs a
local loop over a fresh :class:`LocalContext` that is dropped on return; only
the bounded :class:`Summary` and the applied workspace ops leave the call.
"""

from __future__ import annotations

import json
import shutil
import tempfile
import threading
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from filebus.actions import Finish, ToolCall, parse_action
from filebus.clock import WallClock
from filebus.errors import (
    BackendFailure,
    DuplicateToolId,
    MalformedAction,
    OversizeEvent,
    PermissionDenied,
    TierViolation,
    UnknownSubagent,
    UnknownTool,
)
from filebus.model_backend import Backend, ModelRequest
from filebus.workspace_bus import (
    ENGINE_DIR,
    DeltaOp,
    PermissionScope,
    Workspace,
    WorkspaceDelta,
    _walk,
    is_kernel_path,
    pattern_matches,
)
from filebus.workspace_map import WorkspaceMap, build_map

DEFAULT_SUMMARY_CAP = 4 * 1024
DEFAULT_STEP_CAP = 64
DEFAULT_FANOUT = 4
MAX_MALFORMED = 3
TRUNCATION_MARKER = " [truncated]"

COMPLETED = "completed"
BLOCKED = "blocked"
FAILED = "failed"

NATIVE = "native"
AGENT = "agent"

SPAWN_TOOL = "spawn"

DENIAL_REASONS = frozenset({"OutOfScope", "AppendOnlyViolation", "Traversal"})


@dataclass(frozen=True)
class AgentProfile:
    role_id: str
    tier: int
    scope: PermissionScope
    tool_ids: tuple[str, ...] = ()
    subagent_role_ids: tuple[str, ...] = ()
    backend_binding: str = "default"
    system_directive: str = ""
    description: str = ""

    def __post_init__(self) -> None:
        if self.tier not in (0, 1, 2):
            raise TierViolation(f"tier must be 0, 1 or 2, got {self.tier}")
        if self.tier == 2 and self.subagent_role_ids:
            raise TierViolation(f"tier-2 profile {self.role_id} cannot own subagents")


@dataclass(frozen=True)
class Directive:
    text: str
    issuer: str
    stage_label: str = ""
    invocation_id: str = ""
    args: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("directive text must be non-empty")

    def prompt_text(self) -> str:
        """Directive as presented to the backend, structured args appended."""
        if not self.args:
            return self.text
        return f"{self.text}\n[args {json.dumps(self.args, sort_keys=True)}]"


@dataclass(frozen=True)
class Summary:
    text: str
    status: str
    artifact_pointers: tuple[str, ...] = ()
    role_id: str = ""
    invocation_id: str = ""

    def event(self) -> dict:
        return {
            "type": "summary",
            "role": self.role_id,
            "invocation": self.invocation_id,
            "status": self.status,
            "text": self.text,
            "artifacts": list(self.artifact_pointers),
        }

    @property
    def byte_len(self) -> int:
        return encoded_len(self.event())

    def to_bytes(self) -> bytes:
        return encode_event(self.event())


def encode_event(event: dict) -> bytes:
    return json.dumps(event, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encoded_len(event: dict) -> int:
    return len(encode_event(event))


def make_summary(
    text: str,
    status: str,
    artifacts=(),
    role_id: str = "",
    invocation_id: str = "",
    cap: int = DEFAULT_SUMMARY_CAP,
) -> Summary:
    """Build a Summary whose encoded size fits ``cap``, truncating text (then pointers) if needed."""
    s = Summary(text, status, tuple(artifacts), role_id, invocation_id)
    if s.byte_len <= cap:
        return s
    raw = text.encode("utf-8")
    keep = max(0, len(raw) - (s.byte_len - cap) - len(TRUNCATION_MARKER))
    while True:
        cut = raw[:keep].decode("utf-8", errors="ignore") + TRUNCATION_MARKER
        s = Summary(cut, status, tuple(artifacts), role_id, invocation_id)
        if s.byte_len <= cap or keep == 0:
            break
        keep = max(0, keep - max(1, s.byte_len - cap))
    arts = list(artifacts)
    while s.byte_len > cap and arts:
        arts.pop()
        s = Summary(s.text, status, tuple(arts), role_id, invocation_id)
    return s


# control context


@dataclass(frozen=True)
class ControlContext:
    """The orchestrator's append-only event sequence. Appends return a new context."""

    goal: str
    events: tuple[dict, ...] = ()
    total_bytes: int = 0
    cap: int = DEFAULT_SUMMARY_CAP

    def recompute_bytes(self) -> int:
        return sum(encoded_len(e) for e in self.events)

    def to_dict(self) -> dict:
        return {"goal": self.goal, "events": list(self.events), "total_bytes": self.total_bytes, "cap": self.cap}

    @classmethod
    def from_dict(cls, data: dict) -> ControlContext:
        return cls(data["goal"], tuple(data["events"]), data["total_bytes"], data["cap"])


def directive_event(d: Directive, target_role: str) -> dict:
    return {
        "type": "directive",
        "role": target_role,
        "issuer": d.issuer,
        "stage": d.stage_label,
        "invocation": d.invocation_id,
        "text": d.prompt_text(),
    }


def note_event(text: str) -> dict:
    return {"type": "note", "text": text}


def mapref_event(revision: int) -> dict:
    return {"type": "mapref", "revision": revision}


def append_context(context: ControlContext, event: dict | Summary) -> ControlContext:
    if isinstance(event, Summary):
        event = event.event()
    size = encoded_len(event)
    if size > context.cap:
        raise OversizeEvent(f"event of {size} bytes exceeds cap {context.cap}")
    return ControlContext(context.goal, context.events + (event,), context.total_bytes + size, context.cap)


def capped_note(text: str, cap: int) -> dict:
    """A Note event trimmed so its encoding fits ``cap``."""
    ev = note_event(text)
    if encoded_len(ev) <= cap:
        return ev
    raw = text.encode("utf-8")
    keep = max(0, len(raw) - (encoded_len(ev) - cap) - len(TRUNCATION_MARKER))
    while True:
        ev = note_event(raw[:keep].decode("utf-8", errors="ignore") + TRUNCATION_MARKER)
        if encoded_len(ev) <= cap or keep == 0:
            return ev
        keep = max(0, keep - max(1, encoded_len(ev) - cap))


class LocalContext:
    """Private per-invocation transcript. Never persisted."""

    def __init__(self) -> None:
        self.events: list[dict] = []

    def add(self, event: dict) -> None:
        self.events.append(event)


# tools


@dataclass(frozen=True)
class ToolDescriptor:
    tool_id: str
    kind: str
    signature: dict = field(default_factory=dict)
    target_role: str | None = None

    def public(self) -> dict:
        return {"tool": self.tool_id, "kind": self.kind, "args": self.signature}


@dataclass(frozen=True)
class ToolInvocation:
    tool_id: str
    arguments: dict
    invocation_id: str


@dataclass(frozen=True)
class ToolResult:
    tool_id: str
    invocation_id: str
    kind: str
    status: str
    output: str = ""
    reason: str = ""
    summary: Summary | None = None
    ops: tuple[DeltaOp, ...] = ()

    def event(self) -> dict:
        return {
            "type": "tool_result",
            "tool": self.tool_id,
            "status": self.status,
            "reason": self.reason,
            "output": self.output,
        }

    def shape(self) -> tuple[str, ...]:
        return tuple(sorted(self.__dataclass_fields__))


def failed(tool_id: str, invocation_id: str, kind: str, reason: str, output: str = "") -> ToolResult:
    return ToolResult(tool_id, invocation_id, kind, FAILED, output or reason, reason)


@dataclass
class ToolContext:
    """Everything a tool implementation may touch during one call."""

    runtime: Runtime
    profile: AgentProfile
    workspace: Workspace
    invocation_id: str
    map: WorkspaceMap | None = None
    depth: int = 1
    chain: tuple[str, ...] = ()


NativeFn = Callable[[ToolContext, dict], ToolResult]


class ToolRegistry:
    def __init__(self) -> None:
        self._tools: dict[str, ToolDescriptor] = {}
        self._native: dict[str, NativeFn] = {}
        self._agents: dict[str, AgentProfile] = {}
        self._lock = threading.Lock()

    def register_native(self, tool_id: str, fn: NativeFn, signature: dict | None = None) -> ToolDescriptor:
        with self._lock:
            if tool_id in self._tools:
                raise DuplicateToolId(tool_id)
            desc = ToolDescriptor(tool_id, NATIVE, signature or {})
            self._tools[tool_id] = desc
            self._native[tool_id] = fn
            return desc

    def register_agent_as_tool(self, profile: AgentProfile) -> ToolDescriptor:
        if profile.tier not in (1, 2):
            raise TierViolation(f"only tier-1/2 profiles can be tools, {profile.role_id} is tier {profile.tier}")
        with self._lock:
            if profile.role_id in self._tools:
                raise DuplicateToolId(profile.role_id)
            desc = ToolDescriptor(
                profile.role_id,
                AGENT,
                {"directive": "str", "stage": "str?", "mode": "full|fix?", "purpose": "str?"},
                profile.role_id,
            )
            self._tools[profile.role_id] = desc
            self._agents[profile.role_id] = profile
            return desc

    def get(self, tool_id: str) -> ToolDescriptor:
        try:
            return self._tools[tool_id]
        except KeyError:
            raise UnknownTool(tool_id) from None

    def profile(self, role_id: str) -> AgentProfile:
        return self._agents[role_id]

    def descriptors(self) -> list[ToolDescriptor]:
        return [self._tools[k] for k in sorted(self._tools)]

    def action_space(self, profile: AgentProfile, include_agents: bool = True) -> list[ToolDescriptor]:
        """Native tools the profile holds, plus Tier-1 agent tools for the orchestrator."""
        out = [self._tools[t] for t in profile.tool_ids if t in self._tools and self._tools[t].kind == NATIVE]
        if profile.tier == 0 and include_agents:
            out += [d for d in self.descriptors() if d.kind == AGENT and self._agents[d.tool_id].tier == 1]
        return sorted(out, key=lambda d: d.tool_id)

    def dispatch(self, call: ToolInvocation, ctx: ToolContext, visible: list[ToolDescriptor]) -> ToolResult:
        """Single entry point for native and agent tools."""
        if call.tool_id == SPAWN_TOOL:
            return ctx.runtime._spawn_tool(ctx, call)
        if call.tool_id not in {d.tool_id for d in visible}:
            kind = self._tools[call.tool_id].kind if call.tool_id in self._tools else NATIVE
            if kind == AGENT and ctx.profile.tier != 0:
                return failed(call.tool_id, call.invocation_id, kind, "TierViolation")
            return failed(call.tool_id, call.invocation_id, kind, "UnknownTool", f"tool {call.tool_id!r} not available")
        desc = self._tools[call.tool_id]
        if desc.kind == NATIVE:
            result = self._native[call.tool_id](ctx, call.arguments)
            return ToolResult(
                result.tool_id or call.tool_id,
                call.invocation_id,
                NATIVE,
                result.status,
                result.output,
                result.reason,
                result.summary,
                result.ops,
            )
        return ctx.runtime._agent_tool(ctx, call, self._agents[desc.tool_id])


# runtime


@dataclass
class InvocationResult:
    summary: Summary
    delta: WorkspaceDelta
    turns: int


class Runtime:
    """Executes specialist and subagent invocations against one workspace."""

    def __init__(
        self,
        workspace: Workspace,
        backend: Backend | dict[str, Backend],
        registry: ToolRegistry,
        subagents: dict[str, AgentProfile] | None = None,
        summary_cap: int = DEFAULT_SUMMARY_CAP,
        step_cap: int = DEFAULT_STEP_CAP,
        fanout: int = DEFAULT_FANOUT,
        map_cap: int | None = None,
        filebus: bool = True,
        trace: Callable[[str, dict], None] | None = None,
        clock=None,
        search_provider=None,
    ):
        self.workspace = workspace
        self.backends = backend if isinstance(backend, dict) else {"default": backend}
        self.registry = registry
        self.subagents = dict(subagents or {})
        self.summary_cap = summary_cap
        self.step_cap = step_cap
        self.fanout = fanout
        self.map_cap = map_cap
        self.filebus = filebus
        self.trace = trace or (lambda kind, payload: None)
        self.clock = clock or WallClock()
        self.search_provider = search_provider
        self.next_id = 0
        self._id_lock = threading.Lock()
        self._max_depth_seen = 0

    def new_invocation_id(self, prefix: str = "inv") -> str:
        with self._id_lock:
            self.next_id += 1
            return f"{prefix}-{self.next_id:06d}"

    def backend_for(self, profile: AgentProfile) -> Backend:
        return self.backends.get(profile.backend_binding) or self.backends["default"]

    def build_map(self, ws: Workspace | None = None) -> WorkspaceMap:
        ws = ws or self.workspace
        return build_map(ws) if self.map_cap is None else build_map(ws, self.map_cap)

    # public operations

    def invoke_specialist(
        self,
        profile: AgentProfile,
        directive: Directive,
        map: WorkspaceMap | None,
        workspace: Workspace | None = None,
        chain: tuple[str, ...] = (),
    ) -> tuple[Summary, WorkspaceDelta]:
        if profile.tier < 1:
            raise TierViolation("invoke_specialist needs a tier-1 or tier-2 profile")
        r = self._invoke(profile, directive, map, workspace or self.workspace, chain or ("orchestrator",))
        return r.summary, r.delta

    def specialist_step(
        self,
        profile: AgentProfile,
        local: LocalContext,
        directive: Directive,
        map: WorkspaceMap | None,
        workspace: Workspace | None = None,
        turn: int | None = None,
    ) -> ToolCall | Finish:
        """Ask the bound backend for the next action given the local transcript."""
        visible = self._visible_tools(profile)
        request = ModelRequest(
            role_id=profile.role_id,
            system_directive=profile.system_directive,
            directive=directive.prompt_text(),
            rendered_map=map.render() if map is not None else "",
            local_events=tuple(local.events),
            available_tools=tuple(d.public() for d in visible),
            invocation_id=directive.invocation_id,
            turn=len([e for e in local.events if e["type"] in ("tool_invocation", "malformed")]) if turn is None else turn,
        )
        response = self.backend_for(profile).complete(request)
        return parse_action(response.raw)

    def spawn_subagent(
        self,
        parent: AgentProfile,
        child_role: str,
        directive: Directive,
        map: WorkspaceMap | None,
        workspace: Workspace | None = None,
        chain: tuple[str, ...] = (),
    ) -> tuple[Summary, WorkspaceDelta]:
        child = self._check_spawn(parent, child_role)
        r = self._invoke(child, directive, map, workspace or self.workspace, chain or ("orchestrator", parent.role_id))
        return r.summary, r.delta

    def spawn_many(
        self,
        parent: AgentProfile,
        tasks: list[tuple[str, Directive]],
        map: WorkspaceMap | None,
        workspace: Workspace | None = None,
        chain: tuple[str, ...] = (),
    ) -> list[InvocationResult]:
        """Run subagents concurrently (bounded by ``fanout``).

        Results come back in virtual completion order: fewest backend turns
        first, submission order breaking ties. That order depends only on the
        scripts, never on thread scheduling.
        """
        ws = workspace or self.workspace
        children = [(self._check_spawn(parent, role), d) for role, d in tasks]
        for child, d in children:
            self.trace(
                "delegate",
                {"role": child.role_id, "tier": 2, "invocation": d.invocation_id, "depth": len(chain) + 1,
                 "chain": list(chain) + [d.invocation_id], "parent": parent.role_id},
            )
        with ThreadPoolExecutor(max_workers=max(1, self.fanout)) as pool:
            futures = [pool.submit(self._invoke, child, d, map, ws, chain) for child, d in children]
            results = [f.result() for f in futures]
        order = sorted(range(len(results)), key=lambda i: (results[i].turns, i))
        ordered = [results[i] for i in order]
        for r in ordered:
            self.trace(
                "summary",
                {"role": r.summary.role_id, "tier": 2, "invocation": r.summary.invocation_id,
                 "status": r.summary.status, "bytes": r.summary.byte_len},
            )
        return ordered

    # internals

    def _check_spawn(self, parent: AgentProfile, child_role: str) -> AgentProfile:
        if parent.tier != 1:
            raise TierViolation(f"{parent.role_id} (tier {parent.tier}) cannot spawn subagents")
        if child_role not in parent.subagent_role_ids or child_role not in self.subagents:
            raise UnknownSubagent(f"{child_role!r} is not in {parent.role_id}'s subagent pool")
        child = self.subagents[child_role]
        if child.tier != 2:
            raise TierViolation(f"subagent {child_role} must be tier 2")
        return child

    def _visible_tools(self, profile: AgentProfile) -> list[ToolDescriptor]:
        return self.registry.action_space(profile, include_agents=False)

    def _invoke(
        self,
        profile: AgentProfile,
        directive: Directive,
        map: WorkspaceMap | None,
        ws: Workspace,
        chain: tuple[str, ...],
    ) -> InvocationResult:
        from filebus.role_profiles import check_mode

        chain = chain + (directive.invocation_id or profile.role_id,)
        self._max_depth_seen = max(self._max_depth_seen, len(chain))
        rejected = check_mode(profile, directive, ws)
        if rejected:
            s = make_summary(rejected, FAILED, (), profile.role_id, directive.invocation_id, self.summary_cap)
            return InvocationResult(s, WorkspaceDelta((), profile.role_id, directive.invocation_id), 0)

        if self.filebus or profile.tier == 2:
            return self._local_loop(profile, directive, map, ws, chain)
        return self._ephemeral_invoke(profile, directive, ws, chain)

    def _ephemeral_invoke(
        self, profile: AgentProfile, directive: Directive, ws: Workspace, chain: tuple[str, ...]
    ) -> InvocationResult:
        """File-bus-off mode: run against a throwaway copy, then keep only submission/ changes."""
        with tempfile.TemporaryDirectory(prefix="filebus-ephemeral-") as tmp:
            eroot = Path(tmp) / "ws"
            eph = Workspace.init(eroot, ws.config, self.clock)
            for rel, _st, is_dir in _walk(ws.root):
                if pattern_matches(ENGINE_DIR, rel):
                    continue
                dest = eroot / rel
                if is_dir:
                    dest.mkdir(parents=True, exist_ok=True)
                else:
                    dest.parent.mkdir(parents=True, exist_ok=True)
                    shutil.copyfile(ws.root / rel, dest)
            eph._rescan_known()
            inner = self._local_loop(profile, directive, None, eph, chain)
            ops = []
            for rel, _st, is_dir in _walk(eroot):
                if not pattern_matches("submission/", rel) or is_kernel_path(rel):
                    continue
                if is_dir:
                    if not (ws.root / rel).is_dir():
                        ops.append(DeltaOp.mkdir(rel))
                    continue
                data = (eroot / rel).read_bytes()
                real = ws.root / rel
                if not real.is_file() or real.read_bytes() != data:
                    ops.append(DeltaOp.overwrite(rel, data))
        delta = WorkspaceDelta(tuple(ops), profile.role_id, directive.invocation_id)
        summary = inner.summary
        try:
            ws.apply_delta(delta, profile.scope)
        except Exception as exc:  # noqa: BLE001 - any failure to persist fails the invocation
            delta = WorkspaceDelta((), profile.role_id, directive.invocation_id)
            summary = make_summary(f"{summary.text}\nsync failed: {exc}", FAILED, (), profile.role_id,
                                   directive.invocation_id, self.summary_cap)
        pointers = tuple(p for p in summary.artifact_pointers if _exists(ws, p))
        summary = make_summary(summary.text, summary.status, pointers, profile.role_id, directive.invocation_id,
                               self.summary_cap)
        return InvocationResult(summary, delta, inner.turns)

    def _local_loop(
        self,
        profile: AgentProfile,
        directive: Directive,
        map: WorkspaceMap | None,
        ws: Workspace,
        chain: tuple[str, ...],
    ) -> InvocationResult:
        local = LocalContext()
        local.add({"type": "directive", "text": directive.prompt_text()})
        ops: list[DeltaOp] = []
        denial = ""
        malformed = 0
        visible = self._visible_tools(profile)

        def finish(text: str, status: str, artifacts=(), turns: int = 0) -> InvocationResult:
            if denial and status == COMPLETED:
                status = FAILED
            if denial:
                text = f"{text}\nPermissionDenied: {denial}" if text else f"PermissionDenied: {denial}"
            pointers = tuple(p for p in artifacts if _exists(ws, p))
            s = make_summary(text, status, pointers, profile.role_id, directive.invocation_id, self.summary_cap)
            return InvocationResult(s, WorkspaceDelta(tuple(ops), profile.role_id, directive.invocation_id), turns)

        for turn in range(self.step_cap):
            try:
                action = self.specialist_step(profile, local, directive, map, ws, turn=turn)
            except MalformedAction as exc:
                malformed += 1
                local.add({"type": "note", "text": f"malformed action: {exc}"})
                if malformed >= MAX_MALFORMED:
                    return finish(f"{MAX_MALFORMED} consecutive malformed actions", FAILED, turns=turn + 1)
                continue
            except BackendFailure as exc:
                return finish(f"{type(exc).__name__}: {exc}", FAILED, turns=turn + 1)
            malformed = 0
            if isinstance(action, Finish):
                return finish(action.summary, action.status, action.artifacts, turns=turn + 1)

            call = ToolInvocation(action.tool, action.args, self.new_invocation_id("call"))
            local.add({"type": "tool_invocation", "tool": action.tool, "args": action.args, "thought": action.thought})
            ctx = ToolContext(self, profile, ws, directive.invocation_id, map, len(chain), chain)
            result = self.registry.dispatch(call, ctx, visible)
            ops.extend(result.ops)
            if result.reason in DENIAL_REASONS and not denial:
                denial = f"{result.reason} ({action.tool} {action.args.get('path', '')})".strip()
            local.add(result.event())
        return finish("step cap reached", FAILED, turns=self.step_cap)

    def _spawn_tool(self, ctx: ToolContext, call: ToolInvocation) -> ToolResult:
        args = call.arguments
        tasks = args.get("tasks")
        if tasks is None:
            tasks = [{"role": args.get("role"), "directive": args.get("directive")}]
        parsed: list[tuple[str, Directive]] = []
        try:
            for t in tasks:
                if not isinstance(t, dict) or not isinstance(t.get("role"), str) or not t.get("directive"):
                    return failed(SPAWN_TOOL, call.invocation_id, NATIVE, "BadArguments", "spawn needs role and directive")
                self._check_spawn(ctx.profile, t["role"])
                parsed.append(
                    (t["role"], Directive(t["directive"], ctx.profile.role_id, "subagent", self.new_invocation_id()))
                )
        except TierViolation as exc:
            self.trace("action", {"tool": SPAWN_TOOL, "role": ctx.profile.role_id, "error": "TierViolation",
                                  "depth": len(ctx.chain)})
            return failed(SPAWN_TOOL, call.invocation_id, NATIVE, "TierViolation", str(exc))
        except UnknownSubagent as exc:
            return failed(SPAWN_TOOL, call.invocation_id, NATIVE, "UnknownSubagent", str(exc))
        results = self.spawn_many(ctx.profile, parsed, ctx.map, ctx.workspace, ctx.chain)
        ops = tuple(op for r in results for op in r.delta.ops)
        lines = [f"[{r.summary.invocation_id} {r.summary.role_id} {r.summary.status}] {r.summary.text}" for r in results]
        status = COMPLETED if all(r.summary.status == COMPLETED for r in results) else FAILED
        return ToolResult(SPAWN_TOOL, call.invocation_id, NATIVE, status, "\n".join(lines), "", None, ops)

    def _agent_tool(self, ctx: ToolContext, call: ToolInvocation, profile: AgentProfile) -> ToolResult:
        """Agent-kind dispatch: directive from args, fresh specialist loop, summary back as the output."""
        from filebus.role_profiles import HELPER, make_helper_profile

        if ctx.profile.tier != 0:
            return failed(call.tool_id, call.invocation_id, AGENT, "TierViolation")
        text = call.arguments.get("directive")
        if not isinstance(text, str) or not text:
            return failed(call.tool_id, call.invocation_id, AGENT, "BadArguments", "agent tools need a directive")
        args = {k: v for k, v in call.arguments.items() if k not in ("directive", "stage")}
        directive = Directive(text, ctx.profile.role_id, str(call.arguments.get("stage", "")), call.invocation_id, args)
        if profile.role_id == HELPER:
            profile = make_helper_profile(self, profile, str(call.arguments.get("purpose") or text))
        summary, delta = self.invoke_specialist(
            profile, directive, ctx.map if self.filebus else None, ctx.workspace, ctx.chain
        )
        return ToolResult(
            call.tool_id,
            call.invocation_id,
            AGENT,
            summary.status,
            summary.text,
            "" if summary.status == COMPLETED else summary.status,
            summary,
            delta.ops,
        )


def _exists(ws: Workspace, path: str) -> bool:
    try:
        return ws.exists(path)
    except Exception:  # noqa: BLE001 - a bad pointer is simply dropped
        return False


def register_agent_as_tool(registry: ToolRegistry, profile: AgentProfile) -> ToolDescriptor:
    return registry.register_agent_as_tool(profile)


__all__ = [
    "AGENT",
    "AgentProfile",
    "COMPLETED",
    "ControlContext",
    "DEFAULT_STEP_CAP",
    "DEFAULT_SUMMARY_CAP",
    "Directive",
    "FAILED",
    "InvocationResult",
    "LocalContext",
    "NATIVE",
    "PermissionDenied",
    "Runtime",
    "Summary",
    "ToolContext",
    "ToolDescriptor",
    "ToolInvocation",
    "ToolRegistry",
    "ToolResult",
    "append_context",
    "capped_note",
    "directive_event",
    "make_summary",
    "mapref_event",
    "note_event",
    "register_agent_as_tool",
]
