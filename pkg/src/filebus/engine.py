"""Tier-0 evidence-driven loop with budgets, checkpoints, resume, and ablation modes.

The orchestrator policy lives entirely in the backend. Each step the engine
builds the map (when it changed), asks the Tier-0 backend for an action,
dispatches it through the shared tool registry, folds the result into the
control context, and checkpoints into ``agent/.engine/`` so the workspace is
the whole system of record.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import signal
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from filebus.actions import Finish, parse_action
from filebus.agent_core import (
    AGENT,
    COMPLETED,
    ControlContext,
    Directive,
    Runtime,
    ToolContext,
    ToolInvocation,
    ToolRegistry,
    append_context,
    capped_note,
    directive_event,
    mapref_event,
    note_event,
)
from filebus.clock import FixedClock, WallClock
from filebus.errors import (
    BackendFailure,
    CheckpointCorrupt,
    ConfigError,
    ConfigMismatch,
    FileBusError,
    MalformedAction,
    NoCheckpoint,
    NotFound,
    OversizeEvent,
)
from filebus.model_backend import HttpBackend, ModelRequest, ScriptedBackend, load_scenario
from filebus.native_tools import register_native_tools
from filebus.role_profiles import IMPLEMENTATION, RoleCatalog, load_catalog, permissible_modes
from filebus.workspace_bus import (
    ENGINE_DIR,
    TRACE_LOG,
    DeltaOp,
    Workspace,
    WorkspaceDelta,
)
from filebus.workspace_map import DEFAULT_MAP_CAP

try:  # pragma: no cover
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

CHECKPOINT = ENGINE_DIR + "checkpoint"
CHECKPOINT_DIGEST = ENGINE_DIR + "checkpoint.sha256"
TASK_DIR = "paper_analysis/paper/"

FILEBUS_ON = "filebus-on"
FILEBUS_OFF = "filebus-off"
HIERARCHICAL = "hierarchical"
FLAT = "flat"

MAX_MALFORMED = 3


@dataclass(frozen=True)
class Budget:
    wall_clock_limit: float | None = 24 * 3600.0
    step_limit: int | None = None


@dataclass(frozen=True)
class RunConfig:
    goal: str
    workspace: str
    task_source: str | None = None
    environment_note: str = ""
    budget: Budget = field(default_factory=Budget)
    backend: str = "scripted"
    scenario: str | None = None
    catalog: str | None = None
    ablation: str = FILEBUS_ON
    orchestration: str = HIERARCHICAL
    summary_cap: int = 4096
    map_cap: int = DEFAULT_MAP_CAP
    step_cap: int = 64
    fanout: int = 4
    seed: int = 0
    fixed_clock: bool = False

    def __post_init__(self) -> None:
        if self.backend not in ("scripted", "http"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "scripted" and not self.scenario:
            raise ConfigError("scripted backend needs a scenario")
        if self.ablation not in (FILEBUS_ON, FILEBUS_OFF):
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.orchestration not in (HIERARCHICAL, FLAT):
            raise ConfigError(f"unknown orchestration {self.orchestration!r}")
        b = self.budget
        if (b.wall_clock_limit is not None and b.wall_clock_limit <= 0) or (
            b.step_limit is not None and b.step_limit < 0
        ):
            raise ConfigError("budget must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        d["budget"] = Budget(**d.get("budget", {}))
        return cls(**d)


def load_config(path: str | os.PathLike, **overrides) -> RunConfig:
    """Read a TOML run config; relative paths resolve against the file's directory."""
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent
    budget = data.pop("budget", {})
    kwargs = {}
    for key in ("goal", "environment_note", "backend", "ablation", "orchestration", "summary_cap", "map_cap",
                "step_cap", "fanout", "seed", "fixed_clock"):
        if key in data:
            kwargs[key] = data.pop(key)
    for key in ("workspace", "task_source", "scenario", "catalog"):
        if data.get(key):
            kwargs[key] = str((base / data.pop(key)).resolve())
        else:
            data.pop(key, None)
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    if "goal" not in kwargs or "workspace" not in kwargs:
        raise ConfigError("config needs goal and workspace")
    kwargs["budget"] = Budget(budget.get("wall_clock_s", Budget.wall_clock_limit), budget.get("step_limit"))
    return apply_overrides(RunConfig(**kwargs), **overrides)


def apply_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Flag-style overrides; ``None`` values leave the config untouched."""
    budget = config.budget
    if overrides.get("budget_s") is not None:
        budget = replace(budget, wall_clock_limit=float(overrides["budget_s"]))
    if "step_limit" in overrides and overrides["step_limit"] != "keep":
        budget = replace(budget, step_limit=overrides["step_limit"])
    config = replace(config, budget=budget)
    ablation = overrides.get("ablation")
    if ablation:
        config = set_ablation(config, ablation)
    for key in ("backend", "scenario", "seed"):
        if overrides.get(key) is not None:
            config = replace(config, **{key: overrides[key]})
    return config


def set_ablation(config: RunConfig, mode: str) -> RunConfig:
    if mode in (FILEBUS_ON, FILEBUS_OFF):
        return replace(config, ablation=mode)
    if mode in (FLAT, HIERARCHICAL):
        return replace(config, orchestration=mode)
    raise ConfigError(f"unknown ablation mode {mode!r}")


@dataclass(frozen=True)
class RunStatus:
    kind: str
    reason: str = ""

    COMPLETED = "Completed"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    FAILED = "Failed"
    INTERRUPTED = "Interrupted"

    @property
    def exit_code(self) -> int:
        return {"Completed": 0, "BudgetExhausted": 2, "Failed": 3, "Interrupted": 4}[self.kind]

    @property
    def terminal(self) -> bool:
        return self.kind in (self.COMPLETED, self.FAILED)

    def __str__(self) -> str:
        return f"{self.kind}({self.reason})" if self.reason else self.kind


CONTINUE = "Continue"
HALT = "Halt"


def enforce_budget(elapsed_s: float, steps: int, budget: Budget) -> str:
    if budget.step_limit is not None and steps >= budget.step_limit:
        return HALT
    if budget.wall_clock_limit is not None and elapsed_s >= budget.wall_clock_limit:
        return HALT
    return CONTINUE


def make_backend(config: RunConfig):
    if config.backend == "scripted":
        return ScriptedBackend(load_scenario(config.scenario))
    return HttpBackend.from_env()


class Engine:
    """One run over one workspace root. Not shared across concurrent runs."""

    def __init__(self, config: RunConfig, backend=None, clock=None, catalog: RoleCatalog | None = None):
        self.config = config
        self.clock = clock or (FixedClock() if config.fixed_clock else WallClock())
        self.backend = backend or make_backend(config)
        self.catalog = catalog or load_catalog(config.catalog)
        self.registry = ToolRegistry()
        register_native_tools(self.registry)
        for p in self.catalog.tier(1):
            self.registry.register_agent_as_tool(p)
        self.orchestrator = self.catalog.orchestrator
        self.ws: Workspace | None = None
        self.runtime: Runtime | None = None
        self.context: ControlContext | None = None
        self.step = 0
        self.elapsed_before = 0.0
        self.trace_seq = 0
        self.malformed = 0
        self.last_map_digest = ""
        self._trace_lock = threading.Lock()
        self._interrupted = threading.Event()

    # setup

    def _attach(self, ws: Workspace) -> None:
        self.ws = ws
        self.runtime = Runtime(
            ws,
            self.backend,
            self.registry,
            subagents=self.catalog.subagents(),
            summary_cap=self.config.summary_cap,
            step_cap=self.config.step_cap,
            fanout=self.config.fanout,
            map_cap=self.config.map_cap,
            filebus=self.config.ablation == FILEBUS_ON,
            trace=self.trace,
            clock=self.clock,
        )

    def trace(self, kind: str, payload: dict) -> None:
        with self._trace_lock:
            self.trace_seq += 1
            line = json.dumps(
                {"seq": self.trace_seq, "ts": self.clock.iso(), "kind": kind, "payload": payload},
                ensure_ascii=False,
                sort_keys=True,
                separators=(",", ":"),
            )
            self.ws.apply_delta(
                WorkspaceDelta((DeltaOp.append(TRACE_LOG, line + "\n"),), self.orchestrator.role_id, "engine"),
                self.orchestrator.scope,
            )

    def _ingest_task(self) -> None:
        src = self.config.task_source
        if not src:
            return
        src = Path(src)
        if not src.is_dir():
            raise ConfigError(f"task_source {src} is not a directory")
        ops = []
        for p in sorted(src.rglob("*")):
            if p.is_file():
                ops.append(DeltaOp.create(TASK_DIR + p.relative_to(src).as_posix(), p.read_bytes()))
        self.ws.apply_delta(WorkspaceDelta(tuple(ops), self.orchestrator.role_id, "ingest"), self.orchestrator.scope)
        self.trace("action", {"step": 0, "tool": "ingest", "files": len(ops)})

    def _seed_context(self) -> None:
        ctx = ControlContext(self.config.goal, cap=self.config.summary_cap)
        if self.config.environment_note:
            ctx = append_context(ctx, capped_note(f"environment: {self.config.environment_note}", ctx.cap))
        ctx = append_context(
            ctx, note_event(f"orchestration={self.config.orchestration} filebus={self.config.ablation}")
        )
        m = self.runtime.build_map()
        self.last_map_digest = hashlib.sha256(m.render().encode()).hexdigest()
        self.context = append_context(ctx, mapref_event(m.revision))

    # checkpoint

    def _checkpoint(self, status: RunStatus | None, pending: str = "") -> None:
        body = json.dumps(
            {
                "version": 1,
                "step": self.step,
                "status": status.kind if status else "Running",
                "reason": status.reason if status else "",
                "pending_stage": pending,
                "context": self.context.to_dict(),
                "config": self.config.to_dict(),
                "next_id": self.runtime.next_id,
                "elapsed": self._elapsed(),
                "trace_seq": self.trace_seq,
                "malformed": self.malformed,
                "map_digest": self.last_map_digest,
            },
            sort_keys=True,
            ensure_ascii=False,
        ).encode()
        digest = hashlib.sha256(body).hexdigest() + "\n"
        self.ws.apply_delta(
            WorkspaceDelta(
                (DeltaOp.overwrite(CHECKPOINT, body), DeltaOp.overwrite(CHECKPOINT_DIGEST, digest)),
                self.orchestrator.role_id,
                "checkpoint",
            ),
            self.orchestrator.scope,
        )

    def _elapsed(self) -> float:
        return self.elapsed_before + (self.clock.monotonic() - self._start)

    # loop

    def run(self) -> RunStatus:
        try:
            ws = Workspace.init(self.config.workspace, clock=self.clock)
            self._attach(ws)
            self._start = self.clock.monotonic()
            self._ingest_task()
            self._seed_context()
            self._checkpoint(None)
        except FileBusError as exc:
            return RunStatus(RunStatus.FAILED, f"{type(exc).__name__}: {exc}")
        return self._guarded_loop()

    def resume_from(self, ws: Workspace, checkpoint: dict) -> RunStatus:
        self._attach(ws)
        self._start = self.clock.monotonic()
        self.step = checkpoint["step"]
        self.context = ControlContext.from_dict(checkpoint["context"])
        self.runtime.next_id = checkpoint["next_id"]
        self.elapsed_before = checkpoint["elapsed"]
        self.trace_seq = checkpoint["trace_seq"]
        self.malformed = checkpoint["malformed"]
        # the map itself is rebuilt from the live tree; the digest only decides whether to log a MapRef
        self.last_map_digest = checkpoint["map_digest"]
        if checkpoint["status"] in (RunStatus.COMPLETED, RunStatus.FAILED):
            return RunStatus(checkpoint["status"], checkpoint["reason"])
        self.trace("action", {"step": self.step, "tool": "resume"})
        return self._guarded_loop()

    def _guarded_loop(self) -> RunStatus:
        previous = None
        if threading.current_thread() is threading.main_thread():
            previous = signal.signal(signal.SIGINT, lambda *_: self._interrupted.set())
        try:
            status = self._loop()
        except Exception as exc:  # noqa: BLE001 - run() never raises past its boundary
            log.exception("run failed")
            status = RunStatus(RunStatus.FAILED, f"{type(exc).__name__}: {exc}")
        finally:
            if previous is not None:
                signal.signal(signal.SIGINT, previous)
        try:
            self.trace("status", {"status": status.kind, "reason": status.reason, "step": self.step})
            self._checkpoint(status)
        except Exception:  # noqa: BLE001
            log.exception("could not persist final status")
        return status

    def _loop(self) -> RunStatus:
        flat = self.config.orchestration == FLAT
        visible = self.registry.action_space(self.orchestrator, include_agents=not flat)
        while True:
            elapsed = self._elapsed()
            if self._interrupted.is_set():
                return RunStatus(RunStatus.INTERRUPTED, f"signal at step {self.step}")
            if enforce_budget(elapsed, self.step, self.config.budget) == HALT:
                self.trace("budget", {"step": self.step, "elapsed_s": round(elapsed, 3), "decision": HALT})
                return RunStatus(RunStatus.BUDGET_EXHAUSTED, f"halted at step {self.step}")
            self.trace("budget", {"step": self.step, "elapsed_s": round(elapsed, 3), "decision": CONTINUE})

            m = self.runtime.build_map()
            digest = hashlib.sha256(m.render().encode()).hexdigest()
            if digest != self.last_map_digest:
                self.context = append_context(self.context, mapref_event(m.revision))
                self.last_map_digest = digest

            request = ModelRequest(
                role_id=self.orchestrator.role_id,
                system_directive=self.orchestrator.system_directive,
                directive=self.config.goal,
                rendered_map=m.render(),
                local_events=self.context.events,
                available_tools=tuple(d.public() for d in visible),
                invocation_id="orchestrator",
                turn=self.step,
            )
            try:
                action = parse_action(self.backend.complete(request).raw)
            except MalformedAction as exc:
                self.malformed += 1
                self.context = append_context(self.context, capped_note(f"malformed action: {exc}", self.context.cap))
                self.trace("action", {"step": self.step, "malformed": str(exc)[:200]})
                self.step += 1
                if self.malformed >= MAX_MALFORMED:
                    return RunStatus(RunStatus.FAILED, "3 consecutive malformed orchestrator actions")
                self._checkpoint(None)
                continue
            except BackendFailure as exc:
                return RunStatus(RunStatus.FAILED, f"{type(exc).__name__}: {exc}")
            self.malformed = 0

            if isinstance(action, Finish):
                self.step += 1
                self.trace("action", {"step": self.step - 1, "finish": action.status})
                if action.status == COMPLETED:
                    return RunStatus(RunStatus.COMPLETED, "")
                return RunStatus(RunStatus.FAILED, action.summary[:500])

            self._dispatch(action.tool, action.args, m, visible)
            self.step += 1
            self._checkpoint(None)

    def _dispatch(self, tool: str, args: dict, m, visible) -> None:
        call_id = self.runtime.new_invocation_id()
        desc_kind = next((d.kind for d in visible if d.tool_id == tool), None)
        self.trace("action", {"step": self.step, "tool": tool, "kind": desc_kind or "unavailable"})
        ctx = ToolContext(self.runtime, self.orchestrator, self.ws, "orchestrator", m, 1, ("orchestrator",))
        if desc_kind == AGENT:
            args = self._annotate(tool, args)
            try:
                directive = Directive(str(args.get("directive") or ""), self.orchestrator.role_id,
                                      str(args.get("stage", "")), call_id,
                                      {k: v for k, v in args.items() if k not in ("directive", "stage")})
                self.context = append_context(self.context, directive_event(directive, tool))
            except (ValueError, OversizeEvent) as exc:
                self.context = append_context(
                    self.context, capped_note(f"directive to {tool} rejected: {exc}", self.context.cap)
                )
                return
            self.trace("delegate", {"step": self.step, "role": tool, "tier": 1, "invocation": call_id, "depth": 2,
                                    "chain": ["orchestrator", call_id], "stage": directive.stage_label})
        result = self.registry.dispatch(ToolInvocation(tool, args, call_id), ctx, visible)
        if result.summary is not None:
            self.context = append_context(self.context, result.summary)
            self.trace("summary", {"step": self.step, "role": tool, "tier": 1, "invocation": call_id,
                                   "status": result.summary.status, "bytes": result.summary.byte_len,
                                   "ops": len(result.ops)})
        else:
            text = f"{tool} {result.status}{' ' + result.reason if result.reason else ''}: {result.output}"
            self.context = append_context(self.context, capped_note(text, self.context.cap))

    def _annotate(self, tool: str, args: dict) -> dict:
        """Give implementation directives their permissible modes; default the mode when unset."""
        if tool != IMPLEMENTATION:
            return args
        modes = permissible_modes(self.ws)
        out = dict(args)
        out["permitted_modes"] = modes
        out.setdefault("mode", modes[0])
        return out


def run(config: RunConfig, backend=None, clock=None) -> RunStatus:
    try:
        engine = Engine(config, backend, clock)
    except FileBusError as exc:
        return RunStatus(RunStatus.FAILED, f"{type(exc).__name__}: {exc}")
    return engine.run()


def read_checkpoint(root: str | os.PathLike) -> dict:
    root = Path(root)
    body_path, digest_path = root / CHECKPOINT, root / CHECKPOINT_DIGEST
    if not body_path.is_file():
        raise NoCheckpoint(str(root))
    body = body_path.read_bytes()
    want = digest_path.read_text().strip() if digest_path.is_file() else ""
    if hashlib.sha256(body).hexdigest() != want:
        raise CheckpointCorrupt(f"digest mismatch in {body_path}")
    try:
        return json.loads(body)
    except ValueError as exc:
        raise CheckpointCorrupt(str(exc)) from exc


def resume(root: str | os.PathLike, backend=None, clock=None, **overrides) -> RunStatus:
    """Continue a run from ``root``'s checkpoint. Raises NoCheckpoint, CheckpointCorrupt, ConfigMismatch."""
    checkpoint = read_checkpoint(root)
    stored = RunConfig.from_dict(checkpoint["config"])
    ablation = overrides.get("ablation")
    if ablation:
        if set_ablation(stored, ablation) != stored:
            raise ConfigMismatch(f"run was {stored.ablation}/{stored.orchestration}, override asks for {ablation}")
    config = apply_overrides(replace(stored, workspace=str(Path(root).resolve())), **overrides)
    engine = Engine(config, backend, clock)
    try:
        ws = Workspace.open(root, clock=engine.clock)
    except NotFound as exc:
        raise NoCheckpoint(str(exc)) from exc
    return engine.resume_from(ws, checkpoint)


__all__ = [
    "Budget",
    "Engine",
    "RunConfig",
    "RunStatus",
    "apply_overrides",
    "enforce_budget",
    "load_config",
    "read_checkpoint",
    "resume",
    "run",
    "set_ablation",
]
