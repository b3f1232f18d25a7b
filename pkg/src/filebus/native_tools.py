"""Native tools: sandboxed shell, scope-checked file tools, fixture-backed search.

All of them are registered in the same registry as Agent-kind tools and
return :class:`ToolResult` values; kernel errors become Failed results rather
than exceptions so an agent loop never crashes on a bad tool call.
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import threading
import time
from dataclasses import dataclass
from importlib import resources

from filebus.agent_core import COMPLETED, FAILED, NATIVE, ToolContext, ToolRegistry, ToolResult
from filebus.errors import (
    ArtifactExists,
    IoFailure,
    NotFound,
    PathTraversal,
    PayloadTooLarge,
    PermissionDenied,
    ProviderUnavailable,
    SpawnFailure,
    WorkingDirEscape,
)
from filebus.role_profiles import ITERATION_LOGS, IterationLogEntry, format_log_entry, next_iteration
from filebus.workspace_bus import DeltaOp, PermissionScope, Workspace, WorkspaceDelta, normalize_path

DEFAULT_TIMEOUT_S = 300.0
DEFAULT_OUTPUT_CAP = 64 * 1024
TIMEOUT_EXIT_CODE = -124
ENV_ALLOWLIST = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "TZ")
READ_OUTPUT_CAP = 64 * 1024


@dataclass(frozen=True)
class ShellRequest:
    command: str
    working_dir: str = "."
    timeout: float = DEFAULT_TIMEOUT_S
    output_cap: int = DEFAULT_OUTPUT_CAP


@dataclass(frozen=True)
class ShellResult:
    exit_code: int
    stdout_tail: bytes
    stderr_tail: bytes
    duration: float
    timed_out: bool
    stdout_dropped: int = 0
    stderr_dropped: int = 0
    changed_paths: tuple[str, ...] = ()

    def render(self) -> str:
        def stream(name: str, tail: bytes, dropped: int) -> str:
            marker = f"[... {dropped} earlier bytes truncated ...]\n" if dropped else ""
            return f"--- {name} ---\n{marker}{tail.decode('utf-8', errors='replace')}"

        head = f"exit={self.exit_code}" + (" timed_out" if self.timed_out else "")
        return "\n".join(
            [head, stream("stdout", self.stdout_tail, self.stdout_dropped),
             stream("stderr", self.stderr_tail, self.stderr_dropped)]
        )


class _Tail:
    """Keeps the last ``cap`` bytes of a stream."""

    def __init__(self, cap: int):
        self.cap = cap
        self.buf = bytearray()
        self.total = 0

    def feed(self, chunk: bytes) -> None:
        self.total += len(chunk)
        self.buf += chunk
        if len(self.buf) > self.cap:
            del self.buf[: len(self.buf) - self.cap]

    @property
    def dropped(self) -> int:
        return self.total - len(self.buf)


def _drain(pipe, tail: _Tail) -> None:
    try:
        for chunk in iter(lambda: pipe.read(65536), b""):
            tail.feed(chunk)
    except (OSError, ValueError):
        pass


def scrubbed_env(extra: dict[str, str] | None = None) -> dict[str, str]:
    env = {k: os.environ[k] for k in ENV_ALLOWLIST if k in os.environ}
    env.setdefault("PATH", "/usr/local/bin:/usr/bin:/bin")
    env["PYTHONHASHSEED"] = "0"
    env.update(extra or {})
    return env


def exec_shell(
    request: ShellRequest,
    scope: PermissionScope,
    workspace: Workspace,
    invocation_id: str = "",
) -> ShellResult:
    """Run ``request.command`` under ``/bin/sh`` inside the workspace.

    The child's file effects are not intercepted; the kernel rescans afterwards
    and attributes every change to ``scope.role_id`` with ShellEffect records.
    """
    if not request.command.strip():
        raise ValueError("command must be non-empty")
    try:
        rel = "." if request.working_dir in ("", ".") else normalize_path(request.working_dir)
    except PathTraversal as exc:
        raise WorkingDirEscape(str(exc)) from exc
    cwd = (workspace.root / rel).resolve()
    root = workspace.root.resolve()
    if cwd != root and root not in cwd.parents:
        raise WorkingDirEscape(request.working_dir)
    if not cwd.is_dir():
        raise WorkingDirEscape(f"not a directory: {request.working_dir}")

    out, err = _Tail(request.output_cap), _Tail(request.output_cap)
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            ["/bin/sh", "-c", request.command],
            cwd=cwd,
            env=scrubbed_env(),
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )
    except OSError as exc:
        raise SpawnFailure(str(exc)) from exc
    readers = [
        threading.Thread(target=_drain, args=(proc.stdout, out), daemon=True),
        threading.Thread(target=_drain, args=(proc.stderr, err), daemon=True),
    ]
    for t in readers:
        t.start()
    timed_out = False
    try:
        proc.wait(timeout=request.timeout)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.wait()
    # descendants that left the process group may keep the pipes open; do not wait on them
    for t in readers:
        t.join(timeout=1.0)
    duration = time.monotonic() - start
    changed = workspace.reconcile_external(scope.role_id, invocation_id)
    return ShellResult(
        TIMEOUT_EXIT_CODE if timed_out else proc.returncode,
        bytes(out.buf),
        bytes(err.buf),
        duration,
        timed_out,
        out.dropped,
        err.dropped,
        tuple(changed),
    )


# file tools


def _kernel_failure(tool: str, exc: Exception) -> ToolResult:
    if isinstance(exc, PermissionDenied):
        reason = exc.reason
    elif isinstance(exc, PathTraversal):
        reason = "Traversal"
    else:
        reason = type(exc).__name__
    return ToolResult(tool, "", NATIVE, FAILED, f"{reason}: {exc}", reason)


_KERNEL_ERRORS = (PermissionDenied, PathTraversal, NotFound, PayloadTooLarge, ArtifactExists, IoFailure)


def read_tool(ctx: ToolContext, args: dict) -> ToolResult:
    path = args.get("path")
    if not isinstance(path, str):
        return ToolResult("read", "", NATIVE, FAILED, "read needs a path", "BadArguments")
    offset, length = args.get("offset"), args.get("len")
    window = None
    if offset is not None or length is not None:
        window = (int(offset or 0), int(length if length is not None else READ_OUTPUT_CAP))
    try:
        data = ctx.workspace.read_artifact(path, ctx.profile.scope, window)
    except _KERNEL_ERRORS as exc:
        return _kernel_failure("read", exc)
    text = data[:READ_OUTPUT_CAP].decode("utf-8", errors="replace")
    if len(data) > READ_OUTPUT_CAP:
        text += f"\n[... {len(data) - READ_OUTPUT_CAP} more bytes; use offset/len ...]"
    return ToolResult("read", "", NATIVE, COMPLETED, text)


def _apply(ctx: ToolContext, tool: str, op: DeltaOp) -> ToolResult:
    delta = WorkspaceDelta((op,), ctx.profile.role_id, ctx.invocation_id)
    try:
        ctx.workspace.apply_delta(delta, ctx.profile.scope)
    except _KERNEL_ERRORS as exc:
        return _kernel_failure(tool, exc)
    return ToolResult(tool, "", NATIVE, COMPLETED, f"{op.kind.value} {op.path} ({len(op.payload)} bytes)", ops=(op,))


def write_tool(ctx: ToolContext, args: dict) -> ToolResult:
    path, content = args.get("path"), args.get("content")
    if not isinstance(path, str) or not isinstance(content, str):
        return ToolResult("write", "", NATIVE, FAILED, "write needs path and content", "BadArguments")
    with ctx.workspace.transaction():
        try:
            exists = ctx.workspace.exists(path)
        except PathTraversal as exc:
            return _kernel_failure("write", exc)
        op = DeltaOp.overwrite(path, content) if exists else DeltaOp.create(path, content)
        return _apply(ctx, "write", op)


def append_tool(ctx: ToolContext, args: dict) -> ToolResult:
    """Append to a file. Appends to the iteration logs are wrapped as numbered entries."""
    path, content = args.get("path"), args.get("content")
    if not isinstance(path, str) or not isinstance(content, str):
        return ToolResult("append", "", NATIVE, FAILED, "append needs path and content", "BadArguments")
    with ctx.workspace.transaction():
        try:
            norm = normalize_path(path)
        except PathTraversal as exc:
            return _kernel_failure("append", exc)
        payload: bytes | str = content
        if norm in ITERATION_LOGS and content:
            try:
                existing = ctx.workspace.read_artifact(norm) if ctx.workspace.exists(norm) else b""
                n = next_iteration(existing)
                payload = format_log_entry(
                    IterationLogEntry(n, ctx.profile.role_id, ctx.runtime.clock.iso(), content.rstrip("\n"))
                )
            except ValueError as exc:
                return ToolResult("append", "", NATIVE, FAILED, f"bad log entry: {exc}", "BadArguments")
        return _apply(ctx, "append", DeltaOp.append(norm, payload))


def shell_tool(ctx: ToolContext, args: dict) -> ToolResult:
    cmd = args.get("cmd")
    if not isinstance(cmd, str) or not cmd.strip():
        return ToolResult("shell", "", NATIVE, FAILED, "shell needs cmd", "BadArguments")
    req = ShellRequest(cmd, args.get("cwd") or ".", float(args.get("timeout_s") or DEFAULT_TIMEOUT_S))
    try:
        res = exec_shell(req, ctx.profile.scope, ctx.workspace, ctx.invocation_id)
    except (WorkingDirEscape, SpawnFailure) as exc:
        return ToolResult("shell", "", NATIVE, FAILED, f"{type(exc).__name__}: {exc}", type(exc).__name__)
    if res.timed_out:
        return ToolResult("shell", "", NATIVE, FAILED, res.render(), "Timeout")
    status = COMPLETED if res.exit_code == 0 else FAILED
    return ToolResult("shell", "", NATIVE, status, res.render(), "" if status == COMPLETED else "ExitCode")


# search


class FixtureSearch:
    """Offline provider: exact (case-insensitive) query lookup in a canned index."""

    def __init__(self, index: dict[str, list[str]]):
        self.index = {k.lower(): list(v) for k, v in index.items()}

    @classmethod
    def bundled(cls) -> FixtureSearch:
        raw = (resources.files("filebus") / "assets" / "search_fixture.json").read_text(encoding="utf-8")
        return cls(json.loads(raw))

    def search(self, query: str) -> list[str]:
        return self.index.get(query.strip().lower(), [])


def search_tool(query: str, provider=None, fixture_mode: bool = True) -> ToolResult:
    if provider is None:
        if not fixture_mode:
            raise ProviderUnavailable("no search provider configured")
        provider = FixtureSearch.bundled()
    results = provider.search(query)
    return ToolResult("search", "", NATIVE, COMPLETED, "\n".join(results) if results else "(no results)")


def _search_adapter(ctx: ToolContext, args: dict) -> ToolResult:
    query = args.get("query")
    if not isinstance(query, str):
        return ToolResult("search", "", NATIVE, FAILED, "search needs query", "BadArguments")
    try:
        return search_tool(query, ctx.runtime.search_provider)
    except ProviderUnavailable as exc:
        return ToolResult("search", "", NATIVE, FAILED, str(exc), "ProviderUnavailable")


SIGNATURES = {
    "shell": {"cmd": "str", "cwd": "str?", "timeout_s": "int?"},
    "read": {"path": "str", "offset": "int?", "len": "int?"},
    "write": {"path": "str", "content": "str"},
    "append": {"path": "str", "content": "str"},
    "search": {"query": "str"},
}


def register_native_tools(registry: ToolRegistry) -> None:
    for tool_id, fn in (
        ("shell", shell_tool),
        ("read", read_tool),
        ("write", write_tool),
        ("append", append_tool),
        ("search", _search_adapter),
    ):
        registry.register_native(tool_id, fn, SIGNATURES[tool_id])
