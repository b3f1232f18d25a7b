"""Backend action wire format.

A backend turn is a single JSON object, either a tool call::

    {"tool": "<tool_id>", "args": {...}, "thought": "<optional>"}

or a finish::

    {"finish": {"status": "completed|blocked|failed", "summary": "<text>", "artifacts": ["<path>", ...]}}

Unknown fields are ignored. Missing or mistyped required fields raise
MalformedAction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from filebus.errors import MalformedAction

STATUSES = ("completed", "blocked", "failed")


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: dict = field(default_factory=dict)
    thought: str = ""


@dataclass(frozen=True)
class Finish:
    status: str
    summary: str
    artifacts: tuple[str, ...] = ()


Action = ToolCall | Finish


def parse_action(raw: bytes | str | dict) -> Action:
    if isinstance(raw, dict):
        obj = raw
    else:
        try:
            obj = json.loads(raw)
        except (ValueError, UnicodeDecodeError) as exc:
            raise MalformedAction(f"not JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedAction("action must be a JSON object")
    if "finish" in obj:
        fin = obj["finish"]
        if not isinstance(fin, dict):
            raise MalformedAction("finish must be an object")
        status = fin.get("status")
        summary = fin.get("summary")
        artifacts = fin.get("artifacts", [])
        if status not in STATUSES:
            raise MalformedAction(f"bad finish status {status!r}")
        if not isinstance(summary, str):
            raise MalformedAction("finish.summary must be a string")
        if not isinstance(artifacts, list) or not all(isinstance(a, str) for a in artifacts):
            raise MalformedAction("finish.artifacts must be a list of strings")
        return Finish(status, summary, tuple(artifacts))
    if "tool" in obj:
        tool = obj["tool"]
        args = obj.get("args", {})
        thought = obj.get("thought", "")
        if not isinstance(tool, str) or not tool:
            raise MalformedAction("tool must be a non-empty string")
        if not isinstance(args, dict):
            raise MalformedAction("args must be an object")
        if not isinstance(thought, str):
            thought = ""
        return ToolCall(tool, args, thought)
    raise MalformedAction("action needs 'tool' or 'finish'")


def encode_action(action: Action) -> bytes:
    if isinstance(action, Finish):
        obj = {"finish": {"status": action.status, "summary": action.summary, "artifacts": list(action.artifacts)}}
    else:
        obj = {"tool": action.tool, "args": action.args}
        if action.thought:
            obj["thought"] = action.thought
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), sort_keys=True).encode()
