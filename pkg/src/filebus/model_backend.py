"""Decision sources behind every agent.

Two backends share the ``complete(request) -> ModelResponse`` interface:

* :class:`ScriptedBackend` answers from a rule table (a pure function of the
  scenario and the request), which is what makes whole runs replayable.
* :class:`HttpBackend` forwards to a chat-completions style endpoint.
"""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from filebus.actions import parse_action
from filebus.errors import BackendFailure, ConfigError, InvalidAction, MalformedAction, NoMatchingRule, ParseError


@dataclass(frozen=True)
class ModelRequest:
    role_id: str
    system_directive: str
    directive: str
    rendered_map: str
    local_events: tuple[dict, ...] = ()
    available_tools: tuple[dict, ...] = ()
    invocation_id: str = ""
    turn: int = 0

    def transcript_text(self) -> str:
        return render_transcript(self.local_events)


@dataclass(frozen=True)
class ModelResponse:
    raw: bytes


class Backend(Protocol):
    def complete(self, request: ModelRequest) -> ModelResponse: ...


def render_transcript(events) -> str:
    """Plain-text transcript used both in prompts and for scripted guards."""
    lines = []
    for ev in events:
        t = ev.get("type")
        if t == "directive":
            target = ev.get("role")
            lines.append(f"directive{' -> ' + target if target else ''}: {ev.get('text', '')}")
        elif t == "tool_invocation":
            args = json.dumps(ev.get("args", {}), sort_keys=True, ensure_ascii=False)
            lines.append(f"call {ev.get('tool')} {args}")
        elif t == "tool_result":
            reason = f" {ev['reason']}" if ev.get("reason") else ""
            lines.append(f"result {ev.get('tool')} {ev.get('status')}{reason}: {ev.get('output', '')}")
        elif t == "summary":
            arts = ",".join(ev.get("artifacts", []))
            lines.append(f"summary {ev.get('role', '')} {ev.get('status')}: {ev.get('text', '')} artifacts=[{arts}]")
        elif t == "mapref":
            lines.append(f"map rev={ev.get('revision')}")
        else:
            lines.append(f"note: {ev.get('text', '')}")
    return "\n".join(lines)


@dataclass(frozen=True)
class ScriptedRule:
    role: str
    respond: bytes
    turn: int | None = None
    directive_contains: str | None = None
    transcript_contains: str | None = None
    line: int = 0

    def matches(self, request: ModelRequest, transcript: str) -> bool:
        # helper instances are named "<template>-<n>"; rules may target the template
        if request.role_id != self.role and not request.role_id.startswith(self.role + "-"):
            return False
        if self.turn is not None and self.turn != request.turn:
            return False
        if self.directive_contains is not None and self.directive_contains not in request.directive:
            return False
        if self.transcript_contains is not None and self.transcript_contains not in transcript:
            return False
        return True


@dataclass(frozen=True)
class ScriptedScenario:
    name: str
    steps: tuple[ScriptedRule, ...]
    metadata: dict = field(default_factory=dict)


class ScriptedBackend:
    """First matching rule wins. Stateless, so safe for concurrent use."""

    def __init__(self, scenario: ScriptedScenario):
        self.scenario = scenario

    def complete(self, request: ModelRequest) -> ModelResponse:
        transcript = request.transcript_text()
        for rule in self.scenario.steps:
            if rule.matches(request, transcript):
                return ModelResponse(rule.respond)
        raise NoMatchingRule(
            f"no rule for role={request.role_id} turn={request.turn} in scenario {self.scenario.name!r}"
        )


def load_scenario(path: str | os.PathLike) -> ScriptedScenario:
    """Parse a line-delimited JSON scenario, validating every response up front.

    A line whose object has a ``"scenario"`` key carries metadata rather than a rule.
    Blank lines and lines starting with ``#`` are skipped.
    """
    path = Path(path)
    rules: list[ScriptedRule] = []
    meta: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                obj = json.loads(stripped)
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("rule must be an object", lineno)
            if "scenario" in obj:
                meta.update(obj["scenario"])
                continue
            match, respond = obj.get("match"), obj.get("respond")
            if not isinstance(match, dict) or not isinstance(match.get("role"), str):
                raise ParseError("rule needs match.role", lineno)
            if respond is None:
                raise ParseError("rule needs respond", lineno)
            try:
                parse_action(respond)
            except MalformedAction as exc:
                raise InvalidAction(str(exc), lineno) from exc
            turn = match.get("turn")
            if turn is not None and not isinstance(turn, int):
                raise ParseError("match.turn must be an integer", lineno)
            rules.append(
                ScriptedRule(
                    role=match["role"],
                    respond=json.dumps(respond, ensure_ascii=False, separators=(",", ":")).encode(),
                    turn=turn,
                    directive_contains=match.get("directive_contains"),
                    transcript_contains=match.get("transcript_contains"),
                    line=lineno,
                )
            )
    if not rules:
        raise ParseError("scenario contains no rules", 1)
    return ScriptedScenario(meta.get("name", path.stem), tuple(rules), meta)


class HttpBackend:
    """Chat-completions style client. The tool list is serialized into the system message."""

    def __init__(
        self,
        url: str,
        key: str | None = None,
        model: str | None = None,
        timeout: float = 120.0,
        attempts: int = 3,
        backoff: float = 1.0,
        sleep=time.sleep,
    ):
        self.url = url
        self.key = key
        self.model = model
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep

    @classmethod
    def from_env(cls, environ=os.environ, **kwargs) -> HttpBackend:
        url = environ.get("FILEBUS_MODEL_URL")
        if not url:
            raise ConfigError("FILEBUS_MODEL_URL is required for the http backend")
        return cls(url, environ.get("FILEBUS_MODEL_KEY"), environ.get("FILEBUS_MODEL_NAME"), **kwargs)

    def build_body(self, request: ModelRequest) -> dict:
        system = (
            f"{request.system_directive}\n\n"
            "Respond with exactly one JSON action object.\n"
            f"Available tools:\n{json.dumps(list(request.available_tools), sort_keys=True)}"
        )
        user = (
            f"Directive:\n{request.directive}\n\n"
            f"Workspace map:\n{request.rendered_map}\n"
            f"Transcript:\n{request.transcript_text()}"
        )
        body = {"messages": [{"role": "system", "content": system}, {"role": "user", "content": user}]}
        if self.model:
            body["model"] = self.model
        return body

    def complete(self, request: ModelRequest) -> ModelResponse:
        data = json.dumps(self.build_body(request)).encode()
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        last: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            req = urllib.request.Request(self.url, data=data, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read())
                content = payload["choices"][0]["message"]["content"]
                return ModelResponse(content.encode() if isinstance(content, str) else bytes(content))
            except (urllib.error.URLError, OSError, ValueError, KeyError, IndexError, TypeError) as exc:
                last = exc
        raise BackendFailure(f"http backend failed after {self.attempts} attempts: {last}")


def complete(backend: Backend, request: ModelRequest) -> ModelResponse:
    return backend.complete(request)
