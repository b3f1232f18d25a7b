from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from filebus.actions import Finish, ToolCall, encode_action, parse_action
from filebus.errors import BackendFailure, ConfigError, InvalidAction, MalformedAction, NoMatchingRule, ParseError
from filebus.model_backend import HttpBackend, ModelRequest, ScriptedBackend, load_scenario, render_transcript

from conftest import fixture_dir


def scenario(tmp_path, *lines):
    p = tmp_path / "s.jsonl"
    p.write_text("\n".join(json.dumps(x) if not isinstance(x, str) else x for x in lines) + "\n")
    return p


def req(role="comprehension", turn=0, directive="", events=()):
    return ModelRequest(role, "", directive, "", tuple(events), (), "inv-1", turn)


FIN = {"finish": {"status": "completed", "summary": "ok", "artifacts": []}}


def test_parse_action_forms():
    assert parse_action(b'{"tool":"read","args":{"path":"a"}}') == ToolCall("read", {"path": "a"}, "")
    f = parse_action(json.dumps(FIN))
    assert isinstance(f, Finish) and f.status == "completed"
    assert parse_action(encode_action(f)) == f
    for bad in (b"not json", b"[]", b'{"tool": 3}', b'{"finish": {"status": "meh", "summary": ""}}', b'{}'):
        with pytest.raises(MalformedAction):
            parse_action(bad)


def test_first_match_wins(tmp_path):
    p = scenario(
        tmp_path,
        {"match": {"role": "comprehension", "turn": 0, "transcript_contains": "NEEDLE"},
         "respond": {"tool": "read", "args": {"path": "x"}}},
        {"match": {"role": "comprehension", "turn": 0}, "respond": FIN},
    )
    b = ScriptedBackend(load_scenario(p))
    assert json.loads(b.complete(req()).raw) == FIN
    needle = [{"type": "note", "text": "the NEEDLE is here"}]
    assert json.loads(b.complete(req(events=needle)).raw)["tool"] == "read"


def test_directive_guard_and_turn(tmp_path):
    p = scenario(
        tmp_path,
        {"match": {"role": "implementation", "directive_contains": '"mode": "fix"'}, "respond": FIN},
        {"match": {"role": "implementation", "turn": 2}, "respond": {"tool": "read", "args": {"path": "a"}}},
    )
    b = ScriptedBackend(load_scenario(p))
    assert json.loads(b.complete(req("implementation", 5, 'x [args {"mode": "fix"}]')).raw) == FIN
    assert json.loads(b.complete(req("implementation", 2)).raw)["tool"] == "read"
    with pytest.raises(NoMatchingRule):
        b.complete(req("implementation", 3))


def test_helper_instances_match_template(tmp_path):
    b = ScriptedBackend(load_scenario(scenario(tmp_path, {"match": {"role": "helper"}, "respond": FIN})))
    assert b.complete(req("helper-000007"))
    with pytest.raises(NoMatchingRule):
        b.complete(req("helperish"))


def test_load_errors(tmp_path):
    with pytest.raises(ParseError) as ei:
        load_scenario(scenario(tmp_path, {"match": {"role": "x"}, "respond": FIN}, "{broken"))
    assert ei.value.line == 2
    with pytest.raises(InvalidAction) as ei:
        load_scenario(scenario(tmp_path, "# comment", {"match": {"role": "x"}, "respond": {"nope": 1}}))
    assert ei.value.line == 2
    with pytest.raises(ParseError):
        load_scenario(scenario(tmp_path, "", "# only comments"))
    with pytest.raises(ParseError):
        load_scenario(scenario(tmp_path, {"match": {"turn": 0}, "respond": FIN}))


def test_bundled_scenarios_validate():
    for name in ("toy", "large", "continuity", "failing", "deep_spawn", "slow_tool"):
        s = load_scenario(fixture_dir(name) / "scenario.jsonl")
        assert s.name == name and s.steps


def test_toy_scenario_size():
    assert len(load_scenario(fixture_dir("toy") / "scenario.jsonl").steps) >= 10


def test_render_transcript():
    text = render_transcript([
        {"type": "directive", "text": "go", "role": "implementation"},
        {"type": "tool_invocation", "tool": "read", "args": {"path": "a"}},
        {"type": "tool_result", "tool": "read", "status": "failed", "reason": "NotFound", "output": "x"},
        {"type": "summary", "role": "r", "status": "completed", "text": "t", "artifacts": ["a", "b"]},
        {"type": "mapref", "revision": 4},
        {"type": "note", "text": "n"},
    ])
    assert text.splitlines() == [
        "directive -> implementation: go",
        'call read {"path": "a"}',
        "result read failed NotFound: x",
        "summary r completed: t artifacts=[a,b]",
        "map rev=4",
        "note: n",
    ]


# http backend against a local server


class _Handler(BaseHTTPRequestHandler):
    responses: list = []
    seen: list = []

    def do_POST(self):  # noqa: N802
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((dict(self.headers), body))
        code, payload = type(self).responses.pop(0)
        raw = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *a):
        pass


@pytest.fixture
def server():
    _Handler.responses, _Handler.seen = [], []
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv, f"http://127.0.0.1:{srv.server_address[1]}/v1/chat/completions"
    srv.shutdown()


def _ok(content):
    return 200, {"choices": [{"message": {"content": content}}]}


def test_http_success(server):
    _, url = server
    _Handler.responses = [_ok(json.dumps(FIN))]
    b = HttpBackend(url, key="k", model="m", timeout=5)
    raw = b.complete(req(events=[{"type": "note", "text": "hello"}])).raw
    assert json.loads(raw) == FIN
    headers, body = _Handler.seen[0]
    assert headers["Authorization"] == "Bearer k"
    assert body["model"] == "m"
    assert "note: hello" in body["messages"][1]["content"]


def test_http_retries_then_succeeds(server):
    _, url = server
    sleeps = []
    _Handler.responses = [(500, b"oops"), (200, b"garbage"), _ok("{}")]
    b = HttpBackend(url, timeout=5, attempts=3, backoff=0.5, sleep=sleeps.append)
    assert b.complete(req()).raw == b"{}"
    assert sleeps == [0.5, 1.0]


def test_http_gives_up(server):
    _, url = server
    _Handler.responses = [(500, b"x")] * 3
    with pytest.raises(BackendFailure):
        HttpBackend(url, timeout=5, attempts=3, sleep=lambda s: None).complete(req())


def test_http_from_env():
    with pytest.raises(ConfigError):
        HttpBackend.from_env({})
    b = HttpBackend.from_env({"FILEBUS_MODEL_URL": "http://x", "FILEBUS_MODEL_NAME": "m"})
    assert (b.url, b.model, b.key) == ("http://x", "m", None)
