"""Role catalog: Tier-1 specialists, Tier-2 leaf workers, helper template, log-entry format."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

from filebus.agent_core import AgentProfile, Directive
from filebus.errors import ConfigError, UnknownRole, UnknownTool
from filebus.workspace_bus import PermissionScope, Workspace

try:  # pragma: no cover
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

ORCHESTRATOR = "orchestrator"
COMPREHENSION = "comprehension"
PRIORITIZATION = "prioritization"
IMPLEMENTATION = "implementation"
EXPERIMENTATION = "experimentation"
HELPER = "helper"

TIER1_ROLES = (COMPREHENSION, PRIORITIZATION, IMPLEMENTATION, EXPERIMENTATION, HELPER)
NATIVE_TOOL_IDS = frozenset({"read", "write", "append", "shell", "search"})

IMPL_LOG = "agent/impl_log.md"
EXP_LOG = "agent/exp_log.md"
ITERATION_LOGS = (IMPL_LOG, EXP_LOG)


@dataclass(frozen=True)
class RoleCatalog:
    profiles: dict[str, AgentProfile]
    helper_template: AgentProfile
    helper_write_allowlist: frozenset[str] = frozenset()
    source: str = ""

    def __post_init__(self) -> None:
        tier0 = [p for p in self.profiles.values() if p.tier == 0]
        if len(tier0) != 1:
            raise ConfigError(f"catalog needs exactly one tier-0 role, found {len(tier0)}")
        missing = set(TIER1_ROLES) - {p.role_id for p in self.profiles.values() if p.tier == 1}
        if missing:
            raise ConfigError(f"catalog is missing tier-1 roles: {sorted(missing)}")
        for p in self.profiles.values():
            for child in p.subagent_role_ids:
                if child not in self.profiles or self.profiles[child].tier != 2:
                    raise ConfigError(f"{p.role_id}: subagent {child!r} is not a tier-2 role")

    @property
    def orchestrator(self) -> AgentProfile:
        return next(p for p in self.profiles.values() if p.tier == 0)

    def tier(self, n: int) -> list[AgentProfile]:
        return [self.profiles[k] for k in sorted(self.profiles) if self.profiles[k].tier == n]

    def subagents(self) -> dict[str, AgentProfile]:
        return {p.role_id: p for p in self.tier(2)}


def _scope(role_id: str, spec: dict) -> PermissionScope:
    return PermissionScope(
        role_id,
        writable=frozenset(spec.get("writable", ())),
        appendable=frozenset(spec.get("appendable", ())),
    )


def load_catalog(path: str | os.PathLike | None = None) -> RoleCatalog:
    """Load a role catalog; with no path, the bundled default."""
    if path is None:
        base = resources.files("filebus") / "assets"
        raw = (base / "roles.toml").read_bytes()
        read_prompt = lambda rel: (base / rel).read_text(encoding="utf-8")  # noqa: E731
        source = "<bundled>"
    else:
        path = Path(path)
        raw = path.read_bytes()
        read_prompt = lambda rel: (path.parent / rel).read_text(encoding="utf-8")  # noqa: E731
        source = str(path)
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    profiles: dict[str, AgentProfile] = {}
    for spec in data.get("role", []):
        rid = spec["id"]
        if rid in profiles:
            raise ConfigError(f"duplicate role {rid!r}")
        unknown = set(spec.get("tools", ())) - NATIVE_TOOL_IDS
        if unknown:
            raise ConfigError(f"{rid}: unknown tools {sorted(unknown)}")
        prompt = read_prompt(spec["prompt"]) if "prompt" in spec else ""
        profiles[rid] = AgentProfile(
            role_id=rid,
            tier=int(spec["tier"]),
            scope=_scope(rid, spec),
            tool_ids=tuple(spec.get("tools", ())),
            subagent_role_ids=tuple(spec.get("subagents", ())),
            backend_binding=spec.get("backend", "default"),
            system_directive=prompt.strip(),
        )
    if HELPER not in profiles:
        raise ConfigError("catalog has no helper role")
    allow = frozenset(data.get("helper", {}).get("write_allowlist", ()))
    return RoleCatalog(profiles, profiles[HELPER], allow, source)


def scope_for_role(catalog: RoleCatalog, role_id: str) -> PermissionScope:
    try:
        return catalog.profiles[role_id].scope
    except KeyError:
        raise UnknownRole(role_id) from None


_helper_counter = iter(range(1, 1 << 62))


def make_helper(
    catalog: RoleCatalog,
    purpose: str,
    extra_tools: list[str] | tuple[str, ...] = (),
    grant: tuple[str, ...] = (),
    role_id: str | None = None,
) -> AgentProfile:
    """Instantiate a Generic Helper. Write scope only via ``grant`` within the catalog allowlist."""
    if not purpose:
        raise ValueError("helper purpose must be non-empty")
    unknown = [t for t in extra_tools if t not in NATIVE_TOOL_IDS]
    if unknown:
        raise UnknownTool(", ".join(unknown))
    outside = [g for g in grant if g not in catalog.helper_write_allowlist]
    if outside:
        raise ConfigError(f"helper write grant not in allowlist: {outside}")
    rid = role_id or f"{HELPER}-{next(_helper_counter)}"
    template = catalog.helper_template
    tools = tuple(dict.fromkeys(template.tool_ids + tuple(extra_tools)))
    return replace(
        template,
        role_id=rid,
        scope=PermissionScope(rid, writable=frozenset(grant)),
        tool_ids=tools,
        description=purpose,
    )


def make_helper_profile(runtime, template: AgentProfile, purpose: str) -> AgentProfile:
    """Helper instance for one Agent-as-Tool call; ids come from the run's counter."""
    rid = runtime.new_invocation_id(HELPER)
    return replace(template, role_id=rid, scope=replace(template.scope, role_id=rid), description=purpose)


# implementation modes


class ImplementationMode(str, Enum):
    FULL = "full"
    FIX = "fix"


def submission_empty(ws: Workspace) -> bool:
    return ws.is_dir_empty("submission")


def permissible_modes(ws: Workspace) -> list[str]:
    return [ImplementationMode.FULL.value] if submission_empty(ws) else [ImplementationMode.FIX.value]


def check_mode(profile: AgentProfile, directive: Directive, ws: Workspace) -> str | None:
    """Return a rejection reason if the directive's mode is not allowed; checked before any backend call."""
    if profile.role_id != IMPLEMENTATION:
        return None
    mode = directive.args.get("mode")
    if mode is None:
        return None
    if mode not in (ImplementationMode.FULL.value, ImplementationMode.FIX.value):
        return f"ModeRejected: unknown mode {mode!r}"
    empty = submission_empty(ws)
    if mode == ImplementationMode.FIX.value and empty:
        return "ModeRejected: fix mode requires a non-empty submission/"
    if mode == ImplementationMode.FULL.value and not empty and not directive.args.get("rebuild"):
        return "ModeRejected: full mode refused over an existing build without rebuild=true"
    return None


# iteration logs

LOG_HEADER = "## iteration {n} — {role} — {ts}"
_HEADER_RE = re.compile(r"^## iteration (\d+) — (\S+) — (\S+)$", re.MULTILINE)


@dataclass(frozen=True)
class IterationLogEntry:
    iteration: int
    role: str
    timestamp: str
    body: str = field(default="")


def format_log_entry(entry: IterationLogEntry) -> bytes:
    if not entry.body:
        raise ValueError("log entry body must be non-empty")
    if entry.iteration < 1:
        raise ValueError("iteration numbers start at 1")
    if not re.fullmatch(r"\S+", entry.role) or not re.fullmatch(r"\S+", entry.timestamp):
        raise ValueError("role and timestamp must not contain whitespace")
    if _HEADER_RE.search(entry.body):
        raise ValueError("log entry body contains a header line")
    header = LOG_HEADER.format(n=entry.iteration, role=entry.role, ts=entry.timestamp)
    return f"{header}\n{entry.body}\n\n".encode("utf-8")


def parse_log_entries(data: bytes | str) -> list[IterationLogEntry]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    headers = list(_HEADER_RE.finditer(text))
    if headers and headers[0].start() != 0 or (not headers and text):
        raise ValueError("log does not start with an iteration header")
    out = []
    for i, m in enumerate(headers):
        end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        chunk = text[m.end() + 1 : end]
        if not chunk.endswith("\n\n"):
            raise ValueError(f"iteration {m.group(1)}: entry not terminated by a blank line")
        out.append(IterationLogEntry(int(m.group(1)), m.group(2), m.group(3), chunk[:-2]))
    return out


def parse_log_entry(data: bytes | str) -> IterationLogEntry:
    entries = parse_log_entries(data)
    if len(entries) != 1:
        raise ValueError(f"expected one entry, found {len(entries)}")
    return entries[0]


def next_iteration(existing: bytes) -> int:
    entries = parse_log_entries(existing) if existing else []
    return entries[-1].iteration + 1 if entries else 1
