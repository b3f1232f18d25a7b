"""File-as-Bus kernel: workspace state, scoped transactional deltas, audit trail.

The workspace is a plain directory tree. Every write goes through
:meth:`Workspace.apply_delta`, which validates the whole delta against the
caller's :class:`PermissionScope` before touching disk and rolls back from an
undo journal if the filesystem fails halfway. Each applied op is recorded in
``agent/.audit/audit.log`` (one JSON object per line) and its payload stored
content-addressed under ``agent/.audit_blobs/`` so the trail can be replayed
onto a fresh root bit-exactly.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import posixpath
import shutil
import stat
import tempfile
import threading
from collections.abc import Iterable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from filebus.clock import WallClock, format_ts
from filebus.errors import (
    ArtifactExists,
    ConfigError,
    IoFailure,
    NotFound,
    PathTraversal,
    PayloadTooLarge,
    PermissionDenied,
    RootNotEmpty,
)

try:  # pragma: no cover - version dependent
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

AUDIT_DIR = "agent/.audit/"
BLOB_DIR = "agent/.audit_blobs/"
ENGINE_DIR = "agent/.engine/"
AUDIT_LOG = AUDIT_DIR + "audit.log"
INDEX_FILE = AUDIT_DIR + "index.json"
CONFIG_FILE = AUDIT_DIR + "regions.json"
TRACE_LOG = ENGINE_DIR + "trace.log"

# Kernel bookkeeping; never writable through a delta, never part of the replayed tree.
KERNEL_PREFIXES = (AUDIT_DIR, BLOB_DIR)

MAX_PAYLOAD = 16 * 1024 * 1024
DIGEST_ALGO = "sha256"


class OpKind(str, Enum):
    CREATE_FILE = "CreateFile"
    OVERWRITE = "Overwrite"
    APPEND = "Append"
    CREATE_DIR = "CreateDir"


READ = "Read"


class DenyReason(str, Enum):
    OUT_OF_SCOPE = "OutOfScope"
    APPEND_ONLY = "AppendOnlyViolation"
    TRAVERSAL = "Traversal"


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: DenyReason | None = None

    def __bool__(self) -> bool:
        return self.allowed


ALLOW = Decision(True)


def deny(reason: DenyReason) -> Decision:
    return Decision(False, reason)


@dataclass(frozen=True)
class RegionDescriptor:
    prefix: str
    purpose: str
    append_only_paths: frozenset[str] = frozenset()
    subdirs: tuple[str, ...] = ()


@dataclass(frozen=True)
class RegionConfig:
    regions: tuple[RegionDescriptor, ...]

    def __post_init__(self) -> None:
        prefixes = [r.prefix for r in self.regions]
        for p in prefixes:
            if not p.endswith("/") or p.startswith("/") or ".." in p.split("/"):
                raise ConfigError(f"region prefix must be a relative directory ending in '/': {p!r}")
        for a in prefixes:
            for b in prefixes:
                if a != b and b.startswith(a):
                    raise ConfigError(f"overlapping region prefixes {a!r} and {b!r}")
        if len(set(prefixes)) != len(prefixes):
            raise ConfigError("duplicate region prefix")

    @property
    def append_only_paths(self) -> frozenset[str]:
        out: set[str] = set()
        for r in self.regions:
            out |= r.append_only_paths
        return frozenset(out)

    def is_append_only(self, path: str) -> bool:
        return any(pattern_matches(p, path) for p in self.append_only_paths)

    def region_for(self, path: str) -> RegionDescriptor | None:
        for r in self.regions:
            if pattern_matches(r.prefix, path):
                return r
        return None

    def to_dict(self) -> dict:
        return {
            "region": [
                {
                    "prefix": r.prefix,
                    "purpose": r.purpose,
                    "append_only": sorted(r.append_only_paths),
                    "dirs": list(r.subdirs),
                }
                for r in self.regions
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> RegionConfig:
        try:
            regions = tuple(
                RegionDescriptor(
                    prefix=r["prefix"],
                    purpose=r.get("purpose", ""),
                    append_only_paths=frozenset(r.get("append_only", ())),
                    subdirs=tuple(r.get("dirs", ())),
                )
                for r in data["region"]
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad region config: {exc}") from exc
        return cls(regions)

    @classmethod
    def load(cls, path: str | os.PathLike) -> RegionConfig:
        with open(path, "rb") as fh:
            try:
                return cls.from_dict(tomllib.load(fh))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc


def default_region_config() -> RegionConfig:
    return RegionConfig(
        (
            RegionDescriptor(
                "paper_analysis/",
                "paper understanding: structure, target metrics, ambiguities",
            ),
            RegionDescriptor(
                "submission/",
                "runnable reproduction repository with reproduce.sh entry point",
            ),
            RegionDescriptor(
                "agent/",
                "plans, iteration logs, experiment outputs",
                frozenset({"agent/impl_log.md", "agent/exp_log.md", TRACE_LOG}),
                ("agent/experiments/",),
            ),
        )
    )


@dataclass(frozen=True)
class PermissionScope:
    """Write scope of one role. Reads are never restricted inside the workspace."""

    role_id: str
    readable: frozenset[str] = frozenset({""})
    writable: frozenset[str] = frozenset()
    appendable: frozenset[str] = frozenset()

    @property
    def read_only(self) -> bool:
        return not self.writable and not self.appendable


def pattern_matches(pattern: str, path: str) -> bool:
    """Literal prefix patterns end in ``/``; anything else is an exact path."""
    if pattern == "":
        return True
    if pattern.endswith("/"):
        return path.startswith(pattern) or path == pattern[:-1]
    return path == pattern


def normalize_path(path: str) -> str:
    """Return the canonical workspace-relative form of ``path``.

    Raises PathTraversal for absolute paths, paths escaping the root, and
    anything that is not a plain relative string.
    """
    if not isinstance(path, str) or path == "":
        raise PathTraversal(f"invalid path {path!r}")
    if "\x00" in path or "\\" in path:
        raise PathTraversal(f"invalid character in path {path!r}")
    if path.startswith("/") or (len(path) > 1 and path[1] == ":"):
        raise PathTraversal(f"absolute path {path!r}")
    norm = posixpath.normpath(path)
    if norm == "." or norm == ".." or norm.startswith("../"):
        raise PathTraversal(f"path escapes workspace: {path!r}")
    return norm


def is_kernel_path(path: str) -> bool:
    return any(pattern_matches(p, path) for p in KERNEL_PREFIXES)


def check_permission(
    scope: PermissionScope,
    kind: OpKind | str,
    path: str,
    config: RegionConfig | None = None,
) -> Decision:
    config = config or default_region_config()
    try:
        norm = normalize_path(path)
    except PathTraversal:
        return deny(DenyReason.TRAVERSAL)
    if kind == READ:
        return ALLOW
    kind = OpKind(kind)
    if is_kernel_path(norm):
        return deny(DenyReason.OUT_OF_SCOPE)
    in_writable = any(pattern_matches(p, norm) for p in scope.writable)
    in_appendable = any(pattern_matches(p, norm) for p in scope.appendable)
    if not in_writable and not in_appendable:
        return deny(DenyReason.OUT_OF_SCOPE)
    growth_only = kind in (OpKind.APPEND, OpKind.CREATE_FILE)
    if config.is_append_only(norm) and not growth_only:
        return deny(DenyReason.APPEND_ONLY)
    if not in_writable and not growth_only:
        return deny(DenyReason.APPEND_ONLY)
    return ALLOW


@dataclass(frozen=True)
class DeltaOp:
    kind: OpKind
    path: str
    payload: bytes = b""

    @classmethod
    def create(cls, path: str, payload: bytes | str) -> DeltaOp:
        return cls(OpKind.CREATE_FILE, path, _as_bytes(payload))

    @classmethod
    def overwrite(cls, path: str, payload: bytes | str) -> DeltaOp:
        return cls(OpKind.OVERWRITE, path, _as_bytes(payload))

    @classmethod
    def append(cls, path: str, payload: bytes | str) -> DeltaOp:
        return cls(OpKind.APPEND, path, _as_bytes(payload))

    @classmethod
    def mkdir(cls, path: str) -> DeltaOp:
        return cls(OpKind.CREATE_DIR, path, b"")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "path": self.path, "digest": payload_digest(self.payload)}


@dataclass(frozen=True)
class WorkspaceDelta:
    ops: tuple[DeltaOp, ...]
    author_role: str
    invocation_id: str

    def __len__(self) -> int:
        return len(self.ops)

    def ops_bytes(self) -> bytes:
        """Canonical encoding of the op list (payloads included), for equality checks."""
        h = hashlib.sha256()
        for op in self.ops:
            h.update(f"{op.kind.value}\0{op.path}\0{len(op.payload)}\0".encode())
            h.update(op.payload)
        return h.hexdigest().encode()


@dataclass(frozen=True)
class AuditRecord:
    sequence_no: int
    timestamp: str
    author_role: str
    invocation_id: str
    kind: str
    path: str
    digest: str | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.sequence_no,
                "ts": self.timestamp,
                "role": self.author_role,
                "invocation": self.invocation_id,
                "kind": self.kind,
                "path": self.path,
                "digest": self.digest,
            },
            ensure_ascii=False,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> AuditRecord:
        d = json.loads(line)
        return cls(d["seq"], d["ts"], d["role"], d["invocation"], d["kind"], d["path"], d["digest"])


SHELL_EFFECT = "ShellEffect"
DENIED = "Denied"
# ShellEffect digests that are not content hashes
EFFECT_DELETED = "deleted"
EFFECT_DIR = "dir"
EFFECT_RMDIR = "rmdir"


def payload_digest(payload: bytes) -> str:
    return f"{DIGEST_ALGO}:{hashlib.sha256(payload).hexdigest()}"


def _as_bytes(payload: bytes | str) -> bytes:
    return payload.encode("utf-8") if isinstance(payload, str) else bytes(payload)


@dataclass(frozen=True)
class ReadRecord:
    role_id: str
    path: str
    offset: int
    length: int | None


class _FifoLock:
    """Mutex that admits waiters strictly in arrival order."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._next_ticket = 0
        self._serving = 0
        self._owner: int | None = None
        self._depth = 0

    @contextmanager
    def hold(self) -> Iterator[None]:
        me = threading.get_ident()
        with self._cond:
            if self._owner == me:
                self._depth += 1
            else:
                ticket = self._next_ticket
                self._next_ticket += 1
                while self._serving != ticket:
                    self._cond.wait()
                self._owner = me
                self._depth = 1
        try:
            yield
        finally:
            with self._cond:
                self._depth -= 1
                if self._depth == 0:
                    self._owner = None
                    self._serving += 1
                    self._cond.notify_all()


@dataclass
class _Known:
    digest: str
    size: int
    mtime_ns: int


@dataclass
class Workspace:
    """A live handle on a workspace root. Safe to share across threads."""

    root: Path
    config: RegionConfig
    clock: object = field(default_factory=WallClock)
    max_payload: int = MAX_PAYLOAD
    revision: int = 0
    last_write: dict[str, int] = field(default_factory=dict)
    read_trace: list[ReadRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.root = Path(self.root)
        self._lock = _FifoLock()
        self._read_lock = threading.Lock()
        self._audit: list[AuditRecord] | None = None
        self._known_files: dict[str, _Known] = {}
        self._known_dirs: set[str] = set()
        self._blobs_stored: set[str] = set()

    # construction

    @classmethod
    def init(
        cls,
        root: str | os.PathLike,
        config: RegionConfig | None = None,
        clock=None,
        max_payload: int = MAX_PAYLOAD,
    ) -> Workspace:
        root = Path(root)
        config = config or default_region_config()
        try:
            if root.exists():
                if not root.is_dir():
                    raise IoFailure(f"{root} is not a directory")
                if any(root.iterdir()):
                    raise RootNotEmpty(str(root))
            root.mkdir(parents=True, exist_ok=True)
            for region in config.regions:
                (root / region.prefix).mkdir(parents=True, exist_ok=True)
                for sub in region.subdirs:
                    (root / sub).mkdir(parents=True, exist_ok=True)
            (root / AUDIT_DIR).mkdir(parents=True, exist_ok=True)
            (root / BLOB_DIR).mkdir(parents=True, exist_ok=True)
            (root / AUDIT_LOG).touch()
            _atomic_write(root / CONFIG_FILE, json.dumps(config.to_dict(), sort_keys=True).encode())
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        ws = cls(root, config, clock or WallClock(), max_payload)
        ws._write_index()
        ws._audit = []
        ws._rescan_known()
        return ws

    @classmethod
    def open(cls, root: str | os.PathLike, clock=None, max_payload: int = MAX_PAYLOAD) -> Workspace:
        root = Path(root)
        try:
            config = RegionConfig.from_dict(json.loads((root / CONFIG_FILE).read_text()))
            index = json.loads((root / INDEX_FILE).read_text())
        except FileNotFoundError as exc:
            raise NotFound(f"{root} is not an initialized workspace") from exc
        except (OSError, ValueError) as exc:
            raise IoFailure(str(exc)) from exc
        ws = cls(root, config, clock or WallClock(), max_payload)
        ws.revision = index["revision"]
        ws.last_write = dict(index["last_write"])
        ws._rescan_known()
        return ws

    # paths

    def _abs(self, rel: str) -> Path:
        return self.root / rel

    def _check_no_symlink(self, rel: str, cleared: set[str] | None = None) -> None:
        """Refuse paths with a symlink component. ``cleared`` caches prefixes already checked."""
        base = str(self.root)
        prefix = ""
        for part in rel.split("/"):
            prefix = f"{prefix}/{part}" if prefix else part
            if cleared is not None and prefix in cleared:
                continue
            if os.path.islink(os.path.join(base, prefix)):
                raise PathTraversal(f"symbolic link in path: {rel}")
            if cleared is not None and prefix != rel:
                cleared.add(prefix)

    # reads

    def read_artifact(
        self,
        path: str,
        scope: PermissionScope | None = None,
        window: tuple[int, int] | None = None,
    ) -> bytes:
        rel = normalize_path(path)
        self._check_no_symlink(rel)
        target = self._abs(rel)
        if not target.is_file():
            raise NotFound(rel)
        try:
            with open(target, "rb") as fh:
                if window is None:
                    data = fh.read()
                else:
                    offset, length = window
                    fh.seek(max(0, offset))
                    data = fh.read(max(0, length))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        with self._read_lock:
            self.read_trace.append(
                ReadRecord(
                    scope.role_id if scope else "",
                    rel,
                    window[0] if window else 0,
                    window[1] if window else None,
                )
            )
        return data

    def exists(self, path: str) -> bool:
        rel = normalize_path(path)
        return self._abs(rel).exists()

    def is_dir_empty(self, path: str) -> bool:
        d = self._abs(normalize_path(path))
        return not d.is_dir() or not any(p for p in d.rglob("*") if p.is_file())

    # writes

    @contextmanager
    def transaction(self) -> Iterator[None]:
        """Hold the delta queue, e.g. to read-then-append without interleaving."""
        with self._lock.hold():
            yield

    def apply_delta(self, delta: WorkspaceDelta, scope: PermissionScope) -> WorkspaceDelta:
        """Apply ``delta`` atomically under ``scope``; returns the applied delta.

        Raises PermissionDenied/PathTraversal (after logging one Denied record),
        PayloadTooLarge, ArtifactExists, or IoFailure. The tree is unchanged on
        any error.
        """
        if scope.role_id != delta.author_role:
            raise PermissionDenied(DenyReason.OUT_OF_SCOPE.value, "*", "*")
        if not delta.ops:
            return delta
        with self._lock.hold():
            plan, absent = self._validate(delta, scope)
            self._apply_plan(delta, plan, absent)
        return delta

    def _validate(
        self, delta: WorkspaceDelta, scope: PermissionScope
    ) -> tuple[list[tuple[DeltaOp, str]], set[str]]:
        plan: list[tuple[DeltaOp, str]] = []
        absent: set[str] = set()  # file targets not on disk before the delta
        virtual_files: dict[str, bool] = {}
        virtual_dirs: set[str] = set()
        cleared: set[str] = set()  # prefixes known to be neither symlinks nor files
        base = str(self.root)
        for i, op in enumerate(delta.ops):
            decision = check_permission(scope, op.kind, op.path, self.config)
            if not decision:
                self._record_denied(delta, op)
                if decision.reason is DenyReason.TRAVERSAL:
                    raise PathTraversal(f"op {i}: {op.path!r}")
                raise PermissionDenied(decision.reason.value, op.kind.value, op.path, i)
            rel = normalize_path(op.path)
            try:
                self._check_no_symlink(rel, cleared)
            except PathTraversal:
                self._record_denied(delta, op)
                raise
            if len(op.payload) > self.max_payload:
                raise PayloadTooLarge(f"{rel}: {len(op.payload)} bytes > {self.max_payload}")
            target = os.path.join(base, rel)
            try:
                mode = os.stat(target).st_mode
            except (FileNotFoundError, NotADirectoryError):
                mode = 0
            is_file = virtual_files[rel] if rel in virtual_files else stat.S_ISREG(mode)
            is_dir = rel in virtual_dirs or stat.S_ISDIR(mode)
            # parents must not be files
            parent = posixpath.dirname(rel)
            while parent and parent not in virtual_dirs:
                if virtual_files.get(parent) or (parent not in virtual_files and os.path.isfile(os.path.join(base, parent))):
                    raise IoFailure(f"parent of {rel} is a file")
                virtual_dirs.add(parent)
                parent = posixpath.dirname(parent)
            if op.kind is OpKind.CREATE_DIR:
                if is_file:
                    raise IoFailure(f"{rel} exists as a file")
                virtual_dirs.add(rel)
            else:
                if is_dir:
                    raise IoFailure(f"{rel} is a directory")
                if op.kind is OpKind.CREATE_FILE and is_file:
                    raise ArtifactExists(rel)
                if not is_file:
                    absent.add(rel)
                virtual_files[rel] = True
            plan.append((op, rel))
        return plan, absent

    def _apply_plan(self, delta: WorkspaceDelta, plan: list[tuple[DeltaOp, str]], absent: set[str]) -> None:
        journal: list[tuple[str, bytes | None]] = []
        created_dirs: list[str] = []
        dirs_ok: set[str] = set()
        final: dict[str, bytes] = {}
        stats: dict[str, os.stat_result] = {}  # taken right after the last write to each path
        base = str(self.root)
        try:
            for op, rel in plan:
                target = os.path.join(base, rel)
                if op.kind is OpKind.CREATE_DIR:
                    _mkdirs(target, dirs_ok, created_dirs)
                    continue
                if rel not in final:
                    before = None if rel in absent else _read_if_file(target)
                    journal.append((rel, before))
                    final[rel] = before or b""
                    parent = os.path.dirname(target)
                    if parent not in dirs_ok:
                        _mkdirs(parent, dirs_ok, created_dirs)
                stats.pop(rel, None)
                if op.kind is OpKind.APPEND:
                    with open(target, "ab") as fh:
                        fh.write(op.payload)
                    final[rel] += op.payload
                elif rel in absent:
                    # nothing to preserve: a failed write is undone by unlinking
                    fd = os.open(target, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
                    try:
                        _write_all(fd, op.payload)
                        stats[rel] = os.fstat(fd)
                    finally:
                        os.close(fd)
                    final[rel] = op.payload
                    continue
                else:
                    _atomic_write(Path(target), op.payload)
                    final[rel] = op.payload
        except OSError as exc:
            for rel, before in reversed(journal):
                target = self._abs(rel)
                if before is None:
                    target.unlink(missing_ok=True)
                else:
                    _atomic_write(target, before)
            for d in reversed(created_dirs):
                try:
                    os.rmdir(d)
                except OSError:
                    pass
            raise IoFailure(str(exc)) from exc

        self.revision += 1
        ts = self.clock.iso()
        records = []
        for op, rel in plan:
            digest = payload_digest(op.payload)
            self._store_blob(digest, op.payload)
            records.append(self._new_record(ts, delta.author_role, delta.invocation_id, op.kind.value, rel, digest))
            self._touch(rel)
        skip = len(base) + 1
        for d in created_dirs:
            self._known_dirs.add(d[skip:])
        for rel, content in final.items():
            st_ = stats.get(rel) or os.stat(os.path.join(base, rel))
            self._known_files[rel] = _Known(payload_digest(content), st_.st_size, st_.st_mtime_ns)
        self._persist_records(records)

    def _touch(self, rel: str) -> None:
        self.last_write[rel] = self.revision

    def _record_denied(self, delta: WorkspaceDelta, op: DeltaOp) -> None:
        rec = self._new_record(
            self.clock.iso(),
            delta.author_role,
            delta.invocation_id,
            DENIED,
            op.path,
            payload_digest(op.payload),
        )
        self._persist_records([rec])

    # audit

    @property
    def audit(self) -> list[AuditRecord]:
        if self._audit is None:
            self._audit = list(load_audit(self.root))
        return self._audit

    def export_audit(self) -> list[AuditRecord]:
        return list(self.audit)

    def _new_record(self, ts: str, role: str, inv: str, kind: str, path: str, digest: str | None) -> AuditRecord:
        return AuditRecord(len(self.audit) + 1, ts, role, inv, kind, path, digest)

    def _persist_records(self, records: list[AuditRecord]) -> None:
        if not records:
            return
        # sequence numbers are assigned one at a time, so fix them up here
        base = len(self.audit)
        records = [
            AuditRecord(base + i + 1, r.timestamp, r.author_role, r.invocation_id, r.kind, r.path, r.digest)
            for i, r in enumerate(records)
        ]
        text = "".join(r.to_json() + "\n" for r in records)
        try:
            with open(self._abs(AUDIT_LOG), "a", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self.audit.extend(records)
        self._write_index()

    def _store_blob(self, digest: str, payload: bytes) -> None:
        if digest in self._blobs_stored:
            return
        blob = os.path.join(str(self.root), BLOB_DIR, digest.split(":", 1)[1])
        if not os.path.exists(blob):
            _atomic_write(Path(blob), payload)
        self._blobs_stored.add(digest)

    def _write_index(self) -> None:
        _atomic_write(
            self._abs(INDEX_FILE),
            json.dumps({"revision": self.revision, "last_write": self.last_write}, sort_keys=True).encode(),
        )

    # external effects (shell)

    def _scan(self) -> tuple[dict[str, _Known], set[str]]:
        files: dict[str, _Known] = {}
        dirs: set[str] = set()
        for rel, st_, is_dir in _walk(self.root):
            if is_dir:
                dirs.add(rel)
                continue
            known = self._known_files.get(rel)
            if known and known.size == st_.st_size and known.mtime_ns == st_.st_mtime_ns:
                files[rel] = known
            else:
                files[rel] = _Known(_file_digest(self.root / rel), st_.st_size, st_.st_mtime_ns)
        return files, dirs

    def _rescan_known(self) -> None:
        self._known_files, self._known_dirs = self._scan()

    def reconcile_external(self, role_id: str, invocation_id: str) -> list[str]:
        """Record filesystem changes made outside the kernel (by a child process).

        Writes one ShellEffect audit record per changed path and returns the
        changed paths in sorted order.
        """
        with self._lock.hold():
            files, dirs = self._scan()
            changes: list[tuple[str, str]] = []
            for d in sorted(dirs - self._known_dirs):
                changes.append((d, EFFECT_DIR))
            for rel in sorted(files):
                if rel not in self._known_files or self._known_files[rel].digest != files[rel].digest:
                    changes.append((rel, files[rel].digest))
            for rel in sorted(set(self._known_files) - set(files)):
                changes.append((rel, EFFECT_DELETED))
            for d in sorted(self._known_dirs - dirs, reverse=True):
                changes.append((d, EFFECT_RMDIR))
            if not changes:
                return []
            self.revision += 1
            ts = self.clock.iso()
            records = []
            for rel, digest in changes:
                if digest.startswith(DIGEST_ALGO + ":"):
                    self._store_blob(digest, (self.root / rel).read_bytes())
                records.append(self._new_record(ts, role_id, invocation_id, SHELL_EFFECT, rel, digest))
                if digest in (EFFECT_DELETED, EFFECT_RMDIR):
                    self.last_write.pop(rel, None)
                else:
                    self._touch(rel)
            self._known_files, self._known_dirs = files, dirs
            self._persist_records(records)
            return [rel for rel, _ in changes]

    # digests

    def tree_digest(self, include_engine: bool = True) -> str:
        return tree_digest(self.root, include_engine=include_engine)

    def artifact_digest(self) -> str:
        """Digest of the artifact tree, excluding engine bookkeeping (trace, checkpoint)."""
        return tree_digest(self.root, include_engine=False)

    def artifact_bytes(self) -> int:
        total = 0
        for rel, st_, is_dir in _walk(self.root):
            if not is_dir and not rel.startswith(ENGINE_DIR):
                total += st_.st_size
        return total


# module-level API mirroring the operation names


def init_workspace(root: str | os.PathLike, config: RegionConfig | None = None, clock=None) -> Workspace:
    return Workspace.init(root, config, clock)


def apply_delta(state: Workspace, delta: WorkspaceDelta, scope: PermissionScope) -> Workspace:
    state.apply_delta(delta, scope)
    return state


def read_artifact(
    state: Workspace, path: str, scope: PermissionScope | None = None, window: tuple[int, int] | None = None
) -> bytes:
    return state.read_artifact(path, scope, window)


def export_audit(state: Workspace) -> list[AuditRecord]:
    return state.export_audit()


def load_audit(root: str | os.PathLike) -> Iterator[AuditRecord]:
    path = Path(root) / AUDIT_LOG
    if not path.exists():
        return
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield AuditRecord.from_json(line)


def replay_audit(
    records: Iterable[AuditRecord],
    blob_root: str | os.PathLike,
    target: str | os.PathLike,
    config: RegionConfig | None = None,
) -> Path:
    """Rebuild a workspace tree at ``target`` from audit records and a blob store.

    Permission checks are not re-run: the records describe what was allowed.
    Denied records are skipped.
    """
    target = Path(target)
    Workspace.init(target, config)
    blobs = Path(blob_root) / BLOB_DIR
    for rec in records:
        dest = target / rec.path
        if rec.kind == DENIED:
            continue
        if rec.kind == OpKind.CREATE_DIR.value or rec.digest == EFFECT_DIR:
            dest.mkdir(parents=True, exist_ok=True)
            continue
        if rec.digest == EFFECT_DELETED:
            dest.unlink(missing_ok=True)
            continue
        if rec.digest == EFFECT_RMDIR:
            shutil.rmtree(dest, ignore_errors=True)
            continue
        payload = (blobs / rec.digest.split(":", 1)[1]).read_bytes()
        dest.parent.mkdir(parents=True, exist_ok=True)
        if rec.kind == OpKind.APPEND.value:
            with open(dest, "ab") as fh:
                fh.write(payload)
        else:
            dest.write_bytes(payload)
    return target


def verify_replay(root: str | os.PathLike) -> tuple[bool, str, str]:
    """Replay ``root``'s audit trail into a temp dir; return (match, live, replayed) digests."""
    root = Path(root)
    ws = Workspace.open(root)
    with tempfile.TemporaryDirectory() as tmp:
        replayed = replay_audit(ws.export_audit(), root, Path(tmp) / "replay", ws.config)
        a, b = tree_digest(root), tree_digest(replayed)
    return a == b, a, b


def tree_digest(root: str | os.PathLike, include_engine: bool = True) -> str:
    """sha256 over the sorted (dir | file+content-hash) listing, kernel areas excluded."""
    root = Path(root)
    h = hashlib.sha256()
    for rel, _st, is_dir in _walk(root):
        if not include_engine and pattern_matches(ENGINE_DIR, rel):
            continue
        if is_dir:
            h.update(f"D {rel}\n".encode())
        else:
            h.update(f"F {rel} {_file_digest(root / rel)}\n".encode())
    return h.hexdigest()


def _walk(root: Path) -> Iterator[tuple[str, os.stat_result, bool]]:
    """Sorted walk of regular files and directories, skipping kernel areas and symlinks."""
    stack = [""]
    out = []
    while stack:
        rel_dir = stack.pop()
        try:
            entries = list(os.scandir(root / rel_dir if rel_dir else root))
        except FileNotFoundError:
            continue
        for e in entries:
            rel = f"{rel_dir}/{e.name}" if rel_dir else e.name
            if is_kernel_path(rel):
                continue
            st_ = e.stat(follow_symlinks=False)
            if stat.S_ISDIR(st_.st_mode):
                out.append((rel, st_, True))
                stack.append(rel)
            elif stat.S_ISREG(st_.st_mode):
                out.append((rel, st_, False))
    out.sort(key=lambda t: t[0])
    return iter(out)


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return f"{DIGEST_ALGO}:{h.hexdigest()}"


def _mkdirs(path: str, known: set[str], created: list[str]) -> None:
    """Create ``path`` and missing ancestors, appending new ones to ``created``."""
    missing = []
    p = path
    while p not in known and not os.path.isdir(p):
        missing.append(p)
        p = os.path.dirname(p)
    for d in reversed(missing):
        os.mkdir(d)
        created.append(d)
    known.add(path)
    known.update(missing)


def _write_all(fd: int, data: bytes) -> None:
    view = memoryview(data)
    while view:
        view = view[os.write(fd, view):]


def _read_if_file(path: str) -> bytes | None:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError):
        return None


_tmp_counter = itertools.count()


def _atomic_write(path: Path, data: bytes) -> None:
    parent = os.path.dirname(path)
    os.makedirs(parent, exist_ok=True)
    tmp = os.path.join(parent, f".{os.path.basename(path)}.{os.getpid()}.{next(_tmp_counter)}.tmp")
    try:
        with open(tmp, "xb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


__all__ = [
    "ALLOW",
    "AUDIT_LOG",
    "AuditRecord",
    "Decision",
    "DeltaOp",
    "DenyReason",
    "OpKind",
    "PermissionScope",
    "READ",
    "RegionConfig",
    "RegionDescriptor",
    "TRACE_LOG",
    "Workspace",
    "WorkspaceDelta",
    "apply_delta",
    "check_permission",
    "default_region_config",
    "export_audit",
    "format_ts",
    "init_workspace",
    "load_audit",
    "normalize_path",
    "read_artifact",
    "replay_audit",
    "tree_digest",
    "verify_replay",
]
