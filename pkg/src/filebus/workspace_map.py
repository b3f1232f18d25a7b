"""Compact, deterministic index of the workspace used as the default control interface.

Rendering is one line per entry::

    <path>  <kind>  <size>  <rev>  [<purpose>]

Directories carry a trailing ``/``. When the rendering exceeds the byte cap,
directories are collapsed deepest first (ties broken by the lexicographically
greatest path) into a single ``<dir> (+N more files)`` line. Region entries
are never removed; once every non-region directory is collapsed, a region's
contents are collapsed into one elided line under the region, in reverse
lexicographic region order. Since the collapse order does not depend on the
cap, a smaller cap always collapses a superset of what a larger cap does.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from filebus.workspace_bus import ENGINE_DIR, Workspace, _walk, pattern_matches

DEFAULT_MAP_CAP = 8 * 1024

REGION = "region"
DIRECTORY = "directory"
FILE = "file"
ELIDED = "elided"


@dataclass(frozen=True)
class MapEntry:
    path: str
    kind: str
    size_bytes: int
    last_revision: int
    purpose: str = ""
    elided_files: int = 0

    def render(self) -> str:
        if self.kind == ELIDED:
            return f"{self.path} (+{self.elided_files} more files)  {ELIDED}  {self.size_bytes}  {self.last_revision}"
        line = f"{self.path}  {self.kind}  {self.size_bytes}  {self.last_revision}"
        if self.purpose:
            line += f"  [{self.purpose}]"
        return line


@dataclass(frozen=True)
class WorkspaceMap:
    revision: int
    entries: tuple[MapEntry, ...]
    cap: int = DEFAULT_MAP_CAP
    rendered_bytes: int = field(default=0, compare=False)

    def render(self) -> str:
        return render_map(self)


@dataclass
class _Node:
    path: str  # no trailing slash
    kind: str
    purpose: str = ""
    size: int = 0
    rev: int = 0
    files: int = 0
    children: list[_Node] = field(default_factory=list)
    collapsed: bool = False

    @property
    def display(self) -> str:
        return self.path + "/" if self.kind in (REGION, DIRECTORY) else self.path

    @property
    def depth(self) -> int:
        return self.path.count("/") + 1

    def entry(self) -> MapEntry:
        return MapEntry(self.display, self.kind, self.size, self.rev, self.purpose)

    def elided_entry(self) -> MapEntry:
        return MapEntry(self.display, ELIDED, self.size, self.rev, "", self.files)


def _line_len(entry: MapEntry) -> int:
    return len(entry.render().encode("utf-8")) + 1


def build_map(state: Workspace, cap: int = DEFAULT_MAP_CAP) -> WorkspaceMap:
    nodes: dict[str, _Node] = {}
    region_paths = []
    for region in state.config.regions:
        p = region.prefix.rstrip("/")
        nodes[p] = _Node(p, REGION, region.purpose, rev=state.last_write.get(p, 0))
        region_paths.append(p)

    for rel, st, is_dir in _walk(state.root):
        if pattern_matches(ENGINE_DIR, rel):
            continue
        if rel in nodes:
            continue
        if is_dir:
            nodes[rel] = _Node(rel, DIRECTORY, rev=state.last_write.get(rel, 0))
        else:
            nodes[rel] = _Node(rel, FILE, size=st.st_size, rev=state.last_write.get(rel, 0), files=1)

    top: list[_Node] = []
    for path in sorted(nodes, key=lambda p: p.count("/"), reverse=True):
        node = nodes[path]
        parent = path.rpartition("/")[0]
        if parent and parent in nodes:
            nodes[parent].children.append(node)
        else:
            top.append(node)
    # aggregate bottom-up: deepest paths were linked first, so process by depth
    for path in sorted(nodes, key=lambda p: p.count("/"), reverse=True):
        node = nodes[path]
        for child in node.children:
            node.size += child.size
            node.files += child.files
            node.rev = max(node.rev, child.rev)

    visible: dict[str, int] = {}

    def vis(node: _Node) -> int:
        own = _line_len(node.entry())
        if node.collapsed:
            if node.kind == REGION:
                return own + (_line_len(node.elided_entry()) if node.children else 0)
            return _line_len(node.elided_entry())
        return own + sum(visible[c.path] for c in node.children)

    for path in sorted(nodes, key=lambda p: p.count("/"), reverse=True):
        visible[path] = vis(nodes[path])
    total = sum(visible[n.path] for n in top)

    order = sorted(
        (n for n in nodes.values() if n.kind == DIRECTORY),
        key=lambda n: (n.depth, n.path),
        reverse=True,
    )
    order += sorted((nodes[p] for p in region_paths), key=lambda n: n.path, reverse=True)
    for node in order:
        if total <= cap:
            break
        if node.kind == REGION and not node.children:
            continue
        # every deeper directory is already collapsed, so the children's cached sizes are current
        old = vis(node)
        node.collapsed = True
        new = vis(node)
        total += new - old
        visible[node.path] = new

    entries: list[MapEntry] = []

    def emit(node: _Node) -> None:
        if node.collapsed:
            if node.kind == REGION:
                entries.append(node.entry())
                if node.children:
                    entries.append(node.elided_entry())
            else:
                entries.append(node.elided_entry())
            return
        entries.append(node.entry())
        for child in node.children:
            emit(child)

    for node in top:
        emit(node)
    entries.sort(key=lambda e: (e.path, e.kind == ELIDED))
    rendered = sum(_line_len(e) for e in entries)
    return WorkspaceMap(state.revision, tuple(entries), cap, rendered)


def render_map(m: WorkspaceMap) -> str:
    return "".join(e.render() + "\n" for e in m.entries)


__all__ = ["DEFAULT_MAP_CAP", "MapEntry", "WorkspaceMap", "build_map", "render_map"]
