"""File-as-Bus workspace kernel and a three-tier agent engine built on it."""

from filebus.engine import RunConfig, RunStatus, load_config, resume, run
from filebus.workspace_bus import PermissionScope, RegionConfig, Workspace, init_workspace
from filebus.workspace_map import build_map, render_map

__version__ = "0.1.0"

__all__ = [
    "PermissionScope",
    "RegionConfig",
    "RunConfig",
    "RunStatus",
    "Workspace",
    "build_map",
    "init_workspace",
    "load_config",
    "render_map",
    "resume",
    "run",
]
