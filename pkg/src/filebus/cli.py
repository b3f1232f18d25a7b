"""``filebus`` command line: run, resume, map, trace, audit, scenario validate.

Exit codes: 0 Completed, 2 BudgetExhausted, 3 Failed, 4 Interrupted,
5 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from filebus import engine
from filebus.errors import FileBusError, ParseError
from filebus.model_backend import load_scenario
from filebus.workspace_bus import TRACE_LOG, Workspace, verify_replay

EXIT_USAGE = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default, which means BudgetExhausted here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget-s", type=float)
    p.add_argument("--step-limit", type=int)
    p.add_argument("--ablation", choices=["filebus-off", "flat"])
    p.add_argument("--backend", choices=["scripted", "http"])
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="filebus", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="start a run from a TOML config")
    p.add_argument("--config", required=True)
    _overrides(p)

    p = sub.add_parser("resume", help="continue a run from its checkpoint")
    p.add_argument("workspace")
    _overrides(p)

    p = sub.add_parser("map", help="print the workspace map")
    p.add_argument("workspace")

    p = sub.add_parser("trace", help="print trace events")
    p.add_argument("workspace")
    p.add_argument("--filter", action="append", default=[], metavar="K=V")

    p = sub.add_parser("audit", help="print or verify the audit log")
    p.add_argument("workspace")
    p.add_argument("--verify", action="store_true")

    p = sub.add_parser("scenario", help="scenario utilities")
    ssub = p.add_subparsers(dest="scenario_command", required=True, parser_class=_Parser)
    v = ssub.add_parser("validate")
    v.add_argument("path")
    return parser


def _override_kwargs(args) -> dict:
    kw = {
        "budget_s": args.budget_s,
        "ablation": args.ablation,
        "backend": args.backend,
        "scenario": str(Path(args.scenario).resolve()) if args.scenario else None,
        "seed": args.seed,
    }
    kw["step_limit"] = args.step_limit if args.step_limit is not None else "keep"
    return kw


def _report(status: engine.RunStatus) -> int:
    print(f"status: {status}")
    return status.exit_code


def cmd_run(args) -> int:
    config = engine.load_config(args.config, **_override_kwargs(args))
    return _report(engine.run(config))


def cmd_resume(args) -> int:
    return _report(engine.resume(args.workspace, **_override_kwargs(args)))


def cmd_map(args) -> int:
    ws = Workspace.open(args.workspace)
    from filebus.workspace_map import build_map

    sys.stdout.write(build_map(ws).render())
    return 0


def _matches(event: dict, filters: list[tuple[str, str]]) -> bool:
    for key, want in filters:
        value = event.get(key, event.get("payload", {}).get(key))
        if value is None or str(value) != want:
            return False
    return True


def cmd_trace(args) -> int:
    filters = []
    for f in args.filter:
        if "=" not in f:
            raise _UsageError(f"--filter expects k=v, got {f!r}")
        k, v = f.split("=", 1)
        filters.append((k, v))
    path = Path(args.workspace) / TRACE_LOG
    if not path.is_file():
        raise FileBusError(f"no trace at {path}")
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip() and _matches(json.loads(line), filters):
            print(line)
    return 0


def cmd_audit(args) -> int:
    ws = Workspace.open(args.workspace)
    if args.verify:
        ok, live, replayed = verify_replay(ws.root)
        if ok:
            print(f"OK {live}")
            return 0
        print(f"MISMATCH live={live} replayed={replayed}")
        return 3
    for rec in ws.audit:
        print(rec.to_json())
    return 0


def cmd_scenario(args) -> int:
    scn = load_scenario(args.path)
    print(f"OK {len(scn.steps)} rules")
    return 0


class _UsageError(Exception):
    pass


COMMANDS = {
    "run": cmd_run,
    "resume": cmd_resume,
    "map": cmd_map,
    "trace": cmd_trace,
    "audit": cmd_audit,
    "scenario": cmd_scenario,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileBusError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
