"""Command-line interface for the simulation engine.

Exit codes: 0 success, 1 usage error, 2 configuration problem, 3 run
failure, 4 verification or replay mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .errors import (
    ConfigError,
    EngineError,
    GatewayError,
    HashMismatch,
    InvalidField,
    RunError,
    UnknownType,
)
from .runtime import (
    ENDPOINT_ENV_VAR,
    MODEL_ENV_VAR,
    _load_plugins,
    list_types,
    load_config,
    replay,
    run,
    validate_config_document,
    verify_run_dir,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUN = 3
EXIT_VERIFY = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits the process on bad input; raise instead so main() owns
    # the exit code.
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="agorasim",
        description="Deterministic multi-agent simulation runner.",
        epilog=(f"Live gateway mode reads {ENDPOINT_ENV_VAR} (endpoint URL) and "
                f"{MODEL_ENV_VAR} (model name) when the config omits them."),
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a run config into a signed directory")
    p_run.add_argument("--config", required=True, help="path to a run config JSON file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override run.seed from the config")
    p_run.add_argument("--out", default=None,
                       help="output run directory (default: runs/<type>-<seed>)")

    p_replay = sub.add_parser(
        "replay", help="re-execute a stored run against its cached call log")
    p_replay.add_argument("run_dir", help="path to a previously written run directory")
    p_replay.add_argument("--out", default=None,
                          help="directory for the replayed run (default: temp)")

    p_verify = sub.add_parser(
        "verify", help="check a run directory against its signed manifest")
    p_verify.add_argument("run_dir")

    p_report = sub.add_parser(
        "report", help="render CSV summaries and figures for a finished run")
    p_report.add_argument("run_dir")
    p_report.add_argument("--out", default=None,
                          help="report directory (default: <run_dir>/report)")

    p_validate = sub.add_parser(
        "validate-config", help="schema-check a config without running it")
    p_validate.add_argument("--config", required=True)

    p_types = sub.add_parser("list-types", help="list registered scenario types")
    p_types.add_argument("--config", default=None,
                         help="load this config's plugins before listing")
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    out = Path(args.out) if args.out else Path("runs") / f"{config.type_name}-{config.seed}"
    result = run(config, out)
    print(f"run completed: {result.run_dir}")
    print(f"content hash: {result.content_hash}")
    return EXIT_OK


def _cmd_replay(args) -> int:
    from .errors import ReplayDivergence

    try:
        result = replay(args.run_dir, args.out)
    except RunError as err:
        # A cached-log divergence is a verification failure, not a crash.
        if isinstance(err.cause, ReplayDivergence):
            print(f"replay diverged: {err.cause}", file=sys.stderr)
            return EXIT_VERIFY
        raise
    print(f"replay verified: {result.run_dir}")
    print(f"content hash: {result.content_hash}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    mismatches = verify_run_dir(args.run_dir)
    if mismatches:
        for line in mismatches:
            print(f"mismatch: {line}", file=sys.stderr)
        return EXIT_VERIFY
    manifest = json.loads(
        (Path(args.run_dir) / "manifest.json").read_text(encoding="utf-8"))
    print(f"verified: {args.run_dir}")
    print(f"content hash: {manifest['content_hash']}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .reporting import render_report, summarize

    for line in summarize(args.run_dir):
        print(line)
    for path in render_report(args.run_dir, args.out):
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_validate_config(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        print(f"config: unreadable ({err})", file=sys.stderr)
        return EXIT_CONFIG
    problems = validate_config_document(doc)
    if problems:
        for line in problems:
            print(line, file=sys.stderr)
        return EXIT_CONFIG
    print("config ok")
    return EXIT_OK


def _cmd_list_types(args) -> int:
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        _load_plugins(doc.get("run", {}).get("plugins", []))
    for name in list_types():
        print(name)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "replay": _cmd_replay,
    "verify": _cmd_verify,
    "report": _cmd_report,
    "validate-config": _cmd_validate_config,
    "list-types": _cmd_list_types,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, UnknownType, InvalidField) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except HashMismatch as err:
        print(f"verification failed: {err}", file=sys.stderr)
        return EXIT_VERIFY
    except RunError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_RUN
    except (GatewayError, EngineError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
