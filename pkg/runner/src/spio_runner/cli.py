"""Command-line surface: `exec` runs a script, `summarize` profiles a file.

The manifest (or description document) is printed to stdout as a single
JSON document. `exec` exits 0 whenever a manifest was produced, whatever
the script did; argument errors exit 2 before any manifest exists.
"""

from __future__ import annotations

import argparse
import json
import sys

from .execute import run_script
from .profile import summarize_csv


def _print_document(document: dict) -> None:
    sys.stdout.write(json.dumps(document, indent=2, ensure_ascii=False) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="runner", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    exec_cmd = sub.add_parser("exec", help="run a script under supervision")
    exec_cmd.add_argument("--source", required=True, help="script file to execute")
    exec_cmd.add_argument("--input", action="append", default=[], help="input file (repeatable)")
    exec_cmd.add_argument("--output", action="append", default=[], help="declared output file (repeatable)")
    exec_cmd.add_argument("--timeout", type=float, required=True, help="wall-clock limit in seconds")
    exec_cmd.add_argument("--sample-size", type=int, default=5)
    exec_cmd.add_argument("--log-dir", default=None, help="where to write stdout.log/stderr.log")

    summarize_cmd = sub.add_parser("summarize", help="profile a delimited file")
    summarize_cmd.add_argument("--path", required=True)
    summarize_cmd.add_argument("--sample-size", type=int, default=5)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "exec":
        try:
            manifest = run_script(
                args.source,
                args.input,
                args.output,
                timeout_s=args.timeout,
                sample_size=args.sample_size,
                log_dir=args.log_dir,
            )
        except FileNotFoundError as exc:
            print(f"runner: missing file: {exc}", file=sys.stderr)
            return 2
        _print_document(manifest)
        return 0
    if args.command == "summarize":
        _print_document(summarize_csv(args.path, sample_size=args.sample_size))
        return 0
    return 2  # pragma: no cover - argparse enforces the subcommand


if __name__ == "__main__":
    raise SystemExit(main())
