"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data validation error, 4 runtime stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import signal
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig, load_config
from .corpus import CorpusError, load_corpus
from .pipeline import STAGES, Run, StageError, run_pipeline
from .sandbox.mock import MockServer, MockServerError, ScenarioError, load_scenario

logger = logging.getLogger("gretel")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
FIXTURES = ("flights", "gap")


def _config(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.set or [])
    if args.output:
        overrides.append(f"paths.output={json.dumps(str(Path(args.output).resolve()))}")
    return load_config(args.config, overrides)


def _cmd_pipeline(args: argparse.Namespace) -> int:
    report = run_pipeline(_config(args))
    for method, per_k in report.methods.items():
        for k, vals in sorted(per_k.items()):
            pr = "n/a" if vals["pass_rate"] is None else f"{vals['pass_rate']:.3f}"
            print(f"{method:>8} @{k:<3} recall={vals['recall']:.3f} ndcg={vals['ndcg']:.3f} pass={pr}")
    return EXIT_OK


def _cmd_stage(args: argparse.Namespace) -> int:
    run = Run(_config(args))
    result = STAGES[args.command](run)
    print(run.out / "report.json" if args.command == "eval" else result)
    return EXIT_OK


def _cmd_serve_mock(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.tools)
    scenario = load_scenario(args.scenario, corpus)
    server = MockServer(scenario, corpus, host=args.host, port=args.port)
    print(f"mock tool server listening on {server.url} ({len(scenario.behaviors)} routes)", flush=True)
    signal.signal(signal.SIGTERM, lambda *_: sys.exit(0))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _cmd_fixture(args: argparse.Namespace) -> int:
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    src = resources.files("gretel.data").joinpath(args.name)
    for item in src.iterdir():
        if item.is_file() and not item.name.startswith("__"):
            with resources.as_file(item) as p:
                shutil.copy(p, dest / item.name)
    print(dest / "run.toml")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gretel", description="Execution-grounded tool retrieval and re-ranking.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="run configuration (TOML)")
        p.add_argument("--output", help="output directory (overrides paths.output)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")

    p = sub.add_parser("pipeline", help="run every stage end to end")
    with_config(p)
    p.set_defaults(func=_cmd_pipeline)

    for name, help_text in (
        ("ingest", "validate tools and queries"),
        ("retrieve", "write BM25 candidates"),
        ("trial", "plan/execute/simulate every candidate"),
        ("rerank", "re-rank candidates from trial evidence"),
        ("eval", "compute metrics, report and figures"),
    ):
        p = sub.add_parser(name, help=help_text)
        with_config(p)
        p.set_defaults(func=_cmd_stage)

    p = sub.add_parser("serve-mock", help="run the mock tool server in the foreground")
    p.add_argument("--scenario", required=True, help="scenario.json")
    p.add_argument("--tools", required=True, help="tools.jsonl the scenario refers to")
    p.add_argument("--port", type=int, default=8089)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=_cmd_serve_mock)

    p = sub.add_parser("fixture", help="copy a bundled fixture (flights, gap) to a directory")
    p.add_argument("name", choices=FIXTURES)
    p.add_argument("dest")
    p.set_defaults(func=_cmd_fixture)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if exc.kind == "data" else EXIT_RUNTIME
    except (CorpusError, ScenarioError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MockServerError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # unexpected failure inside a stage
        logger.debug("stage failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
