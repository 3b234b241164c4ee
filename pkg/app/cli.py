# file: app/cli.py
import argparse
import asyncio
import logging
import sys
from typing import List, Optional

from tabulate import tabulate

from app.core.config import settings
from app.core.errors import ConfigError
from app.db.registry import list_runs
from app.schemas.models import ExperimentSummary
from app.services.experiment_service import EXIT_CONFIG, ExperimentService, load_config
from app.services.preset_service import get_preset, list_presets
from app.worker import run_experiments_concurrently

log = logging.getLogger("dgdlab.cli")


def _print_summaries(summaries: List[ExperimentSummary]) -> None:
    rows = [
        [
            s.name,
            s.status,
            s.exit_code,
            s.iterations,
            "" if s.final_consensus_error is None else f"{s.final_consensus_error:.3e}",
            "" if s.audit is None else ("pass" if s.audit.passed else "FAIL"),
            ",".join(s.flags),
            s.trace_path or s.message or "",
        ]
        for s in summaries
    ]
    print(tabulate(rows, headers=["name", "status", "exit", "K", "consensus_error", "audit", "flags", "trace"]))


def cmd_run(args: argparse.Namespace) -> int:
    configs = []
    for path in args.configs:
        try:
            configs.append(load_config(path))
        except ConfigError as e:
            log.error(str(e))
            return EXIT_CONFIG
    service = ExperimentService()
    summaries = asyncio.run(run_experiments_concurrently(service, configs, args.jobs, args.out, args.strict))
    _print_summaries(summaries)
    return max(s.exit_code for s in summaries) if summaries else 0


def cmd_preset(args: argparse.Namespace) -> int:
    try:
        config = get_preset(args.name, args.iterations)
    except ConfigError as e:
        log.error(str(e))
        return EXIT_CONFIG
    summary, _ = ExperimentService().run(config, args.out, args.strict)
    _print_summaries([summary])
    return summary.exit_code


def cmd_list(args: argparse.Namespace) -> int:
    print(tabulate([[p.name, p.description] for p in list_presets()], headers=["preset", "description"]))
    return 0


def cmd_history(args: argparse.Namespace) -> int:
    records = list_runs(args.limit)
    rows = [[r.id, r.name, r.status, r.exit_code, r.iterations, r.audit_passed, r.trace_path] for r in records]
    print(tabulate(rows, headers=["id", "name", "status", "exit", "K", "audit_passed", "trace"]))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgdlab", description="DGD / Prox-DGD experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one or more JSON/YAML run configs")
    run.add_argument("configs", nargs="+", help="Config file paths")
    run.add_argument("--out", type=str, default=None, help="Output directory for traces and audits")
    run.add_argument("--jobs", type=int, default=settings.DEFAULT_JOBS, help="Configs run in parallel")
    run.add_argument("--strict", action="store_true", help="Exit 4 when an audit row fails")
    run.set_defaults(func=cmd_run)

    preset = sub.add_parser("preset", help="Run a built-in preset")
    preset.add_argument("name", type=str)
    preset.add_argument("--out", type=str, default=None, help="Output directory for traces and audits")
    preset.add_argument("--iterations", type=int, default=None, help="Override the preset's iteration count")
    preset.add_argument("--strict", action="store_true", help="Exit 4 when an audit row fails")
    preset.set_defaults(func=cmd_preset)

    lister = sub.add_parser("list", help="List built-in presets")
    lister.set_defaults(func=cmd_list)

    history = sub.add_parser("history", help="Show recorded runs")
    history.add_argument("--limit", type=int, default=50)
    history.set_defaults(func=cmd_history)

    serve = sub.add_parser("serve", help="Start the HTTP API")
    serve.add_argument("--host", type=str, default=settings.API_HOST)
    serve.add_argument("--port", type=int, default=settings.API_PORT)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.LOG_LEVEL, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
