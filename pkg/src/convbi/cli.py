"""
Command-line entry points: serve, ingest, ask, eval, pipeline.

Every subcommand takes ``--config``; scalar config fields may also be
overridden with ``ENGINE_``-prefixed environment variables. Exit codes:
0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .datapipe import PipelineInputs, load_sql_log, run_pipeline
from .engine import Engine
from .evaluation import run_eval

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convbi",
                                     description="Conversational BI engine")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config", required=True)
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)

    ingest = sub.add_parser("ingest", help="load knowledge and profile the schema")
    ingest.add_argument("--config", required=True)
    ingest.add_argument("--knowledge", default=None, help="extra knowledge JSONL to import")
    ingest.add_argument("--schema", default=None, help="override the schema file")

    ask = sub.add_parser("ask", help="run one question in-process and print SQL + rows")
    ask.add_argument("--config", required=True)
    ask.add_argument("--text", required=True)
    ask.add_argument("--insight", action="store_true")

    evaluate = sub.add_parser("eval", help="replay a dataset and report metrics")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--metrics", default="ex", help="comma list: ex,uex,ves")
    evaluate.add_argument("--report", default=None, help="write the report JSON here")

    pipeline = sub.add_parser("pipeline", help="run the data-preparation pipeline")
    pipeline.add_argument("--config", required=True)
    pipeline.add_argument("--sql-log", required=True, help="file with one statement per line")
    pipeline.add_argument("--out", required=True, help="dataset JSONL destination")
    pipeline.add_argument("--report", default=None)
    pipeline.add_argument("--demonstrations", default=None)
    pipeline.add_argument("--veto", default=None, help="file of pair ids to drop")

    return parser


def _engine(config_path: str) -> Engine:
    return Engine(load_config(config_path))


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    engine = _engine(args.config)
    host, port = engine.config.host_port
    uvicorn.run(create_app(engine), host=args.host or host, port=args.port or port)
    return 0


def _cmd_ingest(args) -> int:
    config = load_config(args.config)
    if args.schema:
        config.schema_file = args.schema
    engine = Engine(config)
    extra = 0
    if args.knowledge:
        extra = engine.knowledge.import_jsonl(args.knowledge)
    print(f"knowledge entries: {len(engine.knowledge)} (+{extra} imported now)")
    print(f"tables profiled:   {len(engine.selector.profiles)}")
    return 0


def _cmd_ask(args) -> int:
    engine = _engine(args.config)
    session_id = engine.create_session()
    reply = engine.send(session_id, args.text, insight=args.insight)
    print(f"kind: {reply['kind']}")
    if reply.get("sql"):
        print(f"sql:  {reply['sql']}")
    if reply.get("columns") is not None:
        print(" | ".join(reply["columns"]))
        for row in reply.get("rows", []):
            print(" | ".join(str(cell) for cell in row))
    if reply.get("message") and reply["kind"] != "answer":
        print(reply["message"])
    if reply.get("options"):
        for opt in reply["options"]:
            print(f"  option {opt['option_id']}: {opt['label']} - {opt['description']}")
    return 0 if reply["kind"] in ("answer", "clarify") else 1


def _cmd_eval(args) -> int:
    engine = _engine(args.config)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report_path = args.report or "eval_report.json"
    report = run_eval(
        args.dataset, engine, metrics, engine.config.database_dir,
        gateway=engine.gateway, report_path=report_path,
    )
    print(report.render_table())
    print(f"report: {report_path}")
    return 0


def _cmd_pipeline(args) -> int:
    engine = _engine(args.config)
    sql_log = load_sql_log(args.sql_log)
    demonstrations = []
    if args.demonstrations:
        demonstrations = [
            line for line in Path(args.demonstrations).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    veto_ids = set()
    if args.veto:
        veto_ids = {
            line.strip() for line in Path(args.veto).read_text(encoding="utf-8").splitlines()
            if line.strip()
        }
    inputs = PipelineInputs(sql_log=sql_log, demonstrations=demonstrations, veto_ids=veto_ids)
    report = run_pipeline(
        engine.config.pipeline, inputs, engine.schema, engine.gateway,
        translate=engine.nl2sql,
        out_path=args.out,
        report_path=args.report,
    )
    print(json.dumps(report.to_dict()["stage_counts"], indent=2, sort_keys=True))
    print(f"dataset: {args.out}")
    return 0


_COMMANDS = {
    "serve": _cmd_serve,
    "ingest": _cmd_ingest,
    "ask": _cmd_ask,
    "eval": _cmd_eval,
    "pipeline": _cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
