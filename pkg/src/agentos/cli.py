"""Command-line operator surface.

Exit codes: 0 success, 1 operation failure, 2 usage error. Output is
line-oriented plain text; ``--json`` switches every command to a single
JSON object on stdout. Nothing printed here ever includes the API key, and
no output line carries a timestamp, so a replayed session is byte-identical
run to run.

Configuration precedence: command-line flags, then the environment
(AGENT_API_BASE, AGENT_API_KEY, AGENT_MODEL), then defaults. Cassette
replay needs no network configuration at all.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from .backends import CassetteBackend, HttpBackend
from .creation import (
    CreationReport,
    ManagementToolSuite,
    create_agents_pipeline,
    create_workflow_pipeline,
)
from .engine import DIRECT, TRANSFORMED, Engine
from .errors import (
    ActionTypeError,
    AgentOsError,
    PhaseExhaustedError,
    SchemaError,
    XmlError,
)
from .forms import (
    parse_agent_form,
    parse_workflow_form,
    validate_agent_form,
    validate_workflow_form,
)
from .ragstore import RagStore
from .registry import RegistryStore, RegistryToolSuite, make_registry_resolver
from .workflow import run_workflow

ENV_API_BASE = "AGENT_API_BASE"
ENV_API_KEY = "AGENT_API_KEY"
ENV_MODEL = "AGENT_MODEL"

_ROOT_SNIFF = re.compile(r"<\s*(workflow|agents)[\s>]")


@dataclass
class CliConfig:
    api_base: str = ""
    api_key: str = ""
    model: str = ""
    mode: str = TRANSFORMED
    registry_root: str = "./registry"
    rag_root: str = "./ragstore"
    cassette: str = ""
    cassette_mode: str = "off"  # off | record | replay
    json_output: bool = False


class _Failure(Exception):
    """Operation failure destined for exit code 1."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.msg = message


def _config_from_args(args: argparse.Namespace) -> CliConfig:
    return CliConfig(
        api_base=args.api_base or os.environ.get(ENV_API_BASE, ""),
        api_key=args.api_key or os.environ.get(ENV_API_KEY, ""),
        model=args.model or os.environ.get(ENV_MODEL, ""),
        mode=args.mode,
        registry_root=args.registry_root,
        rag_root=args.rag_root,
        cassette=args.cassette,
        cassette_mode=args.cassette_mode,
        json_output=args.json,
    )


def _make_engine(config: CliConfig) -> Engine:
    if config.cassette_mode == "replay":
        backend = CassetteBackend(config.cassette, "replay")
    elif config.cassette_mode == "record":
        if not config.api_base:
            raise _Failure("E_BACKEND", "recording needs --api-base or AGENT_API_BASE")
        inner = HttpBackend(config.api_base, api_key=config.api_key)
        backend = CassetteBackend(config.cassette, "record", inner=inner)
    else:
        if not config.api_base:
            raise _Failure("E_BACKEND",
                           "no backend configured; set --api-base/AGENT_API_BASE "
                           "or use --cassette-mode replay")
        backend = HttpBackend(config.api_base, api_key=config.api_key)
    return Engine(mode=config.mode, backend=backend, model=config.model)


def _emit(config: CliConfig, lines: list[str], payload: dict) -> None:
    if config.json_output:
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in lines:
            print(line)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _load_form(path: str):
    """Returns ("agents"|"workflow", form). Sniffs the root element."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise _Failure("E_IO", str(err))
    match = _ROOT_SNIFF.search(text)
    kind = match.group(1) if match else "agents"
    if kind == "workflow":
        return kind, parse_workflow_form(text)
    return kind, parse_agent_form(text)


def _cmd_validate(config: CliConfig, args) -> int:
    store = RegistryStore(config.registry_root)
    try:
        kind, form = _load_form(args.form)
    except (XmlError, SchemaError, ActionTypeError) as err:
        _emit(config, [f"{err.code}: {err.message}", "1 diagnostics"],
              {"diagnostics": [{"code": err.code, "location": "",
                                "message": err.message}]})
        return 1
    if kind == "workflow":
        diagnostics = validate_workflow_form(form, store.view())
    else:
        diagnostics = validate_agent_form(form, store.view())
    lines = [f"{d.code} {d.location}: {d.message}" for d in diagnostics]
    lines.append(f"{len(diagnostics)} diagnostics")
    _emit(config, lines,
          {"diagnostics": [{"code": d.code, "location": d.location,
                            "message": d.message} for d in diagnostics]})
    return 0 if not diagnostics else 1


def _cmd_run_workflow(config: CliConfig, args) -> int:
    kind, form = _load_form(args.form)
    if kind != "workflow":
        raise _Failure("E_SCHEMA", f"{args.form} is not a workflow form")
    store = RegistryStore(config.registry_root)
    engine = _make_engine(config)
    suite = RegistryToolSuite(store, workdir=Path(config.registry_root) / "workspace")
    result = run_workflow(
        form, args.input, engine,
        registry=store.view(), tools=suite,
        resolve_agent=make_registry_resolver(store, form, suite),
        parallel=args.parallel)
    if args.trace:
        Path(args.trace).write_text("\n".join(result.trace) + "\n", encoding="utf-8")
    payload = {"status": result.status, "output": result.output,
               "output_key": result.output_key, "error": result.error,
               "reason": result.reason}
    if result.status == "completed":
        _emit(config, [result.output or ""], payload)
        return 0
    code = result.error or "E_ABORTED"
    _emit(config, [f"{result.status} {code}: {result.reason}"], payload)
    return 1


def _report_lines(report: CreationReport) -> list[str]:
    lines = []
    for record in report.phases:
        status = "ok" if record.ok else "failed"
        lines.append(f"phase {record.phase}: {status} attempts={record.attempts}")
    if report.created_tools:
        lines.append("created tools: " + ", ".join(report.created_tools))
    if report.created_agents:
        lines.append("created agents: " + ", ".join(report.created_agents))
    if report.workflow_name:
        lines.append(f"registered workflow {report.workflow_name}")
    return lines


def _report_payload(report: CreationReport) -> dict:
    return {
        "kind": report.kind,
        "phases": [{"phase": r.phase, "ok": r.ok, "attempts": r.attempts}
                   for r in report.phases],
        "created_tools": report.created_tools,
        "created_agents": report.created_agents,
        "workflow_name": report.workflow_name,
    }


def _cmd_create_agents(config: CliConfig, args) -> int:
    store = RegistryStore(config.registry_root)
    engine = _make_engine(config)
    suite = ManagementToolSuite(store, engine=engine,
                                workdir=Path(config.registry_root) / "workspace")
    report = create_agents_pipeline(
        args.requirements, engine, store, suite=suite,
        max_attempts=args.max_attempts, test_task=args.task, model=config.model)
    _emit(config, _report_lines(report), _report_payload(report))
    return 0


def _cmd_create_workflow(config: CliConfig, args) -> int:
    store = RegistryStore(config.registry_root)
    engine = _make_engine(config)
    suite = ManagementToolSuite(store, engine=engine,
                                workdir=Path(config.registry_root) / "workspace")
    report = create_workflow_pipeline(
        args.requirements, engine, store, suite=suite,
        max_attempts=args.max_attempts, test_input=args.task, model=config.model)
    _emit(config, _report_lines(report), _report_payload(report))
    return 0


def _cmd_registry(config: CliConfig, args) -> int:
    store = RegistryStore(config.registry_root)
    kind = args.kind
    if args.action == "list":
        names = getattr(store, f"list_{kind}")()
        _emit(config, names if names else ["(none)"], {kind: names})
        return 0
    if not args.name:
        raise _Failure("E_ARGS", f"registry {args.action} needs a name")
    if args.action == "show":
        path = Path(config.registry_root) / kind / f"{args.name}.def"
        if not path.is_file():
            raise _Failure("E_NOT_FOUND", f"not in registry: {args.name}")
        text = path.read_text(encoding="utf-8").rstrip("\n")
        _emit(config, [text], json.loads(text))
        return 0
    # delete
    singular = kind[:-1]
    getattr(store, f"delete_{singular}")(args.name)
    _emit(config, [f"deleted {singular} {args.name}"],
          {"deleted": {"kind": singular, "name": args.name}})
    return 0


def _cmd_rag(config: CliConfig, args) -> int:
    store = RagStore(config.rag_root)
    if args.action == "add":
        counts = store.ingest(args.collection, args.path)
        lines = [f"indexed {doc_id}: {count} chunks"
                 for doc_id, count in sorted(counts.items())]
        _emit(config, lines, {"indexed": counts})
        return 0
    hits = store.query(args.collection, args.text, k=args.k)
    lines = [f"{hit.score:.4f} {hit.doc_id}:{hit.ordinal} {hit.text}" for hit in hits]
    _emit(config, lines if lines else ["(no results)"],
          {"hits": [{"doc_id": h.doc_id, "ordinal": h.ordinal,
                     "score": h.score, "text": h.text} for h in hits]})
    return 0


def _cmd_repl(config: CliConfig, args) -> int:
    store = RegistryStore(config.registry_root)
    engine = _make_engine(config)
    suite = ManagementToolSuite(store, engine=engine,
                                workdir=Path(config.registry_root) / "workspace")
    mode = "agents"
    transcript: list[str] = []

    def say(line: str) -> None:
        print(line)
        transcript.append(line)

    say(f"mode: {mode} (':mode agents|workflow' to switch, ':quit' to exit)")
    for raw in sys.stdin:
        line = raw.strip()
        transcript.append(f"> {line}")
        if not line:
            continue
        if line == ":quit":
            break
        if line.startswith(":mode"):
            choice = line.split(None, 1)[1].strip() if len(line.split(None, 1)) > 1 else ""
            if choice in ("agents", "workflow"):
                mode = choice
                say(f"mode: {mode}")
            else:
                say("usage: :mode agents|workflow")
            continue
        try:
            if mode == "agents":
                report = create_agents_pipeline(line, engine, store, suite=suite,
                                                model=config.model)
            else:
                report = create_workflow_pipeline(line, engine, store, suite=suite,
                                                  model=config.model)
            for out in _report_lines(report):
                say(out)
        except PhaseExhaustedError as err:
            say(f"{err.code}: {err.message}")
        except AgentOsError as err:
            say(f"{err.code}: {err.message}")
    if args.log:
        with open(args.log, "a", encoding="utf-8") as handle:
            handle.write("\n".join(transcript) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--registry-root", default="./registry",
                        help="registry directory (default ./registry)")
    common.add_argument("--rag-root", default="./ragstore",
                        help="RAG store directory (default ./ragstore)")
    common.add_argument("--api-base", default="", help="chat completions base URL")
    common.add_argument("--api-key", default="", help="API key (never printed)")
    common.add_argument("--model", default="", help="default model identifier")
    common.add_argument("--mode", choices=[DIRECT, TRANSFORMED], default=TRANSFORMED,
                        help="tool-use engine mode")
    common.add_argument("--cassette", default="", help="cassette file path")
    common.add_argument("--cassette-mode", choices=["off", "record", "replay"],
                        default="off")
    common.add_argument("--json", action="store_true", help="JSON output")

    parser = argparse.ArgumentParser(prog="agentos",
                                     description="Agent runtime operator commands.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common],
                       help="validate an agent or workflow form")
    p.add_argument("form", help="path to the XML form")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("run-workflow", parents=[common],
                       help="execute a workflow form")
    p.add_argument("form", help="path to the workflow XML")
    p.add_argument("--input", required=True, help="value for the system input")
    p.add_argument("--parallel", action="store_true",
                   help="run ready events concurrently")
    p.add_argument("--trace", default="", help="write the run trace to this file")
    p.set_defaults(fn=_cmd_run_workflow)

    p = sub.add_parser("create-agents", parents=[common],
                       help="run the agent creation pipeline")
    p.add_argument("--requirements", required=True)
    p.add_argument("--task", default=None, help="optional smoke-test task")
    p.add_argument("--max-attempts", type=int, default=3)
    p.set_defaults(fn=_cmd_create_agents)

    p = sub.add_parser("create-workflow", parents=[common],
                       help="run the workflow creation pipeline")
    p.add_argument("--requirements", required=True)
    p.add_argument("--task", default=None, help="optional test input")
    p.add_argument("--max-attempts", type=int, default=3)
    p.set_defaults(fn=_cmd_create_workflow)

    p = sub.add_parser("registry", parents=[common],
                       help="inspect or edit the registry")
    p.add_argument("action", choices=["list", "show", "delete"])
    p.add_argument("kind", choices=["tools", "agents", "workflows"])
    p.add_argument("name", nargs="?", default="")
    p.set_defaults(fn=_cmd_registry)

    p = sub.add_parser("rag", parents=[common], help="manage RAG collections")
    rag_sub = p.add_subparsers(dest="action", required=True)
    add = rag_sub.add_parser("add", parents=[common])
    add.add_argument("path", help="file, directory, or zip to index")
    add.add_argument("--collection", required=True)
    add.set_defaults(fn=_cmd_rag, action="add")
    query = rag_sub.add_parser("query", parents=[common])
    query.add_argument("text", help="query text")
    query.add_argument("--collection", required=True)
    query.add_argument("-k", type=int, default=4)
    query.set_defaults(fn=_cmd_rag, action="query")

    p = sub.add_parser("repl", parents=[common],
                       help="interactive requirement-to-pipeline loop")
    p.add_argument("--log", default="", help="append the session transcript here")
    p.set_defaults(fn=_cmd_repl)
    return parser


def dispatch_command(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    config = _config_from_args(args)
    if config.cassette_mode != "off" and not config.cassette:
        print("E_ARGS: --cassette-mode needs --cassette", file=sys.stderr)
        return 2
    try:
        return args.fn(config, args)
    except _Failure as err:
        if config.json_output:
            print(json.dumps({"error": err.code, "message": err.msg}, sort_keys=True))
        else:
            print(str(err))
        return 1
    except PhaseExhaustedError as err:
        if config.json_output:
            print(json.dumps({"error": err.code, "message": err.message,
                              "phase": err.phase}, sort_keys=True))
        else:
            print(f"{err.code}: {err.message}")
        return 1
    except AgentOsError as err:
        if config.json_output:
            print(json.dumps({"error": err.code, "message": err.message},
                             sort_keys=True))
        else:
            print(f"{err.code}: {err.message}")
        return 1


def main(argv: list[str] | None = None) -> None:
    sys.exit(dispatch_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
