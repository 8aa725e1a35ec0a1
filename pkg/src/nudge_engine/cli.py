"""Command-line entry points.

    nudge-engine personas --out personas.json [--random 85] [--seed 7]
    nudge-engine simulate --personas personas.json --seed 7 --out fixtures/
    nudge-engine replay --fixtures fixtures/ --engine inproc --report out/report.json
    nudge-engine serve --port 8000 [--state-dir runs/] [--trace-file runs/traces.csv]

Exit codes: 0 success, 1 replay finished below 100% completion, 2 bad
input (unreadable files, persona dry-run refusals, unknown engine).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from nudge_engine.domain import ReasonerKind, canonical_serialize
from nudge_engine.guardrails import TraceLog
from nudge_engine.orchestrator import Engine, FileSessionStore
from nudge_engine.simulate import (
    HttpEngineClient,
    InprocEngineClient,
    PersonaError,
    dump_traces,
    load_personas,
    random_personas,
    read_fixtures,
    recompute_matches,
    reference_personas,
    replay,
    save_personas,
    validate_persona,
    write_fixtures,
)

_REASONERS = {"rule": ReasonerKind.RULE_BASED, "llm": ReasonerKind.LLM_BACKED}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nudge-engine",
        description="Synthetic-session tooling and the HTTP service.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("personas", help="write a persona catalog file")
    p.add_argument("--out", required=True, type=Path, help="target persona file")
    p.add_argument(
        "--random",
        type=int,
        default=0,
        metavar="N",
        help="append N generated personas to the reference set",
    )
    p.add_argument("--seed", type=int, default=7, help="seed for the generated personas")

    p = sub.add_parser("simulate", help="expand personas into session fixtures")
    p.add_argument("--personas", required=True, type=Path, help="persona file")
    p.add_argument("--seed", required=True, type=int, help="event-stream seed")
    p.add_argument("--out", required=True, type=Path, help="fixture directory")

    p = sub.add_parser("replay", help="drive fixtures through an engine and report")
    p.add_argument("--fixtures", required=True, type=Path, help="fixture directory")
    p.add_argument(
        "--engine",
        default="inproc",
        help="'inproc' or a base URL of a served engine (http://...)",
    )
    p.add_argument("--report", required=True, type=Path, help="report file (canonical)")
    p.add_argument("--reasoner", choices=sorted(_REASONERS), default="rule")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--state-dir", type=Path, default=None, help="persist sessions here")
    p.add_argument("--trace-file", type=Path, default=None, help="append traces here")

    return parser


def cmd_personas(args: argparse.Namespace) -> int:
    personas = list(reference_personas())
    if args.random:
        personas.extend(random_personas(args.random, args.seed))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_personas(personas, args.out)
    print(f"wrote {len(personas)} personas to {args.out}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        personas = load_personas(args.personas)
    except PersonaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    scripts = []
    for persona in personas:
        try:
            scripts.append(validate_persona(persona, args.seed))
        except PersonaError as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
    paths = write_fixtures(scripts, args.out)
    print(f"wrote {len(paths)} session fixtures to {args.out}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    if not args.fixtures.is_dir():
        print(f"error: fixture directory {args.fixtures} not found", file=sys.stderr)
        return 2
    try:
        scripts = read_fixtures(args.fixtures)
    except PersonaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    args.report.parent.mkdir(parents=True, exist_ok=True)
    trace_csv = args.report.with_name(args.report.name + ".traces.csv")
    if trace_csv.exists():
        trace_csv.unlink()
    reasoner = _REASONERS[args.reasoner]

    if args.engine == "inproc":
        client = InprocEngineClient(trace_path=trace_csv)
        label = "inproc"
    elif args.engine.startswith(("http://", "https://")):
        client = HttpEngineClient(args.engine)
        label = args.engine
    else:
        print(f"error: unknown engine {args.engine!r}", file=sys.stderr)
        return 2

    try:
        report = replay(scripts, client, reasoner=reasoner, engine_label=label)
        if label == "inproc":
            report.trace_recomputation_ok = (
                recompute_matches(report, trace_csv) if scripts else True
            )
        else:
            dump_traces(client, [s.session_id for s in scripts], trace_csv)
            report.trace_recomputation_ok = (
                recompute_matches(report, trace_csv) if scripts else True
            )
    finally:
        client.close()

    args.report.write_bytes(canonical_serialize(report.to_payload()))
    text = report.human_text()
    args.report.with_name(args.report.name + ".txt").write_text(text, encoding="utf-8")
    print(text, end="")

    if not report.trace_recomputation_ok:
        print("error: report disagrees with the trace log", file=sys.stderr)
        return 1
    return 0 if report.completed == report.total else 1


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from nudge_engine.api import create_app

    store = None
    if args.state_dir is not None:
        args.state_dir.mkdir(parents=True, exist_ok=True)
        store = FileSessionStore(args.state_dir)
    trace_log = None
    if args.trace_file is not None:
        args.trace_file.parent.mkdir(parents=True, exist_ok=True)
        trace_log = TraceLog(args.trace_file)
    engine = Engine(store=store, trace_log=trace_log)
    uvicorn.run(create_app(engine), host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "personas": cmd_personas,
    "simulate": cmd_simulate,
    "replay": cmd_replay,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
