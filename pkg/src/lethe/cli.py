"""Operator command line: seed, ingest, forget, probe, conflict, sweep, audit, serve, report.

Exit codes are part of the contract: 0 success, 1 validation error
(including unknown subcommands/flags and unknown concepts), 2 runtime
failure, 3 audit verification failed. ``--format json`` emits documents
that round-trip through the canonical encoder (numerics as decimal
strings).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .canonical import decimal_repr
from .engine import ComplianceEngine, EngineConfig
from .errors import LetheError, ValidationError
from .kb import generate_knowledge_base
from .model import ConceptAssociationModel
from .service import DEFAULT_ADDR, make_server

ENV_ADDR = "LETHE_ADDR"
ENV_DATA_DIR = "LETHE_DATA_DIR"
DEFAULT_DATA_DIR = "lethe_data"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_AUDIT_INVALID = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the exit-code contract
    # reserves 2 for runtime failures, so usage problems are rethrown.
    def error(self, message):
        raise _UsageError(message)


def _data_dir(args) -> str:
    return args.data_dir or os.environ.get(ENV_DATA_DIR) or DEFAULT_DATA_DIR


def _engine(args, **overrides) -> ComplianceEngine:
    config = EngineConfig(
        alpha=getattr(args, "alpha", None) or 0.1,
        max_iters=getattr(args, "max_iters", None) or 500,
        influence_threshold=getattr(args, "threshold", None),
        conflict_floor=overrides.get(
            "conflict_floor", getattr(args, "conflict_floor", None) or 0.9
        ),
        refine_rounds=getattr(args, "refine_rounds", 3),
    )
    return ComplianceEngine(_data_dir(args), config=config)


def _emit(args, document: dict, text: str) -> None:
    if getattr(args, "format", "text") == "json":
        print(json.dumps(document, ensure_ascii=False, sort_keys=True, separators=(",", ":")))
    else:
        print(text)


def build_parser() -> _Parser:
    parser = _Parser(prog="lethe", description="Targeted-unlearning compliance engine")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p):
        p.add_argument("--data-dir", default=None, help=f"data directory (env {ENV_DATA_DIR})")
        p.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("seed", help="generate a knowledge base and train a model")
    common(p)
    p.add_argument("--concepts", type=int, required=True)
    p.add_argument("--facts", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="alias for --data-dir")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--temperature", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--categories", type=int, default=6)

    p = sub.add_parser("ingest", help="gate one sample document")
    common(p)
    p.add_argument("--file", required=True, help="sample JSON path, or - for stdin")

    p = sub.add_parser("forget", help="run the erasure lifecycle for a concept")
    common(p)
    p.add_argument("--concept", required=True, action="append", dest="concepts")
    p.add_argument("--subject", default="operator")
    p.add_argument(
        "--reason",
        default="GDPR_ART17",
        choices=("GDPR_ART17", "RETENTION_EXPIRED", "GATE_TRIGGERED", "USER_PREFERENCE"),
    )
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--conflict-floor", type=float, default=None, dest="conflict_floor")
    p.add_argument("--refine-rounds", type=int, default=3, dest="refine_rounds")

    p = sub.add_parser("probe", help="show the probe set for a concept")
    common(p)
    p.add_argument("--concept", required=True)

    p = sub.add_parser("conflict", help="score related probes for a concept")
    common(p)
    p.add_argument("--concept", required=True)

    p = sub.add_parser("sweep", help="convert expired retention records into erasures")
    common(p)
    p.add_argument("--now", type=int, default=None)

    p = sub.add_parser("audit", help="inspect or verify the ledger")
    common(p)
    p.add_argument("--verify", action="store_true")
    p.add_argument("--tail", type=int, default=0, help="show only the last N entries")

    p = sub.add_parser("serve", help="run the HTTP service")
    common(p)
    p.add_argument("--addr", default=None, help=f"host:port (env {ENV_ADDR})")
    p.add_argument("--conflict-floor", type=float, default=None, dest="conflict_floor")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--refine-rounds", type=int, default=3, dest="refine_rounds")

    p = sub.add_parser("report", help="print the influence table for every concept")
    common(p)

    return parser


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def _cmd_seed(args) -> int:
    if args.out:
        args.data_dir = args.data_dir or args.out
    names, facts = generate_knowledge_base(
        args.concepts, args.facts, args.seed, n_categories=args.categories
    )
    model = ConceptAssociationModel(
        dim=args.dim,
        temperature=args.temperature,
        seed=args.seed,
        train_epochs=args.epochs,
        train_rate=args.rate,
    ).fit(facts, vocabulary=names)
    engine = _engine(args)
    engine.install_model(model)
    document = {
        "data_dir": engine.data_dir,
        "concepts": len(names),
        "facts": len(facts),
        "seed": args.seed,
        "dim": args.dim,
    }
    _emit(
        args,
        document,
        f"seeded {len(names)} concepts / {len(facts)} facts into {engine.data_dir}",
    )
    return EXIT_OK


def _cmd_ingest(args) -> int:
    if args.file == "-":
        raw = sys.stdin.read()
    else:
        with open(args.file, "r", encoding="utf-8") as fh:
            raw = fh.read()
    try:
        document = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"sample file is not valid JSON: {exc}") from exc
    result = _engine(args).ingest(document)
    doc = result.to_document()
    _emit(
        args,
        doc,
        f"action={doc['action']} privacy_loss={doc['privacy_loss']}"
        + (f" record={doc['record_id']}" if doc["record_id"] else "")
        + (f" scheduled={doc['scheduled_request_id']}" if doc["scheduled_request_id"] else ""),
    )
    return EXIT_OK


def _cmd_forget(args) -> int:
    engine = _engine(args)
    outcome = engine.submit_erasure(
        subject_id=args.subject, concepts=args.concepts, reason=args.reason
    )
    doc = outcome.to_document()
    lines = [f"request {doc['request_id']}: {doc['status']}"]
    for report in doc["reports"]:
        conflict = report["conflict"]
        lines.append(
            f"  {report['concept']}: influence {report['initial_influence']} -> "
            f"{report['final_influence']} (threshold {report['threshold']}) in "
            f"{report['iterations_run']} iterations; conflict "
            + (conflict["score"] if conflict else "n/a")
        )
    _emit(args, doc, "\n".join(lines))
    return EXIT_OK


def _cmd_probe(args) -> int:
    engine = _engine(args)
    probes = engine.probe_set(args.concept)
    doc = probes.to_document()
    text = [f"target {probes.target}: {len(probes.forget)} forget / {len(probes.related)} related"]
    text += [f"  forget  {p.subject} -> {p.expected}" for p in probes.forget]
    text += [f"  related {p.subject} -> {p.expected}" for p in probes.related]
    _emit(args, doc, "\n".join(text))
    return EXIT_OK


def _cmd_conflict(args) -> int:
    from .conflict import conflict_score

    engine = _engine(args)
    probes = engine.probe_set(args.concept)
    if not probes.related:
        _emit(
            args,
            {"target": probes.target, "related": 0, "conflict": None},
            f"target {probes.target}: no related probes (vacuous)",
        )
        return EXIT_OK
    report = conflict_score(engine.model, probes.related)
    doc = {"target": probes.target, "conflict": report.to_payload()}
    _emit(
        args,
        doc,
        f"target {probes.target}: conflict {report.score:.4f} ({report.passed}/{report.total})",
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    engine = _engine(args)
    outcomes = engine.sweep(args.now)
    doc = {"processed": [o.to_document() for o in outcomes]}
    text = [f"processed {len(outcomes)} request(s)"] + [
        f"  {o.request.request_id}: {o.status.value}" for o in outcomes
    ]
    _emit(args, doc, "\n".join(text))
    return EXIT_OK


def _cmd_audit(args) -> int:
    engine = _engine(args)
    if args.verify:
        result = engine.audit_verify()
        doc = {
            "valid": result.valid,
            "first_invalid_index": result.first_invalid_index,
            "entry_count": result.entry_count,
        }
        if result.valid:
            _emit(args, doc, f"valid, {result.entry_count} entries")
            return EXIT_OK
        _emit(
            args,
            doc,
            f"INVALID at entry {result.first_invalid_index}, {result.entry_count} entries",
        )
        return EXIT_AUDIT_INVALID
    entries = engine.audit_entries()
    if args.tail:
        entries = entries[-args.tail :]
    doc = {"entries": entries, "entry_count": len(engine.ledger)}
    text = [f"{e['index']:6d} {e['timestamp']} {e['event_type']}" for e in entries] or ["(empty)"]
    _emit(args, doc, "\n".join(text))
    return EXIT_OK


def _cmd_serve(args) -> int:
    addr = args.addr or os.environ.get(ENV_ADDR) or DEFAULT_ADDR
    engine = _engine(args)
    server = make_server(engine, addr)
    host, port = server.server_address[:2]
    print(f"lethe: listening on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _cmd_report(args) -> int:
    engine = _engine(args)
    rows = engine.influence_table()
    doc = {
        "threshold": decimal_repr(engine.influence_threshold()),
        "concepts": [
            {
                "concept": r["concept"],
                "influence": None if r["influence"] is None else decimal_repr(r["influence"]),
                "below_threshold": r["below_threshold"],
                "forget_probes": r["forget_probes"],
                "related_probes": r["related_probes"],
            }
            for r in rows
        ],
    }
    lines = [f"{'concept':<12} {'influence':>14} {'probes':>7}  below-threshold"]
    for r in rows:
        influence = "-" if r["influence"] is None else f"{r['influence']:.6f}"
        below = "-" if r["below_threshold"] is None else str(r["below_threshold"]).lower()
        lines.append(f"{r['concept']:<12} {influence:>14} {r['forget_probes']:>7}  {below}")
    _emit(args, doc, "\n".join(lines))
    return EXIT_OK


_COMMANDS = {
    "seed": _cmd_seed,
    "ingest": _cmd_ingest,
    "forget": _cmd_forget,
    "probe": _cmd_probe,
    "conflict": _cmd_conflict,
    "sweep": _cmd_sweep,
    "audit": _cmd_audit,
    "serve": _cmd_serve,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help paths
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LetheError as exc:
        from .errors import UnknownConcept

        if isinstance(exc, UnknownConcept):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
