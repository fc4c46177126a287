"""HTTP/1.1 + JSON boundary over the compliance engine.

Paths are the contract:

    POST /v1/erasure                      submit an erasure request
    GET  /v1/erasure/{id}                 request status
    POST /v1/ingest                       gate one sample
    GET  /v1/audit                        export ledger entries
    GET  /v1/audit/verify                 full-chain verification
    GET  /v1/concepts/{name}/influence    residual influence of a concept
    PUT  /v1/policies/{subject}           upsert a privacy policy
    GET  /v1/policies/{subject}           fetch a stored policy
    POST /v1/sweep                        retention sweep, body {"now": seconds}

Bodies are canonical JSON (sorted keys, compact); errors are
``{"code": ..., "message": ...}``. There is no auth and no TLS; deploy
behind a proxy.
"""

from __future__ import annotations

import json
import logging
import re
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import unquote

from .engine import ComplianceEngine, RequestStatus
from .errors import (
    ChainCorrupt,
    ConflictUnresolved,
    ErasureIncomplete,
    LetheError,
    NoModel,
    PolicyNotFound,
    StorageFailure,
    UnknownConcept,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_ADDR = "127.0.0.1:7341"

_STATUS_BY_ERROR = (
    (ValidationError, 400),
    (UnknownConcept, 404),
    (PolicyNotFound, 404),
    (ConflictUnresolved, 409),
    (ErasureIncomplete, 409),
    (NoModel, 409),
    (ChainCorrupt, 500),
    (StorageFailure, 500),
)


def _error_status(exc: LetheError) -> int:
    for cls, status in _STATUS_BY_ERROR:
        if isinstance(exc, cls):
            return status
    return 500


def _dumps(document) -> bytes:
    return json.dumps(
        document, ensure_ascii=False, sort_keys=True, separators=(",", ":"), allow_nan=False
    ).encode("utf-8")


class EngineHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], engine: ComplianceEngine):
        super().__init__(address, _Handler)
        self.engine = engine


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: EngineHTTPServer

    # -- plumbing -------------------------------------------------------

    def log_message(self, fmt, *args):  # route access logs to logging, not stderr
        logger.debug("%s - %s", self.address_string(), fmt % args)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            raise ValidationError("request body must be a JSON object")
        try:
            document = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"body is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ValidationError("request body must be a JSON object")
        return document

    def _send(self, status: int, document) -> None:
        body = _dumps(document)
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _dispatch(self, method: str) -> None:
        path = self.path.split("?", 1)[0]
        try:
            for pattern, handler_method, handler in _ROUTES:
                if handler_method != method:
                    continue
                match = pattern.match(path)
                if match:
                    handler(self, self.server.engine, match)
                    return
            self._send(404, {"code": "not_found", "message": f"no route for {method} {path}"})
        except LetheError as exc:
            self._send(_error_status(exc), {"code": exc.code, "message": str(exc)})
        except Exception as exc:  # pragma: no cover - last-resort guard
            logger.exception("unhandled error serving %s %s", method, path)
            self._send(500, {"code": "internal", "message": str(exc)})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")

    # -- endpoints ------------------------------------------------------

    def _submit_erasure(self, engine: ComplianceEngine, match) -> None:
        body = self._read_body()
        subject_id = body.get("subject_id")
        concepts = body.get("concepts")
        if not isinstance(subject_id, str) or not subject_id:
            raise ValidationError("subject_id must be a non-empty string")
        if not isinstance(concepts, list) or not concepts:
            raise ValidationError("concepts must be a non-empty list of names")
        outcome = engine.submit_erasure(
            subject_id=subject_id,
            concepts=concepts,
            reason=body.get("reason", "GDPR_ART17"),
            request_id=body.get("request_id"),
        )
        self._send(202, outcome.to_document())

    def _erasure_status(self, engine: ComplianceEngine, match) -> None:
        request_id = unquote(match.group("rid"))
        try:
            status = engine.erasure_status(request_id)
        except ValidationError:
            self._send(404, {"code": "not_found", "message": f"unknown request {request_id!r}"})
            return
        self._send(200, status)

    def _ingest(self, engine: ComplianceEngine, match) -> None:
        result = engine.ingest(self._read_body())
        self._send(200, result.to_document())

    def _audit(self, engine: ComplianceEngine, match) -> None:
        entries = engine.audit_entries()
        self._send(200, {"entries": entries, "entry_count": len(entries)})

    def _audit_verify(self, engine: ComplianceEngine, match) -> None:
        result = engine.audit_verify()
        self._send(
            200,
            {
                "valid": result.valid,
                "first_invalid_index": result.first_invalid_index,
                "entry_count": result.entry_count,
            },
        )

    def _influence(self, engine: ComplianceEngine, match) -> None:
        row = engine.influence_row(unquote(match.group("name")))
        self._send(200, _influence_document(row))

    def _put_policy(self, engine: ComplianceEngine, match) -> None:
        subject = unquote(match.group("subject"))
        body = self._read_body()
        body.setdefault("subject_id", subject)
        policy = engine.put_policy(body, subject_id=subject)
        self._send(200, policy.to_document())

    def _get_policy(self, engine: ComplianceEngine, match) -> None:
        policy = engine.get_policy(unquote(match.group("subject")))
        self._send(200, policy.to_document())

    def _sweep(self, engine: ComplianceEngine, match) -> None:
        body = self._read_body()
        now = body.get("now")
        if now is not None and (isinstance(now, bool) or not isinstance(now, int) or now < 0):
            raise ValidationError("now must be a non-negative integer of epoch seconds")
        outcomes = engine.sweep(now)
        self._send(
            200,
            {
                "processed": [o.to_document() for o in outcomes],
                "completed": sum(1 for o in outcomes if o.status is RequestStatus.COMPLETED),
                "failed": sum(1 for o in outcomes if o.status is RequestStatus.FAILED),
            },
        )


def _influence_document(row: dict) -> dict:
    # Influence rides as a decimal string so every response body stays
    # canonical-encoder clean.
    doc = dict(row)
    for key in ("influence", "threshold"):
        if doc.get(key) is not None:
            doc[key] = repr(float(doc[key]))
    return doc


_ROUTES = (
    (re.compile(r"^/v1/erasure$"), "POST", _Handler._submit_erasure),
    (re.compile(r"^/v1/erasure/(?P<rid>[^/]+)$"), "GET", _Handler._erasure_status),
    (re.compile(r"^/v1/ingest$"), "POST", _Handler._ingest),
    (re.compile(r"^/v1/audit$"), "GET", _Handler._audit),
    (re.compile(r"^/v1/audit/verify$"), "GET", _Handler._audit_verify),
    (re.compile(r"^/v1/concepts/(?P<name>[^/]+)/influence$"), "GET", _Handler._influence),
    (re.compile(r"^/v1/policies/(?P<subject>[^/]+)$"), "PUT", _Handler._put_policy),
    (re.compile(r"^/v1/policies/(?P<subject>[^/]+)$"), "GET", _Handler._get_policy),
    (re.compile(r"^/v1/sweep$"), "POST", _Handler._sweep),
)


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValidationError(f"listen address must be host:port, got {addr!r}")
    return host, int(port)


def make_server(engine: ComplianceEngine, addr: str = DEFAULT_ADDR) -> EngineHTTPServer:
    """Bind and return the server; callers run ``serve_forever()``."""
    return EngineHTTPServer(parse_addr(addr), engine)
