"""Tamper-evident, append-only, hash-chained audit log.

Every erasure lifecycle event lands here as one canonical-JSON line in
``ledger.jsonl``. Each entry commits to its predecessor:

    entry_hash = SHA-256(canonical_encode(entry without entry_hash))
    prev_hash[0] = 64 zeros; prev_hash[k] = entry_hash[k-1]

Canonical encoding makes the stored bytes the hashed bytes, so any
single-byte edit to the file either breaks the line's structure or
changes a hashed value -- both verifiably. Verification re-reads the
file from disk; it never trusts in-memory state.

This is a single-node log: it delivers the auditable/immutable
properties, not consensus (no network, no replication, no proof-of-*).
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import NamedTuple

from .canonical import canonical_encode, canonical_loads
from .errors import ChainCorrupt, StorageFailure, ValidationError

GENESIS_HASH = "0" * 64

# SHA-256 of the empty byte string; checked once per process as a
# self-test of the hash primitive.
EMPTY_SHA256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"

_TIMESTAMP_RE = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z")

# Byte layout of a canonical entry line. Keys sort as
# entry_hash < event_type < index < payload < prev_hash < timestamp,
# so the hashed document is b"{" + line[81:] and the tail fields sit at
# fixed offsets from the end of the line.
_PREFIX_RE = re.compile(
    rb'^\{"entry_hash":"([0-9a-f]{64})","event_type":"([A-Z_]+)","index":(0|[1-9][0-9]*),"payload":'
)
_HEAD_LEN = len('{"entry_hash":"') + 64 + len('",')  # 81
_TAIL_LEN = len(',"prev_hash":"') + 64 + len('","timestamp":"') + 20 + len('"}')  # 115


class EventType(str, Enum):
    REQUEST_SUBMITTED = "REQUEST_SUBMITTED"
    UNLEARN_STARTED = "UNLEARN_STARTED"
    UNLEARN_COMPLETED = "UNLEARN_COMPLETED"
    UNLEARN_FAILED = "UNLEARN_FAILED"
    GATE_REJECTED = "GATE_REJECTED"
    POLICY_UPDATED = "POLICY_UPDATED"


@dataclass(frozen=True)
class LedgerEntry:
    index: int
    timestamp: str
    event_type: str
    payload: dict
    prev_hash: str
    entry_hash: str

    def hashed_fields(self) -> dict:
        return {
            "index": self.index,
            "timestamp": self.timestamp,
            "event_type": self.event_type,
            "payload": self.payload,
            "prev_hash": self.prev_hash,
        }

    def to_document(self) -> dict:
        doc = self.hashed_fields()
        doc["entry_hash"] = self.entry_hash
        return doc


class VerifyResult(NamedTuple):
    valid: bool
    first_invalid_index: int | None
    entry_count: int


def iso_timestamp(epoch_seconds: int) -> str:
    """UTC ISO-8601 with seconds precision, fixed 20-character form."""
    return datetime.fromtimestamp(int(epoch_seconds), tz=timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ"
    )


def compute_entry_hash(index: int, timestamp: str, event_type: str, payload: dict, prev_hash: str) -> str:
    document = {
        "index": index,
        "timestamp": timestamp,
        "event_type": event_type,
        "payload": payload,
        "prev_hash": prev_hash,
    }
    return hashlib.sha256(canonical_encode(document)).hexdigest()


def _self_test() -> None:
    if hashlib.sha256(b"").hexdigest() != EMPTY_SHA256:
        raise StorageFailure("SHA-256 self-test failed: hash primitive is broken")


class Ledger:
    """Append-only hash chain persisted as one canonical-JSON entry per line."""

    def __init__(self, path: str):
        _self_test()
        self.path = path
        self._entries: list[LedgerEntry] = []
        self._last_hash = GENESIS_HASH
        self._corrupt_at: int | None = None
        self._load()

    # -- loading -------------------------------------------------------

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        try:
            with open(self.path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise StorageFailure(f"cannot read ledger {self.path}: {exc}") from exc
        prev = GENESIS_HASH
        for index, line in enumerate(_lines(data)):
            entry = _parse_strict(line, index, prev)
            if entry is None:
                self._corrupt_at = index
                return
            self._entries.append(entry)
            prev = entry.entry_hash
        self._last_hash = prev

    # -- appending -----------------------------------------------------

    def append(self, event_type: EventType | str, payload: dict, timestamp: str | None = None) -> LedgerEntry:
        """Construct, hash, persist, and return the next entry.

        Refuses to extend a chain that failed verification at load time.
        """
        if self._corrupt_at is not None:
            raise ChainCorrupt(
                f"refusing to append: ledger invalid from entry {self._corrupt_at}"
            )
        event_type = EventType(event_type).value
        if timestamp is None:
            timestamp = iso_timestamp(int(datetime.now(tz=timezone.utc).timestamp()))
        if not _TIMESTAMP_RE.fullmatch(timestamp):
            raise ValidationError(f"timestamp must be ISO-8601 UTC seconds form: {timestamp!r}")
        # Round-trip through the encoder: validates hash-safety (no binary
        # floats) and pins the NFC-normalized form that will be hashed.
        payload = canonical_loads(canonical_encode(payload))
        if not isinstance(payload, dict):
            raise ValidationError("ledger payload must be a JSON object")

        index = len(self._entries)
        prev_hash = self._last_hash
        entry_hash = compute_entry_hash(index, timestamp, event_type, payload, prev_hash)
        entry = LedgerEntry(
            index=index,
            timestamp=timestamp,
            event_type=event_type,
            payload=payload,
            prev_hash=prev_hash,
            entry_hash=entry_hash,
        )
        line = canonical_encode(entry.to_document()) + b"\n"
        try:
            with open(self.path, "ab") as fh:
                fh.write(line)
                fh.flush()
        except OSError as exc:
            raise StorageFailure(f"cannot append to ledger {self.path}: {exc}") from exc
        self._entries.append(entry)
        self._last_hash = entry_hash
        return entry

    # -- reading -------------------------------------------------------

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def tail(self, count: int) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries[-count:]) if count > 0 else ()

    # -- verification --------------------------------------------------

    def verify_chain(self) -> VerifyResult:
        """Recompute every hash and link from the bytes on disk."""
        if not os.path.exists(self.path):
            return VerifyResult(valid=True, first_invalid_index=None, entry_count=0)
        try:
            with open(self.path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise StorageFailure(f"cannot read ledger {self.path}: {exc}") from exc
        lines = _lines(data)
        prev = GENESIS_HASH
        for index, line in enumerate(lines):
            entry = _parse_strict(line, index, prev)
            if entry is None:
                return VerifyResult(valid=False, first_invalid_index=index, entry_count=len(lines))
            prev = entry.entry_hash
        return VerifyResult(valid=True, first_invalid_index=None, entry_count=len(lines))


def _lines(data: bytes) -> list[bytes]:
    chunks = data.split(b"\n")
    if chunks and chunks[-1] == b"":
        chunks.pop()
    return chunks


def _parse_strict(line: bytes, index: int, prev_hash: str) -> LedgerEntry | None:
    """Parse one persisted line, verifying structure, hash, and link.

    Returns None on any deviation: the writer emits exactly one byte
    layout, so anything else is tampering or corruption at this index.
    The claimed hash is recomputed over b"{" + line[81:], which equals
    the canonical encoding of the entry without its entry_hash field.
    """
    match = _PREFIX_RE.match(line)
    if match is None or len(line) < _HEAD_LEN + _TAIL_LEN:
        return None
    claimed_hash = match.group(1).decode("ascii")
    event_type = match.group(2).decode("ascii")
    try:
        claimed_index = int(match.group(3))
        EventType(event_type)
    except ValueError:
        return None

    tail = line[-_TAIL_LEN:]
    if not (
        tail.startswith(b',"prev_hash":"')
        and tail[78:93] == b'","timestamp":"'
        and tail.endswith(b'"}')
    ):
        return None
    claimed_prev = tail[14:78]
    timestamp = tail[93:113]
    if not re.fullmatch(rb"[0-9a-f]{64}", claimed_prev):
        return None
    if not _TIMESTAMP_RE.fullmatch(timestamp.decode("ascii", errors="replace")):
        return None

    recomputed = hashlib.sha256(b"{" + line[_HEAD_LEN:]).hexdigest()
    if recomputed != claimed_hash:
        return None
    if claimed_index != index or claimed_prev.decode("ascii") != prev_hash:
        return None

    payload_bytes = line[match.end() : len(line) - _TAIL_LEN]
    try:
        payload = canonical_loads(payload_bytes)
    except (UnicodeDecodeError, ValueError):
        return None
    if not isinstance(payload, dict):
        return None
    return LedgerEntry(
        index=index,
        timestamp=timestamp.decode("ascii"),
        event_type=event_type,
        payload=payload,
        prev_hash=prev_hash,
        entry_hash=claimed_hash,
    )
