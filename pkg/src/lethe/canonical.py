"""Canonical JSON encoding for hash-grade documents.

The encoding is deterministic and injective over distinct (normalized)
values: object keys sorted by code point, no insignificant whitespace,
strings NFC-normalized and emitted as UTF-8, integers in shortest
decimal form. Binary floats are rejected outright -- any numeric that
must survive hashing is carried as a shortest-round-trip decimal string
produced by :func:`decimal_repr`, which keeps hashes independent of
platform float formatting.
"""

from __future__ import annotations

import json
import math
import unicodedata
from typing import Any

from .errors import NonCanonicalizable


def decimal_repr(value: float) -> str:
    """Render a finite float as its shortest round-trip decimal string."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NonCanonicalizable(f"not a numeric value: {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise NonCanonicalizable(f"non-finite numeric value: {value!r}")
    return repr(value)


def _normalize(value: Any, path: str) -> Any:
    if value is None or isinstance(value, bool):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        raise NonCanonicalizable(
            f"binary float at {path or '$'}; encode numerics as decimal strings"
        )
    if isinstance(value, str):
        return unicodedata.normalize("NFC", value)
    if isinstance(value, (list, tuple)):
        return [_normalize(v, f"{path}[{i}]") for i, v in enumerate(value)]
    if isinstance(value, dict):
        out: dict[str, Any] = {}
        for key, v in value.items():
            if not isinstance(key, str):
                raise NonCanonicalizable(f"non-string key at {path or '$'}: {key!r}")
            nkey = unicodedata.normalize("NFC", key)
            if nkey in out:
                raise NonCanonicalizable(f"duplicate key after NFC at {path or '$'}: {nkey!r}")
            out[nkey] = _normalize(v, f"{path}.{nkey}")
        return out
    raise NonCanonicalizable(f"unencodable type {type(value).__name__} at {path or '$'}")


def canonical_encode(document: Any) -> bytes:
    """Encode ``document`` into canonical JSON bytes.

    Raises NonCanonicalizable for floats, non-string keys, duplicate
    keys (after NFC) and any type outside the JSON data model.
    """
    normalized = _normalize(document, "")
    text = json.dumps(
        normalized,
        ensure_ascii=False,
        sort_keys=True,
        separators=(",", ":"),
        allow_nan=False,
    )
    return text.encode("utf-8")


def canonical_loads(data: bytes | str) -> Any:
    """Parse JSON bytes produced by :func:`canonical_encode`."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(data)
