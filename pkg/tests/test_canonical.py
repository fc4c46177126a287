import json
import subprocess
import sys
import unicodedata
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lethe import NonCanonicalizable, canonical_encode, canonical_loads, decimal_repr

GOLDEN = Path(__file__).parent / "data" / "golden_entry.bin"

FIXTURE_PAYLOAD = {
    "request_id": "3b241101-e2bb-4255-8caf-4136c566a962",
    "subject_id": "alice",
    "concepts": ["c17"],
    "reason": "GDPR_ART17",
    "submitted_at": 1767225600,
    "note": "café ✓",
}


def fixture_document():
    from lethe import compute_entry_hash

    prev = "0" * 64
    timestamp = "2026-01-01T00:00:00Z"
    entry_hash = compute_entry_hash(0, timestamp, "REQUEST_SUBMITTED", FIXTURE_PAYLOAD, prev)
    return {
        "index": 0,
        "timestamp": timestamp,
        "event_type": "REQUEST_SUBMITTED",
        "payload": FIXTURE_PAYLOAD,
        "prev_hash": prev,
        "entry_hash": entry_hash,
    }


def test_key_insertion_order_is_irrelevant():
    a = {"b": 1, "a": [1, 2], "c": {"y": None, "x": True}}
    b = {"c": {"x": True, "y": None}, "a": [1, 2], "b": 1}
    assert canonical_encode(a) == canonical_encode(b)


def test_one_character_difference_changes_bytes():
    assert canonical_encode({"k": "value"}) != canonical_encode({"k": "valuf"})
    assert canonical_encode({"k": 10}) != canonical_encode({"k": 100})


def test_no_insignificant_whitespace_and_sorted_keys():
    encoded = canonical_encode({"b": 1, "a": 2})
    assert encoded == b'{"a":2,"b":1}'


def test_nfc_normalization_unifies_equivalent_strings():
    composed = "café"
    decomposed = "café"
    assert composed != decomposed
    assert canonical_encode({"k": composed}) == canonical_encode({"k": decomposed})


def test_floats_are_rejected():
    with pytest.raises(NonCanonicalizable):
        canonical_encode({"x": 1.5})
    with pytest.raises(NonCanonicalizable):
        canonical_encode([0.1])


def test_non_string_keys_rejected():
    with pytest.raises(NonCanonicalizable):
        canonical_encode({1: "x"})


def test_duplicate_keys_after_nfc_rejected():
    with pytest.raises(NonCanonicalizable):
        canonical_encode({"café": 1, "café": 2})


def test_decimal_repr_round_trips():
    for value in (0.1, -3.891820298110627, 1e-300, 123456.789, -0.0):
        assert float(decimal_repr(value)) == value
    with pytest.raises(NonCanonicalizable):
        decimal_repr(float("nan"))
    with pytest.raises(NonCanonicalizable):
        decimal_repr(float("inf"))


def test_golden_fixture_bytes():
    # Recorded once and frozen; the encoding must never drift.
    assert canonical_encode(fixture_document()) == GOLDEN.read_bytes()


def test_golden_fixture_stable_across_processes():
    script = (
        "import json, sys; from lethe import canonical_encode;"
        "doc = json.loads(sys.stdin.read());"
        "sys.stdout.buffer.write(canonical_encode(doc))"
    )
    stdin = json.dumps(fixture_document()).encode()
    runs = [
        subprocess.run(
            [sys.executable, "-c", script], input=stdin, capture_output=True, check=True
        ).stdout
        for _ in range(2)
    ]
    assert runs[0] == runs[1] == GOLDEN.read_bytes()


json_scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-(2**53), max_value=2**53),
    st.text(max_size=20),
)
json_values = st.recursive(
    json_scalars,
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(st.text(max_size=8), children, max_size=4),
    ),
    max_leaves=12,
)


@settings(max_examples=120, deadline=None)
@given(document=json_values)
def test_encode_parse_round_trip(document):
    try:
        encoded = canonical_encode(document)
    except NonCanonicalizable:
        return  # duplicate-after-NFC keys are legitimately rejected
    decoded = canonical_loads(encoded)
    assert canonical_encode(decoded) == encoded

    def normalize(value):
        if isinstance(value, str):
            return unicodedata.normalize("NFC", value)
        if isinstance(value, list):
            return [normalize(v) for v in value]
        if isinstance(value, dict):
            return {unicodedata.normalize("NFC", k): normalize(v) for k, v in value.items()}
        return value

    assert decoded == normalize(document)
