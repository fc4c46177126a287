"""Per-subject privacy policies, retention records, and expiry sweeps.

Policies set the gate parameters (lexicon, excluded categories, theta,
lambda) and a retention duration. A sweep is an explicit, deterministic
scan that converts every record past its deadline into an erasure
request; nothing runs in the background. The boundary is inclusive:
data becomes erasable the instant its retention elapses.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .canonical import decimal_repr
from .errors import InvalidPolicy, ValidationError

# Namespace for deterministic sweep request ids (uuid5 of the record id).
_SWEEP_NAMESPACE = uuid.UUID("6cf1b7a0-24a5-45c7-a24e-28fbe0ef3c3d")

DEFAULT_POLICY_ID = "default"


@dataclass(frozen=True)
class PrivacyPolicy:
    """One subject's privacy preferences; ``retention_seconds=None`` means unlimited."""

    subject_id: str
    retention_seconds: int | None = None
    excluded_categories: frozenset[str] = frozenset()
    sensitive_lexicon: frozenset[str] = frozenset()
    theta: float = 1.0
    lambda_: float = 1.0

    def __post_init__(self) -> None:
        if not self.subject_id or not isinstance(self.subject_id, str):
            raise InvalidPolicy("policy subject_id must be a non-empty string")
        if self.retention_seconds is not None:
            if (
                not isinstance(self.retention_seconds, int)
                or isinstance(self.retention_seconds, bool)
                or self.retention_seconds <= 0
            ):
                raise InvalidPolicy(
                    f"retention_seconds must be a positive integer or null, got {self.retention_seconds!r}"
                )
        if not isinstance(self.theta, (int, float)) or isinstance(self.theta, bool) or self.theta < 0:
            raise InvalidPolicy(f"theta must be >= 0, got {self.theta!r}")
        if not isinstance(self.lambda_, (int, float)) or isinstance(self.lambda_, bool) or self.lambda_ < 0:
            raise InvalidPolicy(f"lambda must be >= 0, got {self.lambda_!r}")
        object.__setattr__(self, "excluded_categories", frozenset(self.excluded_categories))
        object.__setattr__(self, "sensitive_lexicon", frozenset(self.sensitive_lexicon))
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "lambda_", float(self.lambda_))

    def to_document(self) -> dict:
        """API/storage form; numerics stay JSON numbers here."""
        return {
            "subject_id": self.subject_id,
            "retention_seconds": self.retention_seconds,
            "excluded_categories": sorted(self.excluded_categories),
            "sensitive_lexicon": sorted(self.sensitive_lexicon),
            "theta": self.theta,
            "lambda": self.lambda_,
        }

    def to_payload(self) -> dict:
        """Hash-safe form for ledger entries (numerics as decimal strings)."""
        doc = self.to_document()
        doc["theta"] = decimal_repr(self.theta)
        doc["lambda"] = decimal_repr(self.lambda_)
        return doc

    @classmethod
    def from_document(cls, doc: dict, subject_id: str | None = None) -> "PrivacyPolicy":
        try:
            retention = doc.get("retention_seconds")
            if retention == "unlimited":
                retention = None
            return cls(
                subject_id=subject_id or doc["subject_id"],
                retention_seconds=retention,
                excluded_categories=frozenset(doc.get("excluded_categories", ())),
                sensitive_lexicon=frozenset(doc.get("sensitive_lexicon", ())),
                theta=doc.get("theta", 1.0),
                lambda_=doc.get("lambda", doc.get("lambda_", 1.0)),
            )
        except InvalidPolicy:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidPolicy(f"malformed policy document: {exc}") from exc


@dataclass(frozen=True)
class RetentionRecord:
    """Bookkeeping for one accepted ingestion: which concepts, when."""

    record_id: str
    subject_id: str
    concepts: tuple[str, ...]
    ingested_at: int

    def __post_init__(self) -> None:
        if not self.record_id:
            raise ValidationError("record_id must be non-empty")
        object.__setattr__(self, "concepts", tuple(self.concepts))
        object.__setattr__(self, "ingested_at", int(self.ingested_at))

    def to_document(self) -> dict:
        return {
            "record_id": self.record_id,
            "subject_id": self.subject_id,
            "concepts": list(self.concepts),
            "ingested_at": self.ingested_at,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "RetentionRecord":
        return cls(
            record_id=doc["record_id"],
            subject_id=doc["subject_id"],
            concepts=tuple(doc["concepts"]),
            ingested_at=doc["ingested_at"],
        )


class ErasureReason(str, Enum):
    GDPR_ART17 = "GDPR_ART17"
    RETENTION_EXPIRED = "RETENTION_EXPIRED"
    GATE_TRIGGERED = "GATE_TRIGGERED"
    USER_PREFERENCE = "USER_PREFERENCE"


@dataclass(frozen=True)
class ErasureRequest:
    """The auditable unit of the right-to-be-forgotten workflow."""

    request_id: str
    subject_id: str
    concepts: tuple[str, ...]
    reason: ErasureReason
    submitted_at: int

    def __post_init__(self) -> None:
        try:
            uuid.UUID(self.request_id)
        except (ValueError, AttributeError, TypeError) as exc:
            raise ValidationError(f"request_id must be a UUID string: {self.request_id!r}") from exc
        concepts = tuple(self.concepts)
        if not concepts:
            raise ValidationError("an erasure request needs at least one concept")
        if any(not isinstance(c, str) or not c for c in concepts):
            raise ValidationError("concepts must be non-empty names")
        object.__setattr__(self, "concepts", concepts)
        object.__setattr__(self, "reason", ErasureReason(self.reason))
        object.__setattr__(self, "submitted_at", int(self.submitted_at))

    def to_payload(self) -> dict:
        return {
            "request_id": self.request_id,
            "subject_id": self.subject_id,
            "concepts": list(self.concepts),
            "reason": self.reason.value,
            "submitted_at": self.submitted_at,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "ErasureRequest":
        try:
            return cls(
                request_id=doc["request_id"],
                subject_id=doc["subject_id"],
                concepts=tuple(doc["concepts"]),
                reason=ErasureReason(doc["reason"]),
                submitted_at=doc["submitted_at"],
            )
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed erasure request: {exc}") from exc


class PolicyStore:
    """Per-subject policies over a mandatory engine-wide default.

    ``resolve`` always returns exactly one effective policy, so the gate
    is never undefined.
    """

    def __init__(self, default_policy: PrivacyPolicy | None = None):
        self._default = default_policy or PrivacyPolicy(subject_id=DEFAULT_POLICY_ID)
        self._policies: dict[str, PrivacyPolicy] = {}

    @property
    def default(self) -> PrivacyPolicy:
        return self._default

    def put(self, policy: PrivacyPolicy) -> None:
        if policy.subject_id == self._default.subject_id:
            self._default = policy
        else:
            self._policies[policy.subject_id] = policy

    def get(self, subject_id: str) -> PrivacyPolicy | None:
        if subject_id == self._default.subject_id:
            return self._default
        return self._policies.get(subject_id)

    def resolve(self, subject_id: str) -> PrivacyPolicy:
        return self._policies.get(subject_id, self._default)

    def subjects(self) -> tuple[str, ...]:
        return tuple(sorted(self._policies))

    def to_document(self) -> dict:
        return {
            "default": self._default.to_document(),
            "policies": [self._policies[s].to_document() for s in sorted(self._policies)],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "PolicyStore":
        store = cls(PrivacyPolicy.from_document(doc["default"]))
        for policy_doc in doc.get("policies", ()):
            store.put(PrivacyPolicy.from_document(policy_doc))
        return store


def expired_records(
    records: Iterable[RetentionRecord],
    policies: PolicyStore,
    now: int,
    exclude: Iterable[str] = (),
) -> list[RetentionRecord]:
    """Records whose retention has elapsed at ``now`` (inclusive boundary)."""
    if now < 0:
        raise ValidationError(f"now must be >= 0, got {now!r}")
    skip = set(exclude)
    out = []
    for record in records:
        if record.record_id in skip:
            continue
        retention = policies.resolve(record.subject_id).retention_seconds
        if retention is None:
            continue
        if now >= record.ingested_at + retention:
            out.append(record)
    out.sort(key=lambda r: (r.ingested_at, r.record_id))
    return out


def sweep_request_id(record_id: str) -> str:
    """Deterministic request id for a retention expiry, stable across sweeps."""
    return str(uuid.uuid5(_SWEEP_NAMESPACE, f"retention:{record_id}"))


def sweep_expired(
    records: Iterable[RetentionRecord],
    policies: PolicyStore,
    now: int,
    exclude: Iterable[str] = (),
) -> list[ErasureRequest]:
    """Convert expired records into erasure requests.

    Output is ordered by (ingested_at, record_id). Record ids in
    ``exclude`` (already converted by an earlier sweep) are skipped, so
    repeating a sweep emits nothing new.
    """
    return [
        ErasureRequest(
            request_id=sweep_request_id(record.record_id),
            subject_id=record.subject_id,
            concepts=record.concepts,
            reason=ErasureReason.RETENTION_EXPIRED,
            submitted_at=int(now),
        )
        for record in expired_records(records, policies, now, exclude)
    ]
