"""Real-time ingestion gate: sensitive-feature detection and privacy loss.

Detection is a deterministic rule set, not a learned detector: a feature
position is flagged when its token label appears in the policy's
sensitive lexicon, and every position is flagged when the sample carries
an excluded category. The privacy loss is the policy-weighted squared
norm of the flagged coordinates; strictly exceeding the policy threshold
trips the gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .canonical import decimal_repr
from .errors import ValidationError
from .policy import PrivacyPolicy


@dataclass(frozen=True)
class Sample:
    """An incoming data sample: a feature vector with position annotations."""

    subject_id: str
    features: tuple[float, ...]
    tokens: tuple[tuple[int, str], ...] = ()
    categories: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.subject_id:
            raise ValidationError("sample subject_id must be non-empty")
        object.__setattr__(self, "features", tuple(float(x) for x in self.features))
        tokens = tuple((int(i), str(label)) for i, label in self.tokens)
        for i, _ in tokens:
            if not 0 <= i < len(self.features):
                raise ValidationError(f"token index {i} out of range for {len(self.features)} features")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "categories", frozenset(self.categories))

    @classmethod
    def from_document(cls, doc: dict) -> "Sample":
        try:
            return cls(
                subject_id=doc["subject_id"],
                features=tuple(doc["features"]),
                tokens=tuple((t[0], t[1]) for t in doc.get("tokens", ())),
                categories=frozenset(doc.get("categories", ())),
            )
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ValidationError(f"malformed sample: {exc}") from exc

    def to_payload(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "n_features": len(self.features),
            "categories": sorted(self.categories),
        }


@dataclass(frozen=True)
class SensitivityMask:
    """Flagged feature positions plus the rule identifiers that fired."""

    indices: tuple[int, ...] = ()
    matched_rules: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        indices = tuple(self.indices)
        if list(indices) != sorted(set(indices)):
            raise ValidationError("mask indices must be sorted and unique")
        if any(i < 0 for i in indices):
            raise ValidationError("mask indices must be non-negative")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "matched_rules", tuple(self.matched_rules))


class GateMode(str, Enum):
    TRAINING = "TRAINING"
    INFERENCE = "INFERENCE"


class GateAction(str, Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"
    ACCEPT_AND_SCHEDULE_ERASURE = "ACCEPT_AND_SCHEDULE_ERASURE"


@dataclass(frozen=True)
class GateDecision:
    privacy_loss: float
    action: GateAction
    policy_id: str
    mode: GateMode = GateMode.TRAINING
    mask: SensitivityMask = field(default_factory=SensitivityMask)

    def to_payload(self) -> dict:
        return {
            "privacy_loss": decimal_repr(self.privacy_loss),
            "action": self.action.value,
            "policy_id": self.policy_id,
            "mode": self.mode.value,
            "flagged_indices": list(self.mask.indices),
            "matched_rules": list(self.mask.matched_rules),
        }


def detect_sensitive(sample: Sample, policy: PrivacyPolicy) -> SensitivityMask:
    """Flag feature positions per the policy's lexicon and category rules."""
    rules: list[str] = []
    flagged: set[int] = set()

    excluded = sorted(sample.categories & policy.excluded_categories)
    if excluded:
        flagged.update(range(len(sample.features)))
        rules.extend(f"category:{name}" for name in excluded)

    for index, label in sample.tokens:
        if label in policy.sensitive_lexicon:
            flagged.add(index)
            rule = f"label:{label}"
            if rule not in rules:
                rules.append(rule)

    return SensitivityMask(indices=tuple(sorted(flagged)), matched_rules=tuple(rules))


def privacy_loss(sample: Sample, mask: SensitivityMask, lam: float) -> float:
    """lam times the sum of squares of the flagged coordinates.

    Accumulated in ascending index order with plain float adds so the
    result is reproducible term for term.
    """
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam!r}")
    if mask.indices and mask.indices[-1] >= len(sample.features):
        raise ValidationError("mask index out of range for sample")
    total = 0.0
    for index in mask.indices:
        value = sample.features[index]
        total += value * value
    return lam * total


def gate(sample: Sample, policy: PrivacyPolicy, mode: GateMode = GateMode.TRAINING) -> GateDecision:
    """Pure gate decision for one sample under one policy.

    The threshold is strict: a loss exactly at theta is accepted. Above
    it, training-time samples are rejected outright while inference-time
    observations are accepted but marked for scheduled erasure.
    """
    mode = GateMode(mode)
    mask = detect_sensitive(sample, policy)
    loss = privacy_loss(sample, mask, policy.lambda_)
    if loss > policy.theta:
        action = GateAction.REJECT if mode is GateMode.TRAINING else GateAction.ACCEPT_AND_SCHEDULE_ERASURE
    else:
        action = GateAction.ACCEPT
    return GateDecision(
        privacy_loss=loss,
        action=action,
        policy_id=policy.subject_id,
        mode=mode,
        mask=mask,
    )
