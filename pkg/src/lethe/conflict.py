"""Probe construction and conflict scoring.

Erasing one concept must not damage neighbouring knowledge. The probe
generator splits the fact base into *forget* probes (facts touching the
target) and *related* probes (facts sharing a category with the target's
facts but not involving it), filtered to associations the current model
already gets right -- so the pre-erasure conflict score is 1.0 by
construction and any later drop is attributable to the erasure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .canonical import decimal_repr
from .errors import EmptyProbeSet, TargetHasNoFacts
from .model import ConceptAssociationModel


class Probe(NamedTuple):
    """One measurement: querying ``subject`` should yield ``expected``."""

    subject: str
    expected: str


class ProbeFailure(NamedTuple):
    subject: str
    expected: str
    actual: str


@dataclass(frozen=True)
class ProbeSet:
    """Forget and related probes for one target concept.

    The two sides are disjoint as (subject, expected) pairs: forget
    probes always involve the target, related probes never do.
    """

    target: str
    forget: tuple[Probe, ...]
    related: tuple[Probe, ...]

    def __post_init__(self) -> None:
        overlap = set(self.forget) & set(self.related)
        if overlap:
            raise ValueError(f"forget and related probes overlap: {sorted(overlap)}")

    def to_document(self) -> dict:
        return {
            "target": self.target,
            "forget": [{"subject": p.subject, "expected": p.expected} for p in self.forget],
            "related": [{"subject": p.subject, "expected": p.expected} for p in self.related],
        }


@dataclass(frozen=True)
class ConflictReport:
    """Fraction of related probes still answered correctly after an erasure."""

    score: float
    passed: int
    total: int
    failures: tuple[ProbeFailure, ...] = ()

    def to_payload(self) -> dict:
        """Hash-safe document: the score rides as a decimal string."""
        return {
            "score": decimal_repr(self.score),
            "passed": self.passed,
            "total": self.total,
            "failures": [
                {"subject": f.subject, "expected": f.expected, "actual": f.actual}
                for f in self.failures
            ],
        }


def conflict_score(model: ConceptAssociationModel, related) -> ConflictReport:
    """Score = (1/|related|) * sum of 1(predict(subject) == expected).

    Pure counting; every miss is reported with the actual prediction.
    Raises EmptyProbeSet when there is nothing to measure -- an empty
    probe list must not masquerade as a perfect score.
    """
    probes = [Probe(*p) if not isinstance(p, Probe) else p for p in related]
    if not probes:
        raise EmptyProbeSet("conflict score is undefined for an empty related set")
    passed = 0
    failures = []
    for probe in probes:
        actual = model.predict(probe.subject)
        if actual == probe.expected:
            passed += 1
        else:
            failures.append(ProbeFailure(probe.subject, probe.expected, actual))
    return ConflictReport(
        score=passed / len(probes),
        passed=passed,
        total=len(probes),
        failures=tuple(failures),
    )


def generate_probes(model: ConceptAssociationModel, target: str) -> ProbeSet:
    """Build the measurement instrument for erasing ``target``.

    * forget: one probe per fact whose subject or object is the target,
      as (fact.subject -> fact.object), in fact order.
    * related: one probe per fact that shares a category with any target
      fact, involves the target on neither side, and is currently
      predicted correctly, in fact order.

    An empty related side is a legitimate degraded outcome (the target's
    categories may be unique to it); callers decide whether to certify.
    """
    model._check_fitted()
    target_id = model._concept_id(target)
    target_name = model.vocabulary_[target_id].name

    target_facts = [
        f for f in model.facts_ if target_name in (f.subject, f.object)
    ]
    if not target_facts:
        raise TargetHasNoFacts(f"concept {target_name!r} appears in no facts")

    target_categories = frozenset().union(*(f.categories for f in target_facts))

    forget = []
    seen_forget: set[Probe] = set()
    for fact in target_facts:
        probe = Probe(fact.subject, fact.object)
        if probe not in seen_forget:
            seen_forget.add(probe)
            forget.append(probe)

    related = []
    seen_related: set[Probe] = set()
    for fact in model.facts_:
        if target_name in (fact.subject, fact.object):
            continue
        if not (fact.categories & target_categories):
            continue
        probe = Probe(fact.subject, fact.object)
        if probe in seen_related:
            continue
        if model.predict(fact.subject) != fact.object:
            continue
        seen_related.add(probe)
        related.append(probe)

    return ProbeSet(target=target_name, forget=tuple(forget), related=tuple(related))
