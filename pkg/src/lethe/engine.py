"""Compliance engine: the single-writer core shared by the CLI and service.

Owns the committed model snapshot, the fact base, the policy store,
retention records, the scheduled-erasure queue, and the audit ledger.
Every mutation (erasure run, ingestion, policy write, sweep) is
serialized through one lock and logged; reads always see the last
committed snapshot.

Erasure lifecycle for one request:

    REQUEST_SUBMITTED -> per concept: UNLEARN_STARTED then
    UNLEARN_COMPLETED, or one UNLEARN_FAILED for the whole request.

Unlearning that leaves the conflict score below the configured floor is
retried from the pre-request snapshot with a halved step, up to
``refine_rounds`` times; if the floor is still not met the request fails
and the model rolls back to the pre-request snapshot. The ledger is
append-only, so failed attempts stay on record.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum

from .canonical import canonical_encode, canonical_loads
from .conflict import ProbeSet, generate_probes
from .errors import (
    ConflictUnresolved,
    ErasureIncomplete,
    InvalidConfig,
    NoModel,
    PolicyNotFound,
    TargetHasNoFacts,
    UnknownConcept,
    ValidationError,
)
from .ledger import EventType, Ledger, VerifyResult, iso_timestamp
from .model import ConceptAssociationModel, Fact
from .policy import (
    ErasureReason,
    ErasureRequest,
    PolicyStore,
    PrivacyPolicy,
    RetentionRecord,
    expired_records,
    sweep_request_id,
)
from .privacy import GateAction, GateDecision, GateMode, Sample, gate
from .storage import atomic_write_bytes
from .unlearn import ConceptUnlearner, UnlearnReport

logger = logging.getLogger(__name__)

MODEL_FILE = "model.json"
LEDGER_FILE = "ledger.jsonl"
POLICIES_FILE = "policies.json"
STATE_FILE = "state.json"


class RequestStatus(str, Enum):
    QUEUED = "QUEUED"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


def _default_policy() -> PrivacyPolicy:
    return PrivacyPolicy(subject_id="default")


@dataclass(frozen=True)
class EngineConfig:
    """Engine-wide defaults for erasure runs and conflict certification."""

    alpha: float = 0.1
    max_iters: int = 500
    influence_threshold: float | None = None  # None: chance level ln(1/(n-1))
    normalize_each_step: bool = True
    conflict_floor: float = 0.9
    refine_rounds: int = 3
    default_policy: PrivacyPolicy = field(default_factory=_default_policy)

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise InvalidConfig(f"alpha must be > 0, got {self.alpha!r}")
        if self.max_iters < 0:
            raise InvalidConfig(f"max_iters must be >= 0, got {self.max_iters!r}")
        if self.conflict_floor < 0:
            raise InvalidConfig(f"conflict_floor must be >= 0, got {self.conflict_floor!r}")
        if self.refine_rounds < 0:
            raise InvalidConfig(f"refine_rounds must be >= 0, got {self.refine_rounds!r}")


@dataclass(frozen=True)
class ErasureOutcome:
    request: ErasureRequest
    status: RequestStatus
    reports: tuple[UnlearnReport, ...] = ()
    error: str | None = None
    message: str | None = None
    rolled_back: bool = False

    def to_document(self) -> dict:
        return {
            "request_id": self.request.request_id,
            "status": self.status.value,
            "reports": [r.to_payload() for r in self.reports],
            "error": self.error,
            "message": self.message,
            "rolled_back": self.rolled_back,
        }


@dataclass(frozen=True)
class IngestResult:
    decision: GateDecision
    inserted_facts: int = 0
    record_id: str | None = None
    scheduled_request_id: str | None = None

    def to_document(self) -> dict:
        doc = self.decision.to_payload()
        doc["inserted_facts"] = self.inserted_facts
        doc["record_id"] = self.record_id
        doc["scheduled_request_id"] = self.scheduled_request_id
        return doc


class ComplianceEngine:
    """Stateful engine over one data directory.

    ``clock`` is injectable for deterministic tests; it must return
    epoch seconds.
    """

    def __init__(self, data_dir: str, config: EngineConfig | None = None, clock=time.time):
        self.data_dir = data_dir
        self.config = config or EngineConfig()
        self._clock = clock
        os.makedirs(data_dir, exist_ok=True)
        self._lock = threading.RLock()
        self.ledger = Ledger(os.path.join(data_dir, LEDGER_FILE))

        self._model: ConceptAssociationModel | None = None
        self._snapshot_version = 0
        self._probe_cache: dict[tuple[int, str], ProbeSet] = {}
        if os.path.exists(self.model_path):
            self._model = ConceptAssociationModel.load(self.model_path)

        self.policies = PolicyStore(self.config.default_policy)
        policies_path = os.path.join(data_dir, POLICIES_FILE)
        if os.path.exists(policies_path):
            with open(policies_path, "rb") as fh:
                self.policies = PolicyStore.from_document(json.loads(fh.read().decode("utf-8")))

        self._records: list[RetentionRecord] = []
        self._swept: set[str] = set()
        self._queue: list[ErasureRequest] = []
        self._registry: dict[str, dict] = {}
        state_path = os.path.join(data_dir, STATE_FILE)
        if os.path.exists(state_path):
            with open(state_path, "rb") as fh:
                state = canonical_loads(fh.read())
            self._records = [RetentionRecord.from_document(r) for r in state.get("records", ())]
            self._swept = set(state.get("swept", ()))
            self._queue = [ErasureRequest.from_document(r) for r in state.get("queue", ())]
            self._registry = dict(state.get("registry", {}))

    # ------------------------------------------------------------------
    # clock / paths / persistence
    # ------------------------------------------------------------------

    @property
    def model_path(self) -> str:
        return os.path.join(self.data_dir, MODEL_FILE)

    def now(self) -> int:
        return int(self._clock())

    def _timestamp(self) -> str:
        return iso_timestamp(self.now())

    def _persist_state(self) -> None:
        state = {
            "records": [r.to_document() for r in self._records],
            "swept": sorted(self._swept),
            "queue": [r.to_payload() for r in self._queue],
            "registry": self._registry,
        }
        atomic_write_bytes(os.path.join(self.data_dir, STATE_FILE), canonical_encode(state))

    def _persist_policies(self) -> None:
        # Policy documents carry JSON numbers (theta, lambda), so they are
        # serialized like model snapshots, not like hashed payloads.
        text = json.dumps(
            self.policies.to_document(),
            ensure_ascii=False,
            sort_keys=True,
            separators=(",", ":"),
            allow_nan=False,
        )
        atomic_write_bytes(os.path.join(self.data_dir, POLICIES_FILE), text.encode("utf-8"))

    def _commit_model(self, model: ConceptAssociationModel) -> None:
        model.save(self.model_path)
        self._model = model
        self._snapshot_version += 1
        self._probe_cache.clear()

    # ------------------------------------------------------------------
    # model access
    # ------------------------------------------------------------------

    @property
    def model(self) -> ConceptAssociationModel:
        model = self._model
        if model is None:
            raise NoModel(f"no model snapshot in {self.data_dir}; seed one first")
        return model

    @property
    def has_model(self) -> bool:
        return self._model is not None

    def install_model(self, model: ConceptAssociationModel) -> None:
        """Seed or replace the committed snapshot."""
        with self._lock:
            self._commit_model(model)

    def influence_threshold(self, model: ConceptAssociationModel | None = None) -> float:
        model = model if model is not None else self.model
        if self.config.influence_threshold is not None:
            return float(self.config.influence_threshold)
        return model.chance_log_prob()

    def probe_set(self, target: str) -> ProbeSet:
        model = self.model
        key = (self._snapshot_version, target)
        probes = self._probe_cache.get(key)
        if probes is None:
            probes = generate_probes(model, target)
            self._probe_cache[key] = probes
        return probes

    def influence_row(self, name: str) -> dict:
        """Influence summary for one concept; null influence when it has no facts."""
        model = self.model
        model._concept_id(name)  # raises UnknownConcept for bad names
        threshold = self.influence_threshold(model)
        try:
            probes = self.probe_set(name)
        except TargetHasNoFacts:
            return {
                "concept": name,
                "influence": None,
                "threshold": threshold,
                "below_threshold": None,
                "forget_probes": 0,
                "related_probes": 0,
            }
        value = model.influence(name, probes.forget)
        return {
            "concept": name,
            "influence": value,
            "threshold": threshold,
            "below_threshold": value <= threshold,
            "forget_probes": len(probes.forget),
            "related_probes": len(probes.related),
        }

    def influence_table(self) -> list[dict]:
        return [self.influence_row(name) for name in self.model.concept_names()]

    # ------------------------------------------------------------------
    # erasure lifecycle
    # ------------------------------------------------------------------

    def submit_erasure(
        self,
        subject_id: str,
        concepts,
        reason: ErasureReason | str = ErasureReason.GDPR_ART17,
        request_id: str | None = None,
        submitted_at: int | None = None,
    ) -> ErasureOutcome:
        """Run the full erasure lifecycle synchronously.

        Structural validation failures raise before anything is logged.
        Failures after submission (unknown concept, unresolved conflict,
        non-convergence) are logged to the ledger and re-raised.
        """
        with self._lock:
            self.model  # a request against an unseeded engine is rejected unlogged
            request = ErasureRequest(
                request_id=request_id or str(uuid.uuid4()),
                subject_id=subject_id,
                concepts=tuple(concepts),
                reason=reason,
                submitted_at=self.now() if submitted_at is None else int(submitted_at),
            )
            if request.request_id in self._registry:
                raise ValidationError(f"duplicate request_id {request.request_id!r}")
            self.ledger.append(EventType.REQUEST_SUBMITTED, request.to_payload(), self._timestamp())
            outcome = self._process_request(request)
        if outcome.status is RequestStatus.FAILED:
            message = outcome.message or outcome.error or "erasure failed"
            if outcome.error == UnknownConcept.code:
                raise UnknownConcept(message)
            if outcome.error == ConflictUnresolved.code:
                raise ConflictUnresolved(message)
            raise ErasureIncomplete(message)
        return outcome

    def _process_request(self, request: ErasureRequest) -> ErasureOutcome:
        """Process a submitted request; captures flow errors in the outcome."""
        model = self.model
        unknown = [c for c in request.concepts if c not in model.index_]
        if unknown:
            message = f"unknown concept(s): {', '.join(unknown)}"
            self.ledger.append(
                EventType.UNLEARN_FAILED,
                {
                    "request_id": request.request_id,
                    "error": UnknownConcept.code,
                    "message": message,
                    "concepts": unknown,
                },
                self._timestamp(),
            )
            return self._finish(
                request, RequestStatus.FAILED, (), UnknownConcept.code, message, False
            )

        working = model
        reports: list[UnlearnReport] = []
        for name in request.concepts:
            self.ledger.append(
                EventType.UNLEARN_STARTED,
                {"request_id": request.request_id, "concept": name},
                self._timestamp(),
            )
            try:
                working, report = self._erase_one(working, name)
            except (ConflictUnresolved, ErasureIncomplete, ValidationError) as exc:
                code = getattr(exc, "code", "error")
                self.ledger.append(
                    EventType.UNLEARN_FAILED,
                    {
                        "request_id": request.request_id,
                        "concept": name,
                        "error": code,
                        "message": str(exc),
                        "rolled_back": True,
                    },
                    self._timestamp(),
                )
                # Nothing was committed, so the engine still serves the
                # pre-request snapshot: rollback is the default state.
                return self._finish(
                    request, RequestStatus.FAILED, tuple(reports), code, str(exc), True
                )
            reports.append(report)
            self.ledger.append(
                EventType.UNLEARN_COMPLETED,
                {"request_id": request.request_id, "report": report.to_payload()},
                self._timestamp(),
            )
        self._commit_model(working)
        return self._finish(request, RequestStatus.COMPLETED, tuple(reports), None, None, False)

    def _erase_one(
        self, model: ConceptAssociationModel, name: str
    ) -> tuple[ConceptAssociationModel, UnlearnReport]:
        probes = generate_probes(model, name)
        if not probes.related:
            # Vacuous conflict evaluation cannot certify non-damage.
            raise ConflictUnresolved(
                f"no related probes exist for {name!r}; erasure cannot be certified"
            )
        last_score = None
        for round_index in range(self.config.refine_rounds + 1):
            unlearner = ConceptUnlearner(
                alpha=self.config.alpha / (2.0**round_index),
                max_iters=self.config.max_iters,
                influence_threshold=self.config.influence_threshold,
                normalize_each_step=self.config.normalize_each_step,
            )
            new_model, report = unlearner.run(model, name, probes)
            if not report.converged:
                raise ErasureIncomplete(
                    f"unlearning {name!r} stopped at influence {report.final_influence:.6f} "
                    f"above threshold {report.threshold:.6f} ({report.stop_reason})"
                )
            assert report.conflict is not None
            last_score = report.conflict.score
            if last_score >= self.config.conflict_floor:
                return new_model, report
            logger.info(
                "conflict score %.3f below floor %.3f for %r; refining with halved step",
                last_score,
                self.config.conflict_floor,
                name,
            )
        raise ConflictUnresolved(
            f"conflict score {last_score:.3f} for {name!r} stayed below floor "
            f"{self.config.conflict_floor} after {self.config.refine_rounds} refinement rounds"
        )

    def _finish(
        self,
        request: ErasureRequest,
        status: RequestStatus,
        reports: tuple[UnlearnReport, ...],
        error: str | None,
        message: str | None,
        rolled_back: bool,
    ) -> ErasureOutcome:
        outcome = ErasureOutcome(
            request=request,
            status=status,
            reports=reports,
            error=error,
            message=message,
            rolled_back=rolled_back,
        )
        self._registry[request.request_id] = {
            "request": request.to_payload(),
            "status": status.value,
            "error": error,
            "message": message,
            "rolled_back": rolled_back,
            "reports": [r.to_payload() for r in reports],
        }
        self._persist_state()
        return outcome

    def erasure_status(self, request_id: str) -> dict:
        entry = self._registry.get(request_id)
        if entry is None:
            raise ValidationError(f"unknown request_id {request_id!r}")
        return dict(entry)

    # ------------------------------------------------------------------
    # ingestion gate
    # ------------------------------------------------------------------

    def ingest(self, document: dict) -> IngestResult:
        """Screen one sample; an accepted TRAINING sample's facts enter the fact base."""
        with self._lock:
            if not isinstance(document, dict):
                raise ValidationError("ingest body must be a JSON object")
            sample = Sample.from_document(document)
            mode_raw = document.get("mode", GateMode.TRAINING.value)
            try:
                mode = GateMode(str(mode_raw).upper())
            except ValueError:
                raise ValidationError(f"unknown gate mode {mode_raw!r}") from None
            try:
                facts = tuple(Fact.from_document(f) for f in document.get("facts", ()))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"malformed facts: {exc}") from exc
            if mode is GateMode.TRAINING and facts:
                model = self.model
                for fact in facts:
                    for concept in (fact.subject, fact.object):
                        if concept not in model.index_:
                            raise ValidationError(
                                f"fact references concept {concept!r} outside the vocabulary"
                            )
            policy = self.policies.resolve(sample.subject_id)
            decision = gate(sample, policy, mode)

            if decision.action is GateAction.ACCEPT:
                if mode is GateMode.TRAINING and facts:
                    record = RetentionRecord(
                        record_id=document.get("record_id") or str(uuid.uuid4()),
                        subject_id=sample.subject_id,
                        concepts=tuple(sorted({n for f in facts for n in (f.subject, f.object)})),
                        ingested_at=self.now(),
                    )
                    self._commit_model(self.model.with_facts(facts))
                    self._records.append(record)
                    self._persist_state()
                    return IngestResult(
                        decision, inserted_facts=len(facts), record_id=record.record_id
                    )
                return IngestResult(decision)

            if mode is GateMode.TRAINING:
                payload = decision.to_payload()
                payload["sample"] = sample.to_payload()
                self.ledger.append(EventType.GATE_REJECTED, payload, self._timestamp())
                return IngestResult(decision)

            # INFERENCE: accept the observation but schedule erasure of the
            # implicated concepts (flagged token labels naming vocabulary
            # entries, in token order).
            implicated: list[str] = []
            known = self._model.index_ if self._model is not None else {}
            flagged = set(decision.mask.indices)
            for index, label in sample.tokens:
                if index in flagged and label in known and label not in implicated:
                    implicated.append(label)
            if implicated:
                request = ErasureRequest(
                    request_id=str(uuid.uuid4()),
                    subject_id=sample.subject_id,
                    concepts=tuple(implicated),
                    reason=ErasureReason.GATE_TRIGGERED,
                    submitted_at=self.now(),
                )
                payload = request.to_payload()
                payload["gate"] = decision.to_payload()
                self.ledger.append(EventType.REQUEST_SUBMITTED, payload, self._timestamp())
                self._queue.append(request)
                self._registry[request.request_id] = {
                    "request": request.to_payload(),
                    "status": RequestStatus.QUEUED.value,
                    "error": None,
                    "message": None,
                    "rolled_back": False,
                    "reports": [],
                }
                self._persist_state()
                return IngestResult(decision, scheduled_request_id=request.request_id)
            payload = decision.to_payload()
            payload["sample"] = sample.to_payload()
            payload["note"] = "no vocabulary concepts implicated; nothing scheduled"
            self.ledger.append(EventType.GATE_REJECTED, payload, self._timestamp())
            return IngestResult(decision)

    # ------------------------------------------------------------------
    # policies
    # ------------------------------------------------------------------

    def put_policy(self, policy: PrivacyPolicy | dict, subject_id: str | None = None) -> PrivacyPolicy:
        with self._lock:
            if isinstance(policy, dict):
                policy = PrivacyPolicy.from_document(policy, subject_id=subject_id)
            elif subject_id is not None and policy.subject_id != subject_id:
                raise ValidationError("policy subject_id does not match the addressed subject")
            self.policies.put(policy)
            self._persist_policies()
            self.ledger.append(EventType.POLICY_UPDATED, policy.to_payload(), self._timestamp())
            return policy

    def get_policy(self, subject_id: str) -> PrivacyPolicy:
        policy = self.policies.get(subject_id)
        if policy is None:
            raise PolicyNotFound(f"no explicit policy stored for subject {subject_id!r}")
        return policy

    # ------------------------------------------------------------------
    # retention sweep and queue drain
    # ------------------------------------------------------------------

    def retention_records(self) -> tuple[RetentionRecord, ...]:
        return tuple(self._records)

    def queued_requests(self) -> tuple[ErasureRequest, ...]:
        return tuple(self._queue)

    def sweep(self, now: int | None = None) -> list[ErasureOutcome]:
        """Drain scheduled erasures, then convert and process retention expiries.

        Individual request failures are captured in the outcomes; the
        sweep itself keeps going. Converted records are remembered, so a
        second sweep at the same instant emits nothing new.
        """
        with self._lock:
            now = self.now() if now is None else int(now)
            outcomes: list[ErasureOutcome] = []

            pending, self._queue = list(self._queue), []
            for request in pending:
                outcomes.append(self._process_request(request))

            for record in expired_records(self._records, self.policies, now, exclude=self._swept):
                request = ErasureRequest(
                    request_id=sweep_request_id(record.record_id),
                    subject_id=record.subject_id,
                    concepts=record.concepts,
                    reason=ErasureReason.RETENTION_EXPIRED,
                    submitted_at=now,
                )
                self.ledger.append(
                    EventType.REQUEST_SUBMITTED, request.to_payload(), self._timestamp()
                )
                self._swept.add(record.record_id)
                outcomes.append(self._process_request(request))
            self._persist_state()
            return outcomes

    # ------------------------------------------------------------------
    # audit
    # ------------------------------------------------------------------

    def audit_verify(self) -> VerifyResult:
        return self.ledger.verify_chain()

    def audit_entries(self) -> list[dict]:
        return [entry.to_document() for entry in self.ledger.entries()]
