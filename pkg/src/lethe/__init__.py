"""Lethe: targeted-unlearning compliance engine for small embedding models.

Removes a concept's influence from a concept-association model by
iterative embedding corruption, certifies non-damage to related
knowledge with a conflict score, gates data ingestion on a privacy
objective, and records every erasure lifecycle event in a tamper-evident
hash-chained audit ledger -- behind a service API and an operator CLI.
"""

from .canonical import canonical_encode, canonical_loads, decimal_repr
from .conflict import ConflictReport, Probe, ProbeFailure, ProbeSet, conflict_score, generate_probes
from .engine import ComplianceEngine, EngineConfig, ErasureOutcome, IngestResult, RequestStatus
from .errors import (
    ChainCorrupt,
    ConflictUnresolved,
    DegenerateStep,
    EmptyFactBase,
    EmptyProbeSet,
    ErasureIncomplete,
    InvalidConfig,
    InvalidPolicy,
    LetheError,
    NoModel,
    NonCanonicalizable,
    PolicyNotFound,
    ProbeUnrelatedToConcept,
    SelfQuery,
    SnapshotFormatError,
    StorageFailure,
    TargetHasNoFacts,
    UnknownConcept,
    ValidationError,
)
from .kb import generate_knowledge_base
from .ledger import EventType, Ledger, LedgerEntry, VerifyResult, compute_entry_hash, iso_timestamp
from .model import Concept, ConceptAssociationModel, Fact
from .policy import (
    ErasureReason,
    ErasureRequest,
    PolicyStore,
    PrivacyPolicy,
    RetentionRecord,
    expired_records,
    sweep_expired,
)
from .privacy import (
    GateAction,
    GateDecision,
    GateMode,
    Sample,
    SensitivityMask,
    detect_sensitive,
    gate,
    privacy_loss,
)
from .unlearn import ConceptUnlearner, UnlearnReport, corrupt_embedding, corruption_step

__version__ = "0.1.0"

__all__ = [
    "ChainCorrupt",
    "ComplianceEngine",
    "Concept",
    "ConceptAssociationModel",
    "ConceptUnlearner",
    "ConflictReport",
    "ConflictUnresolved",
    "DegenerateStep",
    "EmptyFactBase",
    "EmptyProbeSet",
    "EngineConfig",
    "ErasureIncomplete",
    "ErasureOutcome",
    "ErasureReason",
    "ErasureRequest",
    "EventType",
    "Fact",
    "GateAction",
    "GateDecision",
    "GateMode",
    "IngestResult",
    "InvalidConfig",
    "InvalidPolicy",
    "Ledger",
    "LedgerEntry",
    "LetheError",
    "NoModel",
    "NonCanonicalizable",
    "PolicyNotFound",
    "PolicyStore",
    "PrivacyPolicy",
    "Probe",
    "ProbeFailure",
    "ProbeSet",
    "ProbeUnrelatedToConcept",
    "RequestStatus",
    "RetentionRecord",
    "Sample",
    "SelfQuery",
    "SensitivityMask",
    "SnapshotFormatError",
    "StorageFailure",
    "TargetHasNoFacts",
    "UnknownConcept",
    "ValidationError",
    "VerifyResult",
    "canonical_encode",
    "canonical_loads",
    "compute_entry_hash",
    "conflict_score",
    "corrupt_embedding",
    "corruption_step",
    "detect_sensitive",
    "expired_records",
    "gate",
    "generate_knowledge_base",
    "generate_probes",
    "iso_timestamp",
    "privacy_loss",
    "sweep_expired",
    "__version__",
]
