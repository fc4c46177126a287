"""Exception hierarchy shared by every lethe module.

Exceptions carry a short machine-readable ``code`` so the service layer
can map them onto HTTP statuses and the CLI onto exit codes without
string matching.
"""

from __future__ import annotations


class LetheError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class ValidationError(LetheError):
    """Malformed input: rejected before any state changes."""

    code = "invalid"


class InvalidConfig(ValidationError):
    code = "invalid_config"


class InvalidPolicy(ValidationError):
    code = "invalid_policy"


class EmptyFactBase(ValidationError):
    code = "empty_fact_base"


class EmptyProbeSet(ValidationError):
    code = "empty_probe_set"


class SelfQuery(ValidationError):
    code = "self_query"


class ProbeUnrelatedToConcept(ValidationError):
    code = "probe_unrelated_to_concept"


class TargetHasNoFacts(ValidationError):
    code = "target_has_no_facts"


class UnknownConcept(LetheError):
    """A concept name or id that is not in the model vocabulary."""

    code = "unknown_concept"


class PolicyNotFound(LetheError):
    code = "policy_not_found"


class NoModel(LetheError):
    """The engine has no model snapshot loaded yet."""

    code = "no_model"


class DegenerateStep(LetheError):
    """A corruption update produced the zero vector before projection."""

    code = "degenerate_step"


class ErasureIncomplete(LetheError):
    """Unlearning stopped above the influence threshold (budget or stall)."""

    code = "erasure_incomplete"


class ConflictUnresolved(LetheError):
    """Post-unlearning conflict score stayed below the configured floor."""

    code = "conflict_unresolved"


class NonCanonicalizable(ValidationError):
    """A value that has no canonical byte encoding (e.g. a binary float)."""

    code = "non_canonicalizable"


class StorageFailure(LetheError):
    code = "storage_failure"


class ChainCorrupt(LetheError):
    """Refusing to append to a ledger that fails verification."""

    code = "chain_corrupt"


class SnapshotFormatError(StorageFailure):
    code = "snapshot_format_error"
