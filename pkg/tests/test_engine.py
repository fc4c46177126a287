import threading
from pathlib import Path

import numpy as np
import pytest

from lethe import (
    ComplianceEngine,
    ConflictUnresolved,
    GateAction,
    NoModel,
    PolicyNotFound,
    PrivacyPolicy,
    UnknownConcept,
    ValidationError,
)
from lethe.engine import RequestStatus
from conftest import make_engine


@pytest.fixture
def engine(tmp_path, clock, small_model):
    return make_engine(tmp_path, clock=clock, model=small_model)


def event_types(engine):
    return [e.event_type for e in engine.ledger.entries()]


def sample_doc(subject="s1", value=2.0, token="ssn", facts=()):
    return {
        "subject_id": subject,
        "features": [value, 0.5],
        "tokens": [[0, token]],
        "categories": [],
        "facts": list(facts),
    }


# ----------------------------------------------------------------------
# erasure lifecycle
# ----------------------------------------------------------------------


def test_erasure_lifecycle_completes(engine, small_model):
    outcome = engine.submit_erasure("alice", ["c2"])
    assert outcome.status is RequestStatus.COMPLETED
    assert event_types(engine) == [
        "REQUEST_SUBMITTED",
        "UNLEARN_STARTED",
        "UNLEARN_COMPLETED",
    ]
    assert engine.audit_verify().valid
    report = outcome.reports[0]
    assert report.converged and report.conflict.score >= 0.9
    # the committed snapshot differs only in the target row
    target_id = small_model.index_["c2"]
    for cid in range(small_model.n_concepts):
        same = np.array_equal(engine.model.embeddings_[cid], small_model.embeddings_[cid])
        assert same == (cid != target_id)
    # and it was persisted
    status = engine.erasure_status(outcome.request.request_id)
    assert status["status"] == "COMPLETED"


def test_erasure_unknown_concept_logs_two_entries(engine):
    with pytest.raises(UnknownConcept) as excinfo:
        engine.submit_erasure("alice", ["nosuch"])
    assert "nosuch" in str(excinfo.value)
    assert event_types(engine) == ["REQUEST_SUBMITTED", "UNLEARN_FAILED"]


def test_erasure_empty_concepts_writes_nothing(engine):
    with pytest.raises(ValidationError):
        engine.submit_erasure("alice", [])
    assert event_types(engine) == []


def test_erasure_without_model_rejected_unlogged(tmp_path, clock):
    engine = make_engine(tmp_path, clock=clock)
    with pytest.raises(NoModel):
        engine.submit_erasure("alice", ["c2"])
    assert event_types(engine) == []


def test_erasure_conflict_unresolved_rolls_back(engine, small_model):
    # c8's erasure inherently damages related knowledge (conflict 0.75);
    # refinement cannot rescue it, so the request fails and rolls back.
    snapshot_before = Path(engine.model_path).read_bytes()
    with pytest.raises(ConflictUnresolved):
        engine.submit_erasure("alice", ["c8"])
    assert event_types(engine) == ["REQUEST_SUBMITTED", "UNLEARN_STARTED", "UNLEARN_FAILED"]
    assert engine.model is small_model
    assert Path(engine.model_path).read_bytes() == snapshot_before
    status = engine.erasure_status(engine.ledger.entries()[0].payload["request_id"])
    assert status["status"] == "FAILED" and status["rolled_back"]


def test_erasure_injected_floor_rolls_back(tmp_path, clock, small_model):
    # A floor above 1.0 is unreachable: deterministic failure injection.
    engine = make_engine(tmp_path, clock=clock, model=small_model, conflict_floor=1.01)
    before = Path(engine.model_path).read_bytes()
    with pytest.raises(ConflictUnresolved):
        engine.submit_erasure("alice", ["c2"])
    assert Path(engine.model_path).read_bytes() == before
    assert engine.model is small_model


def test_refinement_halves_alpha_until_floor_met(engine, monkeypatch):
    import lethe.unlearn as unlearn_module

    real_score = unlearn_module.conflict_score
    calls = {"n": 0}

    def fake_score(model, related):
        calls["n"] += 1
        report = real_score(model, related)
        if calls["n"] == 1:  # sabotage round 0 only
            object.__setattr__(report, "score", 0.1)
        return report

    monkeypatch.setattr(unlearn_module, "conflict_score", fake_score)
    outcome = engine.submit_erasure("alice", ["c2"])
    assert outcome.status is RequestStatus.COMPLETED
    # certified on the first refinement round, at half the base step
    assert outcome.reports[0].alpha == pytest.approx(engine.config.alpha / 2)


def test_multi_concept_request_is_sequential(engine, small_model):
    outcome = engine.submit_erasure("alice", ["c2", "c3"])
    assert outcome.status is RequestStatus.COMPLETED
    assert [r.concept for r in outcome.reports] == ["c2", "c3"]
    assert event_types(engine) == [
        "REQUEST_SUBMITTED",
        "UNLEARN_STARTED",
        "UNLEARN_COMPLETED",
        "UNLEARN_STARTED",
        "UNLEARN_COMPLETED",
    ]
    for name in ("c2", "c3"):
        row = engine.influence_row(name)
        assert row["below_threshold"]


def test_multi_concept_failure_rolls_back_whole_request(engine, small_model):
    # c2 succeeds, then c8 fails: the committed model must revert to the
    # pre-request snapshot, not keep the c2 half.
    with pytest.raises(ConflictUnresolved):
        engine.submit_erasure("alice", ["c2", "c8"])
    assert engine.model is small_model
    assert np.array_equal(engine.model.embeddings_, small_model.embeddings_)


def test_duplicate_request_id_rejected(engine):
    rid = "3b241101-e2bb-4255-8caf-4136c566a962"
    engine.submit_erasure("alice", ["c2"], request_id=rid)
    with pytest.raises(ValidationError):
        engine.submit_erasure("alice", ["c3"], request_id=rid)


def test_concurrent_submissions_serialize(engine):
    results = {}

    def submit(name):
        results[name] = engine.submit_erasure("alice", [name])

    threads = [threading.Thread(target=submit, args=(n,)) for n in ("c2", "c3")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r.status is RequestStatus.COMPLETED for r in results.values())
    assert engine.audit_verify().valid
    # each request's entries are contiguous in the ledger
    entries = engine.ledger.entries()
    by_request = {}
    for e in entries:
        rid = e.payload.get("request_id")
        by_request.setdefault(rid, []).append(e.index)
    for indices in by_request.values():
        assert indices == list(range(indices[0], indices[0] + 3))


# ----------------------------------------------------------------------
# ingestion
# ----------------------------------------------------------------------


def test_ingest_accept_inserts_facts_and_record(engine, small_model, clock):
    facts_before = len(engine.model.facts_)
    doc = sample_doc(value=0.1, facts=[{"subject": "c0", "object": "c5", "categories": ["cat0"]}])
    result = engine.ingest(doc)
    assert result.decision.action is GateAction.ACCEPT
    assert result.inserted_facts == 1
    assert len(engine.model.facts_) == facts_before + 1
    records = engine.retention_records()
    assert len(records) == 1
    assert records[0].subject_id == "s1"
    assert records[0].concepts == ("c0", "c5")
    assert records[0].ingested_at == clock.now
    assert event_types(engine) == []  # accepts are not ledger events


def test_ingest_reject_leaves_fact_base_untouched(engine, small_model):
    engine.put_policy(PrivacyPolicy(subject_id="s1", sensitive_lexicon={"ssn"}, theta=1.0))
    facts_before = engine.model.facts_
    doc = sample_doc(value=2.0, facts=[{"subject": "c0", "object": "c5", "categories": []}])
    result = engine.ingest(doc)
    assert result.decision.action is GateAction.REJECT
    assert result.inserted_facts == 0
    assert engine.model.facts_ is facts_before
    assert event_types(engine) == ["POLICY_UPDATED", "GATE_REJECTED"]
    assert engine.retention_records() == ()


def test_ingest_boundary_loss_accepts(engine):
    engine.put_policy(PrivacyPolicy(subject_id="s1", sensitive_lexicon={"ssn"}, theta=1.0))
    result = engine.ingest(sample_doc(value=1.0))  # loss == theta exactly
    assert result.decision.action is GateAction.ACCEPT
    assert result.decision.privacy_loss == 1.0


def test_ingest_inference_schedules_erasure(engine):
    engine.put_policy(PrivacyPolicy(subject_id="s1", sensitive_lexicon={"c4"}, theta=0.5))
    doc = sample_doc(value=2.0, token="c4")
    doc["mode"] = "inference"
    result = engine.ingest(doc)
    assert result.decision.action is GateAction.ACCEPT_AND_SCHEDULE_ERASURE
    assert result.scheduled_request_id is not None
    queued = engine.queued_requests()
    assert len(queued) == 1 and queued[0].concepts == ("c4",)
    assert event_types(engine) == ["POLICY_UPDATED", "REQUEST_SUBMITTED"]
    assert engine.erasure_status(result.scheduled_request_id)["status"] == "QUEUED"


def test_ingest_inference_without_implicated_concepts_logs_once(engine):
    engine.put_policy(PrivacyPolicy(subject_id="s1", sensitive_lexicon={"ssn"}, theta=0.5))
    doc = sample_doc(value=2.0, token="ssn")  # "ssn" names no concept
    doc["mode"] = "inference"
    result = engine.ingest(doc)
    assert result.decision.action is GateAction.ACCEPT_AND_SCHEDULE_ERASURE
    assert result.scheduled_request_id is None
    assert engine.queued_requests() == ()
    assert event_types(engine) == ["POLICY_UPDATED", "GATE_REJECTED"]


def test_ingest_rejects_malformed_documents(engine):
    with pytest.raises(ValidationError):
        engine.ingest({"subject_id": "s1", "features": [1.0], "tokens": [[3, "x"]]})
    with pytest.raises(ValidationError):
        engine.ingest(sample_doc(facts=[{"subject": "c0", "object": "nope", "categories": []}]))
    with pytest.raises(ValidationError):
        doc = sample_doc()
        doc["mode"] = "weird"
        engine.ingest(doc)
    assert event_types(engine) == []


# ----------------------------------------------------------------------
# policies and sweeps
# ----------------------------------------------------------------------


def test_put_policy_upserts_and_logs(engine):
    engine.put_policy({"retention_seconds": 60, "theta": 0.5, "lambda": 2.0}, subject_id="bob")
    engine.put_policy({"retention_seconds": 30, "theta": 0.5, "lambda": 2.0}, subject_id="bob")
    assert engine.get_policy("bob").retention_seconds == 30
    assert event_types(engine) == ["POLICY_UPDATED", "POLICY_UPDATED"]
    with pytest.raises(PolicyNotFound):
        engine.get_policy("carol")


def test_sweep_converts_expired_records(engine, clock):
    engine.put_policy(PrivacyPolicy(subject_id="s1", retention_seconds=100))
    engine.ingest(sample_doc(value=0.1, facts=[{"subject": "c0", "object": "c3", "categories": []}]))
    assert engine.sweep() == []  # nothing expired yet
    clock.advance(100)  # inclusive boundary: expires exactly now
    outcomes = engine.sweep()
    assert len(outcomes) == 1
    assert outcomes[0].request.reason.value == "RETENTION_EXPIRED"
    assert outcomes[0].request.concepts == ("c0", "c3")
    assert outcomes[0].status is RequestStatus.COMPLETED
    # second sweep at the same instant emits nothing new
    assert engine.sweep() == []


def test_sweep_drains_inference_queue(engine):
    engine.put_policy(PrivacyPolicy(subject_id="s1", sensitive_lexicon={"c2"}, theta=0.5))
    doc = sample_doc(value=2.0, token="c2")
    doc["mode"] = "inference"
    scheduled = engine.ingest(doc).scheduled_request_id
    outcomes = engine.sweep()
    assert [o.request.request_id for o in outcomes] == [scheduled]
    assert outcomes[0].status is RequestStatus.COMPLETED
    assert engine.queued_requests() == ()
    assert engine.erasure_status(scheduled)["status"] == "COMPLETED"


def test_sweep_failures_do_not_abort_the_batch(engine):
    # Two queued erasures: c8's fails (its conflict damage is inherent),
    # c2's succeeds; the sweep must process both.
    engine.put_policy(PrivacyPolicy(subject_id="s1", sensitive_lexicon={"c8", "c2"}, theta=0.5))
    for token in ("c8", "c2"):
        doc = sample_doc(value=2.0, token=token)
        doc["mode"] = "inference"
        assert engine.ingest(doc).scheduled_request_id is not None
    outcomes = engine.sweep()
    statuses = {tuple(o.request.concepts): o.status for o in outcomes}
    assert statuses[("c8",)] is RequestStatus.FAILED
    assert statuses[("c2",)] is RequestStatus.COMPLETED
    assert engine.audit_verify().valid
    assert engine.queued_requests() == ()


# ----------------------------------------------------------------------
# restart / persistence
# ----------------------------------------------------------------------


def test_engine_state_survives_restart(tmp_path, clock, small_model):
    engine = make_engine(tmp_path, clock=clock, model=small_model)
    engine.put_policy(PrivacyPolicy(subject_id="s1", retention_seconds=50, sensitive_lexicon={"c3"}, theta=0.5))
    engine.ingest(sample_doc(value=0.1, facts=[{"subject": "c0", "object": "c5", "categories": []}]))
    doc = sample_doc(value=3.0, token="c3")
    doc["mode"] = "inference"
    scheduled = engine.ingest(doc).scheduled_request_id
    outcome = engine.submit_erasure("alice", ["c2"])

    reloaded = ComplianceEngine(engine.data_dir, config=engine.config, clock=clock)
    assert np.array_equal(reloaded.model.embeddings_, engine.model.embeddings_)
    assert reloaded.get_policy("s1").retention_seconds == 50
    assert len(reloaded.retention_records()) == 1
    assert [r.request_id for r in reloaded.queued_requests()] == [scheduled]
    assert reloaded.erasure_status(outcome.request.request_id)["status"] == "COMPLETED"
    assert reloaded.audit_verify().valid
    assert len(reloaded.ledger) == len(engine.ledger)


def test_influence_row_for_factless_concept(tmp_path, clock, small_model):
    from lethe.model import ConceptAssociationModel

    names = list(small_model.concept_names()) + ["dangling"]
    matrix = np.vstack([small_model.embeddings_, np.eye(8)[0]])
    model = ConceptAssociationModel.from_embeddings(
        names, matrix, temperature=0.5, facts=small_model.facts_
    )
    engine = make_engine(tmp_path, clock=clock, model=model)
    row = engine.influence_row("dangling")
    assert row["influence"] is None and row["forget_probes"] == 0
    with pytest.raises(UnknownConcept):
        engine.influence_row("nosuch")
    table = engine.influence_table()
    assert len(table) == len(names)
