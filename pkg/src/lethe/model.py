"""Concept-association model: the small differentiable substrate under erasure.

The model keeps one unit-norm embedding per concept and scores an
association ``subject -> object`` with a temperature-scaled softmax over
the dot products of the subject embedding against every other concept.
All quantities the compliance engine manipulates are defined here:

* ``log_prob(s, o)``  -- log-likelihood the model assigns to an association,
* ``predict(s)``      -- the argmax association (deterministic tie-break),
* ``influence(c, P)`` -- mean log-likelihood over a concept's forget probes,
  the scalar that unlearning drives below a threshold,
* ``grad_influence``  -- its analytic gradient with respect to the
  concept's embedding, checked elsewhere against finite differences.

Fitted models are immutable snapshots: the embedding matrix is marked
read-only, and every mutation (an unlearning step, an appended fact)
produces a new model object. That makes snapshots safe to read from any
number of threads while a single writer prepares the next one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import (
    EmptyFactBase,
    EmptyProbeSet,
    InvalidConfig,
    ProbeUnrelatedToConcept,
    SelfQuery,
    SnapshotFormatError,
    UnknownConcept,
)
from .storage import atomic_write_bytes, read_bytes

SNAPSHOT_FORMAT_VERSION = 1

# At-rest tolerance on embedding norms; a fresh normalization lands within
# a couple of ulps of 1.0, far inside this band.
UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Concept:
    """A vocabulary entry: dense index plus unique human-readable name."""

    id: int
    name: str


@dataclass(frozen=True)
class Fact:
    """One directed association ``subject -> object`` with category labels."""

    subject: str
    object: str
    categories: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.subject or not self.object:
            raise ValueError("fact subject and object must be non-empty names")
        if self.subject == self.object:
            raise ValueError(f"fact subject equals object: {self.subject!r}")
        if not isinstance(self.categories, frozenset):
            object.__setattr__(self, "categories", frozenset(self.categories))

    def to_document(self) -> dict:
        return {
            "subject": self.subject,
            "object": self.object,
            "categories": sorted(self.categories),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "Fact":
        return cls(
            subject=doc["subject"],
            object=doc["object"],
            categories=frozenset(doc.get("categories", ())),
        )


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if not np.all(norms > 0.0):
        raise InvalidConfig("cannot normalize a zero embedding row")
    return matrix / norms


def _as_pair(probe) -> tuple[str, str]:
    """Accept (subject, expected) tuples or any object with those attributes."""
    try:
        subject, expected = probe
    except (TypeError, ValueError):
        subject, expected = probe.subject, probe.expected
    return subject, expected


class ConceptAssociationModel(BaseEstimator):
    """Trainable concept-association model with unit-norm embeddings.

    Parameters
    ----------
    dim : int, default 16
        Embedding dimensionality, at least 2.
    temperature : float, default 0.5
        Softmax temperature; dot products are divided by it.
    seed : int, default 0
        Seed for the PCG64 generator (``numpy.random.default_rng``) used
        to draw the initial embeddings, which are then projected onto
        the unit sphere. Fitting is fully deterministic given
        ``(facts, params)``.
    train_epochs : int, default 300
        Full-batch epochs of gradient ascent on the mean log-likelihood
        of each fact's object given its subject.
    train_rate : float, default 0.5
        Ascent step size. Every embedding is re-normalized after every
        epoch.

    Fitted attributes follow the scikit-learn convention: a model is
    usable after ``fit`` (or one of the explicit constructors) and
    exposes ``vocabulary_``, ``embeddings_`` and ``facts_``.
    """

    def __init__(
        self,
        dim: int = 16,
        temperature: float = 0.5,
        seed: int = 0,
        train_epochs: int = 300,
        train_rate: float = 0.5,
    ):
        self.dim = dim
        self.temperature = temperature
        self.seed = seed
        self.train_epochs = train_epochs
        self.train_rate = train_rate

    # ------------------------------------------------------------------
    # fitting
    # ------------------------------------------------------------------

    def _check_params(self) -> None:
        if not isinstance(self.dim, (int, np.integer)) or isinstance(self.dim, bool) or self.dim < 2:
            raise InvalidConfig(f"dim must be an integer >= 2, got {self.dim!r}")
        if not isinstance(self.temperature, (int, float)) or self.temperature <= 0:
            raise InvalidConfig(f"temperature must be > 0, got {self.temperature!r}")
        if (
            not isinstance(self.seed, (int, np.integer))
            or isinstance(self.seed, bool)
            or not 0 <= int(self.seed) < 2**64
        ):
            raise InvalidConfig(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if not isinstance(self.train_epochs, (int, np.integer)) or self.train_epochs < 1:
            raise InvalidConfig(f"train_epochs must be a positive integer, got {self.train_epochs!r}")
        if not isinstance(self.train_rate, (int, float)) or self.train_rate <= 0:
            raise InvalidConfig(f"train_rate must be > 0, got {self.train_rate!r}")

    def fit(self, facts: Iterable[Fact], y=None, vocabulary: Sequence[str] | None = None):
        """Build the vocabulary, draw seeded embeddings, and train.

        ``vocabulary`` fixes the concept ordering (ids are assigned by
        position); when omitted it is derived from the facts in order of
        first appearance. Every concept referenced by a fact must be in
        the vocabulary.
        """
        self._check_params()
        facts = tuple(facts)
        if not facts:
            raise EmptyFactBase("cannot build a model from an empty fact base")

        if vocabulary is None:
            names: list[str] = []
            seen: set[str] = set()
            for fact in facts:
                for name in (fact.subject, fact.object):
                    if name not in seen:
                        seen.add(name)
                        names.append(name)
        else:
            names = list(vocabulary)
            if len(set(names)) != len(names):
                raise InvalidConfig("vocabulary names must be unique")
            if any(not isinstance(n, str) or not n for n in names):
                raise InvalidConfig("vocabulary names must be non-empty strings")
            declared = set(names)
            for fact in facts:
                for name in (fact.subject, fact.object):
                    if name not in declared:
                        raise UnknownConcept(f"fact references undeclared concept {name!r}")
        if len(names) < 2:
            raise InvalidConfig("a model needs at least two concepts")

        index = {name: i for i, name in enumerate(names)}
        rng = np.random.default_rng(int(self.seed))
        embeddings = _normalize_rows(rng.standard_normal((len(names), int(self.dim))))

        subjects = np.array([index[f.subject] for f in facts], dtype=np.intp)
        objects = np.array([index[f.object] for f in facts], dtype=np.intp)
        embeddings = self._train(embeddings, subjects, objects)

        embeddings.setflags(write=False)
        self.vocabulary_ = tuple(Concept(i, name) for i, name in enumerate(names))
        self.index_ = index
        self.embeddings_ = embeddings
        self.facts_ = facts
        return self

    def _train(self, embeddings: np.ndarray, subjects: np.ndarray, objects: np.ndarray) -> np.ndarray:
        """Full-batch gradient ascent on the mean fact log-likelihood."""
        n, _ = embeddings.shape
        m = subjects.shape[0]
        temp = float(self.temperature)
        rate = float(self.train_rate)
        rows = np.arange(m)
        for _ in range(int(self.train_epochs)):
            scores = embeddings[subjects] @ embeddings.T / temp
            scores[rows, subjects] = -np.inf
            scores -= scores.max(axis=1, keepdims=True)
            probs = np.exp(scores)
            probs /= probs.sum(axis=1, keepdims=True)

            coef = -probs
            coef[rows, objects] += 1.0
            grad = coef.T @ embeddings[subjects]
            np.add.at(grad, subjects, embeddings[objects] - probs @ embeddings)
            grad /= temp * m

            embeddings = _normalize_rows(embeddings + rate * grad)
        return embeddings

    # ------------------------------------------------------------------
    # alternative constructors
    # ------------------------------------------------------------------

    @classmethod
    def from_embeddings(
        cls,
        names: Sequence[str],
        embeddings: np.ndarray,
        *,
        temperature: float = 0.5,
        facts: Iterable[Fact] = (),
        seed: int = 0,
        train_epochs: int = 1,
        train_rate: float = 0.5,
    ) -> "ConceptAssociationModel":
        """Create a fitted model directly from an embedding matrix.

        Rows are taken verbatim (no normalization); callers own the
        at-rest unit-norm invariant.
        """
        matrix = np.array(embeddings, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(names):
            raise InvalidConfig("embedding matrix must be (len(names), dim)")
        if matrix.shape[0] < 2 or matrix.shape[1] < 2:
            raise InvalidConfig("need at least two concepts and dim >= 2")
        if len(set(names)) != len(names):
            raise InvalidConfig("vocabulary names must be unique")
        model = cls(
            dim=matrix.shape[1],
            temperature=temperature,
            seed=seed,
            train_epochs=train_epochs,
            train_rate=train_rate,
        )
        model._check_params()
        matrix.setflags(write=False)
        model.vocabulary_ = tuple(Concept(i, str(n)) for i, n in enumerate(names))
        model.index_ = {str(n): i for i, n in enumerate(names)}
        model.embeddings_ = matrix
        model.facts_ = tuple(facts)
        return model

    def with_embedding(self, concept: str | int | Concept, vector: np.ndarray) -> "ConceptAssociationModel":
        """Return a new snapshot with one embedding row replaced verbatim.

        Every other row is carried over bit-identically. The vector is
        not normalized here; unlearning passes already-projected vectors
        and analysis code may deliberately pass off-sphere ones.
        """
        cid = self._concept_id(concept)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.embeddings_.shape[1],):
            raise InvalidConfig(f"embedding must have shape ({self.embeddings_.shape[1]},)")
        if not np.all(np.isfinite(vector)):
            raise InvalidConfig("embedding must be finite")
        matrix = self.embeddings_.copy()
        matrix[cid] = vector
        matrix.setflags(write=False)
        clone = type(self)(**self.get_params())
        clone.vocabulary_ = self.vocabulary_
        clone.index_ = self.index_
        clone.embeddings_ = matrix
        clone.facts_ = self.facts_
        return clone

    def with_facts(self, facts: Iterable[Fact]) -> "ConceptAssociationModel":
        """Return a new snapshot with facts appended; embeddings untouched."""
        facts = tuple(facts)
        for fact in facts:
            for name in (fact.subject, fact.object):
                if name not in self.index_:
                    raise UnknownConcept(f"fact references unknown concept {name!r}")
        clone = type(self)(**self.get_params())
        clone.vocabulary_ = self.vocabulary_
        clone.index_ = self.index_
        clone.embeddings_ = self.embeddings_
        clone.facts_ = self.facts_ + facts
        return clone

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def _check_fitted(self) -> None:
        if not hasattr(self, "embeddings_"):
            raise NotFittedError(
                "this ConceptAssociationModel is not fitted yet; call fit() first"
            )

    def _concept_id(self, concept: str | int | Concept) -> int:
        self._check_fitted()
        if isinstance(concept, Concept):
            concept = concept.name
        if isinstance(concept, str):
            try:
                return self.index_[concept]
            except KeyError:
                raise UnknownConcept(f"unknown concept {concept!r}") from None
        if isinstance(concept, (int, np.integer)) and not isinstance(concept, bool):
            cid = int(concept)
            if 0 <= cid < len(self.vocabulary_):
                return cid
            raise UnknownConcept(f"concept id {cid} out of range")
        raise UnknownConcept(f"unknown concept {concept!r}")

    @property
    def n_concepts(self) -> int:
        self._check_fitted()
        return len(self.vocabulary_)

    def concept_names(self) -> tuple[str, ...]:
        self._check_fitted()
        return tuple(c.name for c in self.vocabulary_)

    def embedding(self, concept: str | int | Concept) -> np.ndarray:
        """Read-only view of one concept's embedding row."""
        return self.embeddings_[self._concept_id(concept)]

    def chance_log_prob(self) -> float:
        """Log-probability of uniform guessing over the candidate set."""
        self._check_fitted()
        return float(np.log(1.0 / (len(self.vocabulary_) - 1)))

    def _log_softmax(self, subject_id: int) -> np.ndarray:
        scores = self.embeddings_ @ self.embeddings_[subject_id] / float(self.temperature)
        scores[subject_id] = -np.inf
        peak = scores.max()
        return scores - (peak + np.log(np.exp(scores - peak).sum()))

    def log_prob(self, subject: str | int | Concept, obj: str | int | Concept) -> float:
        """ln p(obj | subject) under the softmax over all candidates != subject."""
        sid = self._concept_id(subject)
        oid = self._concept_id(obj)
        if sid == oid:
            raise SelfQuery(f"subject and object are both {subject!r}")
        return float(self._log_softmax(sid)[oid])

    def predict(self, subject: str | int | Concept) -> str:
        """Most strongly associated concept; dot-product ties break to the lowest id."""
        sid = self._concept_id(subject)
        scores = self.embeddings_ @ self.embeddings_[sid]
        scores[sid] = -np.inf
        return self.vocabulary_[int(np.argmax(scores))].name

    def _probe_pairs(self, concept_id: int, probes) -> list[tuple[int, int]]:
        pairs = [_as_pair(p) for p in probes]
        if not pairs:
            raise EmptyProbeSet("influence needs at least one forget probe")
        resolved = []
        for subject, expected in pairs:
            sid = self._concept_id(subject)
            oid = self._concept_id(expected)
            if sid == oid:
                raise SelfQuery(f"probe subject equals expected output: {subject!r}")
            if concept_id not in (sid, oid):
                raise ProbeUnrelatedToConcept(
                    f"probe ({subject!r} -> {expected!r}) does not involve the target concept"
                )
            resolved.append((sid, oid))
        return resolved

    def influence(self, concept: str | int | Concept, forget_probes) -> float:
        """Mean log-likelihood the model still assigns to the forget probes.

        Higher means stronger residual memory of the concept; a fully
        forgotten concept sits at or below chance level.
        """
        cid = self._concept_id(concept)
        pairs = self._probe_pairs(cid, forget_probes)
        total = 0.0
        for sid, oid in pairs:
            total += float(self._log_softmax(sid)[oid])
        return total / len(pairs)

    def grad_influence(self, concept: str | int | Concept, forget_probes) -> np.ndarray:
        """Analytic gradient of :meth:`influence` w.r.t. the concept's embedding.

        For a probe (s, t) with candidate probabilities p over o != s:

        * if the concept is the subject:   (e_t - sum_o p_o e_o) / temperature
        * otherwise (candidate position):  (1[c = t] - p_c) e_s / temperature
        """
        cid = self._concept_id(concept)
        pairs = self._probe_pairs(cid, forget_probes)
        emb = self.embeddings_
        temp = float(self.temperature)
        grad = np.zeros(emb.shape[1], dtype=np.float64)
        for sid, oid in pairs:
            probs = np.exp(self._log_softmax(sid))
            probs[sid] = 0.0
            if cid == sid:
                grad += (emb[oid] - probs @ emb) / temp
            else:
                indicator = 1.0 if cid == oid else 0.0
                grad += (indicator - probs[cid]) * emb[sid] / temp
        return grad / len(pairs)

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def to_document(self) -> dict:
        """Versioned snapshot document; floats round-trip exactly."""
        self._check_fitted()
        return {
            "format_version": SNAPSHOT_FORMAT_VERSION,
            "config": {
                "dim": int(self.dim),
                "temperature": float(self.temperature),
                "seed": int(self.seed),
                "train_epochs": int(self.train_epochs),
                "train_rate": float(self.train_rate),
            },
            "vocabulary": list(self.concept_names()),
            "embeddings": [[float(x) for x in row] for row in self.embeddings_],
            "facts": [fact.to_document() for fact in self.facts_],
        }

    def to_bytes(self) -> bytes:
        text = json.dumps(
            self.to_document(),
            ensure_ascii=False,
            sort_keys=True,
            separators=(",", ":"),
            allow_nan=False,
        )
        return text.encode("utf-8")

    @classmethod
    def from_document(cls, doc: dict) -> "ConceptAssociationModel":
        try:
            version = doc["format_version"]
            if version != SNAPSHOT_FORMAT_VERSION:
                raise SnapshotFormatError(f"unsupported snapshot format_version {version!r}")
            config = doc["config"]
            names = doc["vocabulary"]
            matrix = np.array(doc["embeddings"], dtype=np.float64)
            facts = tuple(Fact.from_document(f) for f in doc["facts"])
            model = cls.from_embeddings(
                names,
                matrix,
                temperature=config["temperature"],
                facts=facts,
                seed=config["seed"],
                train_epochs=config["train_epochs"],
                train_rate=config["train_rate"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SnapshotFormatError(f"malformed model snapshot: {exc}") from exc
        norms = np.linalg.norm(model.embeddings_, axis=1)
        if not np.all(np.abs(norms - 1.0) <= UNIT_NORM_TOL):
            raise SnapshotFormatError("snapshot embeddings are not unit norm")
        return model

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConceptAssociationModel":
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SnapshotFormatError(f"snapshot is not valid JSON: {exc}") from exc
        return cls.from_document(doc)

    def save(self, path: str) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path: str) -> "ConceptAssociationModel":
        return cls.from_bytes(read_bytes(path))
