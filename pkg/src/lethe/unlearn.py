"""Iterative embedding corruption: targeted removal of one concept.

A single update subtracts a step-size multiple of the influence gradient
from the target's embedding and projects the result back onto the unit
sphere, so magnitudes stay consistent across the embedding space:

    e' = e - alpha * grad_influence(e)        (corruption)
    e' = e' / ||e'||                          (projection)

The driver repeats the update until the concept's influence drops to the
threshold or the iteration budget runs out. A plain fixed step can
overshoot, so each iteration backtracks -- halving the step up to
``max_halvings`` times until the influence strictly decreases -- which
turns "the influence is reduced" into an enforced invariant: the
reported trace is monotone non-increasing on every run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .canonical import decimal_repr
from .conflict import ConflictReport, ProbeSet, conflict_score
from .errors import DegenerateStep, InvalidConfig
from .model import ConceptAssociationModel

# Stop reasons carried on UnlearnReport.
STOP_CONVERGED = "converged"
STOP_BUDGET_EXHAUSTED = "budget_exhausted"
STOP_NO_PROGRESS = "no_progress"


def corrupt_embedding(embedding: np.ndarray, gradient: np.ndarray, alpha: float) -> np.ndarray:
    """One corruption update on a raw vector, then unit-sphere projection.

    A zero update returns the input bit-identically (no spurious
    re-normalization). If the update lands exactly on the origin the
    projection is undefined and DegenerateStep is raised; callers halve
    the step and retry.
    """
    if alpha <= 0:
        raise InvalidConfig(f"alpha must be > 0, got {alpha!r}")
    embedding = np.asarray(embedding, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if embedding.shape != gradient.shape:
        raise InvalidConfig("embedding and gradient shapes differ")
    raw = embedding - alpha * gradient
    if np.array_equal(raw, embedding):
        return embedding.copy()
    norm = float(np.linalg.norm(raw))
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateStep("corruption update produced the zero vector")
    return raw / norm


def corruption_step(
    model: ConceptAssociationModel,
    concept: str,
    forget_probes,
    alpha: float,
) -> ConceptAssociationModel:
    """Apply one projected corruption update to ``concept``.

    Returns a new snapshot: only the target row changes, every other
    embedding is carried over bit-identically.
    """
    gradient = model.grad_influence(concept, forget_probes)
    updated = corrupt_embedding(model.embedding(concept), gradient, alpha)
    return model.with_embedding(concept, updated)


@dataclass(frozen=True)
class UnlearnReport:
    """Outcome of one erasure run, the evidence payload for the ledger."""

    concept: str
    iterations_run: int
    initial_influence: float
    final_influence: float
    threshold: float
    converged: bool
    stop_reason: str
    alpha: float
    trace: tuple[float, ...]
    conflict: ConflictReport | None = None

    def to_payload(self) -> dict:
        """Hash-safe document (numerics as decimal strings, trace elided)."""
        return {
            "concept": self.concept,
            "iterations_run": self.iterations_run,
            "initial_influence": decimal_repr(self.initial_influence),
            "final_influence": decimal_repr(self.final_influence),
            "threshold": decimal_repr(self.threshold),
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "alpha": decimal_repr(self.alpha),
            "conflict": None if self.conflict is None else self.conflict.to_payload(),
        }


class ConceptUnlearner(BaseEstimator):
    """Driver for iterative embedding corruption.

    Parameters
    ----------
    alpha : float, default 0.1
        Base corruption step size.
    max_iters : int, default 500
        Hard bound on accepted iterations.
    influence_threshold : float or None, default None
        Target influence in log-probability units (must be negative).
        ``None`` means chance level ``ln(1/(n_concepts - 1))``: forgotten
        means no better than uniform guessing.
    normalize_each_step : bool, default True
        Project onto the unit sphere after every update. When False the
        iterates stay raw and only the returned embedding is projected;
        acceptance still evaluates the projected view so the monotone
        contract holds in both modes.
    max_halvings : int, default 20
        Backtracking budget per iteration; exhausting it stops the run
        with ``no_progress``.
    """

    def __init__(
        self,
        alpha: float = 0.1,
        max_iters: int = 500,
        influence_threshold: float | None = None,
        normalize_each_step: bool = True,
        max_halvings: int = 20,
    ):
        self.alpha = alpha
        self.max_iters = max_iters
        self.influence_threshold = influence_threshold
        self.normalize_each_step = normalize_each_step
        self.max_halvings = max_halvings

    def _check_params(self) -> None:
        if not isinstance(self.alpha, (int, float)) or self.alpha <= 0:
            raise InvalidConfig(f"alpha must be > 0, got {self.alpha!r}")
        if not isinstance(self.max_iters, (int, np.integer)) or self.max_iters < 0:
            raise InvalidConfig(f"max_iters must be >= 0, got {self.max_iters!r}")
        if self.influence_threshold is not None:
            if not isinstance(self.influence_threshold, (int, float)) or self.influence_threshold >= 0:
                raise InvalidConfig(
                    f"influence_threshold must be negative, got {self.influence_threshold!r}"
                )
        if not isinstance(self.max_halvings, (int, np.integer)) or self.max_halvings < 1:
            raise InvalidConfig(f"max_halvings must be >= 1, got {self.max_halvings!r}")

    def run(
        self,
        model: ConceptAssociationModel,
        concept: str,
        probes: ProbeSet,
    ) -> tuple[ConceptAssociationModel, UnlearnReport]:
        """Unlearn ``concept`` from ``model`` using ``probes``.

        Returns the new snapshot (only the target embedding differs from
        the input) and a report including the post-run conflict
        evaluation over ``probes.related`` (None when that side is
        empty). The input model is never mutated.
        """
        self._check_params()
        target_id = model._concept_id(concept)
        target = model.vocabulary_[target_id].name
        if probes.target != target:
            raise InvalidConfig(
                f"probe set targets {probes.target!r}, not {target!r}"
            )
        threshold = (
            model.chance_log_prob()
            if self.influence_threshold is None
            else float(self.influence_threshold)
        )

        if self.normalize_each_step:
            final_model, trace, iterations, stop_reason = self._run_projected(
                model, target, probes.forget, threshold
            )
        else:
            final_model, trace, iterations, stop_reason = self._run_raw(
                model, target, probes.forget, threshold
            )

        final_influence = trace[-1]
        converged = final_influence <= threshold
        report = UnlearnReport(
            concept=target,
            iterations_run=iterations,
            initial_influence=trace[0],
            final_influence=final_influence,
            threshold=threshold,
            converged=converged,
            stop_reason=STOP_CONVERGED if converged else stop_reason,
            alpha=float(self.alpha),
            trace=tuple(trace),
            conflict=conflict_score(final_model, probes.related) if probes.related else None,
        )
        return final_model, report

    def _run_projected(self, model, target, forget, threshold):
        current = model.influence(target, forget)
        trace = [current]
        iterations = 0
        stop_reason = STOP_BUDGET_EXHAUSTED
        while iterations < self.max_iters and current > threshold:
            accepted = None
            step = float(self.alpha)
            for _ in range(self.max_halvings + 1):
                try:
                    candidate = corruption_step(model, target, forget, step)
                except DegenerateStep:
                    step /= 2.0
                    continue
                candidate_influence = candidate.influence(target, forget)
                if candidate_influence < current:
                    accepted = (candidate, candidate_influence)
                    break
                step /= 2.0
            if accepted is None:
                stop_reason = STOP_NO_PROGRESS
                break
            model, current = accepted
            iterations += 1
            trace.append(current)
        return model, trace, iterations, stop_reason

    def _run_raw(self, model, target, forget, threshold):
        # Literal reading of the procedure: corrupt without projecting,
        # normalize only the final embedding. Acceptance is evaluated on
        # the projected view of each candidate (what would be returned if
        # the loop stopped there), keeping the reported trace monotone.
        working = model  # carries the raw, possibly off-sphere embedding
        returned = model
        current = model.influence(target, forget)
        trace = [current]
        iterations = 0
        stop_reason = STOP_BUDGET_EXHAUSTED
        while iterations < self.max_iters and current > threshold:
            raw = working.embedding(target)
            gradient = working.grad_influence(target, forget)
            accepted = None
            step = float(self.alpha)
            for _ in range(self.max_halvings + 1):
                candidate_raw = raw - step * gradient
                norm = float(np.linalg.norm(candidate_raw))
                if norm == 0.0 or not np.isfinite(norm):
                    step /= 2.0
                    continue
                candidate = working.with_embedding(target, candidate_raw / norm)
                candidate_influence = candidate.influence(target, forget)
                if candidate_influence < current:
                    accepted = (candidate_raw, candidate, candidate_influence)
                    break
                step /= 2.0
            if accepted is None:
                stop_reason = STOP_NO_PROGRESS
                break
            candidate_raw, returned, current = accepted
            working = working.with_embedding(target, candidate_raw)
            iterations += 1
            trace.append(current)
        return returned, trace, iterations, stop_reason
