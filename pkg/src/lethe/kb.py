"""Deterministic synthetic knowledge bases for seeding and testing.

Concept names are ``c0..c{N-1}`` and categories ``cat0..cat{K-1}``.
Fact pairs are sampled without replacement from all ordered pairs, so a
generated corpus never contains duplicate associations and the output
is a pure function of the seed.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidConfig
from .model import Fact


def generate_knowledge_base(
    n_concepts: int,
    n_facts: int,
    seed: int,
    n_categories: int = 6,
    max_categories_per_fact: int = 2,
) -> tuple[list[str], list[Fact]]:
    """Return ``(concept_names, facts)`` drawn deterministically from ``seed``."""
    if n_concepts < 2:
        raise InvalidConfig("need at least two concepts")
    if n_facts < 1:
        raise InvalidConfig("need at least one fact")
    if n_facts > n_concepts * (n_concepts - 1):
        raise InvalidConfig("more facts requested than distinct ordered pairs")
    if n_categories < 1 or max_categories_per_fact < 1:
        raise InvalidConfig("need at least one category")

    rng = np.random.default_rng(seed)
    names = [f"c{i}" for i in range(n_concepts)]
    categories = [f"cat{i}" for i in range(n_categories)]

    pair_codes = rng.choice(n_concepts * (n_concepts - 1), size=n_facts, replace=False)
    facts = []
    for code in pair_codes:
        subject = int(code) // (n_concepts - 1)
        rest = int(code) % (n_concepts - 1)
        obj = rest if rest < subject else rest + 1
        count = int(rng.integers(1, max_categories_per_fact + 1))
        chosen = rng.choice(n_categories, size=count, replace=False)
        facts.append(
            Fact(
                subject=names[subject],
                object=names[obj],
                categories=frozenset(categories[int(i)] for i in chosen),
            )
        )
    return names, facts
