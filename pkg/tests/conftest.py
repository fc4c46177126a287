import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lethe import ComplianceEngine, ConceptAssociationModel, EngineConfig, generate_knowledge_base

DATA_DIR = Path(__file__).parent / "data"


class FrozenClock:
    """Injectable clock: starts at a fixed instant, advanced explicitly."""

    def __init__(self, start: int = 1_767_225_600):  # 2026-01-01T00:00:00Z
        self.now = start

    def __call__(self) -> float:
        return float(self.now)

    def advance(self, seconds: int) -> None:
        self.now += seconds


@pytest.fixture
def clock():
    return FrozenClock()


@pytest.fixture(scope="session")
def small_model():
    """10 concepts / 25 facts, deterministic."""
    names, facts = generate_knowledge_base(10, 25, seed=7)
    return ConceptAssociationModel(dim=8, temperature=0.5, seed=7, train_epochs=60).fit(
        facts, vocabulary=names
    )


@pytest.fixture(scope="session")
def reference_model():
    """The 50-concept / 200-fact seed-42 knowledge base at engine defaults."""
    names, facts = generate_knowledge_base(50, 200, seed=42)
    return ConceptAssociationModel(
        dim=16, temperature=0.5, seed=42, train_epochs=300, train_rate=0.5
    ).fit(facts, vocabulary=names)


def make_engine(tmp_path, clock=None, model=None, **config_kwargs) -> ComplianceEngine:
    engine = ComplianceEngine(
        str(tmp_path / "data"),
        config=EngineConfig(**config_kwargs),
        clock=clock or FrozenClock(),
    )
    if model is not None:
        engine.install_model(model)
    return engine


@pytest.fixture
def seeded_engine(tmp_path, clock, reference_model):
    return make_engine(tmp_path, clock=clock, model=reference_model)


def hand_model(rows, names=None, temperature=1.0):
    """Model straight from an embedding matrix, for closed-form cases."""
    rows = np.asarray(rows, dtype=np.float64)
    names = list(names) if names else [chr(ord("a") + i) for i in range(rows.shape[0])]
    return ConceptAssociationModel.from_embeddings(names, rows, temperature=temperature)
