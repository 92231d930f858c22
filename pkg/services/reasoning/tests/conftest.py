"""Shared fixtures for `services/reasoning/tests`."""

import os

import numpy as np
import pytest

from app.kg.store import KnowledgeGraph
from app.kg.synthetic import synthetic_kg


def pytest_collection_modifyitems(config, items) -> None:
    if os.environ.get("KGR_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; set KGR_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def toy_kg() -> KnowledgeGraph:
    """Five entities, two relations.

    0 -r0-> 1, 0 -r0-> 2, 1 -r1-> 3, 2 -r1-> 3, 2 -r1-> 4
    """
    return KnowledgeGraph.from_triples([0, 0, 1, 2, 2], [0, 0, 1, 1, 1], [1, 2, 3, 3, 4], 5, 2)


@pytest.fixture
def small_kg() -> KnowledgeGraph:
    return synthetic_kg(200, 4, 4, np.random.default_rng(7))
