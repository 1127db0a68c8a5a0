from __future__ import annotations

from importlib.resources import files
from pathlib import Path

import pytest

from kgfaith import KnowledgeGraph, load_aliases, load_entity_types, load_triples

DATA = Path(str(files("kgfaith") / "data"))


@pytest.fixture(scope="session")
def toy_graph() -> KnowledgeGraph:
    return load_triples(DATA / "toy_kg.tsv")


@pytest.fixture(scope="session")
def toy_aliases():
    return load_aliases(DATA / "toy_aliases.tsv")


@pytest.fixture(scope="session")
def toy_types() -> dict[str, str]:
    return load_entity_types(DATA / "toy_types.tsv")


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA
