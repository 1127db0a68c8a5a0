"""kgfaith: knowledge-graph faithfulness toolkit.

Detects entity-level hallucinations in grounded dialogue responses,
generates corrupted training data, trains bilinear graph embeddings
with noise-contrastive estimation, and repairs flagged entity mentions
by ranking candidates from the local subgraph.
"""

from __future__ import annotations

from .kg import (
    AliasTable,
    GraphStats,
    KnowledgeGraph,
    Subgraph,
    Triple,
    Vocabulary,
    load_aliases,
    load_entity_types,
    load_triples,
)

__version__ = "0.1.0"

__all__ = [
    "AliasTable",
    "GraphStats",
    "KnowledgeGraph",
    "Subgraph",
    "Triple",
    "Vocabulary",
    "load_aliases",
    "load_entity_types",
    "load_triples",
    "__version__",
]
