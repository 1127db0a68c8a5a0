"""Triple store: vocabularies, immutable graph, k-hop subgraphs.

Entities and relations are interned into contiguous integer ids in
first-seen order. The graph is immutable after construction and keeps
both out-edge and in-edge indexes so neighborhood expansion and direct
edge queries stay O(degree).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

from .errors import EmptyGraph, MalformedLine, UnknownEntity, UnknownRelation

logger = logging.getLogger(__name__)


def canonical(name: str) -> str:
    """Fold a name for matching: lowercase, whitespace collapsed to single spaces."""
    return " ".join(name.split()).lower()


class Triple(NamedTuple):
    """One directed edge (subject, predicate, object) as integer ids."""

    s: int
    p: int
    o: int


class Vocabulary:
    """Interns strings to contiguous ids in first-seen order.

    Lookup is case-insensitive and whitespace-insensitive; the stored
    name keeps the spelling of the first occurrence.
    """

    def __init__(self) -> None:
        self._names: list[str] = []
        self._ids: dict[str, int] = {}

    def add(self, name: str) -> int:
        key = canonical(name)
        idx = self._ids.get(key)
        if idx is None:
            idx = len(self._names)
            self._ids[key] = idx
            self._names.append(name.strip())
        return idx

    def id_of(self, name: str) -> int:
        return self._ids[canonical(name)]

    def get(self, name: str) -> int | None:
        return self._ids.get(canonical(name))

    def name_of(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return canonical(name) in self._ids

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)


@dataclass(frozen=True)
class GraphStats:
    entities: int
    relations: int
    triples: int
    mean_degree: float
    max_degree: int


@dataclass(frozen=True)
class Subgraph:
    """A k-hop neighborhood: node set plus every edge induced on it."""

    nodes: frozenset[int]
    triples: tuple[Triple, ...]
    centers: tuple[int, ...]
    radius: int
    _direct: frozenset[tuple[int, int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_direct", frozenset((t.s, t.o) for t in self.triples)
        )

    @classmethod
    def empty(cls, centers: tuple[int, ...] = (), radius: int = 0) -> Subgraph:
        return cls(nodes=frozenset(), triples=(), centers=centers, radius=radius)

    @property
    def order(self) -> int:
        return len(self.nodes)

    def has_node(self, entity: int) -> bool:
        return entity in self.nodes

    def has_direct_edge(self, a: int, b: int, oriented: bool = False) -> bool:
        """True when some triple connects a and b.

        Oriented checks only a->b; unoriented accepts either direction.
        """
        if (a, b) in self._direct:
            return True
        return not oriented and (b, a) in self._direct

    def edges_between(self, a: int, b: int, oriented: bool = False) -> list[Triple]:
        out = [t for t in self.triples if t.s == a and t.o == b]
        if not oriented:
            out.extend(t for t in self.triples if t.s == b and t.o == a)
        return out


class KnowledgeGraph:
    """Immutable triple store with out/in adjacency indexes."""

    def __init__(
        self,
        triples: Iterable[Triple],
        entities: Vocabulary,
        relations: Vocabulary,
    ) -> None:
        self.triples: tuple[Triple, ...] = tuple(triples)
        self.entities = entities
        self.relations = relations
        out: dict[int, list[tuple[int, int]]] = {}
        inc: dict[int, list[tuple[int, int]]] = {}
        for t in self.triples:
            out.setdefault(t.s, []).append((t.p, t.o))
            inc.setdefault(t.o, []).append((t.s, t.p))
        self._out = {s: tuple(v) for s, v in out.items()}
        self._in = {o: tuple(v) for o, v in inc.items()}

    # --- resolution -------------------------------------------------

    def resolve_entity(self, entity: int | str) -> int:
        if isinstance(entity, str):
            idx = self.entities.get(entity)
            if idx is None:
                raise UnknownEntity(entity)
            return idx
        if not 0 <= entity < len(self.entities):
            raise UnknownEntity(entity)
        return entity

    def resolve_relation(self, relation: int | str) -> int:
        if isinstance(relation, str):
            idx = self.relations.get(relation)
            if idx is None:
                raise UnknownRelation(relation)
            return idx
        if not 0 <= relation < len(self.relations):
            raise UnknownRelation(relation)
        return relation

    # --- adjacency ---------------------------------------------------

    def out_edges(self, entity: int) -> tuple[tuple[int, int], ...]:
        """(relation, object) pairs for edges leaving the entity."""
        return self._out.get(entity, ())

    def in_edges(self, entity: int) -> tuple[tuple[int, int], ...]:
        """(subject, relation) pairs for edges entering the entity."""
        return self._in.get(entity, ())

    def neighbors(self, entity: int) -> set[int]:
        """Adjacent entities ignoring edge direction."""
        adj = {o for _, o in self._out.get(entity, ())}
        adj.update(s for s, _ in self._in.get(entity, ()))
        return adj

    def degree(self, entity: int) -> int:
        return len(self._out.get(entity, ())) + len(self._in.get(entity, ()))

    # --- queries -----------------------------------------------------

    def khop_subgraph(self, centers: Iterable[int | str], k: int) -> Subgraph:
        """BFS ball of radius k around the centers, with induced edges.

        Hop distance ignores edge direction. The subgraph keeps every
        triple of the full graph whose both endpoints fall inside the
        ball, including edges between two frontier nodes.
        """
        if k < 0:
            raise ValueError(f"radius must be >= 0, got {k}")
        resolved = tuple(self.resolve_entity(c) for c in centers)
        seen: set[int] = set(resolved)
        frontier = list(dict.fromkeys(resolved))
        for _ in range(k):
            if not frontier:
                break
            nxt: list[int] = []
            for v in frontier:
                for u in self.neighbors(v):
                    if u not in seen:
                        seen.add(u)
                        nxt.append(u)
            frontier = nxt
        induced = tuple(t for t in self.triples if t.s in seen and t.o in seen)
        return Subgraph(nodes=frozenset(seen), triples=induced, centers=resolved, radius=k)

    def direct_edges(
        self, a: int | str, b: int | str, oriented: bool = False
    ) -> list[Triple]:
        """Triples connecting a and b (a->b only when oriented)."""
        ai = self.resolve_entity(a)
        bi = self.resolve_entity(b)
        out = [Triple(ai, p, o) for p, o in self._out.get(ai, ()) if o == bi]
        if not oriented and ai != bi:
            out.extend(Triple(bi, p, o) for p, o in self._out.get(bi, ()) if o == ai)
        return out

    def stats(self) -> GraphStats:
        n = len(self.entities)
        degrees = [self.degree(e) for e in range(n)]
        return GraphStats(
            entities=n,
            relations=len(self.relations),
            triples=len(self.triples),
            mean_degree=(sum(degrees) / n) if n else 0.0,
            max_degree=max(degrees, default=0),
        )

    def name_triple(self, t: Triple) -> tuple[str, str, str]:
        return (
            self.entities.name_of(t.s),
            self.relations.name_of(t.p),
            self.entities.name_of(t.o),
        )


def load_triples(path: str | Path) -> KnowledgeGraph:
    """Read a tab-separated triple file into a graph.

    Each line is ``subject<TAB>predicate<TAB>object``. Blank lines and
    lines starting with ``#`` are skipped. Ids are assigned in
    first-seen order (subject before object within a line). A line
    without exactly three fields raises MalformedLine with its
    1-based line number; a file with no triples raises EmptyGraph.
    """
    entities = Vocabulary()
    relations = Vocabulary()
    triples: list[Triple] = []
    seen: set[Triple] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise MalformedLine(lineno, line)
            s, p, o = parts
            t = Triple(entities.add(s), relations.add(p), entities.add(o))
            if t in seen:
                logger.debug("duplicate triple at line %d ignored", lineno)
                continue
            seen.add(t)
            triples.append(t)
    if not triples:
        raise EmptyGraph(str(path))
    logger.info(
        "loaded %d triples, %d entities, %d relations from %s",
        len(triples), len(entities), len(relations), path,
    )
    return KnowledgeGraph(triples, entities, relations)


class AliasTable:
    """Maps entity names to surface forms usable in running text.

    The first surface listed for an entity is its preferred rendering.
    Surface lookup is case- and whitespace-insensitive; when two
    entities claim one surface the first mapping wins.
    """

    def __init__(self) -> None:
        self._surfaces: dict[str, list[str]] = {}
        self._entity_of: dict[str, str] = {}

    @classmethod
    def from_names(cls, names: Iterable[str]) -> AliasTable:
        """Identity table: every name is its own (only) surface form."""
        table = cls()
        for name in names:
            table.add(name, name)
        return table

    def add(self, entity: str, surface: str) -> None:
        entity = entity.strip()
        surface = " ".join(surface.split())
        if not entity or not surface:
            return
        self._surfaces.setdefault(entity, [])
        if surface not in self._surfaces[entity]:
            self._surfaces[entity].append(surface)
        key = canonical(surface)
        if key not in self._entity_of:
            self._entity_of[key] = entity
        elif self._entity_of[key] != entity:
            logger.warning(
                "surface %r already maps to %s; ignoring mapping to %s",
                surface, self._entity_of[key], entity,
            )

    def surfaces_of(self, entity: str) -> list[str]:
        return list(self._surfaces.get(entity, []))

    def preferred(self, entity: str) -> str:
        forms = self._surfaces.get(entity)
        return forms[0] if forms else entity

    def entity_of(self, surface: str) -> str | None:
        return self._entity_of.get(canonical(surface))

    @property
    def entities(self) -> list[str]:
        return list(self._surfaces)

    def items(self) -> Iterator[tuple[str, str]]:
        """All (entity, surface) pairs in file order."""
        for entity, forms in self._surfaces.items():
            for surface in forms:
                yield entity, surface

    def __len__(self) -> int:
        return sum(len(v) for v in self._surfaces.values())

    def __contains__(self, entity: str) -> bool:
        return entity in self._surfaces


def load_aliases(path: str | Path) -> AliasTable:
    """Read ``entity<TAB>surface`` lines; comments and blanks skipped."""
    table = AliasTable()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(p.strip() for p in parts):
                raise MalformedLine(lineno, line)
            table.add(parts[0], parts[1])
    return table


def load_entity_types(path: str | Path) -> dict[str, str]:
    """Read ``entity<TAB>type`` lines into a dict; last mapping wins."""
    types: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(p.strip() for p in parts):
                raise MalformedLine(lineno, line)
            types[parts[0].strip()] = parts[1].strip()
    return types
