"""Triple store: loading, vocabulary ids, k-hop subgraphs, direct edges."""

from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from kgfaith import KnowledgeGraph, Triple, Vocabulary, load_triples
from kgfaith.errors import EmptyGraph, MalformedLine, UnknownEntity


class TestVocabulary:
    def test_first_seen_order(self):
        v = Vocabulary()
        assert v.add("alpha") == 0
        assert v.add("beta") == 1
        assert v.add("alpha") == 0
        assert len(v) == 2
        assert v.names == ["alpha", "beta"]

    def test_lookup_folds_case_and_whitespace(self):
        v = Vocabulary()
        v.add("The  BFG")
        assert v.id_of("the bfg") == 0
        assert "THE BFG" in v
        assert v.name_of(0) == "The  BFG"

    def test_get_missing_returns_none(self):
        v = Vocabulary()
        assert v.get("nope") is None


class TestLoadTriples:
    """The toy graph pins the id assignment contract."""

    def test_entity_ids_first_seen(self, toy_graph):
        ids = {name: toy_graph.entities.id_of(name) for name in toy_graph.entities}
        assert ids == {
            "roald_dahl": 0,
            "the_witches": 1,
            "the_bfg": 2,
            "charlie_and_the_chocolate_factory": 3,
            "fantasy": 4,
            "quentin_blake": 5,
            "jrr_tolkien": 6,
            "the_hobbit": 7,
        }

    def test_relation_ids_first_seen(self, toy_graph):
        assert toy_graph.relations.id_of("wrote") == 0
        assert toy_graph.relations.id_of("has_genre") == 1
        assert toy_graph.relations.id_of("illustrated") == 2

    def test_counts(self, toy_graph):
        st = toy_graph.stats()
        assert (st.entities, st.relations, st.triples) == (8, 3, 7)
        assert st.mean_degree == pytest.approx(14 / 8)
        assert st.max_degree == 3

    def test_comments_and_blanks_skipped(self, tmp_path):
        p = tmp_path / "g.tsv"
        p.write_text("# header\n\na\tr\tb\n  \n# tail\n")
        g = load_triples(p)
        assert g.triples == (Triple(0, 0, 1),)

    def test_malformed_line_reports_number(self, tmp_path):
        p = tmp_path / "g.tsv"
        p.write_text("a\tr\tb\na\tr\n")
        with pytest.raises(MalformedLine) as exc:
            load_triples(p)
        assert exc.value.line_number == 2

    def test_empty_field_is_malformed(self, tmp_path):
        p = tmp_path / "g.tsv"
        p.write_text("a\t\tb\n")
        with pytest.raises(MalformedLine):
            load_triples(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "g.tsv"
        p.write_text("# nothing here\n")
        with pytest.raises(EmptyGraph):
            load_triples(p)

    def test_duplicate_triples_dropped(self, tmp_path):
        p = tmp_path / "g.tsv"
        p.write_text("a\tr\tb\na\tr\tb\n")
        assert len(load_triples(p).triples) == 1


class TestKhopSubgraph:
    """Hand-derived neighborhoods on the toy graph.

    Distances from roald_dahl (ignoring direction): the three books are
    1 hop away, fantasy and quentin_blake 2, the_hobbit 3, jrr_tolkien 4.
    """

    def test_k0_is_centers_only(self, toy_graph):
        sub = toy_graph.khop_subgraph(["roald_dahl"], 0)
        assert sub.nodes == {0}
        assert sub.triples == ()

    def test_k0_keeps_edges_between_centers(self, toy_graph):
        sub = toy_graph.khop_subgraph(["roald_dahl", "the_witches"], 0)
        assert sub.nodes == {0, 1}
        assert sub.triples == (Triple(0, 0, 1),)

    def test_k1_around_author(self, toy_graph):
        sub = toy_graph.khop_subgraph(["roald_dahl"], 1)
        assert sub.nodes == {0, 1, 2, 3}
        assert set(sub.triples) == {Triple(0, 0, 1), Triple(0, 0, 2), Triple(0, 0, 3)}

    def test_k2_adds_genre_and_illustrator(self, toy_graph):
        sub = toy_graph.khop_subgraph(["roald_dahl"], 2)
        assert sub.nodes == {0, 1, 2, 3, 4, 5}
        assert len(sub.triples) == 5
        assert not sub.has_node(toy_graph.entities.id_of("the_hobbit"))

    def test_k3_reaches_the_hobbit_not_tolkien(self, toy_graph):
        sub = toy_graph.khop_subgraph(["roald_dahl"], 3)
        assert sub.nodes == {0, 1, 2, 3, 4, 5, 7}
        assert len(sub.triples) == 6

    def test_radius_monotone(self, toy_graph):
        prev: frozenset[int] = frozenset()
        for k in range(5):
            nodes = toy_graph.khop_subgraph([0], k).nodes
            assert prev <= nodes
            prev = nodes

    def test_negative_radius_rejected(self, toy_graph):
        with pytest.raises(ValueError):
            toy_graph.khop_subgraph([0], -1)

    def test_unknown_center_rejected(self, toy_graph):
        with pytest.raises(UnknownEntity):
            toy_graph.khop_subgraph(["narnia"], 1)
        with pytest.raises(UnknownEntity):
            toy_graph.khop_subgraph([99], 1)

    def test_multi_center_union(self, toy_graph):
        sub = toy_graph.khop_subgraph(["jrr_tolkien", "quentin_blake"], 1)
        assert sub.nodes == {6, 7, 5, 2}


def _bfs_ball(triples: list[Triple], centers: set[int], k: int) -> set[int]:
    """Reference BFS: nodes within undirected distance k of any center."""
    adj: dict[int, set[int]] = {}
    for t in triples:
        adj.setdefault(t.s, set()).add(t.o)
        adj.setdefault(t.o, set()).add(t.s)
    dist = {c: 0 for c in centers}
    queue = deque(centers)
    while queue:
        v = queue.popleft()
        if dist[v] == k:
            continue
        for u in adj.get(v, ()):
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    return set(dist)


def _random_graph(rng: np.random.Generator) -> KnowledgeGraph:
    n = int(rng.integers(2, 200))
    m = int(rng.integers(1, 4 * n))
    ents = Vocabulary()
    rels = Vocabulary()
    for i in range(n):
        ents.add(f"e{i}")
    for j in range(int(rng.integers(1, 6))):
        rels.add(f"r{j}")
    triples: list[Triple] = []
    seen: set[Triple] = set()
    for _ in range(m):
        t = Triple(
            int(rng.integers(n)),
            int(rng.integers(len(rels))),
            int(rng.integers(n)),
        )
        if t not in seen:
            seen.add(t)
            triples.append(t)
    return KnowledgeGraph(triples, ents, rels)


class TestSubgraphMatchesBfsReference:
    def test_random_graphs(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            g = _random_graph(rng)
            n = len(g.entities)
            for k in range(4):
                n_centers = int(rng.integers(1, min(4, n) + 1))
                centers = {int(c) for c in rng.choice(n, size=n_centers, replace=False)}
                sub = g.khop_subgraph(sorted(centers), k)
                expect_nodes = _bfs_ball(list(g.triples), centers, k)
                assert sub.nodes == expect_nodes
                expect_triples = [
                    t for t in g.triples if t.s in expect_nodes and t.o in expect_nodes
                ]
                assert list(sub.triples) == expect_triples


class TestDirectEdges:
    def test_oriented(self, toy_graph):
        assert toy_graph.direct_edges("roald_dahl", "the_witches", oriented=True) == [
            Triple(0, 0, 1)
        ]
        assert toy_graph.direct_edges("the_witches", "roald_dahl", oriented=True) == []

    def test_unoriented_both_ways(self, toy_graph):
        forward = toy_graph.direct_edges("roald_dahl", "the_witches")
        backward = toy_graph.direct_edges("the_witches", "roald_dahl")
        assert set(forward) == set(backward) == {Triple(0, 0, 1)}

    def test_no_edge(self, toy_graph):
        assert toy_graph.direct_edges("roald_dahl", "fantasy") == []

    def test_subgraph_direct_edge_queries(self, toy_graph):
        sub = toy_graph.khop_subgraph(["roald_dahl"], 2)
        assert sub.has_direct_edge(0, 1)
        assert sub.has_direct_edge(1, 0)
        assert not sub.has_direct_edge(1, 0, oriented=True)
        assert not sub.has_direct_edge(0, 4)
        assert sub.edges_between(0, 1) == [Triple(0, 0, 1)]


class TestIndexes:
    def test_index_sizes_sum_to_twice_triples(self, toy_graph):
        total = sum(
            len(toy_graph.out_edges(e)) + len(toy_graph.in_edges(e))
            for e in range(len(toy_graph.entities))
        )
        assert total == 2 * len(toy_graph.triples)

    def test_neighbors_symmetric(self, toy_graph):
        n = len(toy_graph.entities)
        for a in range(n):
            for b in toy_graph.neighbors(a):
                assert a in toy_graph.neighbors(b)

    def test_name_triple_round_trip(self, toy_graph):
        assert toy_graph.name_triple(Triple(0, 0, 1)) == (
            "roald_dahl",
            "wrote",
            "the_witches",
        )


class TestAliasTable:
    def test_preferred_is_first_listed(self, toy_aliases):
        assert (
            toy_aliases.preferred("charlie_and_the_chocolate_factory")
            == "Charlie and the Chocolate Factory"
        )
        assert toy_aliases.surfaces_of("charlie_and_the_chocolate_factory") == [
            "Charlie and the Chocolate Factory",
            "Charlie",
        ]

    def test_surface_lookup_case_insensitive(self, toy_aliases):
        assert toy_aliases.entity_of("the bfg") == "the_bfg"
        assert toy_aliases.entity_of("THE WITCHES") == "the_witches"
        assert toy_aliases.entity_of("unknown surface") is None

    def test_alias_only_entities_listed(self, toy_aliases):
        assert "the_time_machine" in toy_aliases
        assert toy_aliases.preferred("the_time_machine") == "The Time Machine"

    def test_fallback_to_entity_name(self, toy_aliases):
        assert toy_aliases.preferred("not_in_table") == "not_in_table"


class TestEntityTypes:
    def test_types(self, toy_types):
        assert toy_types["roald_dahl"] == "person"
        assert toy_types["the_time_machine"] == "book"
        assert toy_types["fantasy"] == "genre"
        assert len(toy_types) == 11
