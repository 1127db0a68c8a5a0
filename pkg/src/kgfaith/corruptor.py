"""Synthetic hallucination generator.

Turns faithful grounded responses into labelled negatives two ways:

* extrinsic: swap each entity mention for a same-type entity drawn
  uniformly from outside the local subgraph and the dialogue history,
  so the replacement is guaranteed to be a detectable hallucination;
* intrinsic: exchange the subject and object surfaces of a grounding
  triple in place, producing a reversed (unsupported) assertion while
  keeping the token multiset intact.

A dataset builder assigns one strategy per record by seeded shuffle at
a configurable fraction, with fallback-or-drop handling for records a
strategy cannot corrupt.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .critic import link_mentions
from .dialogue import DialogueRecord, MentionSpan, splice
from .errors import (
    AllRecordsDropped,
    NoEligibleReplacement,
    NotApplicable,
    UnknownEntity,
)
from .kg import AliasTable, KnowledgeGraph, Subgraph, canonical

logger = logging.getLogger(__name__)

KIND_EXTRINSIC = "extrinsic"
KIND_INTRINSIC = "intrinsic"

POLICIES = ("fallback", "drop")


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class CorruptionConfig:
    """Knobs for dataset generation.

    fraction is the share of records corrupted extrinsically; the rest
    go intrinsic. policy says what to do when the assigned strategy is
    not applicable to a record: try the other one ("fallback") or drop
    the record ("drop"). k is the neighborhood radius used to build the
    exclusion subgraph for extrinsic replacements; keep it at least as
    large as the critic's radius so generated negatives stay detectable.
    """

    fraction: float = 0.6
    seed: int = 0
    policy: str = "fallback"
    k: int = 2

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must be in [0, 1], got {self.fraction}")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")


@dataclass
class CorruptedRecord:
    """A corrupted response plus the labels that mark what changed."""

    original: DialogueRecord
    response: str
    kind: str
    labels: list[tuple[int, int]]
    replacements: list[tuple[str, str]]

    def to_json(self) -> dict[str, Any]:
        return {
            "history": list(self.original.history),
            "triples": [list(t) for t in self.original.triples],
            "response": self.response,
            "labels": [list(s) for s in self.labels],
            "kind": self.kind,
            "replacements": [list(r) for r in self.replacements],
        }

    def as_record(self) -> DialogueRecord:
        """Re-wrap as a dialogue record (for critiquing or re-corrupting)."""
        return DialogueRecord(
            history=list(self.original.history),
            triples=list(self.original.triples),
            response=self.response,
        )


def _mentions_of(
    record: DialogueRecord,
    graph: KnowledgeGraph,
    aliases: AliasTable,
) -> list[MentionSpan]:
    if record.spans is not None:
        out = [
            MentionSpan(
                begin=b,
                end=e,
                surface=record.response[b:e],
                entity=ent,
                entity_id=graph.entities.get(ent),
            )
            for ent, b, e in record.spans
        ]
        out.sort(key=lambda m: m.begin)
        return out
    return link_mentions(record.response, aliases, graph)


def _entity_surfaces(entity: str, aliases: AliasTable) -> list[str]:
    forms = aliases.surfaces_of(entity)
    return forms if forms else [entity]


def _in_history(entity: str, history: list[str], aliases: AliasTable) -> bool:
    """True when any surface form of the entity occurs in any turn."""
    turns = [canonical(t) for t in history]
    for surface in _entity_surfaces(entity, aliases):
        folded = canonical(surface)
        if any(folded in turn for turn in turns):
            return True
    return False


def _positional_peers(entity_id: int, graph: KnowledgeGraph) -> set[int]:
    """Entities appearing with one of this entity's predicates in the same slot.

    Coarse stand-in for a type when the type map has no entry.
    """
    subj_rels = {p for p, _ in graph.out_edges(entity_id)}
    obj_rels = {p for _, p in graph.in_edges(entity_id)}
    peers: set[int] = set()
    for t in graph.triples:
        if t.p in subj_rels:
            peers.add(t.s)
        if t.p in obj_rels:
            peers.add(t.o)
    peers.discard(entity_id)
    return peers


def replacement_pool(
    mention_entity: str,
    graph: KnowledgeGraph,
    sub: Subgraph,
    types: dict[str, str],
    history: list[str],
    aliases: AliasTable,
) -> list[str]:
    """Eligible same-type replacements, sorted by entity id.

    Eligible means: a graph entity of the same declared type (or, when
    the type map misses the mention, one sharing a predicate-and-slot
    with it), not the mention itself, not a subgraph node, and with no
    surface form occurring anywhere in the history.
    """
    ent_type = types.get(mention_entity)
    candidate_ids: list[int]
    if ent_type is not None:
        candidate_ids = [
            i
            for i, name in enumerate(graph.entities.names)
            if types.get(name) == ent_type
        ]
    else:
        eid = graph.entities.get(mention_entity)
        if eid is None:
            return []
        candidate_ids = sorted(_positional_peers(eid, graph))
    self_id = graph.entities.get(mention_entity)
    pool: list[str] = []
    for i in candidate_ids:
        if i == self_id or sub.has_node(i):
            continue
        name = graph.entities.name_of(i)
        if name == mention_entity or _in_history(name, history, aliases):
            continue
        pool.append(name)
    return pool


def corrupt_extrinsic(
    record: DialogueRecord,
    graph: KnowledgeGraph,
    sub: Subgraph,
    types: dict[str, str],
    rng: np.random.Generator,
    aliases: AliasTable | None = None,
) -> CorruptedRecord:
    """Replace every mention that has an eligible out-of-neighborhood peer.

    Each replaced mention gets an independent uniform draw from its
    pool. Raises NoEligibleReplacement when no mention can be replaced.
    """
    if aliases is None:
        aliases = AliasTable.from_names(graph.entities.names)
    mentions = _mentions_of(record, graph, aliases)
    if not mentions:
        raise NoEligibleReplacement("record has no mention spans")
    edits: list[tuple[int, int, str]] = []
    replacements: list[tuple[str, str]] = []
    for m in mentions:
        pool = replacement_pool(m.entity, graph, sub, types, record.history, aliases)
        if not pool:
            continue
        choice = pool[int(rng.integers(len(pool)))]
        edits.append((m.begin, m.end, aliases.preferred(choice)))
        replacements.append((m.entity, choice))
    if not edits:
        raise NoEligibleReplacement(
            "every mention has an empty replacement pool"
        )
    corrupted, new_spans = splice(record.response, edits)
    return CorruptedRecord(
        original=record,
        response=corrupted,
        kind=KIND_EXTRINSIC,
        labels=new_spans,
        replacements=replacements,
    )


def _is_bidirectional(
    s: str, p: str, o: str, graph: KnowledgeGraph
) -> bool:
    sid, oid = graph.entities.get(s), graph.entities.get(o)
    pid = graph.relations.get(p)
    if sid is None or oid is None or pid is None:
        return False
    reverse = graph.direct_edges(oid, sid, oriented=True)
    return any(t.p == pid for t in reverse)


def corrupt_intrinsic(
    record: DialogueRecord,
    graph: KnowledgeGraph,
    aliases: AliasTable | None = None,
) -> CorruptedRecord:
    """Swap subject and object surfaces of grounding triples in the text.

    A triple is swappable when both its entities are mentioned exactly
    once (an ambiguous multi-mention swap has no well-defined inverse),
    the two spans are distinct, neither span was already swapped for an
    earlier triple, and the predicate does not hold in both orientations
    (a symmetric fact would stay faithful when reversed). Applying the
    operation twice restores the original response byte for byte.
    """
    if aliases is None:
        aliases = AliasTable.from_names(graph.entities.names)
    mentions = _mentions_of(record, graph, aliases)
    by_entity: dict[str, list[MentionSpan]] = {}
    for m in mentions:
        by_entity.setdefault(m.entity, []).append(m)

    used: set[int] = set()
    pairs: list[tuple[MentionSpan, MentionSpan]] = []
    saw_pair = False
    for s, p, o in record.triples:
        if s == o:
            continue
        ms, mo = by_entity.get(s), by_entity.get(o)
        if not ms or not mo:
            continue
        saw_pair = True
        if len(ms) != 1 or len(mo) != 1:
            logger.debug("skipping ambiguous pair (%s, %s): repeated mention", s, o)
            continue
        a, b = ms[0], mo[0]
        if a.begin in used or b.begin in used:
            continue
        if _is_bidirectional(s, p, o, graph):
            logger.debug("skipping bidirectional pair (%s, %s, %s)", s, p, o)
            continue
        used.add(a.begin)
        used.add(b.begin)
        pairs.append((a, b))

    if not pairs:
        if saw_pair:
            raise NotApplicable("all mentioned pairs are bidirectional or ambiguous")
        raise NotApplicable("no grounding triple has both entities mentioned")

    edits: list[tuple[int, int, str]] = []
    replacements: list[tuple[str, str]] = []
    for a, b in pairs:
        first, second = (a, b) if a.begin < b.begin else (b, a)
        edits.append((first.begin, first.end, second.surface))
        replacements.append((first.entity, second.entity))
        edits.append((second.begin, second.end, first.surface))
        replacements.append((second.entity, first.entity))
    corrupted, new_spans = splice(record.response, edits)
    order = sorted(range(len(new_spans)), key=lambda i: new_spans[i][0])
    return CorruptedRecord(
        original=record,
        response=corrupted,
        kind=KIND_INTRINSIC,
        labels=[new_spans[i] for i in order],
        replacements=[replacements[i] for i in order],
    )


@dataclass
class DatasetSummary:
    records: int
    assigned_extrinsic: int
    assigned_intrinsic: int
    realized_extrinsic: int = 0
    realized_intrinsic: int = 0
    fallback_to_extrinsic: int = 0
    fallback_to_intrinsic: int = 0
    dropped: int = 0
    drop_reasons: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "records": self.records,
            "assigned_extrinsic": self.assigned_extrinsic,
            "assigned_intrinsic": self.assigned_intrinsic,
            "realized_extrinsic": self.realized_extrinsic,
            "realized_intrinsic": self.realized_intrinsic,
            "fallback_to_extrinsic": self.fallback_to_extrinsic,
            "fallback_to_intrinsic": self.fallback_to_intrinsic,
            "dropped": self.dropped,
            "drop_reasons": list(self.drop_reasons),
        }


def build_synthetic_dataset(
    records: list[DialogueRecord],
    graph: KnowledgeGraph,
    types: dict[str, str],
    cfg: CorruptionConfig,
    aliases: AliasTable | None = None,
) -> tuple[list[CorruptedRecord], DatasetSummary]:
    """Corrupt a batch of records at the configured extrinsic fraction.

    Strategy assignment is a seeded shuffle-then-split so the realized
    pre-fallback quota is exactly round(fraction * N). Each record's
    randomness comes from a substream keyed by (seed, record index),
    making output byte-identical across runs and worker schedules.
    """
    if not records:
        raise AllRecordsDropped("no input records")
    if aliases is None:
        aliases = AliasTable.from_names(graph.entities.names)

    n = len(records)
    quota = round_half_up(cfg.fraction * n)
    perm = np.random.default_rng(cfg.seed).permutation(n)
    extrinsic_assigned = {int(i) for i in perm[:quota]}
    summary = DatasetSummary(
        records=n, assigned_extrinsic=quota, assigned_intrinsic=n - quota
    )

    def try_extrinsic(rec: DialogueRecord, idx: int) -> CorruptedRecord:
        rng = np.random.default_rng([cfg.seed, idx])
        anchors: list[int] = []
        for s, _, o in rec.triples:
            for name in (s, o):
                eid = graph.entities.get(name)
                if eid is not None and eid not in anchors:
                    anchors.append(eid)
        sub = graph.khop_subgraph(anchors, cfg.k) if anchors else Subgraph.empty()
        return corrupt_extrinsic(rec, graph, sub, types, rng, aliases)

    out: list[CorruptedRecord] = []
    for idx, rec in enumerate(records):
        assigned = KIND_EXTRINSIC if idx in extrinsic_assigned else KIND_INTRINSIC
        plan = [assigned]
        if cfg.policy == "fallback":
            plan.append(KIND_INTRINSIC if assigned == KIND_EXTRINSIC else KIND_EXTRINSIC)
        produced: CorruptedRecord | None = None
        for attempt, kind in enumerate(plan):
            try:
                if kind == KIND_EXTRINSIC:
                    produced = try_extrinsic(rec, idx)
                else:
                    produced = corrupt_intrinsic(rec, graph, aliases)
            except (NoEligibleReplacement, NotApplicable, UnknownEntity) as err:
                logger.debug("record %d: %s corruption failed: %s", idx, kind, err)
                continue
            if attempt > 0:
                if kind == KIND_EXTRINSIC:
                    summary.fallback_to_extrinsic += 1
                else:
                    summary.fallback_to_intrinsic += 1
            break
        if produced is None:
            summary.dropped += 1
            summary.drop_reasons.append(f"record {idx}: no strategy applicable")
            continue
        if produced.kind == KIND_EXTRINSIC:
            summary.realized_extrinsic += 1
        else:
            summary.realized_intrinsic += 1
        out.append(produced)

    if not out:
        raise AllRecordsDropped(f"all {n} records dropped")
    logger.info(
        "corrupted %d/%d records (%d extrinsic, %d intrinsic, %d dropped)",
        len(out), n, summary.realized_extrinsic, summary.realized_intrinsic,
        summary.dropped,
    )
    return out, summary
