"""Entity memory: bilinear triple scoring, NCE training, link prediction.

Entities and relations live in one d-dimensional space. A triple
(u, r, v) scores as the trilinear form sum_i u_i r_i v_i, which is
symmetric in u and v. Training minimizes a sampled-softmax contrastive
loss: the positive competes against n corrupted triples drawn by one of
three strategies (uniform over the vocabulary, from the positive's
neighborhood subgraph, or from the other positives in the batch).

A one-layer relational message pass can enrich a trained table, and a
filtered/raw link-prediction evaluator reports Hits@k, MR, and MRR.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DivergenceDetected,
    EmptyHoldout,
    EmptyPool,
    MalformedLine,
    ZeroDimension,
)
from .kg import KnowledgeGraph, Subgraph, Triple

logger = logging.getLogger(__name__)

SAMPLERS = ("uniform", "sans", "in_batch")
OPTIMIZERS = ("sgd", "adam")

SNAPSHOT_MAGIC = "pathhunter-emb"
SNAPSHOT_VERSION = "v1"


@dataclass
class EmbeddingTable:
    """Entity and relation vectors, one row per vocabulary id."""

    entities: np.ndarray
    relations: np.ndarray
    provenance: str = "learned"
    entity_names: list[str] | None = None
    relation_names: list[str] | None = None

    def __post_init__(self) -> None:
        self.entities = np.asarray(self.entities, dtype=np.float64)
        self.relations = np.asarray(self.relations, dtype=np.float64)
        if self.entities.ndim != 2 or self.relations.ndim != 2:
            raise ValueError("embedding matrices must be 2-dimensional")
        if self.entities.shape[1] != self.relations.shape[1]:
            raise DimensionMismatch(
                f"entity dim {self.entities.shape[1]} != relation dim "
                f"{self.relations.shape[1]}"
            )
        if not np.isfinite(self.entities).all() or not np.isfinite(self.relations).all():
            raise ValueError("embedding tables must be finite")

    @property
    def dim(self) -> int:
        return int(self.entities.shape[1])

    def entity(self, idx: int) -> np.ndarray:
        return self.entities[idx]

    def relation(self, idx: int) -> np.ndarray:
        return self.relations[idx]

    def copy(self, provenance: str | None = None) -> EmbeddingTable:
        return EmbeddingTable(
            entities=self.entities.copy(),
            relations=self.relations.copy(),
            provenance=provenance or self.provenance,
            entity_names=list(self.entity_names) if self.entity_names else None,
            relation_names=list(self.relation_names) if self.relation_names else None,
        )


def init_embeddings(
    n_entities: int, n_relations: int, d: int, seed: int
) -> EmbeddingTable:
    """Fresh table with entries uniform on [-sqrt(6/d), +sqrt(6/d)].

    The entity matrix is drawn before the relation matrix from a single
    seeded stream, so equal seeds give bitwise-equal tables.
    """
    if d < 1:
        raise ZeroDimension(f"dimension must be >= 1, got {d}")
    if n_entities < 1 or n_relations < 1:
        raise ValueError(
            f"need at least one entity and one relation, got {n_entities}/{n_relations}"
        )
    bound = math.sqrt(6.0 / d)
    rng = np.random.default_rng(seed)
    ent = rng.uniform(-bound, bound, size=(n_entities, d))
    rel = rng.uniform(-bound, bound, size=(n_relations, d))
    return EmbeddingTable(entities=ent, relations=rel, provenance="learned")


def distmult_score(z_u: np.ndarray, z_r: np.ndarray, z_v: np.ndarray) -> float:
    """Trilinear score sum_i u_i * r_i * v_i (symmetric in u and v).

    The two entity vectors are multiplied first, so swapping u and v
    gives a bitwise-identical result (elementwise products commute;
    a different grouping would only be equal up to rounding).
    """
    z_u = np.asarray(z_u, dtype=np.float64)
    z_r = np.asarray(z_r, dtype=np.float64)
    z_v = np.asarray(z_v, dtype=np.float64)
    if not (z_u.shape == z_r.shape == z_v.shape) or z_u.ndim != 1:
        raise DimensionMismatch(
            f"shapes {z_u.shape}, {z_r.shape}, {z_v.shape} must be equal 1-d"
        )
    return float(np.sum((z_u * z_v) * z_r))


RowKey = tuple[str, int]  # ("e", entity id) or ("r", relation id)


def nce_loss_and_grad(
    pos: Triple,
    negs: Sequence[Triple],
    table: EmbeddingTable,
) -> tuple[float, dict[RowKey, np.ndarray]]:
    """Sampled-softmax contrastive loss and its exact gradients.

    loss = -s(pos) + log(exp s(pos) + sum_j exp s(neg_j)), with the
    log-sum-exp max-shifted for stability. Gradients are returned per
    touched row, keyed ("e", id) / ("r", id), and accumulate correctly
    when one row appears in several triples.
    """
    if not negs:
        raise ValueError("need at least one negative")
    subjects = np.fromiter(
        (t.s for t in (pos, *negs)), dtype=np.int64, count=len(negs) + 1
    )
    predicates = np.fromiter(
        (t.p for t in (pos, *negs)), dtype=np.int64, count=len(negs) + 1
    )
    objects = np.fromiter(
        (t.o for t in (pos, *negs)), dtype=np.int64, count=len(negs) + 1
    )
    U = table.entities[subjects]
    R = table.relations[predicates]
    V = table.entities[objects]
    scores = np.einsum("ij,ij,ij->i", U, R, V)
    m = float(scores.max())
    shifted = np.exp(scores - m)
    total = float(shifted.sum())
    loss = -float(scores[0]) + m + math.log(total)
    p = shifted / total
    coeff = p.copy()
    coeff[0] -= 1.0

    dU = coeff[:, None] * (R * V)
    dR = coeff[:, None] * (U * V)
    dV = coeff[:, None] * (U * R)
    grads: dict[RowKey, np.ndarray] = {}
    for i in range(len(coeff)):
        for key, g in (
            (("e", int(subjects[i])), dU[i]),
            (("r", int(predicates[i])), dR[i]),
            (("e", int(objects[i])), dV[i]),
        ):
            acc = grads.get(key)
            if acc is None:
                grads[key] = g.copy()
            else:
                acc += g
    return loss, grads


def _corrupted(pos: Triple, entity: int, slot: str) -> Triple:
    if slot == "object":
        return Triple(pos.s, pos.p, entity)
    return Triple(entity, pos.p, pos.o)


def sample_negatives(
    pos: Triple,
    strategy: str,
    n: int = 50,
    rng: np.random.Generator | None = None,
    graph: KnowledgeGraph | None = None,
    sub: Subgraph | None = None,
    batch: Sequence[Triple] | None = None,
    slot: str = "object",
) -> list[Triple]:
    """Draw corrupted triples for one positive.

    uniform: n draws from the full entity vocabulary minus the gold
    entity. sans: n draws from the positive's subgraph nodes minus the
    gold; without replacement when the pool is large enough, otherwise
    with replacement (logged). in_batch: the other batch members' gold
    entities, giving batch-size - 1 negatives (duplicate golds filtered).
    The corrupted slot is the non-anchor slot: object by default.
    """
    if strategy not in SAMPLERS:
        raise ValueError(f"strategy must be one of {SAMPLERS}, got {strategy!r}")
    if slot not in ("object", "subject"):
        raise ValueError(f"slot must be object or subject, got {slot!r}")
    gold = pos.o if slot == "object" else pos.s

    if strategy == "uniform":
        if graph is None:
            raise ValueError("uniform sampling needs the graph")
        if rng is None:
            raise ValueError("uniform sampling needs an rng")
        n_entities = len(graph.entities)
        if n_entities < 2:
            raise EmptyPool("vocabulary has no alternative entity")
        pool = np.delete(np.arange(n_entities), gold)
        draws = rng.choice(pool, size=n, replace=True)
        return [_corrupted(pos, int(e), slot) for e in draws]

    if strategy == "sans":
        if sub is None:
            raise ValueError("sans sampling needs a subgraph")
        if rng is None:
            raise ValueError("sans sampling needs an rng")
        pool = np.array(sorted(sub.nodes - {gold}), dtype=np.int64)
        if pool.size == 0:
            raise EmptyPool("subgraph offers no alternative entity")
        if pool.size >= n:
            draws = rng.choice(pool, size=n, replace=False)
        else:
            logger.debug(
                "subgraph pool %d smaller than n=%d; sampling with replacement",
                pool.size, n,
            )
            draws = rng.choice(pool, size=n, replace=True)
        return [_corrupted(pos, int(e), slot) for e in draws]

    # in_batch
    if batch is None or len(batch) < 2:
        raise EmptyPool("in-batch sampling needs a batch of at least 2")
    out = []
    for other in batch:
        if other == pos:
            continue
        other_gold = other.o if slot == "object" else other.s
        if other_gold == gold:
            continue
        out.append(_corrupted(pos, other_gold, slot))
    if not out:
        raise EmptyPool("no distinct gold entities in the batch")
    return out


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for contrastive training."""

    d: int = 64
    lr: float = 1e-2
    epochs: int = 50
    batch_size: int = 32
    negatives: int = 50
    sampler: str = "uniform"
    sans_k: int = 1
    seed: int = 0
    optimizer: str = "sgd"
    l2: float = 1e-4

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ZeroDimension(f"dimension must be >= 1, got {self.d}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.negatives < 1:
            raise ValueError(f"negatives must be >= 1, got {self.negatives}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}"
            )
        if self.l2 < 0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")


class _SgdStep:
    def __init__(self, lr: float):
        self.lr = lr

    def apply(self, table: EmbeddingTable, grads: dict[RowKey, np.ndarray]) -> None:
        for (kind, idx), g in grads.items():
            target = table.entities if kind == "e" else table.relations
            target[idx] -= self.lr * g


class _AdamStep:
    """Adaptive-moments update applied sparsely to touched rows."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[RowKey, np.ndarray] = {}
        self.v: dict[RowKey, np.ndarray] = {}
        self.t: dict[RowKey, int] = {}

    def apply(self, table: EmbeddingTable, grads: dict[RowKey, np.ndarray]) -> None:
        for key, g in grads.items():
            kind, idx = key
            t = self.t.get(key, 0) + 1
            self.t[key] = t
            m = self.m.get(key)
            if m is None:
                m = np.zeros_like(g)
                self.m[key] = m
                self.v[key] = np.zeros_like(g)
            v = self.v[key]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            target = table.entities if kind == "e" else table.relations
            target[idx] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(
    graph: KnowledgeGraph,
    cfg: TrainingConfig,
    subgraph_provider: Callable[[Triple], Subgraph] | None = None,
) -> tuple[EmbeddingTable, list[float]]:
    """Mini-batch contrastive training over the graph's triples.

    Triples are shuffled each epoch; gradients are summed per batch,
    an L2 pull of 2*l2*row is added to every touched row, and the
    optimizer applies one step per batch. The per-epoch mean loss is
    returned as the trace. A non-finite epoch mean raises
    DivergenceDetected. Single-worker, fully seeded: identical config
    gives identical tables and traces.

    subgraph_provider feeds the sans sampler; by default each triple's
    pool is the sans_k-hop ball around its subject, cached per subject.
    """
    table = init_embeddings(len(graph.entities), len(graph.relations), cfg.d, cfg.seed)
    table.entity_names = graph.entities.names
    table.relation_names = graph.relations.names
    triples = list(graph.triples)
    rng = np.random.default_rng([cfg.seed, 1])

    if subgraph_provider is None and cfg.sampler == "sans":
        cache: dict[int, Subgraph] = {}

        def subgraph_provider(t: Triple) -> Subgraph:
            sub = cache.get(t.s)
            if sub is None:
                sub = graph.khop_subgraph([t.s], cfg.sans_k)
                cache[t.s] = sub
            return sub

    stepper = (
        _SgdStep(cfg.lr) if cfg.optimizer == "sgd" else _AdamStep(cfg.lr)
    )
    trace: list[float] = []
    n = len(triples)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, n, cfg.batch_size):
            batch = [triples[int(i)] for i in order[start : start + cfg.batch_size]]
            batch_grads: dict[RowKey, np.ndarray] = {}
            for pos in batch:
                if cfg.sampler == "uniform":
                    negs = sample_negatives(
                        pos, "uniform", n=cfg.negatives, rng=rng, graph=graph
                    )
                elif cfg.sampler == "sans":
                    assert subgraph_provider is not None
                    negs = sample_negatives(
                        pos, "sans", n=cfg.negatives, rng=rng,
                        sub=subgraph_provider(pos),
                    )
                else:
                    if len(batch) < 2:
                        logger.debug("skipping remainder batch of 1 (in-batch sampler)")
                        continue
                    negs = sample_negatives(pos, "in_batch", batch=batch)
                loss, grads = nce_loss_and_grad(pos, negs, table)
                epoch_loss += loss
                seen += 1
                for key, g in grads.items():
                    acc = batch_grads.get(key)
                    if acc is None:
                        batch_grads[key] = g
                    else:
                        acc += g
            if cfg.l2 > 0:
                for kind, idx in batch_grads:
                    row = table.entities[idx] if kind == "e" else table.relations[idx]
                    batch_grads[(kind, idx)] += 2.0 * cfg.l2 * row
            stepper.apply(table, batch_grads)
        mean_loss = epoch_loss / max(seen, 1)
        if not math.isfinite(mean_loss):
            raise DivergenceDetected(epoch)
        trace.append(mean_loss)
    logger.info(
        "trained %d epochs on %d triples (d=%d, %s): loss %.4f -> %.4f",
        cfg.epochs, n, cfg.d, cfg.sampler, trace[0], trace[-1],
    )
    return table, trace


ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x,
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
}


@dataclass
class LayerWeights:
    """Explicit weights for one message-passing layer (tests, mostly)."""

    w_self: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray
    w_rel: np.ndarray

    @classmethod
    def identity(cls, d: int) -> LayerWeights:
        eye = np.eye(d)
        return cls(eye.copy(), eye.copy(), eye.copy(), eye.copy())


def enrich_relational(
    table: EmbeddingTable,
    graph: KnowledgeGraph,
    layers: int = 1,
    seed: int = 0,
    activation: str = "identity",
    weights: Sequence[LayerWeights] | None = None,
) -> EmbeddingTable:
    """Relational message passing over the graph, one table in, one out.

    Per layer, each entity combines its own vector with the element-wise
    entity*relation products flowing along incoming and outgoing edges:

        z'_v = act(W_self z_v + W_in sum_{(u,r)->v} z_u*z_r
                              + W_out sum_{v->(r,u)} z_u*z_r)

    and relation vectors go through the layer's linear map W_rel.
    Weight matrices are seeded (uniform Glorot) unless given explicitly.
    """
    if layers < 1:
        raise ValueError(f"layers must be >= 1, got {layers}")
    act = ACTIVATIONS.get(activation)
    if act is None:
        raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
    d = table.dim
    if weights is not None:
        if len(weights) != layers:
            raise ValueError(f"expected {layers} weight sets, got {len(weights)}")
        layer_weights = list(weights)
    else:
        rng = np.random.default_rng(seed)
        bound = math.sqrt(3.0 / d)
        layer_weights = [
            LayerWeights(
                w_self=rng.uniform(-bound, bound, (d, d)),
                w_in=rng.uniform(-bound, bound, (d, d)),
                w_out=rng.uniform(-bound, bound, (d, d)),
                w_rel=rng.uniform(-bound, bound, (d, d)),
            )
            for _ in range(layers)
        ]

    ent = table.entities.copy()
    rel = table.relations.copy()
    for lw in layer_weights:
        messages_in = np.zeros_like(ent)
        messages_out = np.zeros_like(ent)
        for t in graph.triples:
            prod_in = ent[t.s] * rel[t.p]
            messages_in[t.o] += prod_in
            prod_out = ent[t.o] * rel[t.p]
            messages_out[t.s] += prod_out
        ent = act(
            ent @ lw.w_self.T + messages_in @ lw.w_in.T + messages_out @ lw.w_out.T
        )
        rel = rel @ lw.w_rel.T
    return EmbeddingTable(
        entities=ent,
        relations=rel,
        provenance="enriched",
        entity_names=list(table.entity_names) if table.entity_names else None,
        relation_names=list(table.relation_names) if table.relation_names else None,
    )


@dataclass
class LinkPredictionReport:
    ranks: list[int]
    hits: dict[int, float]
    mr: float
    mrr: float
    mode: str
    scope: str

    def to_json(self) -> dict:
        return {
            "ranks": list(self.ranks),
            "hits": {f"hits@{k}": v for k, v in sorted(self.hits.items())},
            "mr": self.mr,
            "mrr": self.mrr,
            "mode": self.mode,
            "scope": self.scope,
        }


def rank_of_gold(
    scores: np.ndarray, candidate_ids: np.ndarray, gold: int
) -> int:
    """Rank of the gold candidate: 1 + better scores + equal-score lower ids.

    The tie rule (ascending entity id) makes the rank independent of the
    order candidates were scored in.
    """
    pos = np.nonzero(candidate_ids == gold)[0]
    if pos.size != 1:
        raise ValueError("gold entity must appear exactly once among candidates")
    gold_score = scores[pos[0]]
    better = int(np.sum(scores > gold_score))
    tied_lower = int(np.sum((scores == gold_score) & (candidate_ids < gold)))
    return 1 + better + tied_lower


def evaluate_link_prediction(
    table: EmbeddingTable,
    heldout: Sequence[Triple],
    graph: KnowledgeGraph,
    mode: str = "filtered",
    scope: str = "all",
    k: int = 2,
    ks: Iterable[int] = (1, 3, 10),
    slot: str = "object",
) -> LinkPredictionReport:
    """Rank the gold entity of each held-out triple among candidates.

    Candidates fill the chosen slot (object by default): the full
    vocabulary, or the k-hop subgraph around the anchor entity. The
    filtered mode drops candidates that form another known-true triple
    (training or held-out) before ranking; the gold itself always stays.
    """
    if mode not in ("raw", "filtered"):
        raise ValueError(f"mode must be raw or filtered, got {mode!r}")
    if scope not in ("all", "subgraph"):
        raise ValueError(f"scope must be all or subgraph, got {scope!r}")
    if slot not in ("object", "subject"):
        raise ValueError(f"slot must be object or subject, got {slot!r}")
    heldout = list(heldout)
    if not heldout:
        raise EmptyHoldout("no held-out triples to evaluate")
    train_set = set(graph.triples)
    if mode == "filtered":
        overlap = train_set.intersection(heldout)
        if overlap:
            raise ValueError(
                f"{len(overlap)} held-out triples also appear in the graph"
            )
    known = train_set | set(heldout)

    ranks: list[int] = []
    for t in heldout:
        anchor, gold = (t.s, t.o) if slot == "object" else (t.o, t.s)
        if scope == "all":
            cand = np.arange(len(graph.entities))
        else:
            nodes = graph.khop_subgraph([anchor], k).nodes | {gold}
            cand = np.array(sorted(nodes), dtype=np.int64)
        if mode == "filtered":
            if slot == "object":
                drop = {e for e in cand if e != gold and Triple(t.s, t.p, int(e)) in known}
            else:
                drop = {e for e in cand if e != gold and Triple(int(e), t.p, t.o) in known}
            if drop:
                cand = np.array([e for e in cand if e not in drop], dtype=np.int64)
        query = table.entities[anchor] * table.relations[t.p]
        scores = table.entities[cand] @ query
        ranks.append(rank_of_gold(scores, cand, gold))

    ks = sorted(set(int(x) for x in ks))
    arr = np.array(ranks, dtype=np.float64)
    return LinkPredictionReport(
        ranks=ranks,
        hits={kk: float(np.mean(arr <= kk)) for kk in ks},
        mr=float(arr.mean()),
        mrr=float((1.0 / arr).mean()),
        mode=mode,
        scope=scope,
    )


# --- snapshots ------------------------------------------------------------

def save_embeddings(path: str | Path, table: EmbeddingTable) -> None:
    """Write the documented snapshot: header line, then one row per vector."""
    if table.entity_names is None or table.relation_names is None:
        raise ValueError("snapshot needs entity and relation names on the table")
    if len(table.entity_names) != len(table.entities) or len(
        table.relation_names
    ) != len(table.relations):
        raise ValueError("name lists must match matrix row counts")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} "
            f"{len(table.entities)} {len(table.relations)} {table.dim}\n"
        )
        for name, row in zip(table.entity_names, table.entities):
            fh.write(f"E\t{name}\t{' '.join(format(x, '.17g') for x in row)}\n")
        for name, row in zip(table.relation_names, table.relations):
            fh.write(f"R\t{name}\t{' '.join(format(x, '.17g') for x in row)}\n")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Read a snapshot back, validating counts, dimensions, and finiteness."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(" ")
        if len(header) != 5 or header[0] != SNAPSHOT_MAGIC or header[1] != SNAPSHOT_VERSION:
            raise MalformedLine(1, " ".join(header))
        n_ent, n_rel, d = (int(x) for x in header[2:])
        ent_rows: list[np.ndarray] = []
        rel_rows: list[np.ndarray] = []
        ent_names: list[str] = []
        rel_names: list[str] = []
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[0] not in ("E", "R"):
                raise MalformedLine(lineno, line)
            vec = np.array([float(x) for x in parts[2].split(" ")], dtype=np.float64)
            if vec.shape != (d,):
                raise MalformedLine(lineno, line)
            if not np.isfinite(vec).all():
                raise ValueError(f"line {lineno}: non-finite vector")
            if parts[0] == "E":
                ent_names.append(parts[1])
                ent_rows.append(vec)
            else:
                rel_names.append(parts[1])
                rel_rows.append(vec)
    if len(ent_rows) != n_ent or len(rel_rows) != n_rel:
        raise ValueError(
            f"header promises {n_ent}/{n_rel} rows, file has "
            f"{len(ent_rows)}/{len(rel_rows)}"
        )
    return EmbeddingTable(
        entities=np.vstack(ent_rows),
        relations=np.vstack(rel_rows),
        provenance="external",
        entity_names=ent_names,
        relation_names=rel_names,
    )


def align_table(table: EmbeddingTable, graph: KnowledgeGraph) -> EmbeddingTable:
    """Reorder snapshot rows to the graph's vocabulary ids.

    Every graph entity and relation must be present by name; extra rows
    in the snapshot are dropped.
    """
    if table.entity_names is None or table.relation_names is None:
        raise ValueError("table has no names to align by")
    ent_pos = {name: i for i, name in enumerate(table.entity_names)}
    rel_pos = {name: i for i, name in enumerate(table.relation_names)}
    missing = [n for n in graph.entities.names if n not in ent_pos]
    missing += [n for n in graph.relations.names if n not in rel_pos]
    if missing:
        raise ValueError(f"snapshot lacks vectors for: {', '.join(missing[:5])}")
    ent = np.vstack([table.entities[ent_pos[n]] for n in graph.entities.names])
    rel = np.vstack([table.relations[rel_pos[n]] for n in graph.relations.names])
    return EmbeddingTable(
        entities=ent,
        relations=rel,
        provenance=table.provenance,
        entity_names=graph.entities.names,
        relation_names=graph.relations.names,
    )


def save_loss_trace(path: str | Path, trace: Sequence[float]) -> None:
    """CSV with header epoch,mean_loss; epochs are 1-based."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(trace, start=1):
            writer.writerow([i, format(loss, ".17g")])
