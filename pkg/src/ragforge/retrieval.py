"""Exact vector search over chunk embeddings and hard-negative mining.

The index is an exhaustive cosine scan: vectors are unit-normalized so cosine
is a dot product, ranking ties break on chunk_id, and results are bit-stable
across runs. Hard negatives for a query are the highest-ranked chunks outside
its gold set, which is exactly what contrastive training wants as foils.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .backends import EmbedBackend, embed
from .corpus import Chunk
from .datamodel import QARecord, TOOL_VERSION, derive_gold_docs
from .errors import DuplicateId, InsufficientCorpus
from .jsonio import read_jsonl, write_jsonl

EMBED_BATCH = 64
DEFAULT_N_NEG = 7


@dataclass
class VectorIndex:
    dimension: int
    ids: list[str]
    vectors: np.ndarray  # (n, dimension), unit rows
    generation: int = 1

    def __len__(self) -> int:
        return len(self.ids)

    def entries(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self.ids, self.vectors))


@dataclass(frozen=True)
class Triplet:
    query: str
    positive: str  # chunk_id
    negatives: tuple[str, ...]
    query_id: str


def build_index(
    chunks: Sequence[Chunk],
    backend: EmbedBackend,
    previous: VectorIndex | None = None,
) -> VectorIndex:
    """Embed every chunk text into a fresh index; rebuilds bump generation."""
    if not chunks:
        raise ValueError("cannot build an index over zero chunks")
    ids = [c.chunk_id for c in chunks]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateId(f"duplicate chunk ids: {dupes[:5]}")
    rows = []
    for lo in range(0, len(chunks), EMBED_BATCH):
        batch = [c.text for c in chunks[lo:lo + EMBED_BATCH]]
        rows.append(embed(backend, batch))
    return VectorIndex(
        dimension=backend.dimension,
        ids=ids,
        vectors=np.vstack(rows),
        generation=(previous.generation + 1) if previous else 1,
    )


def rank_all(idx: VectorIndex, query_vec: np.ndarray) -> list[tuple[str, float]]:
    """Full ranking of the index against one unit query vector."""
    scores = idx.vectors @ query_vec
    order = np.lexsort((np.asarray(idx.ids), -scores))
    return [(idx.ids[i], float(scores[i])) for i in order]


def search(
    idx: VectorIndex,
    query: str,
    k: int,
    backend: EmbedBackend,
) -> list[tuple[str, float]]:
    """Top-k chunks by cosine, exhaustive scan, ties by chunk_id ascending."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query_vec = embed(backend, [query])[0]
    return rank_all(idx, query_vec)[:k]


def mine_hard_negatives(
    idx: VectorIndex,
    rec: QARecord,
    n_neg: int,
    backend: EmbedBackend,
) -> list[str]:
    """The n_neg top-ranked chunks for the query that are not gold."""
    if n_neg < 1:
        raise ValueError(f"n_neg must be >= 1, got {n_neg}")
    gold = derive_gold_docs(rec)
    available = len(idx) - len(gold & set(idx.ids))
    if available < n_neg:
        raise InsufficientCorpus(
            f"{rec.query_id}: only {available} non-gold chunks for {n_neg} negatives"
        )
    ranking = rank_all(idx, embed(backend, [rec.query])[0])
    negatives = [chunk_id for chunk_id, _ in ranking if chunk_id not in gold]
    return negatives[:n_neg]


def export_triplets(
    dataset: Sequence[QARecord],
    idx: VectorIndex,
    n_neg: int,
    backend: EmbedBackend,
) -> list[Triplet]:
    """One triplet per (record, gold chunk), ordered by (query_id, chunk_id)."""
    triplets = []
    for rec in sorted(dataset, key=lambda r: r.query_id):
        negatives = tuple(mine_hard_negatives(idx, rec, n_neg, backend))
        for chunk_id in sorted(derive_gold_docs(rec)):
            triplets.append(Triplet(
                query=rec.query,
                positive=chunk_id,
                negatives=negatives,
                query_id=rec.query_id,
            ))
    return triplets


def save_triplet_file(
    path: str | Path,
    triplets: Iterable[Triplet],
    chunk_texts: Mapping[str, str],
    idx: VectorIndex,
    backend: EmbedBackend,
    config_hash: str = "",
    corpus_hash: str = "",
) -> None:
    """Write the training file with texts inlined; header pins provenance."""
    header = {
        "type": "meta",
        "index_generation": idx.generation,
        "embed_model": backend.model_name,
        "tool_version": TOOL_VERSION,
        "config_hash": config_hash,
        "corpus_hash": corpus_hash,
    }

    def rows():
        yield header
        for t in triplets:
            yield {
                "query_id": t.query_id,
                "query": t.query,
                "positive_text": chunk_texts[t.positive],
                "negative_texts": [chunk_texts[n] for n in t.negatives],
            }

    write_jsonl(path, rows())


def load_triplet_file(path: str | Path) -> tuple[dict, list[dict]]:
    rows = list(read_jsonl(path))
    if not rows or rows[0].get("type") != "meta":
        raise ValueError(f"{path}: missing meta header record")
    return rows[0], rows[1:]
