"""Clue and entity extraction, alias resolution, and the entity graph.

Multi-hop questions need chunks that genuinely share subject matter. Entities
mentioned in extracted clues provide those links: chunks and entities form a
bipartite graph, and chunk groups for multi-hop generation are sampled as
chunk-entity-chunk paths through it.
"""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .backends import ChatBackend, chat, parse_json_reply
from .corpus import Chunk
from .datamodel import Clue, ClueSupport
from .errors import InvalidConfig, NoCluesFound
from .jsonio import read_jsonl, sha256_text, stable_seed, write_jsonl

log = logging.getLogger(__name__)

DEFAULT_MAX_DEGREE = 50
MIN_HOPS, MAX_HOPS = 2, 4

_PUNCT_RE = re.compile(r"[^\w\s]+", re.UNICODE)


def normalize_surface(surface: str) -> str:
    """Canonical key: lowercase, punctuation stripped, whitespace collapsed."""
    return " ".join(_PUNCT_RE.sub("", surface.lower()).split())


@dataclass(frozen=True)
class EntityMention:
    surface: str
    chunk_id: str
    sent_id: str
    normalized: str


@dataclass(frozen=True)
class Entity:
    entity_id: str
    canonical: str
    aliases: frozenset[str]
    mentions: tuple[EntityMention, ...]


@dataclass
class EntityGraph:
    """Bipartite incidence graph between entities and chunks."""

    entities: dict[str, Entity]
    edges: list[tuple[str, str]]  # (entity_id, chunk_id), sorted

    def chunk_ids(self) -> list[str]:
        return sorted({chunk_id for _, chunk_id in self.edges})

    def entities_of_chunk(self, chunk_id: str) -> list[str]:
        return sorted({e for e, c in self.edges if c == chunk_id})

    def chunks_of_entity(self, entity_id: str) -> list[str]:
        return sorted({c for e, c in self.edges if e == entity_id})

    def degree(self, entity_id: str) -> int:
        return len(self.chunks_of_entity(entity_id))


def extract_clues(chunk: Chunk, backend: ChatBackend) -> list[Clue]:
    """Ask the backend for factual statements grounded in one chunk.

    Cited sentence indices are validated against the chunk; statements left
    with no valid citation are dropped with a warning. Raises ``NoCluesFound``
    when the chunk is blank or the backend yields nothing usable.
    """
    from .prompts import render

    if not chunk.text.strip() or not chunk.sentences:
        raise NoCluesFound(f"{chunk.chunk_id}: nothing to extract from")

    sentences = [chunk.sentence_text(s) for s in chunk.sentences]
    system, user, _ = render("clue_extract", sentences_json=json.dumps(sentences))
    reply = chat(backend, system, user, seed=stable_seed("clues", chunk.chunk_id),
                 tag="clue_extract")
    items = parse_json_reply(reply)
    if not isinstance(items, list):
        raise NoCluesFound(f"{chunk.chunk_id}: unparseable extraction reply")

    clues: list[Clue] = []
    for item in items:
        if not isinstance(item, dict):
            continue
        statement = str(item.get("statement", "")).strip()
        cited = item.get("sentences", [])
        if not statement or not isinstance(cited, list):
            continue
        valid = sorted({i for i in cited if isinstance(i, int) and 0 <= i < len(sentences)})
        if len(valid) < len(set(cited)):
            log.warning("%s: dropped out-of-range sentence citations for %r",
                        chunk.chunk_id, statement[:60])
        if not valid:
            log.warning("%s: clue %r dropped, no valid citations", chunk.chunk_id, statement[:60])
            continue
        refs = tuple((chunk.chunk_id, chunk.sentences[i].sent_id) for i in valid)
        clues.append(Clue(
            clue_id=f"{chunk.chunk_id}:c{len(clues)}",
            statement=statement,
            support=ClueSupport(docs=frozenset({chunk.chunk_id}), sentence_refs=refs),
        ))
    if not clues:
        raise NoCluesFound(f"{chunk.chunk_id}: backend returned no usable clues")
    return clues


def extract_all_clues(
    chunks: Sequence[Chunk],
    backend: ChatBackend,
    max_workers: int = 8,
) -> dict[str, list[Clue]]:
    """Parallel map of extract_clues; chunks with no clues map to []."""

    def one(chunk: Chunk) -> list[Clue]:
        try:
            return extract_clues(chunk, backend)
        except NoCluesFound:
            return []

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(one, chunks))
    return {chunk.chunk_id: clues for chunk, clues in zip(chunks, results)}


def extract_entities(clue: Clue, backend: ChatBackend) -> list[EntityMention]:
    """Entity surfaces in one clue statement; non-substrings are dropped."""
    from .prompts import render

    system, user, _ = render("entity_extract", statement=clue.statement)
    reply = chat(backend, system, user, seed=stable_seed("entities", clue.clue_id),
                 tag="entity_extract")
    surfaces = parse_json_reply(reply)
    if not isinstance(surfaces, list):
        log.warning("%s: unparseable entity reply", clue.clue_id)
        return []

    chunk_id, sent_id = clue.support.sentence_refs[0]
    mentions: list[EntityMention] = []
    for surface in surfaces:
        if not isinstance(surface, str):
            continue
        surface = surface.strip()
        if not surface or surface not in clue.statement:
            if surface:
                log.warning("%s: surface %r not a substring, dropped", clue.clue_id, surface[:40])
            continue
        normalized = normalize_surface(surface)
        if normalized:
            mentions.append(EntityMention(surface, chunk_id, sent_id, normalized))
    return mentions


def extract_all_entities(
    clues: Sequence[Clue],
    backend: ChatBackend,
    max_workers: int = 8,
) -> list[EntityMention]:
    """Parallel map of extract_entities, flattened in input order."""
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        per_clue = list(pool.map(lambda clue: extract_entities(clue, backend), clues))
    return [m for mentions in per_clue for m in mentions]


def resolve_entities(
    mentions: Iterable[EntityMention],
    merge_backend: ChatBackend | None = None,
) -> list[Entity]:
    """Merge mentions sharing a normalized key; order of input is irrelevant.

    Resolution is exact-match on normalized keys. With ``merge_backend`` set,
    the backend may additionally propose groups of keys to fold together
    (alias merging); proposals naming unknown keys are ignored.
    """
    groups: dict[str, list[EntityMention]] = {}
    for m in mentions:
        groups.setdefault(m.normalized, []).append(m)

    key_sets = [{key} for key in sorted(groups)]
    if merge_backend is not None and groups:
        key_sets = _merge_aliases(key_sets, merge_backend)

    entities = []
    for aliases in key_sets:
        merged = [m for key in aliases for m in groups[key]]
        merged.sort(key=lambda m: (m.chunk_id, m.sent_id, m.surface))
        counts: dict[str, int] = {}
        for m in merged:
            counts[m.surface] = counts.get(m.surface, 0) + 1
        canonical = min(counts, key=lambda s: (-counts[s], s))
        entities.append(Entity(
            entity_id=f"ent-{sha256_text(min(aliases))[:12]}",
            canonical=canonical,
            aliases=frozenset(aliases),
            mentions=tuple(merged),
        ))
    entities.sort(key=lambda e: e.entity_id)
    return entities


def _merge_aliases(key_sets: list[set[str]], backend: ChatBackend) -> list[set[str]]:
    from .prompts import render

    keys = sorted(key for key_set in key_sets for key in key_set)
    system, user, _ = render("alias_merge", keys_json=json.dumps(keys))
    reply = chat(backend, system, user, seed=stable_seed("alias", *keys), tag="alias_merge")
    proposals = parse_json_reply(reply)
    if not isinstance(proposals, list):
        log.warning("alias merge reply unparseable; keeping exact-match partition")
        return key_sets

    owner = {key: i for i, key_set in enumerate(key_sets) for key in key_set}
    parent = list(range(len(key_sets)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for group in proposals:
        if not isinstance(group, list):
            continue
        known = [k for k in group if isinstance(k, str) and k in owner]
        for a, b in zip(known, known[1:]):
            ra, rb = find(owner[a]), find(owner[b])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    merged: dict[int, set[str]] = {}
    for i, key_set in enumerate(key_sets):
        merged.setdefault(find(i), set()).update(key_set)
    return [merged[root] for root in sorted(merged)]


def build_graph(entities: Sequence[Entity]) -> EntityGraph:
    """Incidence edges from entity mentions; node and edge order is sorted."""
    edges = sorted({
        (entity.entity_id, mention.chunk_id)
        for entity in entities
        for mention in entity.mentions
    })
    return EntityGraph(
        entities={e.entity_id: e for e in sorted(entities, key=lambda e: e.entity_id)},
        edges=edges,
    )


def sample_multihop_groups(
    g: EntityGraph,
    hops: int,
    count: int,
    seed: int,
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> list[list[str]]:
    """Sample chunk groups connected through shared entities.

    Each group is ``hops`` distinct chunks forming a chunk-entity-chunk path.
    Hub entities above ``max_degree`` are skipped so ubiquitous terms do not
    bridge everything to everything. Sampling is a seeded randomized walk with
    backtracking, so small graphs get exhausted deterministically and the same
    seed always returns the same groups.
    """
    if not MIN_HOPS <= hops <= MAX_HOPS:
        raise InvalidConfig(f"hops must be in [{MIN_HOPS}, {MAX_HOPS}], got {hops}")
    if count < 1:
        return []

    chunk_entities: dict[str, list[str]] = {}
    entity_chunks: dict[str, list[str]] = {}
    for entity_id, chunk_id in g.edges:
        chunk_entities.setdefault(chunk_id, []).append(entity_id)
        entity_chunks.setdefault(entity_id, []).append(chunk_id)
    eligible = {e for e, chunks in entity_chunks.items() if len(set(chunks)) <= max_degree}

    rng = random.Random(seed)
    found: list[list[str]] = []
    seen: set[frozenset[str]] = set()
    budget = max(10_000, 200 * count)

    def extend(path: list[str]) -> bool:
        nonlocal budget
        if len(path) == hops:
            group = frozenset(path)
            if group not in seen:
                seen.add(group)
                found.append(list(path))
            return len(found) >= count
        here = path[-1]
        bridges = [e for e in chunk_entities.get(here, []) if e in eligible]
        rng.shuffle(bridges)
        for entity in bridges:
            neighbors = [c for c in set(entity_chunks[entity]) if c not in path]
            neighbors.sort()
            rng.shuffle(neighbors)
            for nxt in neighbors:
                budget -= 1
                if budget <= 0:
                    return True
                path.append(nxt)
                if extend(path):
                    path.pop()
                    return True
                path.pop()
        return False

    starts = sorted(chunk_entities)
    rng.shuffle(starts)
    for start in starts:
        if extend([start]):
            break
    return found


# --- inspection dump ---------------------------------------------------------

def save_graph(path: str | Path, g: EntityGraph) -> None:
    def row(entity: Entity) -> dict:
        return {
            "entity_id": entity.entity_id,
            "canonical": entity.canonical,
            "aliases": sorted(entity.aliases),
            "chunk_ids": g.chunks_of_entity(entity.entity_id),
        }

    write_jsonl(path, (row(e) for e in g.entities.values()))


def load_graph_rows(path: str | Path) -> list[dict]:
    return list(read_jsonl(path))
