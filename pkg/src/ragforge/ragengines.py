"""Four RAG orchestration loops with auditable traces.

Each engine is an explicit state machine over a retriever (vector index +
embedder) and a generator backend. Engines never see gold labels; everything
needed for post-hoc evaluation — every retrieval, every planner decision, the
final answer — lands in the trace.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .backends import ChatBackend, EmbedBackend, chat, parse_json_reply
from .datamodel import TOOL_VERSION
from .jsonio import read_jsonl, write_jsonl
from .prompts import render
from .retrieval import VectorIndex, search

DONE_MARKER = "<DONE>"
DEFAULT_K = 3
DEFAULT_MAX_ITER = 8
RR_KEEP = 5

_REACT_ACTION = re.compile(r"^\s*(RETRIEVE|STOP)\s*\[(.*)\]\s*$", re.DOTALL)


@dataclass
class TraceStep:
    kind: str  # plan | retrieve | generate | judge_continue | aggregate | stop
    payload: dict


@dataclass
class RagTrace:
    query_id: str
    engine: str
    steps: list[TraceStep] = field(default_factory=list)
    final_answer: str = ""
    retrieved_all: list[str] = field(default_factory=list)
    # Wall-clock accounting; deliberately not serialized so traces replay
    # byte-identical with mock backends.
    timing: dict = field(default_factory=dict)

    def add(self, kind: str, **payload) -> None:
        self.steps.append(TraceStep(kind, payload))

    def note_retrieved(self, chunk_ids) -> None:
        for chunk_id in chunk_ids:
            if chunk_id not in self.retrieved_all:
                self.retrieved_all.append(chunk_id)

    def retrieve_count(self) -> int:
        return sum(1 for s in self.steps if s.kind == "retrieve")


def trace_to_dict(trace: RagTrace) -> dict:
    return {
        "query_id": trace.query_id,
        "engine": trace.engine,
        "steps": [{"kind": s.kind, "payload": s.payload} for s in trace.steps],
        "final_answer": trace.final_answer,
        "retrieved_all": list(trace.retrieved_all),
    }


def save_traces(path: str | Path, traces, config_hash: str = "", corpus_hash: str = "") -> None:
    header = {
        "type": "meta",
        "tool_version": TOOL_VERSION,
        "config_hash": config_hash,
        "corpus_hash": corpus_hash,
    }

    def rows():
        yield header
        for t in traces:
            yield trace_to_dict(t)

    write_jsonl(path, rows())


def load_traces(path: str | Path) -> tuple[dict, list[dict]]:
    rows = list(read_jsonl(path))
    if not rows or rows[0].get("type") != "meta":
        raise ValueError(f"{path}: missing meta header record")
    return rows[0], rows[1:]


class _Runtime:
    """Shared helpers: retrieval with bookkeeping and generation calls."""

    def __init__(
        self,
        idx: VectorIndex,
        embedder: EmbedBackend,
        gen: ChatBackend,
        chunk_texts: Mapping[str, str],
        trace: RagTrace,
    ) -> None:
        self.idx = idx
        self.embedder = embedder
        self.gen = gen
        self.chunk_texts = chunk_texts
        self.trace = trace
        self.chat_calls = 0
        self.evidence: list[str] = []  # chunk ids, first-seen order

    def retrieve(self, query: str, k: int) -> list[str]:
        results = search(self.idx, query, k, self.embedder)
        ids = [chunk_id for chunk_id, _ in results]
        self.trace.add(
            "retrieve",
            query=query,
            k=k,
            results=[{"chunk_id": c, "score": s} for c, s in results],
        )
        self.trace.note_retrieved(ids)
        for chunk_id in ids:
            if chunk_id not in self.evidence:
                self.evidence.append(chunk_id)
        return ids

    def ask(self, template_id: str, **values) -> str:
        system, user, _ = render(template_id, **values)
        self.chat_calls += 1
        return chat(self.gen, system, user, seed=self.chat_calls, tag=template_id)

    def evidence_text(self, chunk_ids=None) -> str:
        ids = list(chunk_ids) if chunk_ids is not None else self.evidence
        return "\n".join(self.chunk_texts.get(c, "") for c in ids)

    def finish(self, started: float) -> RagTrace:
        self.trace.add("stop", chat_calls=self.chat_calls,
                       retrieve_calls=self.trace.retrieve_count())
        self.trace.timing["wall_clock_s"] = time.perf_counter() - started
        return self.trace


def run_vanilla(
    query: str,
    idx: VectorIndex,
    embedder: EmbedBackend,
    gen: ChatBackend,
    chunk_texts: Mapping[str, str],
    k: int = DEFAULT_K,
    query_id: str = "",
) -> RagTrace:
    """Retrieve once, generate once."""
    started = time.perf_counter()
    rt = _Runtime(idx, embedder, gen, chunk_texts, RagTrace(query_id, "vanilla"))
    kept = rt.retrieve(query, k)
    answer = rt.ask("rag_answer", query=query, evidence=rt.evidence_text(kept))
    rt.trace.add("generate", answer=answer)
    rt.trace.final_answer = answer
    return rt.finish(started)


def run_rr(
    query: str,
    idx: VectorIndex,
    embedder: EmbedBackend,
    gen: ChatBackend,
    chunk_texts: Mapping[str, str],
    k_per_subquery: int = DEFAULT_K,
    keep: int = RR_KEEP,
    query_id: str = "",
) -> RagTrace:
    """Plan sub-queries, retrieve per sub-query, re-rank the union, generate.

    Re-ranking uses each chunk's maximum cosine score across sub-queries;
    the aggregation rule is recorded in the plan payload.
    """
    started = time.perf_counter()
    rt = _Runtime(idx, embedder, gen, chunk_texts, RagTrace(query_id, "rr"))

    reply = rt.ask("rr_plan", query=query)
    parsed = parse_json_reply(reply)
    sub_queries = [str(q) for q in parsed if str(q).strip()] if isinstance(parsed, list) else []
    if not sub_queries:
        sub_queries = [query]
    rt.trace.add("plan", sub_queries=sub_queries, rerank="max_cosine_across_subqueries")

    best: dict[str, float] = {}
    for sub in sub_queries:
        results = search(idx, sub, k_per_subquery, embedder)
        rt.trace.add(
            "retrieve",
            query=sub,
            k=k_per_subquery,
            results=[{"chunk_id": c, "score": s} for c, s in results],
        )
        rt.trace.note_retrieved([c for c, _ in results])
        for chunk_id, score in results:
            if chunk_id not in best or score > best[chunk_id]:
                best[chunk_id] = score
    ranked = sorted(best.items(), key=lambda item: (-item[1], item[0]))
    kept_ids = [chunk_id for chunk_id, _ in ranked[:keep]]
    rt.evidence = kept_ids
    rt.trace.add("aggregate", kept=kept_ids, considered=len(best))

    answer = rt.ask("rag_answer", query=query, evidence=rt.evidence_text(kept_ids))
    rt.trace.add("generate", answer=answer)
    rt.trace.final_answer = answer
    return rt.finish(started)


def run_flare(
    query: str,
    idx: VectorIndex,
    embedder: EmbedBackend,
    gen: ChatBackend,
    chunk_texts: Mapping[str, str],
    k: int = DEFAULT_K,
    max_iter: int = DEFAULT_MAX_ITER,
    query_id: str = "",
) -> RagTrace:
    """Draft a sentence, verify it with a retrieval, repeat until done or cap."""
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    started = time.perf_counter()
    rt = _Runtime(idx, embedder, gen, chunk_texts, RagTrace(query_id, "flare"))

    draft: list[str] = []
    while rt.trace.retrieve_count() < max_iter:
        sentence = rt.ask(
            "flare_step",
            query=query,
            evidence=rt.evidence_text(),
            draft="\n".join(draft) or "(none)",
        )
        rt.trace.add("generate", sentence=sentence)
        if DONE_MARKER in sentence:
            rt.trace.add("judge_continue", go_on=False, reason="planner done marker")
            break
        draft.append(sentence)
        rt.retrieve(sentence, k)
        rt.trace.add("judge_continue", go_on=True, reason="draft sentence pending")

    answer = rt.ask("rag_answer", query=query, evidence=rt.evidence_text())
    rt.trace.add("generate", answer=answer)
    rt.trace.final_answer = answer
    return rt.finish(started)


def run_react(
    query: str,
    idx: VectorIndex,
    embedder: EmbedBackend,
    gen: ChatBackend,
    chunk_texts: Mapping[str, str],
    k: int = DEFAULT_K,
    max_iter: int = DEFAULT_MAX_ITER,
    query_id: str = "",
) -> RagTrace:
    """Planner-driven loop: RETRIEVE[q] / AGGREGATE / STOP[answer].

    Every planner emission counts as one interaction, including unparseable
    ones (which trigger a reprompt). At the cap without a STOP, the engine
    forces a final generation from whatever was gathered.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    started = time.perf_counter()
    rt = _Runtime(idx, embedder, gen, chunk_texts, RagTrace(query_id, "react"))

    history: list[str] = []
    answer: str | None = None
    for _ in range(max_iter):
        action = rt.ask(
            "react_step",
            query=query,
            evidence=rt.evidence_text(),
            history="\n".join(history) or "(none)",
        )
        match = _REACT_ACTION.match(action)
        if match and match.group(1) == "RETRIEVE":
            rt.trace.add("plan", action="retrieve", raw=action)
            rt.retrieve(match.group(2).strip(), k)
            history.append(f"RETRIEVE -> {rt.trace.retrieve_count()} retrievals so far")
        elif match and match.group(1) == "STOP":
            rt.trace.add("plan", action="stop", raw=action)
            answer = match.group(2).strip()
            break
        elif action.strip().upper().startswith("AGGREGATE"):
            rt.trace.add("plan", action="aggregate", raw=action)
            rt.trace.add("aggregate", kept=list(rt.evidence))
            history.append("AGGREGATE")
        else:
            rt.trace.add("plan", action="unparseable", raw=action)
            history.append("Your last action was malformed; emit exactly one valid action.")

    if answer is None:
        answer = rt.ask("rag_answer", query=query, evidence=rt.evidence_text())
    rt.trace.add("generate", answer=answer)
    rt.trace.final_answer = answer
    return rt.finish(started)


ENGINES = {
    "vanilla": run_vanilla,
    "rr": run_rr,
    "flare": run_flare,
    "react": run_react,
}
