"""Retrieval precision and judged answer-quality metrics.

Precision@k is pure set arithmetic over gold documents. The judged metrics
come in two granularities: per-gold-sentence coverage (the default), and an
optional rubric-points variant, plus a holistic single-verdict baseline.
Judge calls are cached by content hash so re-scoring a run is cheap.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .backends import ChatBackend, chat
from .corpus import Chunk
from .datamodel import QARecord, derive_gold_docs, derive_gold_sentences
from .errors import MissingRubric, UnknownQuery
from .prompts import render


@dataclass
class RetrievalRun:
    """Ranked chunk ids per query, as produced by an index or an engine."""

    results: list[tuple[str, list[str]]]  # (query_id, ranked chunk_ids)

    def __post_init__(self):
        for query_id, ranked in self.results:
            if len(set(ranked)) != len(ranked):
                raise ValueError(f"{query_id}: ranked list contains duplicates")


@dataclass(frozen=True)
class JudgeVerdict:
    query_id: str
    criteria: tuple[bool, ...]
    sentences: tuple[bool, ...]


def precision_per_query(
    run: RetrievalRun,
    dataset: Sequence[QARecord],
    k: int,
) -> list[tuple[str, float]]:
    """|top-k hits in gold| / k for each query; short results still divide by k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    by_id = {rec.query_id: rec for rec in dataset}
    rows = []
    for query_id, ranked in run.results:
        rec = by_id.get(query_id)
        if rec is None:
            raise UnknownQuery(f"run references unknown query {query_id!r}")
        gold = derive_gold_docs(rec)
        hits = sum(1 for chunk_id in ranked[:k] if chunk_id in gold)
        rows.append((query_id, hits / k))
    return rows


def precision_at_k(run: RetrievalRun, dataset: Sequence[QARecord], k: int) -> float:
    rows = precision_per_query(run, dataset, k)
    if not rows:
        return 0.0
    return sum(v for _, v in rows) / len(rows)


# --- judged metrics -----------------------------------------------------------

@dataclass
class VerdictCache:
    """Content-addressed YES/NO cache; identical judgments are never re-asked."""

    entries: dict[str, bool] = field(default_factory=dict)

    def key(self, answer: str, reference: str, rubric: str, model: str) -> str:
        blob = "\x1f".join((answer, reference, rubric, model))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def get(self, key: str) -> bool | None:
        return self.entries.get(key)

    def put(self, key: str, value: bool) -> None:
        self.entries[key] = value


def _yes(reply: str) -> bool:
    return reply.strip().upper().startswith("YES")


def judge_coverage(
    answers: Sequence[tuple[str, str]],
    dataset: Sequence[QARecord],
    judge: ChatBackend,
    corpus: Mapping[str, Chunk],
    rubric_points: bool = False,
    cache: VerdictCache | None = None,
) -> list[JudgeVerdict]:
    """Judge each answer against its record's gold sentences (and rubric).

    One judge call per (query, gold sentence); with ``rubric_points`` also one
    per rubric criterion. Verdicts are returned in input order and can be
    persisted for audit.
    """
    by_id = {rec.query_id: rec for rec in dataset}
    cache = cache or VerdictCache()
    verdicts = []
    for query_id, answer in answers:
        rec = by_id.get(query_id)
        if rec is None:
            raise UnknownQuery(f"answers reference unknown query {query_id!r}")
        if not rec.rubric:
            raise MissingRubric(f"{query_id}: record has no rubric")
        gold = sorted(derive_gold_sentences(rec))
        if not gold:
            raise MissingRubric(f"{query_id}: record has no gold sentences")
        rubric_text = "\n".join(rec.rubric)

        sentence_flags = []
        for chunk_id, sent_id in gold:
            sentence = _resolve_sentence(corpus, chunk_id, sent_id)
            key = cache.key(answer, sentence, rubric_text, judge.model_name)
            hit = cache.get(key)
            if hit is None:
                system, user, _ = render(
                    "judge_sentence", rubric=rubric_text, sentence=sentence, answer=answer,
                )
                hit = _yes(chat(judge, system, user, seed=0, tag="judge_sentence"))
                cache.put(key, hit)
            sentence_flags.append(hit)

        criterion_flags = []
        if rubric_points:
            for criterion in rec.rubric:
                key = cache.key(answer, criterion, "criterion", judge.model_name)
                hit = cache.get(key)
                if hit is None:
                    system, user, _ = render(
                        "judge_criterion",
                        criterion=criterion,
                        reference=rec.answer_text(),
                        answer=answer,
                    )
                    hit = _yes(chat(judge, system, user, seed=0, tag="judge_criterion"))
                    cache.put(key, hit)
                criterion_flags.append(hit)

        verdicts.append(JudgeVerdict(
            query_id=query_id,
            criteria=tuple(criterion_flags),
            sentences=tuple(sentence_flags),
        ))
    return verdicts


def _resolve_sentence(corpus: Mapping[str, Chunk], chunk_id: str, sent_id: str) -> str:
    chunk = corpus.get(chunk_id)
    if chunk is None:
        raise UnknownQuery(f"gold sentence in unknown chunk {chunk_id!r}")
    for span in chunk.sentences:
        if span.sent_id == sent_id:
            return chunk.sentence_text(span)
    raise UnknownQuery(f"no sentence {sent_id!r} in chunk {chunk_id!r}")


def csg_from_verdicts(verdicts: Sequence[JudgeVerdict]) -> float:
    """Mean per-query fraction of gold sentences the judge confirmed."""
    if not verdicts:
        return 0.0
    total = 0.0
    for v in verdicts:
        if not v.sentences:
            raise MissingRubric(f"{v.query_id}: verdict has no sentence flags")
        total += sum(v.sentences) / len(v.sentences)
    return total / len(verdicts)


def rubric_score_from_verdicts(verdicts: Sequence[JudgeVerdict]) -> float:
    """Mean per-query fraction of rubric points awarded."""
    scored = [v for v in verdicts if v.criteria]
    if not scored:
        return 0.0
    return sum(sum(v.criteria) / len(v.criteria) for v in scored) / len(scored)


def csg(
    answers: Sequence[tuple[str, str]],
    dataset: Sequence[QARecord],
    judge: ChatBackend,
    corpus: Mapping[str, Chunk],
    cache: VerdictCache | None = None,
) -> float:
    """Criteria-guided sentence-coverage score in [0, 1]."""
    return csg_from_verdicts(judge_coverage(answers, dataset, judge, corpus, cache=cache))


def lj(
    answers: Sequence[tuple[str, str]],
    dataset: Sequence[QARecord],
    judge: ChatBackend,
) -> float:
    """Holistic aligned/not-aligned verdict per query, averaged."""
    by_id = {rec.query_id: rec for rec in dataset}
    if not answers:
        return 0.0
    total = 0
    for query_id, answer in answers:
        rec = by_id.get(query_id)
        if rec is None:
            raise UnknownQuery(f"answers reference unknown query {query_id!r}")
        system, user, _ = render(
            "judge_holistic", query=rec.query, reference=rec.answer_text(), answer=answer,
        )
        if _yes(chat(judge, system, user, seed=0, tag="judge_holistic")):
            total += 1
    return total / len(answers)


def verdict_rows(verdicts: Sequence[JudgeVerdict]) -> list[dict]:
    """JSONL-ready audit rows."""
    return [
        {
            "query_id": v.query_id,
            "sentences": list(v.sentences),
            "criteria": list(v.criteria),
        }
        for v in verdicts
    ]
