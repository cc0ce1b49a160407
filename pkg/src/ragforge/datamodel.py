"""Core dataset algebra: clues, answers, and the mappings that tie them together.

A query's evidence is expressed in two layers: answer sentences cite clues,
and each clue carries the (chunk, sentence) pairs that support it. Gold
documents and gold sentences for a query are derived by chasing those two
mappings, never stored redundantly. ``validate`` re-checks every structural
invariant so corrupted or hand-edited records are caught before training or
evaluation consumes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import Chunk
from .errors import DanglingClue, TooManyHops
from .jsonio import read_jsonl, write_jsonl

TOOL_VERSION = "0.1.0"

MAX_VARIANT_HOPS = 6


@dataclass(frozen=True)
class ClueSupport:
    """Provenance of one clue: the chunks and sentences that back it."""

    docs: frozenset[str]
    sentence_refs: tuple[tuple[str, str], ...]  # (chunk_id, sent_id) pairs


@dataclass(frozen=True)
class Clue:
    clue_id: str
    statement: str
    support: ClueSupport


@dataclass(frozen=True)
class AnswerSentence:
    text: str
    clue_ids: tuple[str, ...]


@dataclass(frozen=True)
class AnswerVariant:
    """Answer form when ``missing_docs`` are absent from retrieval."""

    missing_docs: frozenset[str]
    text: tuple[AnswerSentence, ...]


@dataclass(frozen=True)
class QARecord:
    query_id: str
    query: str
    hop_count: int
    clues: tuple[Clue, ...]
    standard_answer: tuple[AnswerSentence, ...]
    variants: tuple[AnswerVariant, ...] = ()
    rubric: tuple[str, ...] = ()
    lineage: tuple[str, ...] = ()

    def clue_by_id(self) -> dict[str, Clue]:
        return {c.clue_id: c for c in self.clues}

    def answer_text(self) -> str:
        return " ".join(s.text for s in self.standard_answer)


def cited_clue_ids(rec: QARecord) -> list[str]:
    """Clue ids referenced by the standard answer, in first-citation order."""
    seen: list[str] = []
    for sent in rec.standard_answer:
        for cid in sent.clue_ids:
            if cid not in seen:
                seen.append(cid)
    return seen


def derive_gold_docs(rec: QARecord) -> set[str]:
    """Union of supporting chunks over every clue the answer cites."""
    clues = rec.clue_by_id()
    gold: set[str] = set()
    for cid in cited_clue_ids(rec):
        if cid not in clues:
            raise DanglingClue(f"{rec.query_id}: answer cites unknown clue {cid!r}")
        gold |= clues[cid].support.docs
    return gold


def derive_gold_sentences(rec: QARecord) -> set[tuple[str, str]]:
    """Union of (chunk_id, sent_id) pairs over every cited clue."""
    clues = rec.clue_by_id()
    gold: set[tuple[str, str]] = set()
    for cid in cited_clue_ids(rec):
        if cid not in clues:
            raise DanglingClue(f"{rec.query_id}: answer cites unknown clue {cid!r}")
        gold.update(clues[cid].support.sentence_refs)
    return gold


def variant_subsets(p: int) -> list[frozenset[int]]:
    """All nonempty subsets of {0..p-1}, in ascending bitmask order."""
    if p < 1:
        raise ValueError(f"hop count must be positive, got {p}")
    if p > MAX_VARIANT_HOPS:
        raise TooManyHops(f"{p} hops would need {2 ** p - 1} variants (cap {MAX_VARIANT_HOPS})")
    subsets = []
    for mask in range(1, 1 << p):
        subsets.append(frozenset(i for i in range(p) if mask & (1 << i)))
    return subsets


# --- validation --------------------------------------------------------------

DANGLING_CLUE = "dangling_clue"
UNRESOLVABLE_REF = "unresolvable_ref"
SUPPORT_DOCS_MISMATCH = "support_docs_mismatch"
EMPTY_SUPPORT = "empty_support"
EMPTY_CLUE_IDS = "empty_clue_ids"
DUPLICATE_CLUE_ID = "duplicate_clue_id"
HOP_COUNT_MISMATCH = "hop_count_mismatch"
VARIANT_COUNT_MISMATCH = "variant_count_mismatch"
VARIANT_MISSING_DOCS_INVALID = "variant_missing_docs_invalid"
VARIANT_MISSING_DOC_CITATION = "variant_missing_doc_citation"


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


@dataclass
class ValidationReport:
    query_id: str
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def add(self, kind: str, message: str) -> None:
        self.violations.append(Violation(kind, message))


def validate(rec: QARecord, corpus: Mapping[str, Chunk]) -> ValidationReport:
    """Check every structural invariant; violations become report entries.

    An empty report means the record is well-formed against the given chunk
    index. Nothing raises: even badly broken records produce a full report.
    """
    report = ValidationReport(rec.query_id)
    clues = {}
    for clue in rec.clues:
        if clue.clue_id in clues:
            report.add(DUPLICATE_CLUE_ID, f"clue_id {clue.clue_id!r} appears twice")
        clues[clue.clue_id] = clue
        _check_support(clue, corpus, report)

    for sent in rec.standard_answer:
        if not sent.clue_ids:
            report.add(EMPTY_CLUE_IDS, f"answer sentence {sent.text[:40]!r} cites no clues")
        for cid in sent.clue_ids:
            if cid not in clues:
                report.add(DANGLING_CLUE, f"answer cites unknown clue {cid!r}")

    gold: set[str] | None = None
    if DANGLING_CLUE not in report.kinds():
        gold = set()
        for cid in cited_clue_ids(rec):
            gold |= clues[cid].support.docs
        if rec.hop_count != len(gold):
            report.add(
                HOP_COUNT_MISMATCH,
                f"hop_count {rec.hop_count} != {len(gold)} derived gold docs",
            )

    if rec.variants and gold is not None:
        expected = 2 ** len(gold) - 1 if gold else 0
        if len(rec.variants) != expected:
            report.add(
                VARIANT_COUNT_MISMATCH,
                f"{len(rec.variants)} variants, expected {expected}",
            )
        for variant in rec.variants:
            _check_variant(variant, gold, clues, report)
    return report


def _check_support(clue: Clue, corpus: Mapping[str, Chunk], report: ValidationReport) -> None:
    sup = clue.support
    if not sup.sentence_refs:
        report.add(EMPTY_SUPPORT, f"clue {clue.clue_id!r} has no sentence refs")
    if sup.docs != {chunk_id for chunk_id, _ in sup.sentence_refs}:
        report.add(
            SUPPORT_DOCS_MISMATCH,
            f"clue {clue.clue_id!r}: docs set disagrees with sentence_refs",
        )
    for chunk_id, sent_id in sup.sentence_refs:
        chunk = corpus.get(chunk_id)
        if chunk is None:
            report.add(UNRESOLVABLE_REF, f"clue {clue.clue_id!r}: unknown chunk {chunk_id!r}")
        elif sent_id not in {s.sent_id for s in chunk.sentences}:
            report.add(
                UNRESOLVABLE_REF,
                f"clue {clue.clue_id!r}: no sentence {sent_id!r} in chunk {chunk_id!r}",
            )


def _check_variant(
    variant: AnswerVariant,
    gold: set[str],
    clues: Mapping[str, Clue],
    report: ValidationReport,
) -> None:
    if not variant.missing_docs or not variant.missing_docs <= gold:
        report.add(
            VARIANT_MISSING_DOCS_INVALID,
            f"missing_docs {sorted(variant.missing_docs)} is not a nonempty subset of gold",
        )
        return
    for sent in variant.text:
        for cid in sent.clue_ids:
            clue = clues.get(cid)
            if clue is None:
                report.add(DANGLING_CLUE, f"variant cites unknown clue {cid!r}")
            elif clue.support.docs <= variant.missing_docs:
                report.add(
                    VARIANT_MISSING_DOC_CITATION,
                    f"variant missing {sorted(variant.missing_docs)} cites clue "
                    f"{cid!r} whose support is entirely missing",
                )


# --- serialization ------------------------------------------------------------

def record_to_dict(rec: QARecord) -> dict:
    return {
        "query_id": rec.query_id,
        "query": rec.query,
        "hop_count": rec.hop_count,
        "clues": [
            {
                "clue_id": c.clue_id,
                "statement": c.statement,
                "support": {
                    "docs": sorted(c.support.docs),
                    "sentence_refs": [list(ref) for ref in c.support.sentence_refs],
                },
            }
            for c in rec.clues
        ],
        "standard_answer": [
            {"text": s.text, "clue_ids": list(s.clue_ids)} for s in rec.standard_answer
        ],
        "variants": [
            {
                "missing_docs": sorted(v.missing_docs),
                "text": [{"text": s.text, "clue_ids": list(s.clue_ids)} for s in v.text],
            }
            for v in rec.variants
        ],
        "rubric": list(rec.rubric),
        "lineage": list(rec.lineage),
    }


def record_from_dict(rec: dict) -> QARecord:
    def sentence(d: dict) -> AnswerSentence:
        return AnswerSentence(text=d["text"], clue_ids=tuple(d["clue_ids"]))

    return QARecord(
        query_id=rec["query_id"],
        query=rec["query"],
        hop_count=rec["hop_count"],
        clues=tuple(
            Clue(
                clue_id=c["clue_id"],
                statement=c["statement"],
                support=ClueSupport(
                    docs=frozenset(c["support"]["docs"]),
                    sentence_refs=tuple(tuple(ref) for ref in c["support"]["sentence_refs"]),
                ),
            )
            for c in rec["clues"]
        ),
        standard_answer=tuple(sentence(s) for s in rec["standard_answer"]),
        variants=tuple(
            AnswerVariant(
                missing_docs=frozenset(v["missing_docs"]),
                text=tuple(sentence(s) for s in v["text"]),
            )
            for v in rec["variants"]
        ),
        rubric=tuple(rec["rubric"]),
        lineage=tuple(rec["lineage"]),
    )


def save_dataset(
    path: str | Path,
    records: Iterable[QARecord],
    corpus_hash: str,
    config_hash: str,
) -> None:
    meta = {
        "type": "meta",
        "corpus_hash": corpus_hash,
        "config_hash": config_hash,
        "tool_version": TOOL_VERSION,
    }
    rows = [meta] + [record_to_dict(r) for r in records]
    write_jsonl(path, rows)


def load_dataset(path: str | Path) -> tuple[dict, list[QARecord]]:
    rows = list(read_jsonl(path))
    if not rows or rows[0].get("type") != "meta":
        raise ValueError(f"{path}: missing meta header record")
    return rows[0], [record_from_dict(r) for r in rows[1:]]
