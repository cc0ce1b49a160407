"""Shared fixture builders: synthetic corpora, record fuzzing, oracles."""

from __future__ import annotations

import random

from ragforge.corpus import Chunk, split_sentences
from ragforge.datamodel import (
    AnswerSentence,
    AnswerVariant,
    Clue,
    ClueSupport,
    QARecord,
    variant_subsets,
)

WORDS = (
    "keep", "vale", "ledger", "garrison", "cipher", "archive", "bridge",
    "harbor", "signal", "granary", "tower", "route", "charter", "relay",
)


def make_chunk(chunk_id: str, n_sentences: int, rng: random.Random) -> Chunk:
    sentences = []
    for j in range(n_sentences):
        noun = rng.choice(WORDS).capitalize()
        other = rng.choice(WORDS)
        sentences.append(f"{noun} fact {chunk_id.replace('#', '-')}-{j} concerns the {other}.")
    text = " ".join(sentences)
    return Chunk(
        chunk_id=chunk_id,
        doc_id=chunk_id.split("#")[0],
        start=0,
        end=len(text),
        text=text,
        sentences=tuple(split_sentences(text, chunk_id)),
    )


def make_chunk_map(n_chunks: int, rng: random.Random, sentences_per_chunk: int = 4):
    chunks = [make_chunk(f"d{i}#0", sentences_per_chunk, rng) for i in range(n_chunks)]
    return {c.chunk_id: c for c in chunks}


def make_valid_record(
    rng: random.Random,
    chunk_map: dict[str, Chunk],
    p: int | None = None,
    with_variants: bool | None = None,
) -> QARecord:
    """A structurally valid record with p gold chunks and full provenance."""
    p = p or rng.randint(1, min(4, len(chunk_map)))
    gold = rng.sample(sorted(chunk_map), p)

    # Cover the gold set with 1-2 clues per chunk; some clues span two chunks.
    clues: list[Clue] = []
    for i, chunk_id in enumerate(gold):
        span_ids = [chunk_id]
        if p > 1 and rng.random() < 0.3:
            span_ids.append(gold[(i + 1) % p])
        refs = []
        for cid in span_ids:
            spans = chunk_map[cid].sentences
            for span in rng.sample(spans, rng.randint(1, min(2, len(spans)))):
                refs.append((cid, span.sent_id))
        refs = sorted(set(refs))
        clues.append(Clue(
            clue_id=f"c{i}",
            statement=f"Statement {i} drawn from {' and '.join(span_ids)}.",
            support=ClueSupport(
                docs=frozenset(cid for cid, _ in refs),
                sentence_refs=tuple(refs),
            ),
        ))

    # Answer sentences jointly cite every clue.
    clue_ids = [c.clue_id for c in clues]
    rng.shuffle(clue_ids)
    answer = []
    while clue_ids:
        take = rng.randint(1, min(2, len(clue_ids)))
        cited = tuple(clue_ids[:take])
        del clue_ids[:take]
        answer.append(AnswerSentence(
            text=f"Answer part citing {','.join(cited)}.", clue_ids=cited,
        ))

    gold_set = set()
    for c in clues:
        gold_set |= c.support.docs
    rec = QARecord(
        query_id=f"q-{rng.randrange(10 ** 9):09d}",
        query=f"What links {' and '.join(sorted(gold_set))}?",
        hop_count=len(gold_set),
        clues=tuple(clues),
        standard_answer=tuple(answer),
        rubric=tuple(
            f"Award 1 point if the response covers statement {i}." for i in range(len(clues))
        ),
        lineage=("gen",),
    )
    if with_variants is None:
        with_variants = rng.random() < 0.5
    if with_variants:
        rec = attach_variants(rec)
    return rec


def attach_variants(rec: QARecord) -> QARecord:
    from dataclasses import replace

    gold = sorted({d for c in rec.clues for d in c.support.docs})
    variants = []
    for subset in variant_subsets(len(gold)):
        missing = frozenset(gold[i] for i in subset)
        surviving = [c for c in rec.clues if not c.support.docs <= missing]
        if surviving:
            text = tuple(
                AnswerSentence(text=f"Partial answer via {c.clue_id}.", clue_ids=(c.clue_id,))
                for c in surviving
            )
        else:
            text = (AnswerSentence(text="The answer cannot be determined.", clue_ids=()),)
        variants.append(AnswerVariant(missing_docs=missing, text=text))
    return replace(rec, variants=tuple(variants))


# --- brute-force oracles (kept independent of the library implementations) ---

def brute_gold_docs(rec: QARecord) -> set[str]:
    cited = set()
    for sent in rec.standard_answer:
        for cid in sent.clue_ids:
            cited.add(cid)
    out = set()
    for clue in rec.clues:
        if clue.clue_id in cited:
            for chunk_id, _ in clue.support.sentence_refs:
                out.add(chunk_id)
            out.update(clue.support.docs)
    return out


def brute_gold_sentences(rec: QARecord) -> set[tuple[str, str]]:
    cited = set()
    for sent in rec.standard_answer:
        for cid in sent.clue_ids:
            cited.add(cid)
    out = set()
    for clue in rec.clues:
        if clue.clue_id in cited:
            for ref in clue.support.sentence_refs:
                out.add(ref)
    return out


# --- single-corruption mutations, keyed by the violation they must trigger ---

def corruption_kinds(rec: QARecord) -> list[str]:
    from ragforge import datamodel as dm

    kinds = [dm.DANGLING_CLUE, dm.UNRESOLVABLE_REF, dm.SUPPORT_DOCS_MISMATCH,
             dm.HOP_COUNT_MISMATCH, dm.EMPTY_CLUE_IDS, dm.EMPTY_SUPPORT]
    if len(rec.clues) >= 2:
        kinds.append(dm.DUPLICATE_CLUE_ID)
    if rec.variants:
        kinds.append(dm.VARIANT_MISSING_DOCS_INVALID)
        kinds.append(dm.VARIANT_MISSING_DOC_CITATION)
        if len(rec.variants) >= 2:
            kinds.append(dm.VARIANT_COUNT_MISMATCH)
    return kinds


def corrupt(rec: QARecord, kind: str, rng: random.Random, chunk_map) -> QARecord:
    """Apply exactly one corruption of the given violation class."""
    from dataclasses import replace

    from ragforge import datamodel as dm

    if kind == dm.DANGLING_CLUE:
        sent = rec.standard_answer[0]
        bad = replace_tuple(rec.standard_answer, 0,
                            AnswerSentence(sent.text, ("c-missing",) + sent.clue_ids[1:]))
        return replace(rec, standard_answer=bad)
    if kind == dm.UNRESOLVABLE_REF:
        clue = rec.clues[0]
        chunk_id, _ = clue.support.sentence_refs[0]
        refs = ((chunk_id, "nope@99"),) + clue.support.sentence_refs[1:]
        support = ClueSupport(docs=frozenset(c for c, _ in refs), sentence_refs=refs)
        return replace(rec, clues=replace_tuple(rec.clues, 0, replace(clue, support=support)))
    if kind == dm.SUPPORT_DOCS_MISMATCH:
        clue = rec.clues[0]
        extra = next(c for c in sorted(chunk_map) if c not in clue.support.docs)
        support = ClueSupport(docs=clue.support.docs | {extra},
                              sentence_refs=clue.support.sentence_refs)
        return replace(rec, clues=replace_tuple(rec.clues, 0, replace(clue, support=support)))
    if kind == dm.HOP_COUNT_MISMATCH:
        return replace(rec, hop_count=rec.hop_count + 1)
    if kind == dm.EMPTY_CLUE_IDS:
        sent = rec.standard_answer[0]
        bad = replace_tuple(rec.standard_answer, 0, AnswerSentence(sent.text, ()))
        return replace(rec, standard_answer=bad)
    if kind == dm.EMPTY_SUPPORT:
        clue = rec.clues[0]
        support = ClueSupport(docs=frozenset(), sentence_refs=())
        return replace(rec, clues=replace_tuple(rec.clues, 0, replace(clue, support=support)))
    if kind == dm.DUPLICATE_CLUE_ID:
        clone = replace(rec.clues[1], clue_id=rec.clues[0].clue_id)
        return replace(rec, clues=replace_tuple(rec.clues, 1, clone))
    if kind == dm.VARIANT_COUNT_MISMATCH:
        return replace(rec, variants=rec.variants[:-1])
    if kind == dm.VARIANT_MISSING_DOCS_INVALID:
        bad = replace(rec.variants[0], missing_docs=frozenset())
        return replace(rec, variants=replace_tuple(rec.variants, 0, bad))
    if kind == dm.VARIANT_MISSING_DOC_CITATION:
        # The last variant misses every gold doc: citing any clue is illegal.
        offender = rec.variants[-1]
        bad = replace(offender, text=(
            AnswerSentence("Illegally cites a missing clue.", (rec.clues[0].clue_id,)),
        ))
        return replace(rec, variants=replace_tuple(rec.variants, len(rec.variants) - 1, bad))
    raise ValueError(f"no corruption for kind {kind!r}")


def replace_tuple(items: tuple, index: int, value) -> tuple:
    out = list(items)
    out[index] = value
    return tuple(out)
