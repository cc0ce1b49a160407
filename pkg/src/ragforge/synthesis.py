"""Question synthesis: single/multi-hop generation, rewrites, and variants.

Generation is prompt-driven and backend-agnostic; every accepted record is
re-validated against the chunk index before it leaves this module. Rewrite
rules and completeness levels only ever touch the query text (and, for the
unanswerable rule, the rubric): the clue set, mappings, and therefore the
derived gold sets are invariant under every transformation.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .backends import ChatBackend, chat, parse_json_reply
from .corpus import Chunk
from .datamodel import (
    AnswerSentence,
    AnswerVariant,
    Clue,
    QARecord,
    derive_gold_docs,
    derive_gold_sentences,
    validate,
    variant_subsets,
)
from .errors import DegenerateHop, InvalidConfig, RejectedGeneration
from .jsonio import stable_seed
from .prompts import render, template_hash

log = logging.getLogger(__name__)

RULE_IDS = (
    "paraphrase",
    "metaphor",
    "add_constraint",
    "introduce_ambiguity",
    "split_subquestion",
    "inject_unanswerable",
)

COMPLETENESS_LEVELS = ("full", "drop_one_clue", "single_clue")

# Initial attempt plus this many regenerations before giving up on a record.
REGEN_ATTEMPTS = 2


@dataclass(frozen=True)
class TransformRule:
    rule_id: str
    prompt_template_id: str

    @classmethod
    def named(cls, rule_id: str) -> "TransformRule":
        if rule_id not in RULE_IDS:
            raise InvalidConfig(f"unknown transform rule {rule_id!r}")
        return cls(rule_id=rule_id, prompt_template_id=f"transform_{rule_id}")


@dataclass(frozen=True)
class CompletenessLevel:
    level: str

    def __post_init__(self):
        if self.level not in COMPLETENESS_LEVELS:
            raise InvalidConfig(f"unknown completeness level {self.level!r}")


def _clues_json(clues: Sequence[Clue]) -> str:
    return json.dumps(
        [{"clue_id": c.clue_id, "statement": c.statement} for c in clues],
        ensure_ascii=False,
    )


def _parse_answer(raw: object, allowed_ids: set[str], require_citation: bool) -> tuple[AnswerSentence, ...] | None:
    if not isinstance(raw, list) or not raw:
        return None
    sentences = []
    for item in raw:
        if not isinstance(item, dict):
            return None
        text = str(item.get("text", "")).strip()
        cited = item.get("clues", [])
        if not text or not isinstance(cited, list):
            return None
        ids = tuple(str(c) for c in cited)
        if any(c not in allowed_ids for c in ids):
            return None
        if require_citation and not ids:
            return None
        sentences.append(AnswerSentence(text=text, clue_ids=ids))
    return tuple(sentences)


def _normalize_rubric(raw: object, cap: int) -> tuple[str, ...]:
    criteria = []
    if isinstance(raw, list):
        for item in raw:
            text = str(item).strip()
            if not text:
                continue
            if not text.lower().startswith("award 1 point"):
                text = f"Award 1 point if the response satisfies: {text}"
            criteria.append(text)
    return tuple(criteria[:cap])


def _generate_record(
    query_id: str,
    clues: Sequence[Clue],
    backend: ChatBackend,
    seed: int,
    corpus: Mapping[str, Chunk],
    template_id: str,
    lineage_entry: str,
    require_all_clues: bool,
) -> QARecord:
    system, user, _ = render(template_id, clues_json=_clues_json(clues))
    allowed = {c.clue_id for c in clues}
    last_reason = "no attempts made"
    for attempt in range(1 + REGEN_ATTEMPTS):
        reply = chat(backend, system, user, seed=seed + attempt, tag=template_id)
        parsed = parse_json_reply(reply)
        if not isinstance(parsed, dict):
            last_reason = "reply is not a JSON object"
            continue
        question = str(parsed.get("question", "")).strip()
        answer = _parse_answer(parsed.get("answer"), allowed, require_citation=True)
        if not question or answer is None:
            last_reason = "missing question or malformed answer"
            continue
        if require_all_clues:
            cited = {cid for sent in answer for cid in sent.clue_ids}
            if cited != allowed:
                raise DegenerateHop(
                    f"{query_id}: answer cites {sorted(cited)} but was given {sorted(allowed)}"
                )
        rec = QARecord(
            query_id=query_id,
            query=question,
            hop_count=0,  # placeholder until gold docs are derived
            clues=tuple(clues),
            standard_answer=answer,
            rubric=_normalize_rubric(parsed.get("rubric"), cap=_rubric_cap(clues, answer)),
            lineage=(lineage_entry,),
        )
        rec = _with_hop_count(rec)
        report = validate(rec, corpus)
        if not rec.rubric:
            last_reason = "empty rubric"
            continue
        if report.ok:
            return rec
        last_reason = "; ".join(v.message for v in report.violations[:3])
    raise RejectedGeneration(f"{query_id}: {last_reason}")


def _with_hop_count(rec: QARecord) -> QARecord:
    from dataclasses import replace

    return replace(rec, hop_count=len(derive_gold_docs(rec)))


def _rubric_cap(clues: Sequence[Clue], answer: tuple[AnswerSentence, ...]) -> int:
    cited = {cid for sent in answer for cid in sent.clue_ids}
    refs = set()
    for clue in clues:
        if clue.clue_id in cited:
            refs.update(clue.support.sentence_refs)
    return max(1, len(refs) + 1)


def gen_single_hop(
    clue: Clue,
    backend: ChatBackend,
    seed: int,
    corpus: Mapping[str, Chunk],
    query_id: str | None = None,
) -> QARecord:
    """One straightforward question answered by a single clue."""
    qid = query_id or f"q-{stable_seed('single', clue.clue_id, seed) % 10 ** 12:012d}"
    return _generate_record(
        qid, [clue], backend, seed, corpus,
        template_id="single_hop", lineage_entry="gen_single_hop",
        require_all_clues=False,
    )


def gen_multi_hop(
    clues: Sequence[Clue],
    backend: ChatBackend,
    seed: int,
    corpus: Mapping[str, Chunk],
    query_id: str | None = None,
) -> QARecord:
    """One question that needs every supplied clue.

    The answer must cite all clues; otherwise the question did not really
    span its hops and ``DegenerateHop`` is raised.
    """
    spanned = {doc for c in clues for doc in c.support.docs}
    if len(spanned) < 2:
        raise InvalidConfig("multi-hop generation needs clues spanning >= 2 chunks")
    qid = query_id or (
        f"q-{stable_seed('multi', *sorted(c.clue_id for c in clues), seed) % 10 ** 12:012d}"
    )
    return _generate_record(
        qid, list(clues), backend, seed, corpus,
        template_id="multi_hop", lineage_entry="gen_multi_hop",
        require_all_clues=True,
    )


def apply_transform(
    rec: QARecord,
    rule: TransformRule,
    backend: ChatBackend,
    seed: int,
) -> QARecord:
    """Rewrite the query per one rule; evidence and gold sets never change."""
    from dataclasses import replace

    system, user, _ = render(rule.prompt_template_id, query=rec.query)
    needs_extra = rule.rule_id == "inject_unanswerable"
    last_reason = "no attempts made"
    for attempt in range(1 + REGEN_ATTEMPTS):
        reply = chat(backend, system, user, seed=seed + attempt, tag=rule.prompt_template_id)
        parsed = parse_json_reply(reply)
        if not isinstance(parsed, dict):
            last_reason = "reply is not a JSON object"
            continue
        query = str(parsed.get("query", "")).strip()
        if not query:
            last_reason = "missing rewritten query"
            continue
        extra = str(parsed.get("extra_criterion", "")).strip()
        if needs_extra and not extra:
            last_reason = "missing unanswerable-part criterion"
            continue
        rubric = rec.rubric + (extra,) if needs_extra else rec.rubric
        return replace(rec, query=query, rubric=rubric, lineage=rec.lineage + (rule.rule_id,))
    raise RejectedGeneration(f"{rec.query_id}: {rule.rule_id}: {last_reason}")


def apply_completeness(
    rec: QARecord,
    level: CompletenessLevel,
    backend: ChatBackend,
    seed: int,
) -> QARecord:
    """Regenerate the query from a clue subset; labels stay on full evidence."""
    from dataclasses import replace

    rng = random.Random(seed)
    clues = list(rec.clues)
    if level.level == "full":
        retained = clues
    elif level.level == "drop_one_clue":
        if len(clues) < 2:
            raise InvalidConfig("drop_one_clue needs >= 2 clues")
        dropped_clue = rng.choice(clues)
        retained = [c for c in clues if c.clue_id != dropped_clue.clue_id]
    else:  # single_clue
        if len(clues) < 2:
            raise InvalidConfig("single_clue needs >= 2 clues")
        kept = rng.choice(clues)
        retained = [kept]
    dropped = [c.clue_id for c in clues if c not in retained]

    system, user, _ = render("completeness", query=rec.query, clues_json=_clues_json(retained))
    last_reason = "no attempts made"
    for attempt in range(1 + REGEN_ATTEMPTS):
        reply = chat(backend, system, user, seed=seed + attempt, tag="completeness")
        parsed = parse_json_reply(reply)
        if isinstance(parsed, dict) and str(parsed.get("query", "")).strip():
            entry = f"completeness_{level.level}(dropped={','.join(dropped) or 'none'})"
            return replace(
                rec,
                query=str(parsed["query"]).strip(),
                lineage=rec.lineage + (entry,),
            )
        last_reason = "missing regenerated query"
    raise RejectedGeneration(f"{rec.query_id}: completeness: {last_reason}")


def gen_variants(
    rec: QARecord,
    backend: ChatBackend,
    seed: int,
) -> QARecord:
    """Attach one answer variant per nonempty subset of missing gold docs."""
    from dataclasses import replace

    gold = sorted(derive_gold_docs(rec))
    subsets = variant_subsets(len(gold))
    variants = []
    for mask_index, subset in enumerate(subsets):
        missing = frozenset(gold[i] for i in subset)
        surviving = [c for c in rec.clues if not c.support.docs <= missing]
        allowed = {c.clue_id for c in surviving}
        system, user, _ = render("variant", query=rec.query, clues_json=_clues_json(surviving))
        text: tuple[AnswerSentence, ...] | None = None
        last_reason = "no attempts made"
        for attempt in range(1 + REGEN_ATTEMPTS):
            reply = chat(
                backend, system, user,
                seed=seed + 31 * (mask_index + 1) + attempt, tag="variant",
            )
            parsed = parse_json_reply(reply)
            if not isinstance(parsed, dict):
                last_reason = "reply is not a JSON object"
                continue
            text = _parse_answer(parsed.get("answer"), allowed, require_citation=False)
            if text is not None:
                break
            last_reason = "malformed variant answer"
        if text is None:
            raise RejectedGeneration(f"{rec.query_id}: variant {sorted(missing)}: {last_reason}")
        variants.append(AnswerVariant(missing_docs=missing, text=text))
    return replace(rec, variants=tuple(variants))


def gen_rubric(rec: QARecord, backend: ChatBackend) -> tuple[str, ...]:
    """Draft scoring criteria, one awardable point each, capped at w_i + 1."""
    if not rec.standard_answer:
        raise InvalidConfig(f"{rec.query_id}: cannot draft a rubric without an answer")
    cap = len(derive_gold_sentences(rec)) + 1
    system, user, _ = render(
        "rubric", query=rec.query, answer=rec.answer_text(), max_criteria=str(cap),
    )
    reply = chat(backend, system, user, seed=stable_seed("rubric", rec.query_id), tag="rubric")
    criteria = _normalize_rubric(parse_json_reply(reply), cap=cap)
    if not criteria:
        criteria = (f"Award 1 point if the response conveys: {rec.answer_text()[:160]}",)
    return criteria


# --- batch orchestration ------------------------------------------------------

@dataclass
class SynthesisConfig:
    """Knobs for one synthesis run; hashed into every artifact it produces."""

    target_records: int = 20
    hop_mix: dict[int, float] = field(default_factory=lambda: {1: 0.6, 2: 0.3, 3: 0.1})
    max_transforms: int = 3
    completeness_prob: float = 0.5
    n_clues_per_chunk: int = 3
    max_degree: int = 50
    extraction_workers: int = 8

    def as_dict(self) -> dict:
        return {
            "target_records": self.target_records,
            "hop_mix": {str(k): v for k, v in self.hop_mix.items()},
            "max_transforms": self.max_transforms,
            "completeness_prob": self.completeness_prob,
            "n_clues_per_chunk": self.n_clues_per_chunk,
            "max_degree": self.max_degree,
        }


def synthesize(
    chunks: Sequence[Chunk],
    backend: ChatBackend,
    config: SynthesisConfig,
    seed: int,
) -> tuple[list[QARecord], dict]:
    """Run the full generation pipeline over a chunked corpus.

    Returns accepted records plus a manifest describing the run (seed,
    template hashes, transform schedule stats, per-hop counts). Rejected
    generations are logged and skipped; the run never aborts on one bad
    record.
    """
    from .graph import (
        build_graph,
        extract_all_clues,
        extract_all_entities,
        resolve_entities,
        sample_multihop_groups,
    )

    corpus = {c.chunk_id: c for c in chunks}
    clue_map = extract_all_clues(chunks, backend, max_workers=config.extraction_workers)
    all_clues = [c for chunk_id in sorted(clue_map) for c in clue_map[chunk_id]]

    mentions = extract_all_entities(all_clues, backend, max_workers=config.extraction_workers)
    graph = build_graph(resolve_entities(mentions))

    rng = random.Random(stable_seed("plan", seed))
    plan = _allocate(config.target_records, config.hop_mix)

    records: list[QARecord] = []
    rule_counts: dict[str, int] = {r: 0 for r in RULE_IDS}
    completeness_counts: dict[str, int] = {lvl: 0 for lvl in COMPLETENESS_LEVELS}

    for hops, wanted in plan:
        if wanted <= 0:
            continue
        if hops == 1:
            pool = list(all_clues)
            rng.shuffle(pool)
            made = 0
            for clue in pool:
                if made >= wanted:
                    break
                rec = _try(lambda: gen_single_hop(
                    clue, backend, stable_seed(seed, "gen", clue.clue_id), corpus,
                    query_id=f"q{len(records):04d}",
                ))
                if rec is not None:
                    records.append(rec)
                    made += 1
        else:
            groups = sample_multihop_groups(
                graph, hops=hops, count=wanted * 3,
                seed=stable_seed(seed, "groups", hops),
                max_degree=config.max_degree,
            )
            made = 0
            for group in groups:
                if made >= wanted:
                    break
                group_clues = _pick_group_clues(group, clue_map, rng)
                if group_clues is None:
                    continue
                rec = _try(lambda: gen_multi_hop(
                    group_clues, backend, stable_seed(seed, "gen", *group), corpus,
                    query_id=f"q{len(records):04d}",
                ))
                if rec is not None:
                    records.append(rec)
                    made += 1

    finished: list[QARecord] = []
    for rec in records:
        n_rules = rng.randint(0, config.max_transforms)
        schedule = rng.sample(RULE_IDS, k=min(n_rules, len(RULE_IDS)))
        for rule_id in schedule:
            out = _try(lambda: apply_transform(
                rec, TransformRule.named(rule_id), backend,
                stable_seed(seed, "rule", rule_id, rec.query_id),
            ))
            if out is not None:
                rec = out
                rule_counts[rule_id] += 1
        if len(rec.clues) >= 2 and rng.random() < config.completeness_prob:
            level = rng.choice(("drop_one_clue", "single_clue"))
            out = _try(lambda: apply_completeness(
                rec, CompletenessLevel(level), backend,
                stable_seed(seed, "completeness", rec.query_id),
            ))
            if out is not None:
                rec = out
                completeness_counts[level] += 1
        out = _try(lambda: gen_variants(rec, backend, stable_seed(seed, "variants", rec.query_id)))
        if out is not None:
            rec = out
        if validate(rec, corpus).ok:
            finished.append(rec)
        else:
            log.warning("%s: dropped, failed final validation", rec.query_id)

    manifest = {
        "seed": seed,
        "config": config.as_dict(),
        "template_hashes": {
            t: template_hash(t)
            for t in ("single_hop", "multi_hop", "completeness", "variant", "rubric")
        } | {f"transform_{r}": template_hash(f"transform_{r}") for r in RULE_IDS},
        "rule_schedule": rule_counts,
        "completeness_schedule": completeness_counts,
        "counts_per_hop": _hop_histogram(finished),
        "records": len(finished),
    }
    return finished, manifest


def _allocate(total: int, weights: Mapping[int, float]) -> list[tuple[int, int]]:
    """Largest-remainder split of ``total`` across hop counts; sums exactly."""
    norm = sum(weights.values())
    if total <= 0 or norm <= 0:
        return [(hops, 0) for hops in sorted(weights)]
    shares = {hops: total * weights[hops] / norm for hops in weights}
    counts = {hops: int(shares[hops]) for hops in weights}
    short = total - sum(counts.values())
    by_remainder = sorted(weights, key=lambda h: (-(shares[h] - counts[h]), h))
    for hops in by_remainder[:short]:
        counts[hops] += 1
    return [(hops, counts[hops]) for hops in sorted(weights)]


def _pick_group_clues(
    group: Sequence[str],
    clue_map: Mapping[str, list[Clue]],
    rng: random.Random,
) -> list[Clue] | None:
    picked = []
    for chunk_id in group:
        clues = clue_map.get(chunk_id, [])
        if not clues:
            return None
        picked.append(rng.choice(clues))
    return picked


def _hop_histogram(records: Sequence[QARecord]) -> dict[str, int]:
    hist: dict[str, int] = {}
    for rec in records:
        key = str(rec.hop_count)
        hist[key] = hist.get(key, 0) + 1
    return dict(sorted(hist.items()))


def _try(fn):
    try:
        return fn()
    except Exception as exc:  # noqa: BLE001 - batch runs skip bad records
        log.warning("generation step skipped: %s", exc)
        return None
