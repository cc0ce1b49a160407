"""Deterministic offline chat behaviors.

``offline_chat_backend`` returns a scripted backend whose replies are pure
functions of the prompt, so the entire pipeline (synthesis, RAG engines,
judging) runs end to end with no server and byte-identical outputs for a
fixed seed. Each handler parses the structured parts of its prompt template
and produces a minimal, extractive reply in the expected response format.
"""

from __future__ import annotations

import json
import re

from .backends import ChatBackend


def _sections(user: str, labels: tuple[str, ...]) -> dict[str, str]:
    """Split a rendered prompt into its labeled blocks."""
    marks = []
    for label in labels:
        pos = user.find(f"{label}:")
        if pos != -1:
            marks.append((pos, label))
    marks.sort()
    out = {}
    for i, (pos, label) in enumerate(marks):
        start = pos + len(label) + 1
        end = marks[i + 1][0] if i + 1 < len(marks) else len(user)
        out[label] = user[start:end].strip()
    return out


def _json_block(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return None


def _subject(statement: str) -> str:
    words = statement.rstrip(".!?").split()
    return " ".join(words[:8])


def _clue_extract(system: str, user: str, seed: int) -> str:
    body = _sections(user, ("Sentences",))["Sentences"]
    sentences = _json_block(body) or []
    items = [{"statement": s, "sentences": [i]} for i, s in enumerate(sentences) if s.strip()]
    return json.dumps(items, ensure_ascii=False)


_CAPITALIZED_RUN = re.compile(r"\b[A-Z][\w'-]*(?:\s+(?:of|the|de)\s+[A-Z][\w'-]*|\s+[A-Z][\w'-]*)*")

_ARTICLES = ("The", "A", "An")
_COMMON_STARTERS = frozenset({
    "it", "its", "this", "that", "these", "those", "he", "she", "they", "we",
    "you", "i", "there", "here", "when", "where", "what", "which", "who",
    "how", "why", "in", "on", "at", "for", "with", "from", "to", "as", "by",
    "if", "and", "but", "or", "the", "a", "an",
})


def _entity_extract(system: str, user: str, seed: int) -> str:
    statement = _sections(user, ("Statement",))["Statement"]
    surfaces = set()
    for match in _CAPITALIZED_RUN.finditer(statement):
        surface = match.group()
        if match.start() == 0:
            # Sentence-initial capitals: drop a leading article, and skip
            # plain function-word starters entirely.
            words = surface.split()
            if words[0] in _ARTICLES and len(words) > 1:
                surface = surface[len(words[0]) + 1:]
            elif len(words) == 1 and words[0].lower() in _COMMON_STARTERS:
                continue
        surfaces.add(surface)
    return json.dumps(sorted(surfaces), ensure_ascii=False)


def _single_hop(system: str, user: str, seed: int) -> str:
    clues = _json_block(_sections(user, ("Clues",))["Clues"]) or []
    if not clues:
        return "{}"
    clue = clues[0]
    statement = clue["statement"]
    reply = {
        "question": f"Which record confirms that {_subject(statement).lower()}?",
        "answer": [{"text": statement, "clues": [clue["clue_id"]]}],
        "rubric": [f"Award 1 point if the response conveys: {statement}"],
    }
    return json.dumps(reply, ensure_ascii=False)


def _multi_hop(system: str, user: str, seed: int) -> str:
    clues = _json_block(_sections(user, ("Clues",))["Clues"]) or []
    if not clues:
        return "{}"
    subjects = " and ".join(_subject(c["statement"]).lower() for c in clues[:2])
    reply = {
        "question": f"Across the related records, what connects {subjects}?",
        "answer": [
            {"text": c["statement"], "clues": [c["clue_id"]]} for c in clues
        ],
        "rubric": [
            f"Award 1 point if the response conveys: {c['statement']}" for c in clues
        ],
    }
    return json.dumps(reply, ensure_ascii=False)


def _transform(rewrite):
    def handler(system: str, user: str, seed: int) -> str:
        query = _sections(user, ("Question",))["Question"]
        return json.dumps(rewrite(query), ensure_ascii=False)

    return handler


def _vague(query: str) -> str:
    return _CAPITALIZED_RUN.sub("that subject", query, count=1)


def _completeness(system: str, user: str, seed: int) -> str:
    parts = _sections(user, ("Original question", "Retained clues"))
    clues = _json_block(parts.get("Retained clues", "[]")) or []
    if clues:
        topic = _subject(clues[0]["statement"]).lower()
        query = f"What do the records say about {topic}, and what follows from it?"
    else:
        query = parts.get("Original question", "")
    return json.dumps({"query": query}, ensure_ascii=False)


def _variant(system: str, user: str, seed: int) -> str:
    parts = _sections(user, ("Question", "Surviving clues"))
    clues = _json_block(parts.get("Surviving clues", "[]")) or []
    if not clues:
        answer = [{
            "text": "The answer cannot be determined from the available documents.",
            "clues": [],
        }]
    else:
        answer = [{"text": c["statement"], "clues": [c["clue_id"]]} for c in clues]
    return json.dumps({"answer": answer}, ensure_ascii=False)


def _rubric(system: str, user: str, seed: int) -> str:
    parts = _sections(user, ("Question", "Reference answer"))
    answer = parts.get("Reference answer", "")
    return json.dumps(
        [f"Award 1 point if the response conveys: {answer[:160]}"], ensure_ascii=False
    )


_WORD_RE = re.compile(r"[a-z0-9]+")


def _content_words(text: str) -> set[str]:
    return {w for w in _WORD_RE.findall(text.lower()) if len(w) > 2}


def overlap_verdict(reference: str, answer: str, threshold: float = 0.5) -> bool:
    """Deterministic coverage check: enough reference words appear in answer."""
    ref = _content_words(reference)
    if not ref:
        return False
    return len(ref & _content_words(answer)) / len(ref) >= threshold


def _judge_sentence(system: str, user: str, seed: int) -> str:
    parts = _sections(user, ("Rubric", "Reference sentence", "Candidate answer"))
    ok = overlap_verdict(parts.get("Reference sentence", ""), parts.get("Candidate answer", ""))
    return "YES" if ok else "NO"


def _judge_criterion(system: str, user: str, seed: int) -> str:
    parts = _sections(user, ("Criterion", "Reference answer", "Candidate answer"))
    ok = overlap_verdict(parts.get("Criterion", ""), parts.get("Candidate answer", ""), 0.3)
    return "YES" if ok else "NO"


def _judge_holistic(system: str, user: str, seed: int) -> str:
    parts = _sections(user, ("Question", "Reference answer", "Candidate answer"))
    ok = overlap_verdict(parts.get("Reference answer", ""), parts.get("Candidate answer", ""))
    return "YES" if ok else "NO"


def _rr_plan(system: str, user: str, seed: int) -> str:
    query = _sections(user, ("Question",))["Question"]
    if " and " in query:
        left, right = query.split(" and ", 1)
        return json.dumps([left.strip(), right.strip()], ensure_ascii=False)
    return json.dumps([query], ensure_ascii=False)


def _flare_step(system: str, user: str, seed: int) -> str:
    parts = _sections(user, ("Question", "Evidence so far", "Draft sentences so far"))
    draft = [line for line in parts.get("Draft sentences so far", "").splitlines() if line.strip()]
    if len(draft) >= 1:
        return "<DONE>"
    return f"Key fact: {parts.get('Question', '')}"


def _react_step(system: str, user: str, seed: int) -> str:
    parts = _sections(user, ("Question", "Evidence so far", "Previous actions"))
    history = [line for line in parts.get("Previous actions", "").splitlines() if line.strip()]
    if not history:
        return f"RETRIEVE[{parts.get('Question', '')}]"
    if len(history) == 1:
        return "AGGREGATE"
    evidence = parts.get("Evidence so far", "")
    return f"STOP[Based on the retrieved records: {evidence[:160]}]"


def _rag_answer(system: str, user: str, seed: int) -> str:
    parts = _sections(user, ("Question", "Evidence"))
    return f"Based on the evidence: {parts.get('Evidence', '')[:240]}"


def _clean(system: str, user: str, seed: int) -> str:
    marker = "\n\n"
    pos = user.find(marker)
    return user[pos + len(marker):] if pos != -1 else user


def offline_chat_backend() -> ChatBackend:
    """Scripted backend covering every prompt tag with a pure handler."""
    handlers = {
        "clean": _clean,
        "clue_extract": _clue_extract,
        "entity_extract": _entity_extract,
        "single_hop": _single_hop,
        "multi_hop": _multi_hop,
        "transform_paraphrase": _transform(lambda q: {"query": f"Put differently: {q}"}),
        "transform_metaphor": _transform(
            lambda q: {"query": f"Through the lens of the archives, {q[:1].lower()}{q[1:]}"}
        ),
        "transform_add_constraint": _transform(
            lambda q: {"query": f"{q.rstrip('?')} according to the referenced records only?"}
        ),
        "transform_introduce_ambiguity": _transform(lambda q: {"query": _vague(q)}),
        "transform_split_subquestion": _transform(
            lambda q: {"query": f"First, {q[:1].lower()}{q[1:].rstrip('?')}? And second, what supports this?"}
        ),
        "transform_inject_unanswerable": _transform(
            lambda q: {
                "query": f"{q.rstrip('?')}? Also, how does this compare with cases outside the records?",
                "extra_criterion": (
                    "Award 1 point if the response indicates that the comparison with "
                    "cases outside the records cannot be determined."
                ),
            }
        ),
        "completeness": _completeness,
        "variant": _variant,
        "rubric": _rubric,
        "judge_sentence": _judge_sentence,
        "judge_criterion": _judge_criterion,
        "judge_holistic": _judge_holistic,
        "rr_plan": _rr_plan,
        "flare_step": _flare_step,
        "react_step": _react_step,
        "rag_answer": _rag_answer,
    }
    return ChatBackend(kind="mock_scripted", model_name="offline", script=dict(handlers))
