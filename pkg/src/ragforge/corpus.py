"""Document ingestion, chunking, and sentence segmentation.

Raw inputs (HTML, pre-extracted PDF text, markdown, plain text) become
``Document`` values with normalized text and stable ids. Documents are split
into overlapping ``Chunk`` windows — the retrieval unit for everything
downstream — and each chunk carries its sentence spans so evidence can be
cited at sentence granularity.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from html.parser import HTMLParser
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from .errors import DecodeError, EmptyDocument, InvalidConfig
from .jsonio import read_jsonl, write_jsonl

if TYPE_CHECKING:
    from .backends import ChatBackend

FORMATS = ("html", "pdf_text", "markdown", "plain")

# Words that end with a period without ending a sentence. Compared lowercase,
# final period removed.
_ABBREVIATIONS = frozenset({
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "rev", "gen", "col",
    "vs", "etc", "e.g", "i.e", "cf", "al", "fig", "no", "vol", "pp", "ch",
    "inc", "ltd", "co", "corp", "dept", "approx", "est", "u.s", "a.m", "p.m",
})

_TOKEN_RE = re.compile(r"\S+")
_TERMINATORS = ".?!"


@dataclass(frozen=True)
class SentenceSpan:
    """Half-open character range of one sentence within its chunk's text."""

    sent_id: str
    start: int
    end: int


@dataclass(frozen=True)
class Document:
    doc_id: str
    source_uri: str
    title: str
    text: str
    token_count: int
    llm_cleaned: bool = False


@dataclass(frozen=True)
class Chunk:
    """One retrieval unit: a token window of a document with sentence spans."""

    chunk_id: str
    doc_id: str
    start: int
    end: int
    text: str
    sentences: tuple[SentenceSpan, ...] = field(default=())

    def sentence_text(self, span: SentenceSpan) -> str:
        return self.text[span.start:span.end]


def _normalize_text(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = [line.rstrip() for line in text.split("\n")]
    text = "\n".join(lines)
    text = re.sub(r"\n{3,}", "\n\n", text)
    return text.strip()


def _doc_id_for(source_uri: str) -> str:
    return hashlib.sha1(source_uri.encode("utf-8")).hexdigest()[:16]


_SKIP_TAGS = frozenset({
    "script", "style", "nav", "header", "footer", "aside", "form", "button",
    "noscript", "svg", "iframe",
})
_BLOCK_TAGS = frozenset({
    "p", "div", "section", "article", "li", "ul", "ol", "table", "tr",
    "br", "h1", "h2", "h3", "h4", "h5", "h6", "blockquote", "pre",
})


class _TextExtractor(HTMLParser):
    """Collects visible text, skipping boilerplate containers."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self.title_parts: list[str] = []
        self._skip_depth = 0
        self._in_title = False
        self._first_h1: str | None = None
        self._in_h1 = False
        self._h1_parts: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip_depth += 1
        elif tag == "title":
            self._in_title = True
        elif tag == "h1" and self._first_h1 is None:
            self._in_h1 = True
        if tag in _BLOCK_TAGS:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS and self._skip_depth > 0:
            self._skip_depth -= 1
        elif tag == "title":
            self._in_title = False
        elif tag == "h1" and self._in_h1:
            self._in_h1 = False
            self._first_h1 = " ".join("".join(self._h1_parts).split())
        if tag in _BLOCK_TAGS:
            self.parts.append("\n")

    def handle_data(self, data):
        if self._in_title:
            self.title_parts.append(data)
            return
        if self._skip_depth == 0:
            self.parts.append(data)
            if self._in_h1:
                self._h1_parts.append(data)

    def title(self) -> str:
        explicit = " ".join("".join(self.title_parts).split())
        return explicit or (self._first_h1 or "")


def _extract_html(text: str) -> tuple[str, str]:
    parser = _TextExtractor()
    parser.feed(text)
    parser.close()
    body = "".join(parser.parts)
    body = re.sub(r"[ \t]+", " ", body)
    return body, parser.title()


_MD_HEADING_RE = re.compile(r"^#{1,6}\s*", re.MULTILINE)
_MD_IMAGE_RE = re.compile(r"!\[[^\]]*\]\([^)]*\)")
_MD_LINK_RE = re.compile(r"\[([^\]]+)\]\([^)]*\)")
_MD_EMPHASIS_RE = re.compile(r"(\*{1,3}|_{1,3}|`{1,3})(\S(?:.*?\S)?)\1")


def _extract_markdown(text: str) -> tuple[str, str]:
    title = ""
    match = re.search(r"^#\s+(.+)$", text, re.MULTILINE)
    if match:
        title = match.group(1).strip()
    text = _MD_IMAGE_RE.sub("", text)
    text = _MD_LINK_RE.sub(r"\1", text)
    text = _MD_HEADING_RE.sub("", text)
    text = re.sub(r"^```.*$", "", text, flags=re.MULTILINE)
    # Emphasis markers can nest; two passes cover bold-italic combinations.
    for _ in range(2):
        text = _MD_EMPHASIS_RE.sub(r"\2", text)
    return text, title


def ingest(raw: bytes, format: str, source_uri: str) -> Document:
    """Decode and boilerplate-strip one raw document.

    Deterministic for fixed input: the same bytes always produce the same
    ``Document``. Raises ``DecodeError`` for invalid UTF-8 and
    ``EmptyDocument`` when nothing extractable remains.
    """
    if format not in FORMATS:
        raise InvalidConfig(f"unknown format {format!r}; expected one of {FORMATS}")
    try:
        decoded = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"{source_uri}: not valid UTF-8") from exc

    title = ""
    if format == "html":
        decoded, title = _extract_html(decoded)
    elif format == "markdown":
        decoded, title = _extract_markdown(decoded)
    elif format == "pdf_text":
        decoded = decoded.replace("\f", "\n")

    text = _normalize_text(decoded)
    if not text:
        raise EmptyDocument(f"{source_uri}: no extractable text")
    return Document(
        doc_id=_doc_id_for(source_uri),
        source_uri=source_uri,
        title=title,
        text=text,
        token_count=len(text.split()),
    )


def llm_clean(doc: Document, backend: "ChatBackend") -> Document:
    """Pass document text through a cleaning backend; flags the result."""
    from .backends import chat
    from .prompts import render

    system, user, _ = render("clean", content=doc.text)
    cleaned = _normalize_text(chat(backend, system, user, seed=0, tag="clean"))
    if not cleaned:
        raise EmptyDocument(f"{doc.doc_id}: cleaning removed all text")
    return replace(doc, text=cleaned, token_count=len(cleaned.split()), llm_cleaned=True)


def split_sentences(text: str, chunk_id: str = "") -> list[SentenceSpan]:
    """Segment text into sentence spans.

    Splits after '.', '?' or '!' when followed by whitespace plus an
    uppercase letter, or at end of text. Periods ending a stop-listed
    abbreviation never split. Spans exclude surrounding whitespace; empty
    text yields an empty list.
    """
    spans: list[tuple[int, int]] = []
    n = len(text)
    start = None
    i = 0
    while i < n:
        ch = text[i]
        if start is None and not ch.isspace():
            start = i
        if start is not None and ch in _TERMINATORS:
            run_end = i
            while run_end + 1 < n and text[run_end + 1] in _TERMINATORS:
                run_end += 1
            if _is_sentence_end(text, i, run_end):
                spans.append((start, run_end + 1))
                start = None
            i = run_end + 1
            continue
        i += 1
    if start is not None:
        end = n
        while end > start and text[end - 1].isspace():
            end -= 1
        if end > start:
            spans.append((start, end))
    return [
        SentenceSpan(sent_id=f"{chunk_id}@{j}", start=s, end=e)
        for j, (s, e) in enumerate(spans)
        if text[s:e].strip()
    ]


def _is_sentence_end(text: str, term_pos: int, run_end: int) -> bool:
    if text[term_pos] == "." and term_pos == run_end and _ends_abbreviation(text, term_pos):
        return False
    j = run_end + 1
    if j >= len(text):
        return True
    if not text[j].isspace():
        return False
    while j < len(text) and text[j].isspace():
        j += 1
    return j >= len(text) or text[j].isupper()


def _ends_abbreviation(text: str, period_pos: int) -> bool:
    i = period_pos - 1
    while i >= 0 and not text[i].isspace():
        i -= 1
    word = text[i + 1:period_pos]
    return word.lower() in _ABBREVIATIONS


def chunk(doc: Document, size_tokens: int = 1000, overlap_tokens: int = 100) -> list[Chunk]:
    """Split a document into overlapping token windows.

    Consecutive chunks overlap by exactly ``overlap_tokens`` (the last may be
    shorter), and a window end is snapped backward to the nearest sentence
    boundary found inside its trailing overlap window. Chunk char ranges
    jointly cover the whole document text.
    """
    if size_tokens <= 0:
        raise InvalidConfig(f"size_tokens must be positive, got {size_tokens}")
    if overlap_tokens < 0 or overlap_tokens >= size_tokens:
        raise InvalidConfig(
            f"overlap_tokens must be in [0, size_tokens), got {overlap_tokens}"
        )

    token_spans = [m.span() for m in _TOKEN_RE.finditer(doc.text)]
    n = len(token_spans)
    if n == 0:
        raise EmptyDocument(f"{doc.doc_id}: no tokens to chunk")

    # Token indices that start a sentence; snap targets for window ends.
    boundary_tokens = _sentence_start_tokens(doc.text, token_spans)

    chunks: list[Chunk] = []
    pos = 0
    ordinal = 0
    while True:
        end = min(pos + size_tokens, n)
        if end < n and overlap_tokens > 0:
            lo = end - overlap_tokens
            snaps = [b for b in boundary_tokens if lo <= b <= end and b - overlap_tokens > pos]
            if snaps:
                end = max(snaps)
        char_start = 0 if ordinal == 0 else token_spans[pos][0]
        char_end = len(doc.text) if end == n else token_spans[end][0]
        chunk_id = f"{doc.doc_id}#{ordinal}"
        text = doc.text[char_start:char_end]
        chunks.append(Chunk(
            chunk_id=chunk_id,
            doc_id=doc.doc_id,
            start=char_start,
            end=char_end,
            text=text,
            sentences=tuple(split_sentences(text, chunk_id)),
        ))
        if end == n:
            break
        pos = end - overlap_tokens
        ordinal += 1
    return chunks


def _sentence_start_tokens(text: str, token_spans: list[tuple[int, int]]) -> list[int]:
    starts = []
    spans = split_sentences(text)
    ti = 0
    for span in spans:
        while ti < len(token_spans) and token_spans[ti][0] < span.start:
            ti += 1
        if ti < len(token_spans):
            starts.append(ti)
    return starts


# --- on-disk formats --------------------------------------------------------

def save_corpus(path: str | Path, docs: Iterable[Document]) -> None:
    def row(d: Document) -> dict:
        rec = {"doc_id": d.doc_id, "source_uri": d.source_uri, "title": d.title, "text": d.text}
        if d.llm_cleaned:
            rec["llm_cleaned"] = True
        return rec

    write_jsonl(path, (row(d) for d in docs))


def load_corpus(path: str | Path) -> list[Document]:
    docs = []
    seen: set[str] = set()
    for rec in read_jsonl(path):
        if rec["doc_id"] in seen:
            raise InvalidConfig(f"duplicate doc_id {rec['doc_id']!r} in {path}")
        seen.add(rec["doc_id"])
        docs.append(Document(
            doc_id=rec["doc_id"],
            source_uri=rec.get("source_uri", ""),
            title=rec.get("title", ""),
            text=rec["text"],
            token_count=len(rec["text"].split()),
            llm_cleaned=bool(rec.get("llm_cleaned", False)),
        ))
    return docs


def save_chunks(path: str | Path, chunks: Iterable[Chunk]) -> None:
    def row(c: Chunk) -> dict:
        return {
            "chunk_id": c.chunk_id,
            "doc_id": c.doc_id,
            "char_range": [c.start, c.end],
            "text": c.text,
            "sentences": [
                {"sent_id": s.sent_id, "char_range": [s.start, s.end]} for s in c.sentences
            ],
        }

    write_jsonl(path, (row(c) for c in chunks))


def load_chunks(path: str | Path) -> list[Chunk]:
    chunks = []
    for rec in read_jsonl(path):
        chunks.append(Chunk(
            chunk_id=rec["chunk_id"],
            doc_id=rec["doc_id"],
            start=rec["char_range"][0],
            end=rec["char_range"][1],
            text=rec["text"],
            sentences=tuple(
                SentenceSpan(s["sent_id"], s["char_range"][0], s["char_range"][1])
                for s in rec["sentences"]
            ),
        ))
    return chunks
