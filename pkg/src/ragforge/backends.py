"""Chat, embedding, and judge backends.

Three kinds of chat backend: ``http`` speaks the common chat-completion JSON
wire format to any compatible server; ``mock_scripted`` replays canned
replies keyed by a prompt tag; ``mock_hash`` answers with pseudo-text derived
from a hash of the inputs. Both mocks are pure functions of their inputs and
never open a socket, which keeps the whole pipeline testable offline.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import requests

from .errors import BackendError, DimensionMismatch, ScriptExhausted

ENV_LLM_ENDPOINT = "DRAGON_LLM_ENDPOINT"
ENV_LLM_MODEL = "DRAGON_LLM_MODEL"
ENV_EMBED_ENDPOINT = "DRAGON_EMBED_ENDPOINT"
ENV_EMBED_MODEL = "DRAGON_EMBED_MODEL"
ENV_API_KEY = "DRAGON_API_KEY"

_RETRY_BASE_DELAY_S = 0.1

# Bound on concurrent in-flight HTTP requests, shared by chat and embed.
_http_gate = threading.BoundedSemaphore(8)
_sleep = time.sleep

ScriptHandler = Callable[[str, str, int], str]


def set_http_concurrency(limit: int) -> None:
    global _http_gate
    _http_gate = threading.BoundedSemaphore(limit)


@dataclass
class ChatBackend:
    kind: str = "mock_hash"  # http | mock_scripted | mock_hash
    endpoint: str = ""
    model_name: str = "mock"
    temperature: float = 0.0
    max_retries: int = 3
    timeout_ms: int = 60_000
    api_key: str = ""
    # mock_scripted state: tag -> remaining replies, or tag -> handler fn.
    script: dict[str, list[str] | ScriptHandler] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)


@dataclass
class EmbedBackend:
    kind: str = "mock_hash"  # http | mock_hash
    dimension: int = 64
    endpoint: str = ""
    model_name: str = "mock-embed"
    max_retries: int = 3
    timeout_ms: int = 60_000
    api_key: str = ""


def scripted(script: Sequence[tuple[str, str]] | Mapping[str, list[str] | ScriptHandler]) -> ChatBackend:
    """Build a scripted mock from (tag, reply) pairs or a tag->replies map."""
    table: dict[str, list[str] | ScriptHandler] = {}
    if isinstance(script, Mapping):
        for tag, replies in script.items():
            table[tag] = replies if callable(replies) else list(replies)
    else:
        for tag, reply in script:
            table.setdefault(tag, []).append(reply)  # type: ignore[union-attr]
    return ChatBackend(kind="mock_scripted", model_name="mock-scripted", script=table)


def chat(backend: ChatBackend, system: str, user: str, seed: int, tag: str | None = None) -> str:
    """One chat completion. Mocks are pure in (config, inputs, seed)."""
    if backend.kind == "mock_hash":
        return _hash_reply(system, user, seed)
    if backend.kind == "mock_scripted":
        return _scripted_reply(backend, system, user, seed, tag)
    if backend.kind == "http":
        body = {
            "model": backend.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": backend.temperature,
            "seed": seed,
        }
        data = _post_with_retries(backend.endpoint, body, backend)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {data!r}") from exc
    raise ValueError(f"unknown chat backend kind {backend.kind!r}")


def _hash_reply(system: str, user: str, seed: int) -> str:
    digest = hashlib.sha256(f"{system}\x1f{user}\x1f{seed}".encode("utf-8")).hexdigest()
    return f"mock-{digest[:32]}"


def _scripted_reply(backend: ChatBackend, system: str, user: str, seed: int, tag: str | None) -> str:
    with backend._lock:
        key = tag if tag in backend.script else _match_tag(backend.script, system + "\n" + user)
        if key is None:
            raise ScriptExhausted(f"no scripted reply for tag {tag!r}")
        entry = backend.script[key]
        if callable(entry):
            return entry(system, user, seed)
        if not entry:
            raise ScriptExhausted(f"script for tag {key!r} is exhausted")
        return entry.pop(0)


def _match_tag(script: Mapping[str, object], prompt: str) -> str | None:
    for key in sorted(script):
        if key in prompt:
            return key
    return None


def embed(backend: EmbedBackend, texts: Sequence[str]) -> np.ndarray:
    """Embed texts to unit-norm vectors, one row per text, order preserved."""
    if not texts:
        raise ValueError("texts must be non-empty")
    if backend.kind == "mock_hash":
        rows = [_hash_vector(t, backend.dimension) for t in texts]
        return np.stack(rows)
    if backend.kind == "http":
        body = {"model": backend.model_name, "input": list(texts)}
        data = _post_with_retries(backend.endpoint, body, backend)
        try:
            rows = [np.asarray(item["embedding"], dtype=np.float64) for item in data["data"]]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed embedding response: {data!r}") from exc
        if len(rows) != len(texts):
            raise BackendError(f"expected {len(texts)} embeddings, got {len(rows)}")
        for row in rows:
            if row.shape != (backend.dimension,):
                raise DimensionMismatch(
                    f"server returned {row.shape[0]}-dim vectors, configured {backend.dimension}"
                )
        return np.stack([_unit(row) for row in rows])
    raise ValueError(f"unknown embed backend kind {backend.kind!r}")


def _hash_vector(text: str, dimension: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    rng = np.random.default_rng(seed)
    return _unit(rng.standard_normal(dimension))


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise BackendError("embedding has zero norm; cannot normalize")
    return vec / norm


def _post_with_retries(endpoint: str, body: dict, backend: ChatBackend | EmbedBackend) -> dict:
    if not endpoint:
        raise BackendError("no endpoint configured for http backend")
    headers = {"Content-Type": "application/json"}
    if backend.api_key:
        headers["Authorization"] = f"Bearer {backend.api_key}"
    attempts = max(1, backend.max_retries)
    last_exc: Exception | None = None
    for attempt in range(attempts):
        try:
            with _http_gate:
                resp = requests.post(
                    endpoint,
                    json=body,
                    headers=headers,
                    timeout=backend.timeout_ms / 1000.0,
                )
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            last_exc = exc
            if attempt < attempts - 1:
                _sleep(_RETRY_BASE_DELAY_S * (2 ** attempt))
    raise BackendError(f"{endpoint}: failed after {attempts} attempts: {last_exc}") from last_exc


def parse_json_reply(text: str):
    """Best-effort JSON extraction from an LLM reply; None when hopeless."""
    import json

    text = (text or "").strip()
    try:
        return json.loads(text)
    except ValueError:
        pass
    for opener, closer in (("{", "}"), ("[", "]")):
        start = text.find(opener)
        end = text.rfind(closer)
        if start != -1 and end > start:
            try:
                return json.loads(text[start:end + 1])
            except ValueError:
                continue
    return None


def chat_backend_from_env() -> ChatBackend:
    endpoint = os.environ.get(ENV_LLM_ENDPOINT, "")
    if not endpoint:
        raise BackendError(f"{ENV_LLM_ENDPOINT} is not set")
    return ChatBackend(
        kind="http",
        endpoint=endpoint,
        model_name=os.environ.get(ENV_LLM_MODEL, "default"),
        api_key=os.environ.get(ENV_API_KEY, ""),
    )


def embed_backend_from_env(dimension: int) -> EmbedBackend:
    endpoint = os.environ.get(ENV_EMBED_ENDPOINT, "")
    if not endpoint:
        raise BackendError(f"{ENV_EMBED_ENDPOINT} is not set")
    return EmbedBackend(
        kind="http",
        dimension=dimension,
        endpoint=endpoint,
        model_name=os.environ.get(ENV_EMBED_MODEL, "default"),
        api_key=os.environ.get(ENV_API_KEY, ""),
    )
