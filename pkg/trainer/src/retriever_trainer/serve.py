"""Embedding HTTP endpoint.

Serves the trained encoder over the common embedding wire format — POST with
``{"model": ..., "input": [texts]}``, reply ``{"data": [{"embedding": [...]},
...]}`` — so the retrieval toolkit's http embed backend can point straight at
it (DRAGON_EMBED_ENDPOINT) and close the train/serve loop.
"""

from __future__ import annotations

import argparse
import json
from dataclasses import fields
from pathlib import Path

import torch
from fastapi import FastAPI
from pydantic import BaseModel

from .config import TrainConfig
from .encoder import apply_lora, load_encoder


class EmbedRequest(BaseModel):
    model: str = ""
    input: list[str]


def export_embeddings(encoder, texts: list[str]) -> list[list[float]]:
    """Unit-norm vectors for texts; deterministic for a fixed model."""
    if not texts:
        return []
    encoder.eval()
    with torch.no_grad():
        vectors = encoder(texts)
    return [row.tolist() for row in vectors]


def build_app(encoder) -> FastAPI:
    app = FastAPI(title="retriever-embeddings")

    @app.post("/v1/embeddings")
    def embeddings(req: EmbedRequest):
        data = export_embeddings(encoder, req.input)
        return {"data": [{"embedding": vec, "index": i} for i, vec in enumerate(data)]}

    @app.get("/health")
    def health():
        return {"status": "ok", "dim": getattr(encoder, "dim", None)}

    return app


def load_trained_encoder(base_model: str | None = None, adapter_path: str | None = None):
    """Rebuild the trained encoder for serving.

    The adapter's sibling config.json (written by training) supplies the base
    model and adapter shape, so a mismatched scaffold cannot be constructed;
    ``base_model`` only overrides it for adapterless serving.
    """
    cfg = TrainConfig()
    if adapter_path:
        saved = Path(adapter_path).with_name("config.json")
        if saved.exists():
            data = json.loads(saved.read_text("utf-8"))
            known = {f.name for f in fields(TrainConfig)}
            cfg = TrainConfig(**{k: v for k, v in data.items() if k in known})
        elif base_model is None:
            raise RuntimeError(f"no config.json next to {adapter_path}; pass --base-model")
    if base_model:
        cfg.base_model = base_model
    encoder = load_encoder(cfg.base_model)
    apply_lora(encoder, cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout)
    if adapter_path:
        state = torch.load(adapter_path, map_location="cpu")
        missing = encoder.load_state_dict(state, strict=False).missing_keys
        lora_missing = [k for k in missing if "lora_" in k]
        if lora_missing:
            raise RuntimeError(f"adapter file does not cover: {lora_missing[:4]}")
    encoder.eval()
    return encoder


def main(argv=None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(
        prog="retriever-serve",
        description="Serve a trained encoder as an embedding endpoint.",
    )
    parser.add_argument("--base-model", default=None,
                        help="override; normally read from the adapter's config.json")
    parser.add_argument("--adapter", help="adapter.pt from retriever-train")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8901)
    args = parser.parse_args(argv)

    if args.base_model is None and args.adapter is None:
        parser.error("pass --adapter and/or --base-model")
    encoder = load_trained_encoder(args.base_model, args.adapter)
    uvicorn.run(build_app(encoder), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
