"""Contrastive training loop with periodic negative re-ranking.

The objective compares each query against its positive and its negatives by
cosine similarity. Two forms are available: a hinge with a fixed margin
(default) and a temperature-scaled softmax. Every ``index_refresh_steps``
optimizer steps, each triplet's negatives are re-embedded with the current
model and re-ordered hardest-first, so the foils track the model as it moves.
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import torch
import torch.nn.functional as F

from .config import TrainConfig
from .data import TripletDataset, batch_indices, load_triplets
from .encoder import adapter_state, apply_lora, load_encoder


def margin_loss(sim_pos: torch.Tensor, sim_neg: torch.Tensor, margin: float) -> torch.Tensor:
    """Hinge over each (positive, negative) pair: max(0, m - s+ + s-)."""
    return F.relu(margin - sim_pos.unsqueeze(1) + sim_neg).mean()


def softmax_loss(sim_pos: torch.Tensor, sim_neg: torch.Tensor, temperature: float) -> torch.Tensor:
    """InfoNCE: positive vs negatives under a temperature-scaled softmax."""
    logits = torch.cat([sim_pos.unsqueeze(1), sim_neg], dim=1) / temperature
    labels = torch.zeros(logits.shape[0], dtype=torch.long)
    return F.cross_entropy(logits, labels)


def _batch_similarities(encoder, batch):
    queries = encoder([t.query for t in batch])
    positives = encoder([t.positive_text for t in batch])
    flat_negs = [text for t in batch for text in t.negative_texts]
    negatives = encoder(flat_negs)
    sim_pos = (queries * positives).sum(-1)
    sim_neg_rows = []
    offset = 0
    width = max(len(t.negative_texts) for t in batch)
    for t, q in zip(batch, queries):
        n = len(t.negative_texts)
        sims = negatives[offset:offset + n] @ q
        offset += n
        if n < width:  # pad short rows with -1 (cosine floor, zero hinge)
            sims = torch.cat([sims, torch.full((width - n,), -1.0)])
        sim_neg_rows.append(sims)
    return sim_pos, torch.stack(sim_neg_rows)


@torch.no_grad()
def refresh_negatives(encoder, dataset: TripletDataset,
                      corpus_texts: list[str] | None = None) -> None:
    """Re-order every triplet's negatives by current-model similarity.

    With ``corpus_texts``, negatives are instead re-mined from the whole
    pool: the hardest non-positive corpus texts under the current model,
    keeping each triplet's negative count.
    """
    encoder.eval()
    pool_vecs = encoder(corpus_texts) if corpus_texts else None
    for t in dataset.triplets:
        q = encoder([t.query])[0]
        if pool_vecs is None:
            candidates, vecs = t.negative_texts, encoder(t.negative_texts)
        else:
            candidates, vecs = corpus_texts, pool_vecs
        sims = vecs @ q
        order = torch.argsort(sims, descending=True, stable=True).tolist()
        picked = []
        for i in order:
            if candidates[i] != t.positive_text:
                picked.append(candidates[i])
            if len(picked) == len(t.negative_texts):
                break
        t.negative_texts = picked
    encoder.train()


def train(triplet_path: str | Path, cfg: TrainConfig, out_dir: str | Path) -> dict:
    """Load a triplet file and run the loop; returns the run summary."""
    _, summary = run_training(load_triplets(triplet_path), cfg, out_dir)
    return summary


def _load_corpus_texts(path: str | Path) -> list[str]:
    """Chunk texts from a chunked-corpus JSONL ({chunk_id, text, ...} rows)."""
    texts = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                texts.append(json.loads(line)["text"])
    if not texts:
        raise ValueError(f"{path}: no corpus texts for refresh")
    return texts


def run_training(dataset: TripletDataset, cfg: TrainConfig, out_dir: str | Path):
    """The loop itself; writes metrics.jsonl and adapter/ under out_dir.

    Returns (encoder, summary). Shape or config problems surface before the
    first optimizer step. The dataset's negative lists are re-ordered in
    place at every refresh.
    """
    if len(dataset) == 0:
        raise ValueError("no triplets to train on")
    torch.manual_seed(cfg.seed)
    encoder = load_encoder(cfg.base_model)
    apply_lora(encoder, cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout)
    encoder.train()

    trainable = [p for p in encoder.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(trainable, lr=cfg.learning_rate)

    # Fail on shape problems before step 1: one dry forward pass.
    with torch.no_grad():
        _batch_similarities(encoder, dataset.triplets[: min(2, len(dataset))])

    corpus_texts = None
    if cfg.refresh_corpus_path:
        corpus_texts = _load_corpus_texts(cfg.refresh_corpus_path)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"

    step = 0
    refreshes = 0
    last_loss = float("nan")
    started = time.perf_counter()
    with metrics_path.open("w", encoding="utf-8") as metrics:
        for epoch in range(cfg.epochs):
            batches = batch_indices(len(dataset), cfg.batch_size, cfg.shuffle,
                                    seed=cfg.seed + epoch)
            for batch_ids in batches:
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                batch = [dataset.triplets[i] for i in batch_ids]
                sim_pos, sim_neg = _batch_similarities(encoder, batch)
                if cfg.objective == "margin":
                    loss = margin_loss(sim_pos, sim_neg, cfg.margin)
                elif cfg.objective == "softmax":
                    loss = softmax_loss(sim_pos, sim_neg, cfg.temperature)
                else:
                    raise ValueError(f"unknown objective {cfg.objective!r}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                step += 1
                last_loss = loss.item()

                refreshed = False
                if step % cfg.index_refresh_steps == 0:
                    refresh_negatives(encoder, dataset, corpus_texts)
                    refreshes += 1
                    refreshed = True
                metrics.write(json.dumps({
                    "step": step, "epoch": epoch, "loss": last_loss,
                    "refreshed": refreshed,
                }) + "\n")
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break

    adapter_dir = out_dir / "adapter"
    adapter_dir.mkdir(exist_ok=True)
    torch.save(adapter_state(encoder), adapter_dir / "adapter.pt")
    (adapter_dir / "config.json").write_text(
        json.dumps(cfg.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8",
    )
    summary = {
        "steps": step,
        "refreshes": refreshes,
        "final_loss": last_loss,
        "wall_clock_s": time.perf_counter() - started,
        "triplets": len(dataset),
        "source_header": dataset.header,
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8",
    )
    return encoder, summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="retriever-train",
        description="Fine-tune a dense retriever on a triplet file.",
    )
    parser.add_argument("--triplets", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--base-model", default=None)
    parser.add_argument("--objective", choices=["margin", "softmax"], default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--learning-rate", type=float, default=None)
    parser.add_argument("--max-steps", type=int, default=None)
    parser.add_argument("--lora-rank", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--refresh-corpus", default=None,
                        help="chunked-corpus JSONL; mine refresh negatives from it")
    args = parser.parse_args(argv)

    cfg = TrainConfig()
    overrides = {
        "base_model": args.base_model, "objective": args.objective,
        "batch_size": args.batch_size, "epochs": args.epochs,
        "learning_rate": args.learning_rate, "max_steps": args.max_steps,
        "lora_rank": args.lora_rank, "seed": args.seed,
        "refresh_corpus_path": args.refresh_corpus,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)

    summary = train(args.triplets, cfg, args.out)
    print(f"trained {summary['steps']} steps over {summary['triplets']} triplets, "
          f"final loss {summary['final_loss']:.4f} -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
