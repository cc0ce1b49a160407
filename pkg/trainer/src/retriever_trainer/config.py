"""Training hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 3
    learning_rate: float = 2e-5
    margin: float = 0.3
    lora_rank: int = 128
    lora_alpha: int = 32
    lora_dropout: float = 0.1
    index_refresh_steps: int = 5
    base_model: str = "hash:64"
    objective: str = "margin"  # margin | softmax
    temperature: float = 0.05  # softmax objective only
    seed: int = 0
    shuffle: bool = True
    max_steps: int | None = None  # cap for smoke runs; None = full epochs
    # Path to a chunked-corpus JSONL; when set, refreshes draw negatives from
    # the whole corpus instead of only re-ranking each triplet's own list.
    refresh_corpus_path: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)
