"""Text encoders and low-rank adapters.

Two encoder families behind one interface:

* ``hash:<dim>`` — a self-contained bag-of-hashed-words encoder. No weights
  to download, runs anywhere, and is the default for tests and smoke runs.
* any other name — treated as a HuggingFace model id or local path and mean-
  pooled; requires the ``transformers`` package and local weights.

Low-rank adaptation wraps the encoder's linear projections: the base weight
is frozen and a rank-r update ``(alpha / r) * B @ A`` is learned instead.
"""

from __future__ import annotations

import zlib

import torch
import torch.nn.functional as F
from torch import nn

HASH_PREFIX = "hash:"
_BUCKETS = 4096
_HIDDEN = 128


class LoRALinear(nn.Module):
    """A frozen linear layer plus a trainable low-rank residual."""

    def __init__(self, base: nn.Linear, rank: int, alpha: int, dropout: float) -> None:
        super().__init__()
        rank = min(rank, base.in_features, base.out_features)
        self.base = base
        for param in self.base.parameters():
            param.requires_grad_(False)
        self.lora_a = nn.Linear(base.in_features, rank, bias=False)
        self.lora_b = nn.Linear(rank, base.out_features, bias=False)
        nn.init.normal_(self.lora_a.weight, std=1.0 / rank)
        nn.init.zeros_(self.lora_b.weight)
        self.dropout = nn.Dropout(dropout)
        self.scaling = alpha / rank

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * self.lora_b(self.lora_a(self.dropout(x)))


def _hash_tokens(text: str) -> list[int]:
    tokens = [w for w in text.lower().split() if w]
    if not tokens:
        tokens = ["<empty>"]
    return [zlib.crc32(w.encode("utf-8")) % _BUCKETS for w in tokens]


class HashEncoder(nn.Module):
    """Bag-of-hashed-words sentence encoder with two linear projections.

    Base weights are initialized from a fixed private generator, so
    ``hash:<dim>`` names one specific frozen model: an adapter trained
    against it can be reloaded onto a fresh instance, exactly as with
    downloaded pretrained weights.
    """

    def __init__(self, dim: int, buckets: int = _BUCKETS, hidden: int = _HIDDEN) -> None:
        super().__init__()
        self.dim = dim
        self.embed = nn.EmbeddingBag(buckets, hidden, mode="mean")
        self.proj_mid = nn.Linear(hidden, hidden)
        self.proj_out = nn.Linear(hidden, dim)
        gen = torch.Generator().manual_seed(0x7A6E)
        with torch.no_grad():
            for param in self.parameters():
                param.copy_(torch.empty_like(param).normal_(0.0, 0.05, generator=gen))

    def forward(self, texts: list[str]) -> torch.Tensor:
        flat, offsets = [], []
        for text in texts:
            offsets.append(len(flat))
            flat.extend(_hash_tokens(text))
        ids = torch.tensor(flat, dtype=torch.long)
        offs = torch.tensor(offsets, dtype=torch.long)
        h = self.embed(ids, offs)
        h = F.gelu(self.proj_mid(h))
        z = self.proj_out(h)
        return F.normalize(z, dim=-1)

    def lora_targets(self) -> list[str]:
        return ["proj_mid", "proj_out"]


class HFEncoder(nn.Module):
    """Mean-pooled transformer encoder; needs transformers + local weights."""

    def __init__(self, model_name: str) -> None:
        super().__init__()
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name)
        self.dim = self.model.config.hidden_size

    def forward(self, texts: list[str]) -> torch.Tensor:
        enc = self.tokenizer(texts, padding=True, truncation=True, max_length=512,
                             return_tensors="pt")
        out = self.model(**enc).last_hidden_state
        mask = enc["attention_mask"].unsqueeze(-1).float()
        pooled = (out * mask).sum(1) / mask.sum(1).clamp(min=1e-9)
        return F.normalize(pooled, dim=-1)

    def lora_targets(self) -> list[str]:
        return ["query", "key", "value", "dense"]


def load_encoder(base_model: str) -> nn.Module:
    """Build the encoder named by the config; fails fast if unloadable."""
    if base_model.startswith(HASH_PREFIX):
        dim = int(base_model[len(HASH_PREFIX):])
        if dim < 2:
            raise ValueError(f"hash encoder dimension must be >= 2, got {dim}")
        return HashEncoder(dim=dim)
    try:
        return HFEncoder(base_model)
    except Exception as exc:
        raise RuntimeError(f"cannot load base model {base_model!r}: {exc}") from exc


def apply_lora(encoder: nn.Module, rank: int, alpha: int, dropout: float) -> list[str]:
    """Wrap the encoder's target linears in LoRA; returns the wrapped names."""
    targets = encoder.lora_targets()
    wrapped = []
    for name, module in list(encoder.named_modules()):
        leaf = name.split(".")[-1]
        if leaf in targets and isinstance(module, nn.Linear):
            parent = encoder
            parts = name.split(".")
            for part in parts[:-1]:
                parent = getattr(parent, part)
            setattr(parent, parts[-1], LoRALinear(module, rank, alpha, dropout))
            wrapped.append(name)
    if not wrapped:
        raise RuntimeError("no linear layers matched the adapter targets")
    return wrapped


def adapter_state(encoder: nn.Module) -> dict[str, torch.Tensor]:
    """Only the low-rank parameters; the frozen base stays out of the file."""
    return {
        name: tensor
        for name, tensor in encoder.state_dict().items()
        if "lora_a" in name or "lora_b" in name
    }
