"""Triplet-file loading and batching.

The input file is newline-delimited JSON whose first line is a meta header
(``{"type": "meta", "index_generation": ..., "embed_model": ...}``) followed
by one row per training example: ``{query_id, query, positive_text,
negative_texts}``. Texts are inlined, so no corpus access is needed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Triplet:
    query_id: str
    query: str
    positive_text: str
    negative_texts: list[str]


@dataclass
class TripletDataset:
    header: dict
    triplets: list[Triplet] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.triplets)


def load_triplets(path: str | Path) -> TripletDataset:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if not rows or rows[0].get("type") != "meta":
        raise ValueError(f"{path}: first line must be the meta header record")
    header, body = rows[0], rows[1:]
    triplets = []
    for i, row in enumerate(body):
        try:
            triplet = Triplet(
                query_id=row["query_id"],
                query=row["query"],
                positive_text=row["positive_text"],
                negative_texts=list(row["negative_texts"]),
            )
        except KeyError as exc:
            raise ValueError(f"{path}: row {i + 1} is missing field {exc}") from exc
        if not triplet.negative_texts:
            raise ValueError(f"{path}: row {i + 1} has no negatives")
        triplets.append(triplet)
    return TripletDataset(header=header, triplets=triplets)


def batch_indices(n: int, batch_size: int, shuffle: bool, seed: int) -> list[list[int]]:
    order = list(range(n))
    if shuffle:
        random.Random(seed).shuffle(order)
    return [order[lo:lo + batch_size] for lo in range(0, n, batch_size)]
