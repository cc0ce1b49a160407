#!/usr/bin/env python3
"""Regenerate the 50-document fixture corpus used by the test suite.

The corpus describes a fictional realm with a closed set of named entities
that recur across documents, so multi-hop chunk groups exist by construction.
Output is deterministic for a fixed seed; the committed file should only
change when this script changes.

Usage: python tools/gen_fixture_corpus.py [out_path]
"""

from __future__ import annotations

import random
import sys
from pathlib import Path

from ragforge import corpus

PLACES = [
    "Aldra Keep", "Miren Vale", "Korrin Bridge", "Vessel Harbor", "Thornfield",
    "Greyspire", "Lantern Quay", "Ashdown Mill", "Fenwick Hollow", "Callow Ridge",
]
PEOPLE = [
    "Warden Solenne", "Archivist Brann", "Captain Ilex", "Magister Vey",
    "Ferrier Oswin", "Chronicler Maude", "Provost Kerrin", "Surveyor Talla",
]
THINGS = [
    "Ember Charter", "Gale Ledger", "Cinder Seal", "Tidemark Compass",
    "Hollow Crown", "Frostline Map", "Beacon Codex", "Quill of Accord",
]

FACTS = [
    "{a} oversees the grain tallies kept at {b}",
    "{a} was recorded in the census alongside {b}",
    "{a} dispatched three couriers toward {b}",
    "{a} holds custody of the {t}",
    "the {t} was inspected by {a} last autumn",
    "{a} signed the winter accord at {b}",
    "travelers from {b} petitioned {a} for passage",
    "{a} catalogued the archives stored beneath {b}",
    "the {t} changed hands at {b} during the spring fair",
    "{a} commissioned repairs along the road to {b}",
]


def build_docs(seed: int, n_docs: int = 50) -> list[corpus.Document]:
    rng = random.Random(seed)
    docs = []
    for i in range(n_docs):
        # 2-3 anchor entities per doc; overlap across docs creates bridges.
        anchors = rng.sample(PEOPLE + PLACES, 3)
        sentences = []
        for _ in range(rng.randint(4, 7)):
            template = rng.choice(FACTS)
            sentence = template.format(
                a=rng.choice(anchors),
                b=rng.choice(PLACES),
                t=rng.choice(THINGS),
            )
            sentences.append(sentence[0].upper() + sentence[1:] + ".")
        text = " ".join(sentences)
        docs.append(corpus.ingest(text.encode("utf-8"), "plain", f"fixture://realm/{i:03d}"))
    return docs


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("tests/fixtures/corpus50.jsonl")
    docs = build_docs(seed=2024)
    corpus.save_corpus(out, docs)
    print(f"wrote {len(docs)} documents to {out}")


if __name__ == "__main__":
    main()
