#!/usr/bin/env python3
"""Regenerate the golden precision fixture.

Builds 10 queries with known gold sets and fixed ranked lists, computes the
expected per-query and mean precision@3 with a plain counting loop (never the
library code under test), and writes everything to one JSON file that the
acceptance suite replays.

Usage: python tools/gen_golden_precision.py [out_path]
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

K = 3


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("tests/fixtures/golden_precision.json")
    rng = random.Random(424242)
    universe = [f"d{i}#0" for i in range(20)]

    queries = []
    for qi in range(10):
        gold = sorted(rng.sample(universe, rng.randint(1, 4)))
        # Plant a varying number of gold docs inside the top-k window so the
        # fixture exercises 0/3 .. 3/3 per-query outcomes.
        planted = rng.sample(gold, min(len(gold), rng.randint(0, K)))
        fillers = [c for c in universe if c not in gold]
        rng.shuffle(fillers)
        ranked = planted + fillers[: 8 - len(planted)]
        head = ranked[:K]
        rng.shuffle(head)
        ranked = head + ranked[K:]
        queries.append({"query_id": f"g{qi}", "gold": gold, "ranked": ranked})

    # Brute-force expectation: count top-k hits, divide by k, average.
    per_query = {}
    for q in queries:
        hits = 0
        for chunk_id in q["ranked"][:K]:
            if chunk_id in q["gold"]:
                hits += 1
        per_query[q["query_id"]] = hits / K
    mean = sum(per_query.values()) / len(per_query)

    out.write_text(json.dumps({
        "k": K,
        "queries": queries,
        "expected_per_query": per_query,
        "expected_mean": mean,
    }, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(queries)} golden queries to {out} (mean={mean!r})")


if __name__ == "__main__":
    main()
