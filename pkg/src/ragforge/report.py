"""Evaluation report writing: JSON summary, per-query CSV, and figures.

Every metric report lands three ways: a machine-readable JSON summary, a
delimited per-query table for spreadsheets, and a rendered PNG so a run
directory can be skimmed without tooling.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def write_metric_report(
    out_dir: str | Path,
    name: str,
    metric: str,
    value: float,
    per_query: Sequence[tuple[str, float]],
    k: int | None = None,
    judge_model: str | None = None,
    verdict_file: str | None = None,
    config_hash: str = "",
    corpus_hash: str = "",
    tool_version: str = "",
    extras: dict | None = None,
) -> Path:
    """Write <name>.json, <name>_per_query.csv and <name>_per_query.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    report = {
        "metric": metric,
        "k": k,
        "value": value,
        "per_query": [{"query_id": q, "value": v} for q, v in per_query],
        "judge_model": judge_model,
        "verdict_file": verdict_file,
        "config_hash": config_hash,
        "corpus_hash": corpus_hash,
        "tool_version": tool_version,
    }
    if extras:
        report.update(extras)
    json_path = out_dir / f"{name}.json"
    json_path.write_text(
        json.dumps(report, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8",
    )

    csv_path = out_dir / f"{name}_per_query.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "value"])
        for query_id, v in per_query:
            writer.writerow([query_id, f"{v:.12g}"])

    render_per_query_figure(
        out_dir / f"{name}_per_query.png",
        per_query,
        title=f"{metric}" + (f" (k={k})" if k is not None else ""),
        mean_value=value,
    )
    return json_path


def render_per_query_figure(
    path: str | Path,
    per_query: Sequence[tuple[str, float]],
    title: str,
    mean_value: float | None = None,
) -> None:
    """Bar chart of per-query scores with the mean drawn as a rule."""
    labels = [q for q, _ in per_query]
    values = [v for _, v in per_query]
    width = max(4.0, min(18.0, 0.45 * max(1, len(labels))))
    fig, ax = plt.subplots(figsize=(width, 3.2), dpi=120)
    ax.bar(range(len(values)), values, color="#4878a8")
    if mean_value is not None:
        ax.axhline(mean_value, color="#b04a4a", linewidth=1.2,
                   label=f"mean = {mean_value:.3f}")
        ax.legend(loc="upper right", frameon=False, fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(title, fontsize=10)
    if len(labels) <= 40:
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=90, fontsize=6)
    else:
        ax.set_xticks([])
        ax.set_xlabel(f"{len(labels)} queries")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_hop_histogram(path: str | Path, counts: dict[str, int]) -> None:
    """Small bar chart of record counts per hop for run manifests."""
    hops = sorted(counts, key=int)
    values = [counts[h] for h in hops]
    fig, ax = plt.subplots(figsize=(3.6, 2.6), dpi=120)
    ax.bar(hops, values, color="#6a9a58")
    ax.set_xlabel("hops")
    ax.set_ylabel("records")
    ax.set_title("dataset hop mix", fontsize=10)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
