"""Command-line pipeline: ingest, synthesize, export, evaluate, score, validate.

Subcommands compose through files with stable schemas, so a run directory
(``runs/<name>/{corpus/, dataset.jsonl, triplets.jsonl, traces/, reports/}``)
is a complete, reproducible experiment. Config precedence is flags > env >
config file; every artifact embeds the resolved config hash, the corpus hash,
and the tool version.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from . import backends, corpus, datamodel, metrics, ragengines, report, retrieval, synthesis
from .datamodel import TOOL_VERSION
from .errors import RagforgeError
from .jsonio import config_hash as hash_config
from .jsonio import read_jsonl, sha256_file, write_jsonl
from .offline import offline_chat_backend

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2


@dataclass
class RunConfig:
    """Resolved knobs for one command invocation; hashed into artifacts."""

    seed: int = 0
    k: int = 3
    n_neg: int = retrieval.DEFAULT_N_NEG
    engine: str = "vanilla"
    max_iter: int = ragengines.DEFAULT_MAX_ITER
    backend: str = "mock"  # mock | http
    chunk_size: int = 1000
    chunk_overlap: int = 100
    embed_dim: int = 64
    target_records: int = 20
    hop_mix: str = "1:0.6,2:0.3,3:0.1"
    max_transforms: int = 3
    completeness_prob: float = 0.5
    rubric_points: bool = False

    def hash(self) -> str:
        return hash_config(asdict(self))


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        raw = yaml.safe_load(Path(args.config).read_text("utf-8")) or {}
        known = {f.name for f in fields(RunConfig)}
        for key, value in raw.items():
            if key not in known:
                raise RagforgeError(f"unknown config key {key!r} in {args.config}")
            setattr(cfg, key, value)
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            setattr(cfg, f.name, flag)
    return cfg


def _parse_hop_mix(raw: str) -> dict[int, float]:
    mix = {}
    for part in raw.split(","):
        hops, weight = part.split(":")
        mix[int(hops)] = float(weight)
    return mix


def _chat_backend(cfg: RunConfig) -> backends.ChatBackend:
    if cfg.backend == "mock":
        return offline_chat_backend()
    return backends.chat_backend_from_env()


def _embed_backend(cfg: RunConfig) -> backends.EmbedBackend:
    if cfg.backend == "mock":
        return backends.EmbedBackend(kind="mock_hash", dimension=cfg.embed_dim)
    return backends.embed_backend_from_env(cfg.embed_dim)


@contextmanager
def run_lock(directory: Path):
    """One process per run directory; stale locks must be removed by hand."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".ragforge.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RagforgeError(f"run directory is locked by another process: {lock}")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _chunk_index(chunks_path: str) -> dict[str, corpus.Chunk]:
    return {c.chunk_id: c for c in corpus.load_chunks(chunks_path)}


def _load_answers(args) -> list[tuple[str, str]]:
    if getattr(args, "answers", None):
        return [(r["query_id"], r["answer"]) for r in read_jsonl(args.answers)]
    if getattr(args, "traces", None):
        _, rows = ragengines.load_traces(args.traces)
        return [(r["query_id"], r["final_answer"]) for r in rows]
    raise RagforgeError("provide --answers or --traces")


# --- subcommands ---------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    inputs = []
    for entry in args.input:
        path = Path(entry)
        if path.is_dir():
            inputs.extend(sorted(p for p in path.rglob("*") if p.is_file()))
        else:
            inputs.append(path)
    if not inputs:
        raise RagforgeError("no input files found")

    chat = _chat_backend(cfg) if args.clean else None
    docs = []
    for path in inputs:
        doc = corpus.ingest(path.read_bytes(), args.format, source_uri=str(path))
        if chat is not None:
            doc = corpus.llm_clean(doc, chat)
        docs.append(doc)

    out_dir = Path(args.out)
    with run_lock(out_dir):
        corpus.save_corpus(out_dir / "corpus.jsonl", docs)
        all_chunks = []
        for doc in docs:
            all_chunks.extend(corpus.chunk(doc, cfg.chunk_size, cfg.chunk_overlap))
        corpus.save_chunks(out_dir / "chunks.jsonl", all_chunks)
    print(f"ingested {len(docs)} documents -> {len(all_chunks)} chunks in {out_dir}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = _load_config(args)
    docs = corpus.load_corpus(args.corpus)
    all_chunks = []
    for doc in docs:
        all_chunks.extend(corpus.chunk(doc, cfg.chunk_size, cfg.chunk_overlap))

    out = Path(args.out)
    out_dir = out.parent if out.suffix else out
    dataset_path = out if out.suffix else out / "dataset.jsonl"
    with run_lock(out_dir):
        chunks_path = dataset_path.with_name("chunks.jsonl")
        corpus.save_chunks(chunks_path, all_chunks)
        corpus_hash = sha256_file(chunks_path)

        syn_cfg = synthesis.SynthesisConfig(
            target_records=cfg.target_records,
            hop_mix=_parse_hop_mix(cfg.hop_mix),
            max_transforms=cfg.max_transforms,
            completeness_prob=cfg.completeness_prob,
        )
        records, manifest = synthesis.synthesize(all_chunks, _chat_backend(cfg), syn_cfg, cfg.seed)
        datamodel.save_dataset(dataset_path, records, corpus_hash, cfg.hash())

        manifest.update({
            "corpus_hash": corpus_hash,
            "config_hash": cfg.hash(),
            "tool_version": TOOL_VERSION,
        })
        manifest_path = dataset_path.with_name("manifest.json")
        manifest_path.write_text(
            json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        if manifest["counts_per_hop"]:
            report.render_hop_histogram(
                dataset_path.with_name("hop_mix.png"), manifest["counts_per_hop"]
            )
    print(f"synthesized {len(records)} records -> {dataset_path}")
    return EXIT_OK


def cmd_export_triplets(args) -> int:
    cfg = _load_config(args)
    meta, records = datamodel.load_dataset(args.dataset)
    index_chunks = corpus.load_chunks(args.chunks)
    chunk_map = {c.chunk_id: c for c in index_chunks}

    bad = [r.query_id for r in records if not datamodel.validate(r, chunk_map).ok]
    if bad:
        _fail_validation(f"{len(bad)} records fail validation: {bad[:5]}")
        return EXIT_VALIDATION

    embedder = _embed_backend(cfg)
    idx = retrieval.build_index(index_chunks, embedder)
    triplets = retrieval.export_triplets(records, idx, cfg.n_neg, embedder)
    out = Path(args.out)
    with run_lock(out.parent):
        retrieval.save_triplet_file(
            out, triplets, {c.chunk_id: c.text for c in index_chunks}, idx, embedder,
            config_hash=cfg.hash(), corpus_hash=sha256_file(args.chunks),
        )
    print(f"exported {len(triplets)} triplets -> {out}")
    return EXIT_OK


def cmd_eval_retrieval(args) -> int:
    cfg = _load_config(args)
    _, records = datamodel.load_dataset(args.dataset)
    index_chunks = corpus.load_chunks(args.chunks)
    embedder = _embed_backend(cfg)
    idx = retrieval.build_index(index_chunks, embedder)

    results = []
    for rec in records:
        ranked = retrieval.search(idx, rec.query, cfg.k, embedder)
        results.append((rec.query_id, [chunk_id for chunk_id, _ in ranked]))
    run = metrics.RetrievalRun(results)
    per_query = metrics.precision_per_query(run, records, cfg.k)
    value = metrics.precision_at_k(run, records, cfg.k)

    out_dir = Path(args.out)
    with run_lock(out_dir):
        write_jsonl(
            out_dir / "retrieval_run.jsonl",
            ({"query_id": q, "ranked": ids} for q, ids in results),
        )
        report.write_metric_report(
            out_dir, "retrieval", f"precision@{cfg.k}", value, per_query,
            k=cfg.k, config_hash=cfg.hash(), corpus_hash=sha256_file(args.chunks),
            tool_version=TOOL_VERSION,
        )
    print(f"precision@{cfg.k} = {value:.6f} over {len(per_query)} queries -> {out_dir}")
    return EXIT_OK


def cmd_eval_rag(args) -> int:
    cfg = _load_config(args)
    _, records = datamodel.load_dataset(args.dataset)
    index_chunks = corpus.load_chunks(args.chunks)
    chunk_texts = {c.chunk_id: c.text for c in index_chunks}
    embedder = _embed_backend(cfg)
    gen = _chat_backend(cfg)
    idx = retrieval.build_index(index_chunks, embedder)
    engine = ragengines.ENGINES[cfg.engine]

    traces = []
    for rec in records:
        kwargs = {"query_id": rec.query_id, "k": cfg.k}
        if cfg.engine in ("flare", "react"):
            kwargs["max_iter"] = cfg.max_iter
        if cfg.engine == "rr":
            kwargs = {"query_id": rec.query_id, "k_per_subquery": cfg.k}
        traces.append(engine(rec.query, idx, embedder, gen, chunk_texts, **kwargs))

    out_dir = Path(args.out)
    with run_lock(out_dir):
        corpus_digest = sha256_file(args.chunks)
        trace_path = out_dir / f"traces_{cfg.engine}.jsonl"
        ragengines.save_traces(trace_path, traces, cfg.hash(), corpus_digest)
        run = metrics.RetrievalRun([(t.query_id, t.retrieved_all[:cfg.k]) for t in traces])
        per_query = metrics.precision_per_query(run, records, cfg.k)
        value = metrics.precision_at_k(run, records, cfg.k)
        report.write_metric_report(
            out_dir, f"rag_{cfg.engine}", f"precision@{cfg.k}", value, per_query,
            k=cfg.k, config_hash=cfg.hash(), corpus_hash=corpus_digest,
            tool_version=TOOL_VERSION,
            extras={"engine": cfg.engine, "traces": trace_path.name},
        )
    print(f"{cfg.engine}: precision@{cfg.k} = {value:.6f} -> {out_dir}")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _load_config(args)
    _, records = datamodel.load_dataset(args.dataset)
    chunk_map = _chunk_index(args.chunks)
    answers = _load_answers(args)
    judge = _chat_backend(cfg)

    verdicts = metrics.judge_coverage(
        answers, records, judge, chunk_map, rubric_points=cfg.rubric_points,
    )
    csg_value = metrics.csg_from_verdicts(verdicts)
    lj_value = metrics.lj(answers, records, judge)

    out_dir = Path(args.out)
    with run_lock(out_dir):
        verdict_path = out_dir / "verdicts.jsonl"
        write_jsonl(verdict_path, metrics.verdict_rows(verdicts))
        per_query = [
            (v.query_id, sum(v.sentences) / len(v.sentences)) for v in verdicts
        ]
        extras = {"lj": lj_value}
        if cfg.rubric_points:
            extras["rubric_points"] = metrics.rubric_score_from_verdicts(verdicts)
        report.write_metric_report(
            out_dir, "generation", "csg", csg_value, per_query,
            judge_model=judge.model_name, verdict_file=verdict_path.name,
            config_hash=cfg.hash(), corpus_hash=sha256_file(args.chunks),
            tool_version=TOOL_VERSION, extras=extras,
        )
    print(f"csg = {csg_value:.6f}, lj = {lj_value:.6f} over {len(answers)} answers -> {out_dir}")
    return EXIT_OK


def cmd_validate(args) -> int:
    meta, records = datamodel.load_dataset(args.dataset)
    chunk_map = _chunk_index(args.chunks)

    problems = []
    actual = sha256_file(args.chunks)
    if meta.get("corpus_hash") and meta["corpus_hash"] != actual:
        problems.append({
            "query_id": None,
            "kind": "corpus_hash_mismatch",
            "message": f"dataset was built against {meta['corpus_hash'][:12]}, "
                       f"given chunks hash {actual[:12]}",
        })
    for rec in records:
        rep = datamodel.validate(rec, chunk_map)
        for violation in rep.violations:
            problems.append({
                "query_id": rec.query_id,
                "kind": violation.kind,
                "message": violation.message,
            })

    if problems:
        _fail_validation(json.dumps({"violations": problems[:50], "total": len(problems)}))
        return EXIT_VALIDATION
    print(f"ok: {len(records)} records validate against {args.chunks}")
    return EXIT_OK


def _fail_validation(message: str) -> None:
    print(json.dumps({"error": "validation", "message": message}), file=sys.stderr)


# --- argument wiring -------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (flags override it)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--backend", choices=["mock", "http"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragforge",
        description="Synthesize domain QA datasets, mine training triplets, "
                    "and evaluate retrievers and RAG loops.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="raw files -> corpus.jsonl + chunks.jsonl")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True, help="files or directories")
    p.add_argument("--format", choices=list(corpus.FORMATS), default="plain")
    p.add_argument("--clean", action="store_true", help="LLM-clean each document")
    p.add_argument("--chunk-size", type=int, dest="chunk_size", default=None)
    p.add_argument("--chunk-overlap", type=int, dest="chunk_overlap", default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("synthesize", help="corpus -> QA dataset")
    _add_common(p)
    p.add_argument("--corpus", required=True, help="corpus.jsonl from ingest")
    p.add_argument("--target", type=int, dest="target_records", default=None)
    p.add_argument("--hop-mix", dest="hop_mix", default=None, help="e.g. 1:0.6,2:0.4")
    p.add_argument("--chunk-size", type=int, dest="chunk_size", default=None)
    p.add_argument("--chunk-overlap", type=int, dest="chunk_overlap", default=None)
    p.add_argument("--out", required=True, help="dataset.jsonl path or run directory")
    p.set_defaults(fn=cmd_synthesize)

    p = sub.add_parser("export-triplets", help="dataset -> training triplets")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--chunks", required=True)
    p.add_argument("--n-neg", type=int, dest="n_neg", default=None)
    p.add_argument("--embed-dim", type=int, dest="embed_dim", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_triplets)

    p = sub.add_parser("eval-retrieval", help="precision@k for direct retrieval")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--chunks", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--embed-dim", type=int, dest="embed_dim", default=None)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(fn=cmd_eval_retrieval)

    p = sub.add_parser("eval-rag", help="run a RAG engine over the dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--chunks", required=True)
    p.add_argument("--engine", choices=list(ragengines.ENGINES), default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--max-iter", type=int, dest="max_iter", default=None)
    p.add_argument("--embed-dim", type=int, dest="embed_dim", default=None)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(fn=cmd_eval_rag)

    p = sub.add_parser("score", help="judge generated answers (CSG + LJ)")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--chunks", required=True)
    p.add_argument("--answers", help="JSONL of {query_id, answer}")
    p.add_argument("--traces", help="trace file from eval-rag")
    p.add_argument("--rubric-points", action="store_true", dest="rubric_points",
                   default=None, help="also score rubric criteria")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("validate", help="check a dataset against its chunk corpus")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--chunks", required=True)
    p.set_defaults(fn=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except RagforgeError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
