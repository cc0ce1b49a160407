"""Engine state machines: step structure, caps, replayability."""

import json

import pytest

from ragforge import backends, ragengines, retrieval
from ragforge.backends import EmbedBackend
from ragforge.corpus import Chunk
from ragforge.offline import offline_chat_backend


def _fixture(n=8, dim=16):
    texts = [f"section {i} content" for i in range(n)]
    chunks = [Chunk(f"d{i}#0", f"d{i}", 0, len(t), t, ()) for i, t in enumerate(texts)]
    backend = EmbedBackend(kind="mock_hash", dimension=dim)
    idx = retrieval.build_index(chunks, backend)
    return idx, backend, {c.chunk_id: c.text for c in chunks}


def _kinds(trace):
    return [s.kind for s in trace.steps]


def _assert_trace_invariants(trace, corpus_ids, cap=None):
    kinds = _kinds(trace)
    assert kinds.count("stop") == 1
    assert kinds[-1] == "stop"
    assert set(trace.retrieved_all) <= set(corpus_ids)
    assert len(trace.retrieved_all) == len(set(trace.retrieved_all))
    if cap is not None:
        assert trace.retrieve_count() <= cap


# --- vanilla ---------------------------------------------------------------------

def test_vanilla_single_retrieval():
    idx, emb, texts = _fixture()
    trace = ragengines.run_vanilla("what is in section 3?", idx, emb,
                                   offline_chat_backend(), texts, query_id="q1")
    assert trace.retrieve_count() == 1
    assert len(trace.retrieved_all) <= 3
    _assert_trace_invariants(trace, texts)


def test_vanilla_scripted_generator_answer():
    idx, emb, texts = _fixture()
    gen = backends.scripted([("rag_answer", "the scripted answer")])
    trace = ragengines.run_vanilla("q", idx, emb, gen, texts)
    assert trace.final_answer == "the scripted answer"
    assert _kinds(trace) == ["retrieve", "generate", "stop"]


# --- rr --------------------------------------------------------------------------

def test_rr_disjoint_subqueries_keep_five_of_six():
    idx, emb, texts = _fixture()
    # These two sub-queries have disjoint top-3 sets over this fixture:
    # ['d3#0','d0#0','d6#0'] and ['d5#0','d1#0','d7#0'].
    plan = json.dumps(["first part 0", "second part 3"])
    gen = backends.scripted({
        "rr_plan": [plan],
        "rag_answer": ["done"],
    })
    trace = ragengines.run_rr("q", idx, emb, gen, texts)
    agg = next(s for s in trace.steps if s.kind == "aggregate")
    assert agg.payload["considered"] == 6
    assert agg.payload["kept"] == ["d3#0", "d5#0", "d0#0", "d6#0", "d1#0"]
    assert len(agg.payload["kept"]) == 5
    assert trace.retrieve_count() == 2
    _assert_trace_invariants(trace, texts)


def test_rr_single_subquery_keeps_top3():
    idx, emb, texts = _fixture()
    gen = backends.scripted({
        "rr_plan": [json.dumps(["only one"])],
        "rag_answer": ["done"],
    })
    trace = ragengines.run_rr("q", idx, emb, gen, texts)
    agg = next(s for s in trace.steps if s.kind == "aggregate")
    assert len(agg.payload["kept"]) == 3


def test_rr_duplicate_chunk_counted_once():
    idx, emb, texts = _fixture()
    gen = backends.scripted({
        "rr_plan": [json.dumps(["same query", "same query"])],
        "rag_answer": ["done"],
    })
    trace = ragengines.run_rr("q", idx, emb, gen, texts)
    agg = next(s for s in trace.steps if s.kind == "aggregate")
    assert agg.payload["considered"] == 3
    assert len(agg.payload["kept"]) == 3
    assert len(trace.retrieved_all) == 3


def test_rr_unparseable_plan_falls_back_to_query():
    idx, emb, texts = _fixture()
    gen = backends.scripted({
        "rr_plan": ["not json"],
        "rag_answer": ["done"],
    })
    trace = ragengines.run_rr("the original", idx, emb, gen, texts)
    plan = next(s for s in trace.steps if s.kind == "plan")
    assert plan.payload["sub_queries"] == ["the original"]


# --- flare -----------------------------------------------------------------------

def test_flare_done_after_two_sentences():
    idx, emb, texts = _fixture()
    gen = backends.scripted({
        "flare_step": ["first draft sentence", "second draft sentence", "<DONE>"],
        "rag_answer": ["final"],
    })
    trace = ragengines.run_flare("q", idx, emb, gen, texts)
    assert trace.retrieve_count() == 2
    assert trace.final_answer == "final"
    _assert_trace_invariants(trace, texts, cap=8)


def test_flare_never_done_hits_cap():
    idx, emb, texts = _fixture()
    gen = backends.scripted({
        "flare_step": lambda s, u, seed: "yet another sentence",
        "rag_answer": lambda s, u, seed: "forced final",
    })
    trace = ragengines.run_flare("q", idx, emb, gen, texts, max_iter=8)
    assert trace.retrieve_count() == 8
    _assert_trace_invariants(trace, texts, cap=8)


def test_flare_max_iter_one():
    idx, emb, texts = _fixture()
    gen = backends.scripted({
        "flare_step": lambda s, u, seed: "never stops",
        "rag_answer": lambda s, u, seed: "final",
    })
    trace = ragengines.run_flare("q", idx, emb, gen, texts, max_iter=1)
    assert trace.retrieve_count() == 1


def test_flare_rejects_bad_cap():
    idx, emb, texts = _fixture()
    with pytest.raises(ValueError):
        ragengines.run_flare("q", idx, emb, offline_chat_backend(), texts, max_iter=0)


# --- react -----------------------------------------------------------------------

def test_react_scripted_actions():
    idx, emb, texts = _fixture()
    gen = backends.scripted({
        "react_step": ["RETRIEVE[first thing]", "RETRIEVE[second thing]", "STOP[the answer]"],
    })
    trace = ragengines.run_react("q", idx, emb, gen, texts)
    assert trace.retrieve_count() == 2
    assert trace.final_answer == "the answer"
    _assert_trace_invariants(trace, texts, cap=8)


def test_react_never_stopping_forced_generate():
    idx, emb, texts = _fixture()
    calls = {"n": 0}

    def planner(system, user, seed):
        calls["n"] += 1
        return f"RETRIEVE[query number {calls['n']}]"

    gen = backends.scripted({
        "react_step": planner,
        "rag_answer": lambda s, u, seed: "forced",
    })
    trace = ragengines.run_react("q", idx, emb, gen, texts, max_iter=8)
    assert calls["n"] == 8
    assert trace.retrieve_count() == 8
    assert trace.final_answer == "forced"
    _assert_trace_invariants(trace, texts, cap=8)


def test_react_malformed_action_counts_as_interaction():
    idx, emb, texts = _fixture()
    gen = backends.scripted({
        "react_step": ["FLY TO THE MOON", "STOP[recovered]"],
    })
    trace = ragengines.run_react("q", idx, emb, gen, texts)
    plans = [s for s in trace.steps if s.kind == "plan"]
    assert len(plans) == 2
    assert plans[0].payload["action"] == "unparseable"
    assert trace.final_answer == "recovered"


def test_react_aggregate_action():
    idx, emb, texts = _fixture()
    gen = backends.scripted({
        "react_step": ["RETRIEVE[find it]", "AGGREGATE", "STOP[ok]"],
    })
    trace = ragengines.run_react("q", idx, emb, gen, texts)
    kinds = _kinds(trace)
    assert "aggregate" in kinds
    agg = next(s for s in trace.steps if s.kind == "aggregate")
    assert agg.payload["kept"] == trace.retrieved_all


# --- cross-engine properties --------------------------------------------------------

def test_all_engines_replay_byte_identical(tmp_path):
    idx, emb, texts = _fixture()
    for name, engine in ragengines.ENGINES.items():
        files = []
        for run in ("a", "b"):
            trace = engine("what is in section 5?", idx, emb, offline_chat_backend(),
                           texts, query_id="q1")
            path = tmp_path / f"{name}_{run}.jsonl"
            ragengines.save_traces(path, [trace])
            files.append(path.read_bytes())
        assert files[0] == files[1], name


def test_timing_not_serialized():
    idx, emb, texts = _fixture()
    trace = ragengines.run_vanilla("q", idx, emb, offline_chat_backend(), texts)
    assert trace.timing["wall_clock_s"] > 0
    assert "timing" not in ragengines.trace_to_dict(trace)


def test_traces_expose_counts_for_posthoc_metrics():
    idx, emb, texts = _fixture()
    trace = ragengines.run_react("q", idx, emb, offline_chat_backend(), texts)
    stop = trace.steps[-1]
    assert stop.kind == "stop"
    assert stop.payload["retrieve_calls"] == trace.retrieve_count()
    assert stop.payload["chat_calls"] >= 1
