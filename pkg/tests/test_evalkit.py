import json
import random

import pytest

from gridrag.agent import ToolCall, ToolResult, TraceEntry
from gridrag.chunker import Chunk
from gridrag.embedding import MockEmbedder
from gridrag.index import build_index
from gridrag.errors import EmptyRelevantSet, UnresolvedLabel
from gridrag.evalkit import (
    LabeledQuery, cost_report, dump_queryset, format_table, load_queryset, map_at_k, ndcg_at_k, recall_at_k,
    results_document, run_retrieval_eval,
)

from conftest import GOLDEN, SUITE_QUERIES
from oracles import map_ref, ndcg_ref, recall_ref


def test_recall_examples():
    ranking = ["a", "x", "c", "y"]
    assert recall_at_k(ranking, {"a", "b", "c", "d"}, 10) == 0.5
    assert recall_at_k(["a", "b"], {"a", "b"}, 10) == 1.0
    assert recall_at_k(["x", "y"], {"a"}, 10) == 0.0


def test_ndcg_examples():
    assert ndcg_at_k(["r1", "n", "r2"], {"r1", "r2"}, 3) == pytest.approx(1.5 / (1 + 1 / 1.584962500721156))
    assert round(ndcg_at_k(["r1", "n", "r2"], {"r1", "r2"}, 3), 4) == 0.9197
    assert ndcg_at_k(["a", "b"], {"a", "b"}, 5) == 1.0
    assert ndcg_at_k(["x", "y", "a"], {"a"}, 2) == 0.0


def test_map_examples():
    assert map_at_k(["r1", "n", "r2"], {"r1", "r2"}, 3) == pytest.approx((1 + 2 / 3) / 2)
    assert round(map_at_k(["r1", "n", "r2"], {"r1", "r2"}, 5), 4) == 0.8333
    assert map_at_k(["a"], {"a"}, 10) == 1.0
    assert map_at_k([], {"a"}, 10) == 0.0


def test_metric_argument_checks():
    with pytest.raises(EmptyRelevantSet):
        recall_at_k(["a"], set(), 5)
    with pytest.raises(ValueError):
        ndcg_at_k(["a"], {"a"}, 0)
    with pytest.raises(EmptyRelevantSet):
        LabeledQuery("q", "text", frozenset())


def test_duplicates_do_not_inflate():
    assert recall_at_k(["a", "a"], {"a", "b"}, 2) == 0.5
    assert ndcg_at_k(["a", "a"], {"a", "b"}, 2) == pytest.approx(ndcg_ref(["a", "a"], {"a", "b"}, 2))
    assert map_at_k(["a", "a", "b"], {"a", "b"}, 3) == pytest.approx(map_ref(["a", "a", "b"], {"a", "b"}, 3))


def test_metrics_random_sample():
    rng = random.Random(3)
    pool = [f"d{i}" for i in range(15)]
    for _ in range(1000):
        ranking = [rng.choice(pool) for _ in range(rng.randint(0, 15))]
        relevant = set(rng.sample(pool, rng.randint(1, 6)))
        K = rng.randint(1, 12)
        assert abs(recall_at_k(ranking, relevant, K) - recall_ref(ranking, relevant, K)) <= 1e-12
        assert abs(ndcg_at_k(ranking, relevant, K) - ndcg_ref(ranking, relevant, K)) <= 1e-12
        assert abs(map_at_k(ranking, relevant, K) - map_ref(ranking, relevant, K)) <= 1e-12


def test_eval_single_perfect_query():
    chunks = [Chunk(f"w/S/row/A{i}:B{i}", "row", "w", "S", (i, i), (1, 2), (), text)
              for i, text in enumerate(["apples oranges", "quarterly payroll taxes", "zinc copper"], 1)]
    index = build_index(chunks, MockEmbedder())
    rows = run_retrieval_eval(index, [LabeledQuery("q1", "quarterly payroll taxes",
                                                   frozenset({"w/S/row/A2:B2"}))], (1, 3))
    assert {r.retriever for r in rows} == {"dense", "lexical", "hybrid"}
    assert all(r.value == 1.0 for r in rows)


def test_eval_unresolved_label(toy_index):
    with pytest.raises(UnresolvedLabel):
        run_retrieval_eval(toy_index, [LabeledQuery("q1", "x", frozenset({"no/such/chunk"}))])


def test_eval_suite_golden(suite_index):
    queries = load_queryset(SUITE_QUERIES)
    assert len(queries) == 20
    doc = results_document(run_retrieval_eval(suite_index, queries, (5, 10)), len(queries))
    golden = json.loads((GOLDEN / "retrieval_suite.metrics.json").read_text())
    key = lambda r: (r["retriever"], r["metric"], r["K"])  # noqa: E731
    assert sorted(map(key, doc["rows"])) == sorted(map(key, golden["rows"]))
    want = {key(r): r["value"] for r in golden["rows"]}
    for r in doc["rows"]:
        assert r["value"] == pytest.approx(want[key(r)], abs=1e-12), key(r)


def test_queryset_round_trip(tmp_path):
    queries = load_queryset(SUITE_QUERIES)
    (tmp_path / "q.json").write_text(dump_queryset(queries))
    assert load_queryset(tmp_path / "q.json") == queries


def test_table_columns(suite_index):
    rows = run_retrieval_eval(suite_index, load_queryset(SUITE_QUERIES)[:3], (5, 10))
    header = format_table(rows).splitlines()[0].split()
    assert header == ["retriever", "ndcg@5", "ndcg@10", "recall@5", "recall@10", "map@5", "map@10"]


def _trace(n, start=0.0, step=1.0, tokens=10):
    return [TraceEntry(i + 1, start + i * step, None, ToolCall(f"c{i}", "search_all", {"query": "q"}),
                       ToolResult(f"c{i}", True), tokens) for i in range(n)]


def test_cost_report():
    rep = cost_report([_trace(2), _trace(4), _trace(6)])
    assert rep["count"] == 3
    assert rep["tool_calls"] == {"mean": 4, "median": 4}
    assert rep["tokens"]["mean"] == 40
    assert rep["latency_s"]["median"] == 3.0
    skew = cost_report([_trace(1), _trace(1), _trace(50)])
    assert skew["tool_calls"]["mean"] == pytest.approx(17.333, abs=1e-3)
    assert skew["tool_calls"]["median"] == 1
    assert cost_report([]) == {"count": 0, "tool_calls": {"mean": None, "median": None},
                               "tokens": {"mean": None, "median": None},
                               "latency_s": {"mean": None, "median": None}}
