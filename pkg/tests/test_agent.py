import json
import random

import httpx
import pytest

from gridrag.agent import (
    IMAGE_TOKENS, BudgetExhausted, ImagePart, LoopBudget, Message, TextPart, ToolCall, ToolResult,
    assistant, dumps_trace, estimate_tokens, prune_images, read_trace, register_search_tools, render_result,
    run_agent, tool_message, user, write_trace,
)
from gridrag.backends import OpenAICompatBackend, ScriptBook, ScriptedBackend, resolve_backend
from gridrag.chunker import Chunk
from gridrag.embedding import MockEmbedder
from gridrag.errors import BackendFailure, ScriptMismatch, ToolFailure
from gridrag.index import build_index

from conftest import GOLDEN
from helpers import AlwaysCalls, hit, payload_results, random_history, run_emea_query


# ------------------------------------------------------------------------- tools

def test_search_registry(toy_index):
    reg = register_search_tools(toy_index)
    assert reg.names == ["search_all", "search_columns", "search_images", "search_rows", "search_windows"]
    for schema in reg.schemas():
        params = schema["parameters"]
        assert params["required"] == ["query"]
        assert {"query", "K"} <= set(params["properties"])
    assert {"row", "col"} <= set(reg.tools["search_rows"].schema()["parameters"]["properties"])


def test_search_images_without_images():
    chunks = [Chunk("a", "row", "w", "S", (1, 1), (1, 2), (), "sheet=S row=A1:B1 | x=1")]
    reg = register_search_tools(build_index(chunks, MockEmbedder()))
    res = reg.execute(ToolCall("1", "search_images", {"query": "chart"}))
    assert res.ok and res.chunks == ()


def test_search_rows_filter(toy_index):
    res = register_search_tools(toy_index).execute(ToolCall("1", "search_rows", {"query": "EMEA", "row": 3}))
    assert res.ok and res.chunks
    assert all(h.row_span == (3, 3) for h in res.chunks)


def test_invalid_arguments_are_results(toy_index):
    reg = register_search_tools(toy_index)
    bad = reg.execute(ToolCall("1", "search_all", {"K": 3}))
    assert not bad.ok and "query" in bad.error
    assert not reg.execute(ToolCall("2", "search_all", {"query": "x", "K": True})).ok
    assert not reg.execute(ToolCall("3", "no_such_tool", {})).ok


# -------------------------------------------------------------------------- loop

def test_two_step_script(toy_index):
    backend = ScriptedBackend([
        {"tool_calls": [{"tool": "search_all", "arguments": {"query": "revenue"}}]},
        {"answer": "X"},
    ])
    res = run_agent("q", [], register_search_tools(toy_index), backend)
    assert res.answer == "X"
    assert len(res.trace) == 1
    assert res.trace[0].tool_call.tool_name == "search_all"


def test_budget_exhaustion(toy_index):
    res = run_agent("q", [], register_search_tools(toy_index), AlwaysCalls())
    assert len(res.trace) == 50
    assert isinstance(res.answer, BudgetExhausted)
    assert res.answer == "turn 50"
    assert [e.seq for e in res.trace] == list(range(1, 51))


def test_budget_drops_overflow_calls(toy_index):
    res = run_agent("q", [], register_search_tools(toy_index), AlwaysCalls(per_turn=3), LoopBudget(5))
    assert len(res.trace) == 5
    sent = [c for m in res.messages if m.role == "assistant" for c in m.tool_calls]
    assert len(sent) == 5


def test_bootstrap_not_counted(toy_index):
    initial = [(toy_index.chunks[0], 0.5)]
    res = run_agent("q", initial, register_search_tools(toy_index), AlwaysCalls(), LoopBudget(3))
    assert len(res.trace) == 4
    assert res.trace[0].is_bootstrap and res.trace[0].seq == 0
    assert res.tool_calls == 3


def test_backend_failure_keeps_partial_trace(toy_index):
    backend = ScriptedBackend([{"tool_calls": [{"tool": "search_all", "arguments": {"query": "x"}}]}])
    with pytest.raises(BackendFailure) as err:
        run_agent("q", [], register_search_tools(toy_index), backend)
    assert isinstance(err.value, ScriptMismatch)
    assert len(err.value.trace) == 1


def test_tool_errors_feed_back(toy_index):
    backend = ScriptedBackend([
        {"tool_calls": [{"tool": "search_all", "arguments": {}}]},
        {"match": "ERROR", "answer": "recovered"},
    ])
    res = run_agent("q", [], register_search_tools(toy_index), backend)
    assert res.answer == "recovered"
    assert not res.trace[0].tool_result.ok


def test_golden_query_trace(toy_index):
    res = run_emea_query(toy_index)
    assert dumps_trace(res.trace) == (GOLDEN / "query_emea.trace.jsonl").read_text(encoding="utf-8")
    assert res.answer == (GOLDEN / "query_emea.answer.txt").read_text(encoding="utf-8").rstrip("\n")
    assert [e.tool_call.tool_name for e in res.trace if not e.is_bootstrap] == \
        ["search_rows", "search_columns", "search_rows", "search_rows"]


def test_trace_round_trip(tmp_path, toy_index):
    res = run_emea_query(toy_index)
    write_trace(res.trace, tmp_path / "t.jsonl")
    assert read_trace(tmp_path / "t.jsonl") == res.trace
    line = json.loads((tmp_path / "t.jsonl").read_text().splitlines()[0])
    line["format_version"] = 2
    (tmp_path / "bad.jsonl").write_text(json.dumps(line) + "\n")
    with pytest.raises(ToolFailure):
        read_trace(tmp_path / "bad.jsonl")


def test_trace_has_no_payloads(toy_index):
    res = run_agent("q", [], register_search_tools(toy_index), ScriptedBackend([
        {"tool_calls": [{"tool": "search_images", "arguments": {"query": "chart"}}]}, {"answer": "done"}]))
    hits = res.trace[0].tool_result.chunks
    assert hits and all(h.image is None and h.image_digest for h in hits)


# ------------------------------------------------------------------------- prune

def _history(image_results):
    msgs = [user("q")]
    for i in range(1, 7):
        msgs.append(assistant("", [ToolCall(f"c{i}", "search_images", {"query": "x"})]))
        msgs.append(tool_message(ToolResult(f"c{i}", True, (hit(i, image=i in image_results),))))
    return msgs


def test_prune_keeps_latest():
    pruned = prune_images(_history({2, 5}))
    carriers = [m.content[0].call_id for m in pruned if m.role == "tool" and m.content[0].has_images]
    assert carriers == ["c5"]
    stub = next(m.content[0] for m in pruned if m.role == "tool" and m.content[0].call_id == "c2").chunks[0]
    assert stub.pruned
    text = render_result(ToolResult("c2", True, (stub,)))
    assert "image pruned" in text and "alt 2" in text and stub.image_digest in text


def test_prune_identity_without_images():
    msgs = _history(set())
    assert prune_images(msgs) == msgs


def test_prune_three_retrievals():
    msgs = [user("q")]
    n = 0
    for turn in range(3):
        msgs.append(assistant("", [ToolCall(f"c{turn}", "search_images", {"query": "x"})]))
        hits = []
        for _ in range(3):
            n += 1
            hits.append(hit(n, image=True))
        msgs.append(tool_message(ToolResult(f"c{turn}", True, tuple(hits))))
        msgs = prune_images(msgs)
    payloads = sum(1 for m in msgs if m.role == "tool" for h in m.content[0].chunks if h.image is not None)
    assert payloads == 3


def test_prune_random_histories():
    rng = random.Random(5)
    for _ in range(200):
        msgs = random_history(rng)
        once = prune_images(msgs)
        assert len(payload_results(once)) <= 1
        assert prune_images(once) == once
        users = [m for m in msgs if m.role != "tool"]
        assert [m for m in once if m.role != "tool"] == users


# ------------------------------------------------------------------------ tokens

def test_estimate_tokens():
    assert estimate_tokens(Message("user", ())) == 0
    assert estimate_tokens(user("x" * 400)) == 100
    msg = Message("user", (TextPart("y" * 100), ImagePart(b"1"), ImagePart(b"2")))
    assert estimate_tokens(msg) == 25 + 2 * IMAGE_TOKENS
    assert estimate_tokens(user("abc")) == 1


# ---------------------------------------------------------------------- backends

def test_scripted_call_ids_and_repeat():
    backend = ScriptedBackend([{"tool_calls": [{"tool": "a", "arguments": {}}, {"tool": "b", "arguments": {}}],
                                "repeat": True}])
    first = backend.step([user("q")])
    assert [c.call_id for c in first.tool_calls] == ["call_1_1", "call_1_2"]
    later = backend.step([user("q"), first, first])
    assert [c.call_id for c in later.tool_calls] == ["call_3_1", "call_3_2"]


def test_scripted_match_mismatch():
    backend = ScriptedBackend([{"match": "needle", "answer": "x"}])
    with pytest.raises(ScriptMismatch):
        backend.step([user("haystack")])
    assert backend.step([user("a needle")]).text == "x"


def test_script_book_roles(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"conversations": {"planner": {"steps": [{"answer": "p"}]},
                                                  "default": [{"answer": "d"}]}}))
    book = ScriptBook.load(path)
    assert book.get("planner").step([user("q")]).text == "p"
    assert book.get("subtask-3").step([user("q")]).text == "d"


def test_openai_backend_mock_transport(monkeypatch):
    seen = {}

    def handler(request: httpx.Request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {
            "content": "thinking",
            "tool_calls": [{"id": "abc", "type": "function",
                            "function": {"name": "search_all", "arguments": "{\"query\": \"EMEA\"}"}}]}}]})

    monkeypatch.setenv("TEST_KEY", "sekret")
    backend = OpenAICompatBackend("m1", base_url="http://llm.test/v1", api_key_env="TEST_KEY",
                                  transport=httpx.MockTransport(handler))
    msgs = [user("q"), assistant("", [ToolCall("x1", "search_images", {"query": "c"})]),
            tool_message(ToolResult("x1", True, (hit(1, image=True),)))]
    out = backend.step(msgs, [{"name": "search_all", "description": "d", "parameters": {}}])
    assert out.tool_calls == [ToolCall("abc", "search_all", {"query": "EMEA"})]
    assert out.text == "thinking"
    assert seen["auth"] == "Bearer sekret"
    assert seen["body"]["model"] == "m1"
    roles = [m["role"] for m in seen["body"]["messages"]]
    assert roles == ["user", "assistant", "tool", "user"]
    urls = [p["image_url"]["url"] for p in seen["body"]["messages"][-1]["content"] if p["type"] == "image_url"]
    assert len(urls) == 1 and urls[0].startswith("data:image/png;base64,")


def test_openai_backend_errors(monkeypatch):
    monkeypatch.delenv("MISSING_KEY", raising=False)
    with pytest.raises(BackendFailure):
        OpenAICompatBackend("m", api_key_env="MISSING_KEY").step([user("q")])
    monkeypatch.setenv("K2", "x")
    broken = OpenAICompatBackend("m", base_url="http://llm.test", api_key_env="K2",
                                 transport=httpx.MockTransport(lambda r: httpx.Response(500, text="boom")))
    with pytest.raises(BackendFailure):
        broken.step([user("q")])


def test_resolve_backend(tmp_path):
    with pytest.raises(FileNotFoundError):
        resolve_backend(f"scripted:{tmp_path / 'missing.json'}")
    live = resolve_backend("openai:some-model")
    assert live.get("query").model == "some-model"
    with pytest.raises(ValueError):
        resolve_backend("carrier-pigeon:x")
