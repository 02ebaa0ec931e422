"""Shared builders for agent, planner and CLI tests."""
import random

from gridrag.agent import (
    ChunkHit, ImagePart, Message, TextPart, ToolCall, ToolResult, assistant, run_agent, tool_message, user,
    register_search_tools,
)
from gridrag.backends import ScriptBook
from gridrag.cli import QUERY_SYSTEM_PROMPT
from gridrag.index import hybrid_search

from conftest import FIXTURES

EMEA_QUESTION = "What was EMEA revenue, and does it reconcile to the division detail?"
SUMMARY_TASK = ('Create summary.xlsx with the number of "Division roll-up" rows in A1, '
                "the number of sheets in A2 and their total in A3.")


def run_emea_query(index, clock=lambda: 0.0):
    backend = ScriptBook.load(FIXTURES / "query_emea.script.json").get("query")
    initial = hybrid_search(index, EMEA_QUESTION)
    return run_agent(EMEA_QUESTION, initial, register_search_tools(index), backend,
                     system_prompt=QUERY_SYSTEM_PROMPT, clock=clock)


class AlwaysCalls:
    """Backend that requests one more search on every turn."""

    def __init__(self, tool="search_all", per_turn=1):
        self.tool = tool
        self.per_turn = per_turn
        self.turns = 0

    def step(self, messages, tool_schemas=()):
        self.turns += 1
        calls = [ToolCall(f"t{self.turns}_{j}", self.tool, {"query": f"q{self.turns}"}) for j in range(self.per_turn)]
        return assistant(f"turn {self.turns}", calls)


def hit(i, image=False, payload=None):
    img = ImagePart(payload or bytes([i % 256]) * 8, "image/png", f"alt {i}") if image else None
    digest = f"{i:064x}" if image else None
    return ChunkHit(f"c{i}", "image" if image else "row", "S", f"S!A{i}:A{i}", (i, i), (1, 1), (),
                    f"image at S!A{i} | alt {i}" if image else f"text {i}", 0.5, img, digest)


def random_history(rng: random.Random, max_results=12):
    msgs = [user("question")]
    n = 0
    for turn in range(rng.randint(0, max_results)):
        call = ToolCall(f"c{turn}", "search_all", {"query": "x"})
        msgs.append(assistant("", [call]))
        hits = []
        for _ in range(rng.randint(0, 4)):
            n += 1
            hits.append(hit(n, image=rng.random() < 0.4))
        msgs.append(tool_message(ToolResult(call.call_id, True, tuple(hits))))
        if rng.random() < 0.2:
            msgs.append(Message("user", (TextPart("look"), ImagePart(b"u", "image/png", "user image"))))
    return msgs


def payload_results(messages):
    """Indices of tool messages still carrying at least one image payload."""
    return [i for i, m in enumerate(messages) if m.role == "tool"
            and any(isinstance(p, ToolResult) and p.has_images for p in m.content)]


def plan_text(subtasks, output_type="text"):
    import json

    return json.dumps({"output_type": output_type, "subtasks": [
        {"id": i, "type": t, "description": f"step {i}", "dependencies": list(d)} for i, t, d in subtasks]})


class Answering:
    """Backend that answers at once; ``fn`` maps the prompt text to the answer (or raises)."""

    def __init__(self, fn=lambda prompt: "done"):
        self.fn = fn

    def step(self, messages, tool_schemas=()):
        prompt = next(m.text for m in messages if m.role == "user")
        return assistant(self.fn(prompt))


class Failing:
    def step(self, messages, tool_schemas=()):
        raise RuntimeError("model offline")
