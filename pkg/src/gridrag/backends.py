"""LLM backends: a deterministic scripted backend and an OpenAI-compatible HTTP client."""
from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .agent import BOOTSTRAP_CALL_ID, ImagePart, Message, TextPart, ToolCall, ToolResult, render_message, render_result
from .errors import BackendFailure, ScriptMismatch

SCRIPT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ScriptStep:
    match: str = ""
    tool_calls: tuple = ()  # ({"tool": name, "arguments": {...}}, ...)
    answer: str | None = None
    text: str = ""
    repeat: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptStep":
        calls = tuple({"tool": c["tool"], "arguments": dict(c.get("arguments") or {})} for c in d.get("tool_calls", []))
        if calls and d.get("answer") is not None:
            raise ValueError("a script step emits tool calls or an answer, not both")
        if not calls and d.get("answer") is None:
            raise ValueError("a script step needs tool_calls or an answer")
        return cls(d.get("match", ""), calls, d.get("answer"), d.get("text", ""), bool(d.get("repeat", False)))


def _turn(messages) -> int:
    """Number of assistant turns so far, not counting the bootstrap injection."""
    n = 0
    for m in messages:
        if m.role == "assistant" and not any(isinstance(p, ToolCall) and p.call_id == BOOTSTRAP_CALL_ID
                                             for p in m.content):
            n += 1
    return n


class ScriptedBackend:
    """Replays a fixed list of steps; the step is chosen by the assistant-turn count.

    The response depends only on the message history, so runs are byte-reproducible.
    """

    def __init__(self, steps, name: str = "scripted"):
        self.steps = [s if isinstance(s, ScriptStep) else ScriptStep.from_dict(s) for s in steps]
        if not self.steps:
            raise ValueError("script has no steps")
        self.name = name

    def step(self, messages, tool_schemas=()) -> Message:
        turn = _turn(messages)
        if turn < len(self.steps):
            st = self.steps[turn]
        elif self.steps[-1].repeat:
            st = self.steps[-1]
        else:
            raise ScriptMismatch(f"{self.name}: script exhausted at turn {turn + 1}")
        latest = render_message(messages[-1]) if messages else ""
        if st.match and st.match not in latest:
            raise ScriptMismatch(f"{self.name}: turn {turn + 1} expected {st.match!r} in latest message, got {latest[:200]!r}")
        known = {s["name"] for s in tool_schemas}
        parts = []
        if st.answer is not None:
            return Message("assistant", (TextPart(st.answer),))
        if st.text:
            parts.append(TextPart(st.text))
        for j, c in enumerate(st.tool_calls, 1):
            if known and c["tool"] not in known:
                raise ScriptMismatch(f"{self.name}: tool {c['tool']!r} is not offered")
            parts.append(ToolCall(f"call_{turn + 1}_{j}", c["tool"], dict(c["arguments"])))
        return Message("assistant", tuple(parts))


class ScriptBook:
    """Named scripted conversations loaded from one JSON file.

    Either ``{"steps": [...]}`` (a single default conversation) or
    ``{"conversations": {"planner": {...}, "subtask-1": {...}, ...}}``.
    """

    def __init__(self, conversations: dict):
        self.conversations = conversations

    @classmethod
    def load(cls, path: str | Path) -> "ScriptBook":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format_version", SCRIPT_FORMAT_VERSION) != SCRIPT_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported script format_version")
        if "steps" in doc:
            convs = {"default": doc["steps"]}
        else:
            convs = {k: v["steps"] if isinstance(v, dict) else v for k, v in doc["conversations"].items()}
        return cls({k: ScriptedBackend(v, name=f"{Path(path).name}:{k}") for k, v in convs.items()})

    def get(self, role: str) -> ScriptedBackend:
        if role in self.conversations:
            return self.conversations[role]
        if "default" in self.conversations:
            return self.conversations["default"]
        raise BackendFailure(f"no scripted conversation for {role!r}")


# ---------------------------------------------------------------- live backend

def _image_url(img: ImagePart) -> dict:
    data = base64.b64encode(img.payload).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:{img.encoding};base64,{data}"}}


def to_openai_messages(messages) -> list[dict]:
    out: list[dict] = []
    pending_images: list[dict] = []

    def flush():
        if pending_images:
            out.append({"role": "user", "content": [{"type": "text", "text": "Images from the tool results above:"}]
                        + pending_images[:]})
            pending_images.clear()

    for m in messages:
        if m.role != "tool":
            flush()
        if m.role in ("system", "user"):
            images = [p for p in m.content if isinstance(p, ImagePart)]
            if images:
                out.append({"role": m.role, "content": [{"type": "text", "text": m.text}] + [_image_url(i) for i in images]})
            else:
                out.append({"role": m.role, "content": m.text})
        elif m.role == "assistant":
            d = {"role": "assistant", "content": m.text or None}
            if m.tool_calls:
                d["tool_calls"] = [{"id": c.call_id, "type": "function",
                                    "function": {"name": c.tool_name, "arguments": json.dumps(c.arguments)}}
                                   for c in m.tool_calls]
            out.append(d)
        else:
            for p in m.content:
                if isinstance(p, ToolResult):
                    out.append({"role": "tool", "tool_call_id": p.call_id, "content": render_result(p)})
                    pending_images.extend(_image_url(h.image) for h in p.chunks if h.image is not None)
    flush()
    return out


@dataclass
class OpenAICompatBackend:
    """Chat-completions client for any OpenAI-compatible endpoint.

    The API key is read from the environment variable named by ``api_key_env``.
    """

    model: str
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 120.0
    transport: httpx.BaseTransport | None = field(default=None, repr=False)

    def step(self, messages, tool_schemas=()) -> Message:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise BackendFailure(f"environment variable {self.api_key_env} is not set")
        body = {"model": self.model, "messages": to_openai_messages(messages)}
        if tool_schemas:
            body["tools"] = [{"type": "function", "function": s} for s in tool_schemas]
        try:
            with httpx.Client(base_url=self.base_url, timeout=self.timeout, transport=self.transport) as client:
                resp = client.post("/chat/completions", json=body, headers={"Authorization": f"Bearer {key}"})
                resp.raise_for_status()
                msg = resp.json()["choices"][0]["message"]
        except httpx.HTTPError as exc:
            raise BackendFailure(f"{type(exc).__name__}: {exc}") from exc
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendFailure(f"malformed completion response: {exc}") from exc
        parts = []
        if msg.get("content"):
            parts.append(TextPart(msg["content"]))
        for c in msg.get("tool_calls") or []:
            try:
                args = json.loads(c["function"].get("arguments") or "{}")
            except ValueError as exc:
                raise BackendFailure(f"tool call arguments are not JSON: {exc}") from exc
            parts.append(ToolCall(c["id"], c["function"]["name"], args))
        return Message("assistant", tuple(parts))


class BackendSet:
    """Resolves a backend per conversation role (query, planner, subtask-N, synthesize)."""

    def __init__(self, book: ScriptBook | None = None, live=None):
        self.book = book
        self.live = live

    def get(self, role: str):
        if self.book is not None:
            return self.book.get(role)
        return self.live


def resolve_backend(spec: str, api_key_env: str = "OPENAI_API_KEY", base_url: str | None = None) -> BackendSet:
    """``scripted:<path>`` or ``openai:<model>``."""
    kind, _, rest = spec.partition(":")
    if kind == "scripted":
        if not rest or not Path(rest).is_file():
            raise FileNotFoundError(f"scripted backend file not found: {rest!r}")
        return BackendSet(book=ScriptBook.load(rest))
    if kind == "openai":
        if not rest:
            raise ValueError("openai backend needs a model name, e.g. openai:gpt-4o")
        kwargs = {"model": rest, "api_key_env": api_key_env}
        if base_url:
            kwargs["base_url"] = base_url
        return BackendSet(live=OpenAICompatBackend(**kwargs))
    raise ValueError(f"unknown backend {spec!r}; use scripted:<path> or openai:<model>")
