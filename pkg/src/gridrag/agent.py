"""Tool-calling agent loop with image pruning and an append-only tool trace."""
from __future__ import annotations

import base64
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Protocol

from .errors import BackendFailure, ToolFailure
from .fusion import FusionConfig
from .index import CoordFilter, Index, hybrid_search

TRACE_FORMAT_VERSION = 1
IMAGE_TOKENS = 1024
BOOTSTRAP_CALL_ID = "bootstrap"
SEARCH_TOOLS = ("search_rows", "search_columns", "search_windows", "search_images", "search_all")
_SEARCH_KIND = {"search_rows": "row", "search_columns": "column", "search_windows": "window",
                "search_images": "image", "search_all": None}


# ---------------------------------------------------------------- message model

@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    payload: bytes
    encoding: str = "image/png"
    alt_text: str = ""


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    tool_name: str
    arguments: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"call_id": self.call_id, "tool_name": self.tool_name, "arguments": self.arguments}

    @classmethod
    def from_dict(cls, d: dict) -> "ToolCall":
        return cls(d["call_id"], d["tool_name"], dict(d.get("arguments") or {}))


@dataclass(frozen=True)
class ChunkHit:
    """A retrieved chunk as shown to the model."""

    chunk_id: str
    kind: str
    sheet: str
    location: str
    row_span: tuple
    col_span: tuple
    headers: tuple
    text: str
    score: float
    image: ImagePart | None = None
    image_digest: str | None = None

    @property
    def pruned(self) -> bool:
        return self.image is None and self.image_digest is not None

    def stripped(self) -> "ChunkHit":
        return replace(self, image=None) if self.image is not None else self

    def to_dict(self) -> dict:
        d = {
            "chunk_id": self.chunk_id,
            "kind": self.kind,
            "sheet": self.sheet,
            "location": self.location,
            "row_span": list(self.row_span),
            "col_span": list(self.col_span),
            "headers": list(self.headers),
            "text": self.text,
            "score": self.score,
        }
        if self.image_digest is not None:
            d["image_digest"] = self.image_digest
        if self.image is not None:
            d["image"] = {"encoding": self.image.encoding, "alt_text": self.image.alt_text,
                          "payload_base64": base64.b64encode(self.image.payload).decode("ascii")}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkHit":
        image = None
        if d.get("image"):
            i = d["image"]
            image = ImagePart(base64.b64decode(i["payload_base64"]), i["encoding"], i["alt_text"])
        return cls(d["chunk_id"], d["kind"], d["sheet"], d["location"], tuple(d["row_span"]),
                   tuple(d["col_span"]), tuple(d["headers"]), d["text"], d["score"], image, d.get("image_digest"))


@dataclass(frozen=True)
class ToolResult:
    call_id: str
    ok: bool
    chunks: tuple = ()
    error: str | None = None
    data: Any = None

    @property
    def has_images(self) -> bool:
        return any(h.image is not None for h in self.chunks)

    def without_payloads(self) -> "ToolResult":
        return replace(self, chunks=tuple(h.stripped() for h in self.chunks))

    def to_dict(self) -> dict:
        d = {"call_id": self.call_id, "ok": self.ok, "chunks": [h.to_dict() for h in self.chunks]}
        if self.error is not None:
            d["error"] = self.error
        if self.data is not None:
            d["data"] = self.data
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ToolResult":
        return cls(d["call_id"], d["ok"], tuple(ChunkHit.from_dict(h) for h in d.get("chunks", [])),
                   d.get("error"), d.get("data"))


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant | tool
    content: tuple = ()

    def __post_init__(self):
        for part in self.content:
            if isinstance(part, ToolResult) and self.role != "tool":
                raise ValueError("tool results belong in tool messages")
            if isinstance(part, ToolCall) and self.role != "assistant":
                raise ValueError("tool calls belong in assistant messages")

    @property
    def tool_calls(self) -> list[ToolCall]:
        return [p for p in self.content if isinstance(p, ToolCall)]

    @property
    def text(self) -> str:
        return "\n".join(p.text for p in self.content if isinstance(p, TextPart))


def system(text: str) -> Message:
    return Message("system", (TextPart(text),))


def user(text: str) -> Message:
    return Message("user", (TextPart(text),))


def assistant(text: str = "", calls=()) -> Message:
    parts = ((TextPart(text),) if text else ()) + tuple(calls)
    return Message("assistant", parts)


def tool_message(result: ToolResult) -> Message:
    return Message("tool", (result,))


def render_result(result: ToolResult) -> str:
    """Plain-text rendering of a tool result, as a model would read it."""
    if not result.ok:
        return f"ERROR: {result.error}"
    lines = []
    if result.data is not None:
        lines.append(result.data if isinstance(result.data, str)
                     else json.dumps(result.data, sort_keys=True, ensure_ascii=False))
    if result.chunks or result.data is None:
        lines.append(f"{len(result.chunks)} chunk(s)")
    for i, h in enumerate(result.chunks, 1):
        lines.append(f"{i}. {h.location} ({h.kind}, score={h.score:.6f}) id={h.chunk_id}")
        lines.append(f"   {h.text}")
        if h.image is not None:
            lines.append(f"   [image {h.image.encoding}, {len(h.image.payload)} bytes, alt={h.image.alt_text!r}]")
        elif h.image_digest is not None:
            lines.append(f"   [image pruned: sheet={h.sheet} at={h.location.split('!', 1)[-1]} "
                         f"alt={_alt_of(h)!r} sha256={h.image_digest}]")
    return "\n".join(lines)


def _alt_of(h: ChunkHit) -> str:
    _, _, alt = h.text.partition(" | ")
    return alt


def render_message(msg: Message) -> str:
    out = []
    for part in msg.content:
        if isinstance(part, TextPart):
            out.append(part.text)
        elif isinstance(part, ToolCall):
            out.append(f"call {part.tool_name}({json.dumps(part.arguments, sort_keys=True, ensure_ascii=False)})")
        elif isinstance(part, ToolResult):
            out.append(render_result(part))
        elif isinstance(part, ImagePart):
            out.append(f"[image {part.encoding}, alt={part.alt_text!r}]")
    return "\n".join(out)


def estimate_tokens(msg: Message, image_tokens: int = IMAGE_TOKENS) -> int:
    """ceil(chars / 4) over the text a model sees, plus a flat cost per image payload."""
    chars = 0
    images = 0
    for part in msg.content:
        if isinstance(part, TextPart):
            chars += len(part.text)
        elif isinstance(part, ImagePart):
            images += 1
        elif isinstance(part, ToolCall):
            chars += len(render_message(Message("assistant", (part,))))
        elif isinstance(part, ToolResult):
            chars += len(render_result(part))
            images += sum(1 for h in part.chunks if h.image is not None)
    return math.ceil(chars / 4) + images * image_tokens


def prune_images(messages) -> list[Message]:
    """Keep image payloads only in the latest image-bearing tool result.

    Older payloads become digests; the hit keeps its sheet, coordinates and alt
    text. Non-tool messages are never touched.
    """
    messages = list(messages)
    latest = None
    for i, msg in enumerate(messages):
        if msg.role == "tool" and any(isinstance(p, ToolResult) and p.has_images for p in msg.content):
            latest = i
    if latest is None:
        return messages
    out = []
    for i, msg in enumerate(messages):
        if i != latest and msg.role == "tool" and any(isinstance(p, ToolResult) and p.has_images for p in msg.content):
            msg = Message("tool", tuple(p.without_payloads() if isinstance(p, ToolResult) else p for p in msg.content))
        out.append(msg)
    return out


# ----------------------------------------------------------------------- tools

_JSON_TYPES = {"string": str, "integer": int, "number": (int, float), "boolean": bool,
               "array": list, "object": dict, "any": object}


@dataclass
class Tool:
    name: str
    description: str
    parameters: dict  # name -> {"type", "description", "required"}
    fn: Callable[..., Any]

    def schema(self) -> dict:
        props = {k: {kk: vv for kk, vv in v.items() if kk != "required" and (kk, vv) != ("type", "any")}
                 for k, v in self.parameters.items()}
        required = [k for k, v in self.parameters.items() if v.get("required")]
        return {"name": self.name, "description": self.description,
                "parameters": {"type": "object", "properties": props, "required": required}}

    def validate(self, arguments: dict) -> list[str]:
        errors = []
        if not isinstance(arguments, dict):
            return ["arguments must be an object"]
        for key in arguments:
            if key not in self.parameters:
                errors.append(f"unknown argument {key!r}")
        for key, spec in self.parameters.items():
            if key not in arguments:
                if spec.get("required"):
                    errors.append(f"missing required argument {key!r}")
                continue
            value = arguments[key]
            expected = _JSON_TYPES[spec["type"]]
            if isinstance(value, bool) and spec["type"] in ("integer", "number"):
                errors.append(f"argument {key!r} must be {spec['type']}")
            elif not isinstance(value, expected):
                errors.append(f"argument {key!r} must be {spec['type']}")
            elif spec["type"] == "integer" and "minimum" in spec and value < spec["minimum"]:
                errors.append(f"argument {key!r} must be >= {spec['minimum']}")
        return errors


class ToolRegistry:
    def __init__(self, tools=()):
        self.tools: dict[str, Tool] = {}
        for t in tools:
            self.add(t)

    def add(self, tool: Tool) -> None:
        if tool.name in self.tools:
            raise ValueError(f"tool {tool.name!r} already registered")
        self.tools[tool.name] = tool

    def __contains__(self, name):
        return name in self.tools

    def __len__(self):
        return len(self.tools)

    @property
    def names(self) -> list[str]:
        return sorted(self.tools)

    def schemas(self) -> list[dict]:
        return [self.tools[n].schema() for n in self.names]

    def execute(self, call: ToolCall) -> ToolResult:
        """Run one call; every failure becomes an ok=False result."""
        tool = self.tools.get(call.tool_name)
        if tool is None:
            return ToolResult(call.call_id, False, error=f"unknown tool {call.tool_name!r}")
        problems = tool.validate(call.arguments)
        if problems:
            return ToolResult(call.call_id, False, error="invalid arguments: " + "; ".join(problems))
        try:
            out = tool.fn(**call.arguments)
        except NotImplementedError as exc:
            return ToolResult(call.call_id, False, error=f"NotImplemented: {exc or call.tool_name}")
        except Exception as exc:  # tool errors are fed back to the model
            return ToolResult(call.call_id, False, error=f"{type(exc).__name__}: {exc}")
        if isinstance(out, ToolResult):
            return replace(out, call_id=call.call_id)
        if isinstance(out, list) and all(isinstance(h, ChunkHit) for h in out):
            return ToolResult(call.call_id, True, chunks=tuple(out))
        return ToolResult(call.call_id, True, data=out)


def chunk_hit(chunk, score: float) -> ChunkHit:
    image = None
    digest = None
    if chunk.image is not None:
        image = ImagePart(chunk.image.payload, chunk.image.encoding, chunk.image.alt_text)
        digest = hashlib.sha256(chunk.image.payload).hexdigest()
    return ChunkHit(chunk.chunk_id, chunk.kind, chunk.sheet, chunk.location, tuple(chunk.row_span),
                    tuple(chunk.col_span), tuple(chunk.headers), chunk.text, score, image, digest)


def _search_tool(name: str, index: Index, fusion: FusionConfig, default_k: int) -> Tool:
    kind = _SEARCH_KIND[name]
    params = {
        "query": {"type": "string", "description": "natural language or exact-value query", "required": True},
        "K": {"type": "integer", "description": f"number of chunks to return (default {default_k})", "minimum": 1},
    }
    if name in ("search_rows", "search_columns"):
        params["row"] = {"type": "integer", "description": "only chunks covering this 1-based row", "minimum": 1}
        params["col"] = {"type": "integer", "description": "only chunks covering this 1-based column", "minimum": 1}
    what = {"row": "row chunks", "column": "column chunks", "window": "rectangular cell windows",
            "image": "embedded images", None: "all chunk types"}[kind]

    def run(query: str, K: int = default_k, row: int | None = None, col: int | None = None):
        cfg = replace(fusion, top_k=K)
        hits = hybrid_search(index, query, kind, CoordFilter(row, col), cfg)
        return [chunk_hit(ch, score) for ch, score in hits]

    return Tool(name, f"Hybrid search over {what}; returns the top-K chunks with metadata.", params, run)


def register_search_tools(index: Index, fusion: FusionConfig | None = None, default_k: int = 10) -> ToolRegistry:
    fusion = fusion or FusionConfig()
    return ToolRegistry(_search_tool(name, index, fusion, default_k) for name in SEARCH_TOOLS)


# ------------------------------------------------------------------------ loop

@dataclass(frozen=True)
class LoopBudget:
    max_tool_iterations: int = 50
    initial_k: int = 10

    def __post_init__(self):
        if self.max_tool_iterations < 1 or self.initial_k < 1:
            raise ValueError("budget values must be >= 1")


class LlmBackend(Protocol):
    def step(self, messages: list[Message], tool_schemas: list[dict]) -> Message: ...


class BudgetExhausted(str):
    """Answer returned when the tool-call budget ran out; holds the last assistant text."""

    exhausted = True


@dataclass(frozen=True)
class TraceEntry:
    seq: int
    timestamp: float
    subtask_id: int | None
    tool_call: ToolCall
    tool_result: ToolResult  # payload-free
    token_estimate: int

    def to_dict(self) -> dict:
        return {
            "format_version": TRACE_FORMAT_VERSION,
            "seq": self.seq,
            "timestamp": self.timestamp,
            "subtask_id": self.subtask_id,
            "tool_call": self.tool_call.to_dict(),
            "tool_result": self.tool_result.to_dict(),
            "token_estimate": self.token_estimate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEntry":
        return cls(d["seq"], d["timestamp"], d.get("subtask_id"), ToolCall.from_dict(d["tool_call"]),
                   ToolResult.from_dict(d["tool_result"]), d["token_estimate"])

    @property
    def is_bootstrap(self) -> bool:
        return self.tool_call.call_id == BOOTSTRAP_CALL_ID


@dataclass
class AgentResult:
    answer: str
    trace: list
    messages: list

    @property
    def exhausted(self) -> bool:
        return isinstance(self.answer, BudgetExhausted)

    @property
    def tool_calls(self) -> int:
        return sum(1 for e in self.trace if not e.is_bootstrap)


def run_agent(query: str, initial_context, registry: ToolRegistry, backend: LlmBackend,
              budget: LoopBudget | None = None, *, system_prompt: str | None = None,
              subtask_id: int | None = None, clock: Callable[[], float] = time.time) -> AgentResult:
    """Alternate backend steps and tool executions until an answer or the budget ends.

    ``initial_context`` (chunks paired with scores, or bare chunks) is injected
    as the result of a synthetic ``bootstrap`` search call recorded at seq 0;
    it does not count against the budget.
    """
    budget = budget or LoopBudget()
    messages: list[Message] = []
    if system_prompt:
        messages.append(system(system_prompt))
    messages.append(user(query))
    trace: list[TraceEntry] = []

    def record(call: ToolCall, result: ToolResult, seq: int) -> None:
        msg = tool_message(result)
        trace.append(TraceEntry(seq, clock(), subtask_id, call, result.without_payloads(), estimate_tokens(msg)))
        messages.append(msg)

    if initial_context:
        hits = [chunk_hit(*item) if isinstance(item, tuple) else chunk_hit(item, 0.0) for item in initial_context]
        call = ToolCall(BOOTSTRAP_CALL_ID, "search_all", {"query": query, "K": len(hits)})
        messages.append(assistant("", [call]))
        record(call, ToolResult(BOOTSTRAP_CALL_ID, True, chunks=tuple(hits)), 0)
        messages[:] = prune_images(messages)

    calls_made = 0
    last_text = ""
    seen_ids = {BOOTSTRAP_CALL_ID}
    while True:
        try:
            response = backend.step(list(messages), registry.schemas())
        except BackendFailure as exc:
            exc.trace = list(trace)
            raise
        except Exception as exc:
            raise BackendFailure(exc, list(trace)) from exc
        if not isinstance(response, Message) or response.role != "assistant":
            raise BackendFailure(f"backend returned {response!r} instead of an assistant message", list(trace))
        if response.text:
            last_text = response.text
        calls = response.tool_calls
        if not calls:
            messages.append(response)
            return AgentResult(response.text, trace, messages)

        remaining = budget.max_tool_iterations - calls_made
        fixed = []
        for i, call in enumerate(calls[:remaining]):
            if not call.call_id or call.call_id in seen_ids:
                call = replace(call, call_id=f"call_{calls_made + i + 1}")
            seen_ids.add(call.call_id)
            fixed.append(call)
        text_parts = tuple(p for p in response.content if not isinstance(p, ToolCall))
        messages.append(Message("assistant", text_parts + tuple(fixed)))
        for call in fixed:
            result = registry.execute(call)
            calls_made += 1
            record(call, result, calls_made)
            if result.has_images:
                messages[:] = prune_images(messages)
        if calls_made >= budget.max_tool_iterations:
            return AgentResult(BudgetExhausted(last_text), trace, messages)


# ----------------------------------------------------------------------- trace

def dumps_trace(entries) -> str:
    return "".join(json.dumps(e.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for e in entries)


def write_trace(entries, path: str | Path) -> None:
    Path(path).write_text(dumps_trace(entries), encoding="utf-8")


def read_trace(path: str | Path) -> list[TraceEntry]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        d = json.loads(line)
        if d.get("format_version") != TRACE_FORMAT_VERSION:
            raise ToolFailure(f"{path}:{n}: unsupported trace format_version {d.get('format_version')!r}")
        out.append(TraceEntry.from_dict(d))
    return out
