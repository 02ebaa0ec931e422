"""Plan-and-execute orchestration: explore, decompose, run subtask waves, synthesize."""
from __future__ import annotations

import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

from .agent import (AgentResult, BudgetExhausted, LoopBudget, Message, ToolRegistry, assistant, register_search_tools,
                    run_agent, user)
from .chunker import TRUNCATION_MARK
from .errors import BackendFailure, PlanInvalid, UnknownExecutorType
from .fusion import FusionConfig
from .index import Index, hybrid_search

EXECUTOR_TYPES = ("search", "excel", "io", "web", "validation", "ocr")
OUTPUT_TYPES = ("spreadsheet", "text", "document", "both")
MAX_SUBTASKS = 6
SUMMARY_CAP = 2000
WRITE_TOOLS = ("excel_write", "io_write")


@dataclass(frozen=True)
class Subtask:
    id: int
    type: str
    description: str
    dependencies: tuple = ()

    def to_dict(self) -> dict:
        return {"id": self.id, "type": self.type, "description": self.description,
                "dependencies": list(self.dependencies)}


@dataclass(frozen=True)
class Plan:
    output_type: str
    subtasks: tuple
    repair_rounds: int = field(default=0, compare=False)

    def subtask(self, sid: int) -> Subtask:
        return next(s for s in self.subtasks if s.id == sid)

    def to_dict(self) -> dict:
        return {"output_type": self.output_type, "subtasks": [s.to_dict() for s in self.subtasks]}


@dataclass
class SubtaskResult:
    subtask_id: int
    status: str  # ok | failed
    answer_text: str
    artifacts: list = field(default_factory=list)
    trace_slice: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"subtask_id": self.subtask_id, "status": self.status, "answer_text": self.answer_text,
                "artifacts": list(self.artifacts),
                "tool_calls": sum(1 for e in self.trace_slice if not e.is_bootstrap)}


@dataclass
class ExplorationContext:
    quoted_terms: list = field(default_factory=list)
    hits: list = field(default_factory=list)  # [(term, [hit dict, ...])]

    def render(self) -> str:
        if not self.hits:
            return "(no quoted terms to look up)"
        lines = []
        for term, hits in self.hits:
            lines.append(f'"{term}":')
            if not hits:
                lines.append("  (no matches)")
            for h in hits:
                lines.append(f"  {h['location']} [{h['kind']}] {h['text']}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"quoted_terms": list(self.quoted_terms), "hits": [{"term": t, "hits": h} for t, h in self.hits]}


# ----------------------------------------------------------------- exploration

_TYPOGRAPHIC = str.maketrans({"“": '"', "”": '"', "„": '"', "«": '"', "»": '"',
                              "‘": "'", "’": "'", "‚": "'"})
_DOUBLE = re.compile(r'"([^"]+)"')
_SINGLE = re.compile(r"(?<!\w)'([^']+)'(?!\w)")  # skip apostrophes inside words


def extract_quoted_terms(task: str) -> list[str]:
    text = task.translate(_TYPOGRAPHIC)
    found = []
    for m in _DOUBLE.finditer(text):
        found.append((m.start(), m.group(1)))
    masked = _DOUBLE.sub(lambda m: " " * len(m.group()), text)
    for m in _SINGLE.finditer(masked):
        found.append((m.start(), m.group(1)))
    terms = [t.strip() for _, t in sorted(found)]
    return list(dict.fromkeys(t for t in terms if t))


def explore_data(task: str, index: Index, K: int = 10, fusion: FusionConfig | None = None) -> ExplorationContext:
    """Search each quoted term and keep its top-K hits as prompt grounding."""
    fusion = fusion or FusionConfig()
    terms = extract_quoted_terms(task)
    cfg = FusionConfig(k=fusion.k, top_k=K, depth=fusion.depth)
    hits = []
    for term in terms:
        found = hybrid_search(index, term, None, None, cfg)
        hits.append((term, [{"chunk_id": ch.chunk_id, "kind": ch.kind, "sheet": ch.sheet, "location": ch.location,
                             "score": round(score, 12), "text": ch.text[:200]} for ch, score in found]))
    return ExplorationContext(terms, hits)


# ---------------------------------------------------------------- decomposition

def load_prompt_template() -> str:
    return resources.files("gridrag").joinpath("data/planner_prompt.txt").read_text(encoding="utf-8")


def render_plan_prompt(task: str, output_path: str, exploration: ExplorationContext | None,
                       template: str | None = None) -> str:
    template = template if template is not None else load_prompt_template()
    for ph in ("{task}", "{output_path}", "{exploration_context}"):
        if ph not in template:
            raise ValueError(f"prompt template is missing the {ph} placeholder")
    ctx = exploration.render() if exploration is not None else "(exploration skipped)"
    # exploration goes last so braces in the task or hits are never re-expanded
    return (template.replace("{task}", task).replace("{output_path}", output_path or "(none)")
            .replace("{exploration_context}", ctx))


def _extract_json(text: str):
    body = text.strip()
    fence = re.search(r"```(?:json)?\s*(.*?)```", body, re.S)
    if fence:
        body = fence.group(1).strip()
    start, end = body.find("{"), body.rfind("}")
    if start < 0 or end < start:
        raise ValueError("no JSON object in response")
    return json.loads(body[start:end + 1])


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate_plan(doc) -> list[str]:
    """Every contract violation in a candidate plan document (empty list means valid)."""
    if not isinstance(doc, dict):
        return ["plan must be a JSON object"]
    errors = []
    if doc.get("output_type") not in OUTPUT_TYPES:
        errors.append(f"output_type must be one of {', '.join(OUTPUT_TYPES)}; got {doc.get('output_type')!r}")
    subs = doc.get("subtasks")
    if not isinstance(subs, list):
        return errors + ["subtasks must be a list"]
    if not 1 <= len(subs) <= MAX_SUBTASKS:
        errors.append(f"plan must have between 1 and {MAX_SUBTASKS} subtasks; got {len(subs)}")
    ids = []
    deps_of = {}
    for i, s in enumerate(subs):
        if not isinstance(s, dict):
            errors.append(f"subtask #{i + 1} must be an object")
            continue
        sid = s.get("id")
        if not _is_int(sid) or sid < 1:
            errors.append(f"subtask #{i + 1}: id must be an integer >= 1; got {sid!r}")
            continue
        if sid in ids:
            errors.append(f"duplicate subtask id {sid}")
        ids.append(sid)
        if s.get("type") not in EXECUTOR_TYPES:
            errors.append(f"subtask {sid}: unknown type {s.get('type')!r}")
        if not isinstance(s.get("description"), str) or not s["description"].strip():
            errors.append(f"subtask {sid}: description must be a non-empty string")
        deps = s.get("dependencies", [])
        if not isinstance(deps, list) or not all(_is_int(d) for d in deps):
            errors.append(f"subtask {sid}: dependencies must be a list of integer ids")
            continue
        if sid in deps:
            errors.append(f"subtask {sid} depends on itself")
        deps_of[sid] = [d for d in deps if d != sid]
    known = set(ids)
    for sid, deps in deps_of.items():
        for d in deps:
            if d not in known:
                errors.append(f"subtask {sid} depends on unknown subtask {d}")
    if not errors and _has_cycle(deps_of):
        errors.append("dependency graph has a cycle")
    return errors


def _has_cycle(deps_of: dict) -> bool:
    remaining = {k: set(v) for k, v in deps_of.items()}
    while remaining:
        ready = [k for k, v in remaining.items() if not v & remaining.keys()]
        if not ready:
            return True
        for k in ready:
            del remaining[k]
    return False


def plan_from_dict(doc: dict, repair_rounds: int = 0) -> Plan:
    errors = validate_plan(doc)
    if errors:
        raise PlanInvalid(errors)
    subs = tuple(Subtask(s["id"], s["type"], s["description"].strip(), tuple(dict.fromkeys(s.get("dependencies", []))))
                 for s in doc["subtasks"])
    return Plan(doc["output_type"], tuple(sorted(subs, key=lambda s: s.id)), repair_rounds)


def _check_response(text: str):
    try:
        doc = _extract_json(text)
    except ValueError as exc:
        return None, [f"response is not valid JSON: {exc}"]
    errors = validate_plan(doc)
    return (doc if not errors else None), errors


def _ask(backend, messages) -> str:
    try:
        msg = backend.step(list(messages), [])
    except BackendFailure:
        raise
    except Exception as exc:
        raise BackendFailure(exc) from exc
    if not isinstance(msg, Message) or msg.role != "assistant":
        raise BackendFailure(f"backend returned {msg!r} instead of an assistant message")
    return msg.text


def decompose(task: str, output_path: str, exploration: ExplorationContext | None, backend,
              template: str | None = None) -> Plan:
    """Ask the backend for a plan; one repair round on contract violations, then PlanInvalid."""
    messages = [user(render_plan_prompt(task, output_path, exploration, template))]
    first = _ask(backend, messages)
    doc, errors = _check_response(first)
    if doc is not None:
        return plan_from_dict(doc)
    messages += [assistant(first), user(repair_prompt(errors))]
    second = _ask(backend, messages)
    doc, errors2 = _check_response(second)
    if doc is not None:
        return plan_from_dict(doc, repair_rounds=1)
    raise PlanInvalid(errors2, [first, second])


def repair_prompt(errors) -> str:
    return ("That plan cannot be used:\n" + "\n".join(f"- {e}" for e in errors)
            + "\nSend a corrected plan as a single JSON object in the same format.")


# ---------------------------------------------------------------------- execution

def get_tool_set(type_: str, index: Index | None = None, workdir=None, fusion: FusionConfig | None = None,
                 default_k: int = 10) -> ToolRegistry:
    from . import executors

    if type_ == "search":
        if index is None:
            raise ValueError("search tools need an index")
        return register_search_tools(index, fusion, default_k)
    if type_ == "excel":
        return executors.excel_tools(workdir, index)
    if type_ == "io":
        return executors.io_tools(workdir)
    if type_ == "validation":
        return executors.validation_tools(workdir)
    if type_ == "ocr":
        return executors.ocr_tools(index)
    if type_ == "web":
        return executors.web_tools()
    raise UnknownExecutorType(f"unknown executor type {type_!r}; expected one of {', '.join(EXECUTOR_TYPES)}")


def waves(plan: Plan) -> list[list[int]]:
    """Partition subtask ids into scheduling waves (each wave's deps lie in earlier waves)."""
    done: set = set()
    pending = {s.id: set(s.dependencies) for s in plan.subtasks}
    out = []
    while pending:
        ready = sorted(k for k, deps in pending.items() if deps <= done)
        if not ready:
            raise PlanInvalid(["dependency graph has a cycle"])
        out.append(ready)
        for k in ready:
            del pending[k]
        done.update(ready)
    return out


def summarize(results, cap: int = SUMMARY_CAP) -> str:
    lines = []
    for r in sorted(results, key=lambda r: r.subtask_id):
        text = r.answer_text if len(r.answer_text) <= cap else r.answer_text[:cap] + TRUNCATION_MARK
        line = f"subtask {r.subtask_id} [{r.status}]: {text}"
        if r.artifacts:
            line += "\nartifacts: " + ", ".join(r.artifacts)
        lines.append(line)
    return "\n".join(lines)


EXECUTOR_ROLES = {
    "search": "You find facts in indexed spreadsheets using the search tools and cite sheet and cell locations.",
    "excel": "You build and edit spreadsheets with the excel tools.",
    "io": "You read and write csv, json, text and markdown files.",
    "validation": "You verify accounting identities with the validation tools.",
    "ocr": "You transcribe embedded images.",
    "web": "You gather external information.",
}


def subtask_prompt(subtask: Subtask, task: str, dep_summary: str) -> str:
    parts = [f"Overall task: {task}", f"Your subtask ({subtask.type}): {subtask.description}"]
    if dep_summary:
        parts.append("Results from earlier subtasks:\n" + dep_summary)
    parts.append("When done, reply with a short plain-text answer and no tool calls.")
    return "\n\n".join(parts)


def artifacts_of(trace) -> list[str]:
    out = []
    for e in trace:
        if e.tool_call.tool_name in WRITE_TOOLS and e.tool_result.ok and isinstance(e.tool_result.data, dict):
            for a in e.tool_result.data.get("artifacts", []):
                if a not in out:
                    out.append(a)
    return out


def _as_backend_factory(backends) -> Callable:
    if hasattr(backends, "step"):
        return lambda st: backends
    if isinstance(backends, dict):
        return lambda st: backends[st.id]
    return backends


def _as_registry_factory(registries) -> Callable:
    if isinstance(registries, dict):
        return lambda st: registries[st.type]
    return registries


def execute_plan(plan: Plan, task: str, registries, backends, budget: LoopBudget | None = None, *,
                 concurrency: int = 4, index: Index | None = None, fusion: FusionConfig | None = None,
                 events: list | None = None, clock: Callable[[], float] = time.time) -> dict:
    """Run the plan wave by wave; a failed subtask fails its dependents without running them.

    ``registries`` maps executor type to ToolRegistry (dict or callable taking the
    Subtask); ``backends`` is one backend, a dict by subtask id, or a callable.
    ``events`` (if given) receives the scheduler log in order.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    budget = budget or LoopBudget()
    registry_for = _as_registry_factory(registries)
    backend_for = _as_backend_factory(backends)
    log = events if events is not None else []
    lock = threading.Lock()

    def emit(**ev):
        with lock:
            ev["n"] = len(log)
            log.append(ev)

    results: dict[int, SubtaskResult] = {}
    pending = {s.id: s for s in plan.subtasks}
    wave_no = 0

    def run_one(st: Subtask, dep_summary: str, wave: int) -> SubtaskResult:
        emit(event="start", subtask=st.id, wave=wave)
        initial = []
        if st.type == "search" and index is not None:
            cfg = fusion or FusionConfig()
            initial = hybrid_search(index, st.description, None, None,
                                    FusionConfig(k=cfg.k, top_k=budget.initial_k, depth=cfg.depth))
        try:
            res: AgentResult = run_agent(subtask_prompt(st, task, dep_summary), initial, registry_for(st),
                                         backend_for(st), budget, system_prompt=EXECUTOR_ROLES.get(st.type),
                                         subtask_id=st.id, clock=clock)
        except BackendFailure as exc:
            out = SubtaskResult(st.id, "failed", f"backend failure: {exc}", [], list(exc.trace))
        else:
            if isinstance(res.answer, BudgetExhausted):
                out = SubtaskResult(st.id, "failed",
                                    f"tool budget of {budget.max_tool_iterations} calls exhausted; last text: {res.answer}",
                                    artifacts_of(res.trace), res.trace)
            else:
                out = SubtaskResult(st.id, "ok", res.answer, artifacts_of(res.trace), res.trace)
        emit(event="finish", subtask=st.id, wave=wave, status=out.status)
        return out

    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        while pending:
            wave_no += 1
            ready = sorted((s for s in pending.values() if set(s.dependencies) <= results.keys()),
                           key=lambda s: s.id)
            if not ready:
                raise PlanInvalid(["dependency graph has a cycle"])
            runnable = []
            for st in ready:
                del pending[st.id]
                failed = [d for d in st.dependencies if results[d].status != "ok"]
                if failed:
                    results[st.id] = SubtaskResult(
                        st.id, "failed", "not run: dependency " + ", ".join(str(d) for d in failed) + " failed")
                    emit(event="skip", subtask=st.id, wave=wave_no, status="failed")
                else:
                    runnable.append(st)
            futures = [(st, pool.submit(run_one, st, summarize([results[d] for d in st.dependencies]), wave_no))
                       for st in runnable]
            wave_results = {st.id: f.result() for st, f in futures}
            results.update(wave_results)  # published only between waves
    return dict(sorted(results.items()))


# ---------------------------------------------------------------------- synthesis

_OUTPUT_DIRECTIVES = {
    "spreadsheet": "The deliverable is a spreadsheet; state where it was written and what it contains.",
    "text": "The deliverable is a direct text answer with the supporting cell locations.",
    "document": "The deliverable is a document; state where it was written and summarize it.",
    "both": "The deliverable is a file plus a text answer; give both the location and the answer.",
}


@dataclass
class Synthesis:
    answer: str
    manifest: list

    def to_dict(self) -> dict:
        return {"answer": self.answer, "artifacts": list(self.manifest)}


def synthesis_prompt(task: str, results, output_type: str) -> str:
    return (f"Task: {task}\n\nSubtask results:\n{summarize(results)}\n\n"
            f"Output type: {output_type}. {_OUTPUT_DIRECTIVES.get(output_type, '')}\n"
            "Combine the results into the final answer.")


def synthesize(task: str, results, output_type: str, backend) -> Synthesis:
    results = list(results.values()) if isinstance(results, dict) else list(results)
    answer = _ask(backend, [user(synthesis_prompt(task, results, output_type))])
    manifest = []
    for r in sorted(results, key=lambda r: r.subtask_id):
        for a in r.artifacts:
            if a not in manifest:
                manifest.append(a)
    return Synthesis(answer, manifest)


# ------------------------------------------------------------------------ pipeline

@dataclass
class WorkflowResult:
    exploration: ExplorationContext
    plan: Plan
    results: dict
    synthesis: Synthesis
    events: list

    @property
    def merged_trace(self) -> list:
        return [e for sid in sorted(self.results) for e in self.results[sid].trace_slice]


def run_workflow(task: str, output_path: str, index: Index, backend_for: Callable[[str], object],
                 budget: LoopBudget | None = None, *, concurrency: int = 4, workdir=None,
                 fusion: FusionConfig | None = None, template: str | None = None,
                 clock: Callable[[], float] = time.time) -> WorkflowResult:
    """Explore, decompose, execute and synthesize; ``backend_for`` maps a role name
    ("planner", "subtask-<id>", "synthesize") to a backend."""
    budget = budget or LoopBudget()
    exploration = explore_data(task, index, budget.initial_k, fusion)
    plan = decompose(task, output_path, exploration, backend_for("planner"), template)
    events: list = []
    results = execute_plan(
        plan, task, lambda st: get_tool_set(st.type, index, workdir, fusion, budget.initial_k),
        lambda st: backend_for(f"subtask-{st.id}"), budget, concurrency=concurrency, index=index, fusion=fusion,
        events=events, clock=clock)
    synthesis = synthesize(task, results, plan.output_type, backend_for("synthesize"))
    return WorkflowResult(exploration, plan, results, synthesis, events)
