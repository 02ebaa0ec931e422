"""Command line: index, query, workflow, eval, trace."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

from .agent import BudgetExhausted, LoopBudget, read_trace, register_search_tools, run_agent, write_trace
from .backends import resolve_backend
from .chunker import CHUNK_KINDS, chunk_workbook
from .embedding import get_embedder
from .errors import BackendFailure, GridragError, PlanInvalid, ToolFailure, UnresolvedLabel
from .evalkit import format_table, load_queryset, results_document, run_retrieval_eval
from .fusion import FusionConfig
from .index import build_index, hybrid_search, load_index, persist_index
from .planner import run_workflow, waves
from .workbook import ingest_canonical

EXIT_OK, EXIT_USER, EXIT_BACKEND = 0, 1, 2
RUN_FORMAT_VERSION = 1
QUERY_SYSTEM_PROMPT = ("You answer questions about spreadsheets. Use the search tools to find the cells you need, "
                       "refine queries when results are off target, and cite sheet and cell locations in the answer.")


class UserError(Exception):
    pass


# ---------------------------------------------------------------------- config

@dataclass
class Config:
    embedder: str = "mock"
    backend: str | None = None
    fusion_k: int = 60
    top_k: int = 10
    budget: int = 50
    concurrency: int = 4
    index_dir: str | None = None
    run_dir: str = "gridrag-run"
    api_key_env: str = "OPENAI_API_KEY"
    base_url: str | None = None

    def validate(self) -> "Config":
        for name in ("fusion_k", "top_k", "budget", "concurrency"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise UserError(f"config {name} must be a positive integer, got {value!r}")
        if self.backend and self.backend.startswith("scripted:") and not Path(self.backend[9:]).is_file():
            raise UserError(f"scripted backend file not found: {self.backend[9:]}")
        return self

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(k=self.fusion_k, top_k=self.top_k)


_ENV = {"embedder": "GRIDRAG_EMBEDDER", "backend": "GRIDRAG_BACKEND", "fusion_k": "GRIDRAG_FUSION_K",
        "top_k": "GRIDRAG_K", "budget": "GRIDRAG_BUDGET", "concurrency": "GRIDRAG_CONCURRENCY",
        "index_dir": "GRIDRAG_INDEX", "run_dir": "GRIDRAG_RUN_DIR", "api_key_env": "GRIDRAG_API_KEY_ENV",
        "base_url": "GRIDRAG_BASE_URL"}
_FLAGS = {"embedder": "embedder", "backend": "backend", "top_k": "k", "budget": "budget",
          "concurrency": "concurrency", "index_dir": "index"}


def load_config(args, environ=None) -> Config:
    """defaults < config file < environment < flags."""
    environ = os.environ if environ is None else environ
    cfg = Config()
    types = {f.name: f.type for f in fields(Config)}
    path = getattr(args, "config", None)
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UserError(f"cannot read config {path}: {exc}") from None
        for key, value in doc.items():
            if key not in types:
                raise UserError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    for key, var in _ENV.items():
        if var in environ:
            value = environ[var]
            if types[key] == "int":
                try:
                    value = int(value)
                except ValueError:
                    raise UserError(f"{var} must be an integer, got {value!r}") from None
            setattr(cfg, key, value)
    for key, flag in _FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


# -------------------------------------------------------------------- commands

def _collect_inputs(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out += sorted(q for q in p.rglob("*") if q.is_file() and (q.name.endswith(".wb.json") or q.suffix == ".xlsx"))
        else:
            out.append(p)
    return out


def cmd_index(args, cfg: Config) -> int:
    from .xlsx import ingest_xlsx

    inputs = _collect_inputs(args.inputs)
    if not inputs:
        raise UserError("no inputs")
    if not args.out:
        raise UserError("index needs --out DIR")
    chunks, failures, sheets, workbooks = [], [], 0, 0
    for path in inputs:
        try:
            if path.suffix.lower() == ".xlsx":
                res = ingest_xlsx(path)
                wb = res.workbook
                for w in res.warnings:
                    print(f"warning: {path}: {w}", file=sys.stderr)
            else:
                wb = ingest_canonical(path)
            chunks += chunk_workbook(wb)
        except (GridragError, OSError, ValueError) as exc:
            failures.append((path, exc))
            continue
        workbooks += 1
        sheets += len(wb.sheets)
    for path, exc in failures:
        print(f"error: {path}: {type(exc).__name__}: {exc}", file=sys.stderr)
    if failures and not args.keep_going:
        print(f"{len(failures)} of {len(inputs)} input(s) failed; no index written (use --keep-going)", file=sys.stderr)
        return EXIT_USER
    if not chunks:
        print("error: nothing to index", file=sys.stderr)
        return EXIT_USER
    index = build_index(chunks, get_embedder(cfg.embedder))
    persist_index(index, args.out)
    counts = index.counts_by_kind()
    print(f"files: {workbooks}")
    print(f"sheets: {sheets}")
    print(f"chunks: {len(index)}")
    for kind in CHUNK_KINDS:
        print(f"  {kind}: {counts[kind]}")
    print(f"index: {args.out}")
    if failures:
        print(f"partial: {len(failures)} input(s) skipped", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


def _open_index(cfg: Config):
    if not cfg.index_dir:
        raise UserError("--index is required")
    if not Path(cfg.index_dir).is_dir():
        raise UserError(f"index directory not found: {cfg.index_dir}")
    return load_index(cfg.index_dir, get_embedder(cfg.embedder))


def _backends(cfg: Config):
    if not cfg.backend:
        raise UserError("--backend is required (scripted:<path> or openai:<model>)")
    try:
        return resolve_backend(cfg.backend, cfg.api_key_env, cfg.base_url)
    except (ValueError, FileNotFoundError) as exc:
        raise UserError(str(exc)) from None


def provenance(trace, per_call: int = 3) -> list[str]:
    lines = []
    for e in trace:
        if e.is_bootstrap:
            continue
        args = e.tool_call.arguments
        label = args.get("query", "")
        if not e.tool_result.ok:
            lines.append(f"[{e.seq}] {e.tool_call.tool_name}({label}) -> error")
            continue
        locs = ", ".join(h.location for h in e.tool_result.chunks[:per_call]) or "no chunks"
        lines.append(f"[{e.seq}] {e.tool_call.tool_name}({label}) -> {locs}")
    return lines


def cmd_query(args, cfg: Config) -> int:
    index = _open_index(cfg)
    backend = _backends(cfg).get("query")
    fusion = cfg.fusion
    initial = hybrid_search(index, args.question, None, None, fusion)
    registry = register_search_tools(index, fusion, cfg.top_k)
    budget = LoopBudget(cfg.budget, cfg.top_k)
    trace_path = Path(args.out or Path(cfg.run_dir) / "query-trace.jsonl")
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        result = run_agent(args.question, initial, registry, backend, budget, system_prompt=QUERY_SYSTEM_PROMPT)
    except BackendFailure as exc:
        write_trace(exc.trace, trace_path)
        print(f"error: backend failure: {exc}", file=sys.stderr)
        print(f"partial trace: {trace_path}", file=sys.stderr)
        return EXIT_BACKEND
    write_trace(result.trace, trace_path)
    if isinstance(result.answer, BudgetExhausted):
        print(f"warning: tool budget of {cfg.budget} calls exhausted; answer is best effort", file=sys.stderr)
    print(result.answer)
    print()
    print("Provenance:")
    for line in provenance(result.trace):
        print("  " + line)
    print(f"trace: {trace_path}")
    return EXIT_OK


def _rel(path: str, root: Path) -> str:
    """Artifact path as listed in the manifest: relative to the run directory when inside it."""
    p = Path(path)
    if not p.is_absolute():
        p = root / "artifacts" / p
    try:
        return str(p.resolve().relative_to(root.resolve()))
    except ValueError:
        return str(path)


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def cmd_workflow(args, cfg: Config) -> int:
    index = _open_index(cfg)
    backends = _backends(cfg)
    run_dir = Path(args.out or cfg.run_dir)
    artifacts = run_dir / "artifacts"
    (run_dir / "traces").mkdir(parents=True, exist_ok=True)
    artifacts.mkdir(exist_ok=True)
    log_lines = []
    started = time.time()
    try:
        wf = run_workflow(args.task, args.output_path, index, backends.get, LoopBudget(cfg.budget, cfg.top_k),
                          concurrency=cfg.concurrency, workdir=artifacts, fusion=cfg.fusion)
    except PlanInvalid as exc:
        _dump(run_dir / "plan_invalid.json", {"format_version": RUN_FORMAT_VERSION, "errors": exc.details,
                                              "responses": exc.responses})
        print(f"error: planner output invalid after one repair round: {exc}", file=sys.stderr)
        for i, resp in enumerate(exc.responses, 1):
            print(f"--- response {i} ---\n{resp}", file=sys.stderr)
        return EXIT_BACKEND
    except BackendFailure as exc:
        print(f"error: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND

    _dump(run_dir / "plan.json", {"format_version": RUN_FORMAT_VERSION, "task": args.task,
                                  "output_path": args.output_path, "exploration": wf.exploration.to_dict(),
                                  "plan": wf.plan.to_dict(), "repair_rounds": wf.plan.repair_rounds,
                                  "waves": waves(wf.plan)})
    for sid, res in wf.results.items():
        write_trace(res.trace_slice, run_dir / "traces" / f"subtask-{sid}.jsonl")
    write_trace(wf.merged_trace, run_dir / "traces" / "merged.jsonl")
    (run_dir / "answer.txt").write_text(wf.synthesis.answer + "\n", encoding="utf-8")
    manifest_artifacts = [_rel(a, run_dir) for a in wf.synthesis.manifest]
    _dump(run_dir / "manifest.json", {
        "format_version": RUN_FORMAT_VERSION,
        "task": args.task,
        "output_type": wf.plan.output_type,
        "artifacts": manifest_artifacts,
        "subtasks": [r.to_dict() | {"artifacts": [_rel(a, run_dir) for a in r.artifacts]} for r in wf.results.values()],
        "timestamps": {"started": started, "finished": time.time()},
    })
    if wf.plan.repair_rounds:
        log_lines.append(f"plan repaired after {wf.plan.repair_rounds} round(s)")
    log_lines.append(f"plan: {len(wf.plan.subtasks)} subtask(s), output_type={wf.plan.output_type}")
    for n, wave in enumerate(waves(wf.plan), 1):
        log_lines.append(f"wave {n}: " + ", ".join(str(s) for s in wave))
    for sid, res in wf.results.items():
        log_lines.append(f"subtask {sid}: {res.status} ({res.to_dict()['tool_calls']} tool calls)")
    log_lines.append(f"artifacts: {', '.join(manifest_artifacts) or 'none'}")
    (run_dir / "run.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")

    print(wf.synthesis.answer)
    print()
    for line in log_lines:
        print(line)
    print(f"run directory: {run_dir}")
    failed = [sid for sid, r in wf.results.items() if r.status != "ok"]
    return EXIT_BACKEND if failed else EXIT_OK


def _cutoffs(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UserError(f"--cutoffs must be comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise UserError("--cutoffs must be positive")
    return values


def cmd_eval(args, cfg: Config) -> int:
    index = _open_index(cfg)
    try:
        queries = load_queryset(args.queryset)
    except (OSError, ValueError, KeyError) as exc:
        raise UserError(f"cannot read query set {args.queryset}: {exc}") from None
    rows = run_retrieval_eval(index, queries, _cutoffs(args.cutoffs), cfg.fusion)
    print(format_table(rows))
    if args.out:
        _dump(Path(args.out), results_document(rows, len(queries)))
    return EXIT_OK


def render_entry(e) -> str:
    lines = [f"seq {e.seq}" + (f" (subtask {e.subtask_id})" if e.subtask_id is not None else ""),
             f"tool: {e.tool_call.tool_name}",
             f"call_id: {e.tool_call.call_id}",
             f"arguments: {json.dumps(e.tool_call.arguments, sort_keys=True, ensure_ascii=False)}",
             f"ok: {str(e.tool_result.ok).lower()}"]
    if e.tool_result.error:
        lines.append(f"error: {e.tool_result.error}")
    if e.tool_result.data is not None:
        lines.append(f"data: {json.dumps(e.tool_result.data, sort_keys=True, ensure_ascii=False)}")
    lines.append(f"chunks: {len(e.tool_result.chunks)}")
    for i, h in enumerate(e.tool_result.chunks, 1):
        extra = f" image_sha256={h.image_digest}" if h.image_digest else ""
        lines.append(f"  {i}. {h.location} [{h.kind}] score={h.score:.6f} id={h.chunk_id}{extra}")
    lines.append(f"token_estimate: {e.token_estimate}")
    return "\n".join(lines)


def trace_stats(entries) -> dict:
    calls = [e for e in entries if not e.is_bootstrap]
    by_tool: dict[str, int] = {}
    for e in calls:
        by_tool[e.tool_call.tool_name] = by_tool.get(e.tool_call.tool_name, 0) + 1
    return {"entries": len(entries), "tool_calls": len(calls), "errors": sum(1 for e in calls if not e.tool_result.ok),
            "tokens": sum(e.token_estimate for e in entries), "by_tool": dict(sorted(by_tool.items()))}


def cmd_trace(args, cfg: Config) -> int:
    path = Path(args.trace)
    if not path.is_file():
        raise UserError(f"trace file not found: {path}")
    try:
        entries = read_trace(path)
    except (ToolFailure, ValueError, KeyError) as exc:
        raise UserError(f"cannot read trace {path}: {exc}") from None
    if not entries:
        print("0 entries")
        return EXIT_OK
    if args.show is not None:
        if not 1 <= args.show <= len(entries):
            raise UserError(f"--show must be between 1 and {len(entries)}")
        print(render_entry(entries[args.show - 1]))
        return EXIT_OK
    stats = trace_stats(entries)
    if args.stats:
        for key in ("entries", "tool_calls", "errors", "tokens"):
            print(f"{key}={stats[key]}")
        for tool, n in stats["by_tool"].items():
            print(f"  {tool}={n}")
        return EXIT_OK
    print(f"{len(entries)} entries")
    for e in entries:
        status = "ok" if e.tool_result.ok else "error"
        print(f"  {e.seq:>3} {e.tool_call.tool_name} {json.dumps(e.tool_call.arguments, sort_keys=True)} "
              f"-> {status}, {len(e.tool_result.chunks)} chunk(s)")
    return EXIT_OK


# ---------------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are user errors (exit 1), not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--index", help="index directory")
    common.add_argument("--embedder", help="embedder name (default mock)")
    common.add_argument("--backend", help="scripted:<path> or openai:<model>")
    common.add_argument("--k", type=int, help="top-K for retrieval (default 10)")
    common.add_argument("--budget", type=int, help="max tool calls per agent run (default 50)")
    common.add_argument("--concurrency", type=int, help="max concurrent subtasks (default 4)")

    p = _Parser(prog="gridrag", description="Hybrid retrieval and tool-calling agents over spreadsheets.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("index", parents=[common], help="chunk and index workbooks")
    s.add_argument("inputs", nargs="*", help=".xlsx / .wb.json files or directories")
    s.add_argument("--out", help="index directory to write")
    s.add_argument("--keep-going", action="store_true", help="index the good files when some fail")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("query", parents=[common], help="answer a question with the agent loop")
    s.add_argument("question")
    s.add_argument("--out", help="trace file (default <run_dir>/query-trace.jsonl)")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("workflow", parents=[common], help="plan and run a multi-step task")
    s.add_argument("task")
    s.add_argument("output_path", help="deliverable path, relative to the run's artifacts/ directory")
    s.add_argument("--out", help="run directory (default gridrag-run)")
    s.set_defaults(func=cmd_workflow)

    s = sub.add_parser("eval", parents=[common], help="retrieval metrics over a labeled query set")
    s.add_argument("queryset")
    s.add_argument("--cutoffs", default="5,10", help="comma-separated K values (default 5,10)")
    s.add_argument("--out", help="write machine-readable results here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("trace", parents=[common], help="inspect a trace file")
    s.add_argument("trace")
    group = s.add_mutually_exclusive_group()
    group.add_argument("--show", type=int, metavar="N", help="print entry N (1-based)")
    group.add_argument("--stats", action="store_true", help="print summary counts")
    s.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return args.func(args, cfg)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except UnresolvedLabel as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (BackendFailure, ToolFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (GridragError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
