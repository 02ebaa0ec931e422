"""Regenerate the golden files under tests/golden from the scripted fixtures.

Run once when a fixture changes on purpose; the tests then compare against the frozen output.
"""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from gridrag.agent import dumps_trace  # noqa: E402

from conftest import GOLDEN, TOY  # noqa: E402
from helpers import SUMMARY_TASK, run_emea_query  # noqa: E402
from conftest import FIXTURES  # noqa: E402


def main():
    from gridrag.chunker import chunk_workbook
    from gridrag.embedding import MockEmbedder
    from gridrag.index import build_index
    from gridrag.workbook import ingest_canonical

    index = build_index(chunk_workbook(ingest_canonical(TOY)), MockEmbedder())
    GOLDEN.mkdir(exist_ok=True)
    res = run_emea_query(index)
    (GOLDEN / "query_emea.trace.jsonl").write_text(dumps_trace(res.trace), encoding="utf-8")
    (GOLDEN / "query_emea.answer.txt").write_text(res.answer + "\n", encoding="utf-8")
    print(f"query: {len(res.trace)} entries")

    import tempfile

    from gridrag.backends import ScriptBook
    from gridrag.planner import run_workflow

    book = ScriptBook.load(FIXTURES / "workflow_summary.script.json")
    with tempfile.TemporaryDirectory() as tmp:
        wf = run_workflow(SUMMARY_TASK, "summary.xlsx", index, book.get, workdir=tmp, clock=lambda: 0.0)
    (GOLDEN / "workflow_summary.trace.jsonl").write_text(dumps_trace(wf.merged_trace), encoding="utf-8")
    (GOLDEN / "workflow_summary.answer.txt").write_text(wf.synthesis.answer + "\n", encoding="utf-8")
    print(f"workflow: {len(wf.merged_trace)} entries, artifacts {wf.synthesis.manifest}")


if __name__ == "__main__":
    main()
