import json
from importlib import resources
from pathlib import Path

import pytest

from gridrag.chunker import chunk_workbook
from gridrag.embedding import MockEmbedder
from gridrag.index import build_index
from gridrag.workbook import ingest_canonical

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
GOLDEN = TESTS / "golden"
DATA = Path(str(resources.files("gridrag") / "data"))
TOY = DATA / "toy_ledger.wb.json"
SUITE = DATA / "retrieval_suite.wb.json"
SUITE_QUERIES = DATA / "retrieval_suite.queries.json"


@pytest.fixture(scope="session")
def toy_wb():
    return ingest_canonical(TOY)


@pytest.fixture(scope="session")
def toy_chunks(toy_wb):
    return chunk_workbook(toy_wb)


@pytest.fixture(scope="session")
def toy_index(toy_chunks):
    return build_index(toy_chunks, MockEmbedder())


@pytest.fixture(scope="session")
def suite_index():
    return build_index(chunk_workbook(ingest_canonical(SUITE)), MockEmbedder())


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc), encoding="utf-8")
    return Path(path)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
