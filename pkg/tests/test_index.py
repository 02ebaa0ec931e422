import math
import random

import numpy as np
import pytest

from gridrag.bm25 import BM25Index, tokenize
from gridrag.chunker import Chunk
from gridrag.embedding import MockEmbedder
from gridrag.errors import CorruptIndex, DuplicateChunkId, EmbedderFailure, IncompatibleVersion
from gridrag.fusion import FusionConfig, RankedList, rrf_fuse
from gridrag.index import (
    build_index, dense_search, hybrid_fused, hybrid_search, lexical_search, load_index, persist_index,
)
from gridrag.workbook import EmbeddedImage

from oracles import hybrid_reference, random_rank_lists, rrf_reference, sample_queries


def _chunk(cid, text, kind="row", row=1, image=None):
    return Chunk(cid, kind, "w", "S", (row, row), (1, 3), (), text, image)


def _five_chunks():
    img = EmbeddedImage("img-1", "S", 3, 1, b"\x89PNG", alt_text="bar chart")
    return [
        _chunk("a", "sheet=S row=A1:B1 | x=alpha", "row", 1),
        _chunk("b", "sheet=S row=A2:B2 | x=beta", "row", 2),
        _chunk("c", "sheet=S column=A1:A2 | A1=alpha | A2=beta", "column"),
        _chunk("d", "sheet=S window=A1:B2 | x@A1=alpha", "window"),
        _chunk("e", "image at S!A3 | bar chart", "image", 3, img),
    ]


# ------------------------------------------------------------------------- build

def test_empty_index():
    index = build_index([], MockEmbedder())
    assert len(index) == 0
    assert hybrid_search(index, "anything") == []
    assert dense_search(index, "anything").entries == []


def test_five_chunk_catalog():
    index = build_index(_five_chunks(), MockEmbedder())
    assert len(index.chunks) == 5
    counts = index.counts_by_kind()
    assert counts["image"] == 1
    assert counts["row"] + counts["column"] + counts["window"] == 4
    assert index.bm25.n_docs == 5


def test_build_is_order_independent():
    chunks = _five_chunks()
    a = build_index(chunks, MockEmbedder())
    b = build_index(list(reversed(chunks)), MockEmbedder())
    assert [c.chunk_id for c in a.chunks] == [c.chunk_id for c in b.chunks]
    assert np.array_equal(a.vectors, b.vectors)


class _ZeroEmbedder(MockEmbedder):
    def embed_text(self, text):
        return np.zeros(self.dim)


def test_zero_vector_rejected():
    with pytest.raises(EmbedderFailure) as err:
        build_index(_five_chunks(), _ZeroEmbedder())
    assert err.value.chunk_id == "a"


def test_duplicate_chunk_id():
    chunks = _five_chunks()
    with pytest.raises(DuplicateChunkId):
        build_index(chunks + chunks[:1], MockEmbedder())


# ------------------------------------------------------------------------ dense

def test_dense_self_match(toy_index):
    target = toy_index.chunk("toy_ledger/Segments/row/A3:D3")
    top = dense_search(toy_index, target.text, K=3).entries[0]
    assert top[0] == target.chunk_id
    assert top[1] == pytest.approx(1.0, abs=1e-6)


def test_dense_filters_and_clamping(toy_index):
    assert dense_search(build_index(_five_chunks()[:4], MockEmbedder()), "x", "image").entries == []
    every = dense_search(toy_index, "revenue", K=1000)
    assert len(every) == len(toy_index)
    assert all(-1.0 <= s <= 1.0 for _, s in every.entries)


# ---------------------------------------------------------------------- lexical

def test_tokenizer_keeps_numbers():
    assert tokenize("Americas=1,200.00 | Q3-Margin") == ["americas", "1,200.00", "q3", "margin"]


def test_idf_worked_example():
    bm = BM25Index.from_texts(["apple pie", "banana split", "cherry tart"])
    assert bm.idf("apple") == pytest.approx(math.log((3 - 1 + 0.5) / (1 + 0.5) + 1))
    assert bm.idf("apple") == pytest.approx(0.9808, abs=1e-4)


def test_bm25_single_term_score():
    bm = BM25Index.from_texts(["apple pie", "banana split", "cherry tart"])
    # tf=1, |d| = avgdl so the length norm is k1
    assert bm.scores("apple") == {0: pytest.approx(0.9808292530117262 * 2.2 / 2.2)}


def test_sole_token_match():
    chunks = _five_chunks() + [_chunk("f", "sheet=S row=A9:B9 | total=1200", "row", 9)]
    index = build_index(chunks, MockEmbedder())
    assert lexical_search(index, "1200").ids == ["f"]


def test_empty_query(toy_index):
    assert lexical_search(toy_index, "").entries == []
    assert lexical_search(toy_index, "  ,, ").entries == []


# ----------------------------------------------------------------------- fusion

def test_rrf_worked_examples():
    fused = rrf_fuse([RankedList("a", [("x", 0), ("y", 0)]), RankedList("b", [("y", 0), ("x", 0)])])
    assert fused.entries[0].rrf_score == pytest.approx(1 / 61 + 1 / 62, abs=1e-15)
    assert round(fused.entries[0].rrf_score, 6) == 0.032522
    solo = rrf_fuse([RankedList("a", [("z", 0)])])
    assert round(solo.entries[0].rrf_score, 6) == 0.016393


def test_rrf_ties_by_id():
    fused = rrf_fuse([RankedList("a", [("m", 0)]), RankedList("b", [("b", 0)]), RankedList("c", [("k", 0)])])
    assert fused.ids == ["b", "k", "m"]


def test_rrf_matches_reference_sample():
    rng = random.Random(11)
    for _ in range(500):
        lists = random_rank_lists(rng)
        k = rng.randint(1, 100)
        top_k = rng.randint(1, 20)
        got = rrf_fuse([RankedList(str(i), [(c, 0.0) for c in lst]) for i, lst in enumerate(lists)],
                       FusionConfig(k=k, top_k=top_k))
        want = rrf_reference(lists, k, top_k)
        assert got.ids == [c for c, _ in want]
        assert all(abs(e.rrf_score - s) <= 1e-12 for e, (_, s) in zip(got.entries, want))


# ----------------------------------------------------------------------- hybrid

def test_hybrid_union():
    chunks = [
        _chunk("lex", "zq7 ledger", "row", 1),
        _chunk("dense", "marginality marginal margins", "row", 2),
        _chunk("other", "unrelated words here", "row", 3),
    ]
    index = build_index(chunks, MockEmbedder())
    query = "zq7 margins"
    assert "lex" in lexical_search(index, query).ids
    ids = [c.chunk_id for c, _ in hybrid_search(index, query)]
    assert {"lex", "dense"} <= set(ids)


def test_hybrid_row_filter(toy_index):
    found = hybrid_search(toy_index, "EMEA", "row", (3, None))
    assert found
    assert all(c.row_span == (3, 3) for c, _ in found)
    for c, _ in hybrid_search(toy_index, "EMEA", None, {"row": 3}):
        assert c.row_span[0] <= 3 <= c.row_span[1]


def test_hybrid_emea_revenue(toy_index, toy_chunks):
    found = hybrid_search(toy_index, "EMEA revenue")
    assert found[0][0].chunk_id == "toy_ledger/P&L/row/A2:E2"
    ref = hybrid_reference(list(toy_chunks), MockEmbedder(), "EMEA revenue")
    assert [c.chunk_id for c, _ in found] == [cid for cid, _ in ref]
    assert [s for _, s in found] == pytest.approx([s for _, s in ref], abs=1e-12)


def test_hybrid_matches_exhaustive_reference(toy_index, toy_chunks):
    for q in sample_queries(toy_chunks, 10, seed=3):
        got = hybrid_fused(toy_index, q)
        ref = hybrid_reference(list(toy_chunks), MockEmbedder(), q)
        assert got.ids == [cid for cid, _ in ref]
        assert [e.rrf_score for e in got.entries] == pytest.approx([s for _, s in ref], abs=1e-12)


def test_at_most_two_lists_per_chunk(toy_index):
    fused = hybrid_fused(toy_index, "EMEA revenue Q3", config=FusionConfig(top_k=100))
    assert all(len(e.contributing) <= 2 for e in fused.entries)
    assert max(e.rrf_score for e in fused.entries) <= 2 / 61 + 1e-15


def test_revenue_hits_column(toy_index):
    ids = [c.chunk_id for c, _ in hybrid_search(toy_index, "Revenue")]
    assert "toy_ledger/P&L/column/B1:B4" in ids


# ------------------------------------------------------------------ persistence

def _same_results(a, b, queries):
    for q in queries:
        for search in (dense_search, lexical_search):
            ra, rb = search(a, q, K=50), search(b, q, K=50)
            assert ra.ids == rb.ids
            assert all(abs(x - y) <= 1e-9 for (_, x), (_, y) in zip(ra.entries, rb.entries))
        ha, hb = hybrid_fused(a, q), hybrid_fused(b, q)
        assert ha.ids == hb.ids
        assert all(abs(x.rrf_score - y.rrf_score) <= 1e-9 for x, y in zip(ha.entries, hb.entries))


def test_round_trip_empty(tmp_path):
    index = build_index([], MockEmbedder())
    persist_index(index, tmp_path / "idx")
    again = load_index(tmp_path / "idx")
    assert len(again) == 0
    _same_results(index, again, ["x"])


def test_round_trip_toy(tmp_path, toy_index, toy_chunks):
    persist_index(toy_index, tmp_path / "idx")
    again = load_index(tmp_path / "idx")
    assert [c.chunk_id for c in again.chunks] == [c.chunk_id for c in toy_index.chunks]
    assert again.chunk("toy_ledger/Rollup/image/A6:A6#img-margin").image.payload == \
        toy_index.chunk("toy_ledger/Rollup/image/A6:A6#img-margin").image.payload
    _same_results(toy_index, again, sample_queries(toy_chunks, 20))


def test_truncated_file(tmp_path, toy_index):
    persist_index(toy_index, tmp_path / "idx")
    vec = tmp_path / "idx" / "vectors.f32"
    vec.write_bytes(vec.read_bytes()[:-7])
    with pytest.raises(CorruptIndex):
        load_index(tmp_path / "idx")


def test_version_and_embedder_checks(tmp_path, toy_index):
    persist_index(toy_index, tmp_path / "idx")
    with pytest.raises(IncompatibleVersion):
        load_index(tmp_path / "idx", MockEmbedder(32))
    manifest = tmp_path / "idx" / "manifest.json"
    manifest.write_text(manifest.read_text().replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(IncompatibleVersion):
        load_index(tmp_path / "idx")


def test_persist_overwrites(tmp_path, toy_index):
    small = build_index(_five_chunks(), MockEmbedder())
    persist_index(toy_index, tmp_path / "idx")
    persist_index(small, tmp_path / "idx")
    assert len(load_index(tmp_path / "idx")) == 5
