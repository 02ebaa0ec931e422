"""Hybrid retrieval index: per-kind dense stores, BM25 postings, chunk catalog."""
from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bm25 import BM25Index
from .chunker import CHUNK_KINDS, Chunk
from .embedding import Embedder, get_embedder
from .errors import CorruptIndex, DuplicateChunkId, EmbedderFailure, IncompatibleVersion
from .fusion import FusedResult, FusionConfig, RankedList, rrf_fuse
from .workbook import EmbeddedImage

INDEX_FORMAT_VERSION = 1
_FILES = ("catalog.jsonl", "postings.jsonl", "vectors.f32")


@dataclass(frozen=True)
class CoordFilter:
    row: int | None = None
    col: int | None = None

    def accepts(self, chunk: Chunk) -> bool:
        return chunk.contains(self.row, self.col)


def _as_filter(coord_filter) -> CoordFilter | None:
    if coord_filter is None or isinstance(coord_filter, CoordFilter):
        return coord_filter
    if isinstance(coord_filter, dict):
        return CoordFilter(coord_filter.get("row"), coord_filter.get("col"))
    row, col = coord_filter
    return CoordFilter(row, col)


class Index:
    """Immutable after construction; safe to query from many threads."""

    def __init__(self, chunks, vectors: np.ndarray, bm25: BM25Index, embedder: Embedder):
        self.chunks = tuple(chunks)
        self.by_id = {ch.chunk_id: i for i, ch in enumerate(self.chunks)}
        self.vectors = np.ascontiguousarray(vectors, dtype="<f4")
        self.vectors.setflags(write=False)
        self.bm25 = bm25
        self.embedder = embedder
        self.kind_rows = {
            kind: np.array([i for i, ch in enumerate(self.chunks) if ch.kind == kind], dtype=np.int64)
            for kind in CHUNK_KINDS
        }

    def __len__(self):
        return len(self.chunks)

    def chunk(self, chunk_id: str) -> Chunk:
        return self.chunks[self.by_id[chunk_id]]

    def counts_by_kind(self) -> dict[str, int]:
        return {kind: int(len(rows)) for kind, rows in self.kind_rows.items()}

    def _eligible(self, kind_filter, coord_filter) -> np.ndarray:
        rows = self.kind_rows[kind_filter] if kind_filter else np.arange(len(self.chunks), dtype=np.int64)
        if coord_filter is not None and (coord_filter.row is not None or coord_filter.col is not None):
            rows = np.array([i for i in rows if coord_filter.accepts(self.chunks[i])], dtype=np.int64)
        return rows

    def dense_scores(self, query: str, kind_filter=None, coord_filter=None) -> dict[str, float]:
        rows = self._eligible(kind_filter, _as_filter(coord_filter))
        if not len(rows) or not query.strip():
            return {}
        q = np.asarray(self.embedder.embed_text(query), dtype=np.float64)
        norm = np.linalg.norm(q)
        if not norm:
            return {}
        q = q / norm
        sims = np.clip(self.vectors[rows].astype(np.float64) @ q, -1.0, 1.0)
        return {self.chunks[i].chunk_id: float(s) for i, s in zip(rows, sims)}

    def lexical_scores(self, query: str, kind_filter=None, coord_filter=None) -> dict[str, float]:
        cf = _as_filter(coord_filter)
        out = {}
        for doc, score in self.bm25.scores(query).items():
            ch = self.chunks[doc]
            if kind_filter and ch.kind != kind_filter:
                continue
            if cf is not None and not cf.accepts(ch):
                continue
            out[ch.chunk_id] = score
        return out


def build_index(chunks, embedder: Embedder, max_workers: int = 1) -> Index:
    """Embed ``chunks`` and build the dense and lexical stores.

    The result depends only on the chunk set, never on embedding order.
    """
    chunks = sorted(chunks, key=lambda ch: ch.chunk_id)
    ids = [ch.chunk_id for ch in chunks]
    seen = set()
    for cid in ids:
        if cid in seen:
            raise DuplicateChunkId(cid)
        seen.add(cid)
    dim = embedder.dimension()

    def embed(ch: Chunk) -> np.ndarray:
        if ch.image is not None:
            return embedder.embed_image(ch.image.payload, ch.text)
        return embedder.embed_text(ch.text)

    vectors = np.zeros((len(chunks), dim), dtype="<f4")
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = [pool.submit(embed, ch) for ch in chunks]
        for i, (ch, fut) in enumerate(zip(chunks, futures)):
            try:
                vec = np.asarray(fut.result(), dtype=np.float64)
            except Exception as exc:  # provider errors are opaque
                raise EmbedderFailure(ch.chunk_id, exc, embedded=i) from exc
            if vec.shape != (dim,):
                raise EmbedderFailure(ch.chunk_id, f"expected dimension {dim}, got {vec.shape}", embedded=i)
            if not np.all(np.isfinite(vec)):
                raise EmbedderFailure(ch.chunk_id, "non-finite vector", embedded=i)
            norm = np.linalg.norm(vec)
            if not norm > 0:
                raise EmbedderFailure(ch.chunk_id, "zero-norm vector", embedded=i)
            vectors[i] = vec / norm
    bm25 = BM25Index.from_texts([ch.text for ch in chunks])
    return Index(chunks, vectors, bm25, embedder)


# ------------------------------------------------------------------- searching

def dense_search(index: Index, query: str, kind_filter=None, coord_filter=None, K: int = 10) -> RankedList:
    scores = index.dense_scores(query, kind_filter, coord_filter)
    return RankedList.from_scores(f"dense:{kind_filter or 'all'}", scores, K)


def lexical_search(index: Index, query: str, kind_filter=None, coord_filter=None, K: int = 10) -> RankedList:
    scores = index.lexical_scores(query, kind_filter, coord_filter)
    return RankedList.from_scores(f"lexical:{kind_filter or 'all'}", scores, K)


def hybrid_fused(index: Index, query: str, kind_filter=None, coord_filter=None,
                 config: FusionConfig | None = None) -> FusedResult:
    config = config or FusionConfig()
    kinds = [kind_filter] if kind_filter else list(CHUNK_KINDS)
    lists = []
    for kind in kinds:
        lists.append(dense_search(index, query, kind, coord_filter, config.depth))
        lists.append(lexical_search(index, query, kind, coord_filter, config.depth))
    return rrf_fuse([rl for rl in lists if rl.entries], config)


def hybrid_search(index: Index, query: str, kind_filter=None, coord_filter=None,
                  config: FusionConfig | None = None) -> list[tuple[Chunk, float]]:
    """Dense + lexical search per chunk kind, fused into one top-k list."""
    fused = hybrid_fused(index, query, kind_filter, coord_filter, config)
    return [(index.chunk(e.chunk_id), e.rrf_score) for e in fused.entries]


# ----------------------------------------------------------------- persistence

def _chunk_record(ch: Chunk) -> dict:
    rec = {
        "chunk_id": ch.chunk_id,
        "kind": ch.kind,
        "workbook_id": ch.workbook_id,
        "sheet": ch.sheet,
        "row_span": list(ch.row_span),
        "col_span": list(ch.col_span),
        "headers": list(ch.headers),
        "text": ch.text,
    }
    if ch.image is not None:
        img = ch.image
        rec["image"] = {
            "image_id": img.image_id,
            "row": img.row,
            "col": img.col,
            "encoding": img.encoding,
            "alt_text": img.alt_text,
            "payload_base64": base64.b64encode(img.payload).decode("ascii"),
        }
    return rec


def _chunk_from_record(rec: dict) -> Chunk:
    image = None
    if rec.get("image"):
        i = rec["image"]
        image = EmbeddedImage(i["image_id"], rec["sheet"], i["row"], i["col"],
                              base64.b64decode(i["payload_base64"]), i["encoding"], i["alt_text"])
    return Chunk(rec["chunk_id"], rec["kind"], rec["workbook_id"], rec["sheet"], tuple(rec["row_span"]),
                 tuple(rec["col_span"]), tuple(rec["headers"]), rec["text"], image)


def persist_index(index: Index, path: str | Path) -> None:
    """Write the index directory; files are replaced atomically one by one."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blobs = {
        "catalog.jsonl": "".join(json.dumps(_chunk_record(ch), ensure_ascii=False, sort_keys=True) + "\n"
                                 for ch in index.chunks).encode("utf-8"),
        "postings.jsonl": _postings_bytes(index.bm25),
        "vectors.f32": index.vectors.astype("<f4").tobytes(order="C"),
    }
    manifest = {
        "format_version": INDEX_FORMAT_VERSION,
        "embedder_id": index.embedder.embedder_id,
        "dimension": int(index.embedder.dimension()),
        "n_chunks": len(index.chunks),
        "bm25": {"k1": index.bm25.k1, "b": index.bm25.b},
        "checksums": {name: hashlib.sha256(data).hexdigest() for name, data in blobs.items()},
    }
    blobs["manifest.json"] = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")
    for name, data in blobs.items():
        fd, tmp = tempfile.mkstemp(dir=path, prefix=f".{name}.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path / name)


def _postings_bytes(bm25: BM25Index) -> bytes:
    lines = [json.dumps({"doc_len": bm25.doc_len})]
    for term in sorted(bm25.postings):
        lines.append(json.dumps({"term": term, "postings": bm25.postings[term]}, ensure_ascii=False))
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_index(path: str | Path, embedder: Embedder | None = None) -> Index:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CorruptIndex(f"{path}: missing manifest.json") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptIndex(f"{path}: unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != INDEX_FORMAT_VERSION:
        raise IncompatibleVersion(f"index format {manifest.get('format_version')!r}, expected {INDEX_FORMAT_VERSION}")
    if embedder is None:
        embedder = get_embedder(manifest["embedder_id"])
    if embedder.embedder_id != manifest["embedder_id"] or embedder.dimension() != manifest["dimension"]:
        raise IncompatibleVersion(
            f"index was built with {manifest['embedder_id']} (D={manifest['dimension']}), "
            f"got {embedder.embedder_id} (D={embedder.dimension()})")
    blobs = {}
    for name in _FILES:
        try:
            data = (path / name).read_bytes()
        except FileNotFoundError as exc:
            raise CorruptIndex(f"{path}: missing {name}") from exc
        if hashlib.sha256(data).hexdigest() != manifest.get("checksums", {}).get(name):
            raise CorruptIndex(f"{path}: checksum mismatch for {name}")
        blobs[name] = data
    try:
        chunks = [_chunk_from_record(json.loads(line)) for line in blobs["catalog.jsonl"].decode("utf-8").splitlines()]
        plines = blobs["postings.jsonl"].decode("utf-8").splitlines()
        bm25 = BM25Index(**manifest.get("bm25", {}))
        bm25.doc_len = list(json.loads(plines[0])["doc_len"])
        for line in plines[1:]:
            rec = json.loads(line)
            bm25.postings[rec["term"]] = [tuple(p) for p in rec["postings"]]
        dim = manifest["dimension"]
        vectors = np.frombuffer(blobs["vectors.f32"], dtype="<f4").reshape(len(chunks), dim)
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise CorruptIndex(f"{path}: {exc}") from exc
    if len(chunks) != manifest["n_chunks"] or len(bm25.doc_len) != len(chunks):
        raise CorruptIndex(f"{path}: component sizes disagree")
    return Index(chunks, vectors.copy(), bm25, embedder)
