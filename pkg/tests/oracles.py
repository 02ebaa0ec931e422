"""Independent reference implementations used as test oracles.

These are deliberately naive: no shared code with the library beyond the
mock embedder, and every quantity is recomputed from first principles.
"""
import math
import random
import re

import numpy as np

KINDS = ("row", "column", "window", "image")


def rrf_reference(lists, k=60, top_k=10):
    """lists: list of id lists, best first."""
    ids = sorted({cid for lst in lists for cid in lst})
    scored = []
    for cid in ids:
        total = 0.0
        for lst in lists:
            if cid in lst:
                total += 1.0 / (k + lst.index(cid) + 1)
        scored.append((cid, total))
    scored.sort(key=lambda p: (-p[1], p[0]))
    return scored[:top_k]


def random_rank_lists(rng, n_lists=None, universe=None):
    n_lists = n_lists or rng.randint(1, 6)
    universe = universe or [f"c{i:03d}" for i in range(rng.randint(1, 40))]
    lists = []
    for _ in range(n_lists):
        picked = rng.sample(universe, rng.randint(0, len(universe)))
        lists.append(picked)
    return lists


# ----------------------------------------------------------------- metrics

def recall_ref(ranking, relevant, K):
    top = []
    for x in ranking[:K]:
        if x not in top:
            top.append(x)
    return sum(1 for x in top if x in relevant) / len(relevant)


def ndcg_ref(ranking, relevant, K):
    gains = []
    seen = []
    for x in ranking[:K]:
        gains.append(1.0 if (x in relevant and x not in seen) else 0.0)
        seen.append(x)
    dcg = sum(g / math.log2(i + 2) for i, g in enumerate(gains))
    ideal = [1.0] * min(len(relevant), K)
    idcg = sum(g / math.log2(i + 2) for i, g in enumerate(ideal))
    return dcg / idcg


def map_ref(ranking, relevant, K):
    precisions = []
    seen = []
    for i, x in enumerate(ranking[:K]):
        if x in relevant and x not in seen:
            hits = len([y for y in set(ranking[:i + 1]) if y in relevant])
            precisions.append(hits / (i + 1))
        seen.append(x)
    return sum(precisions) / min(len(relevant), K)


# ------------------------------------------------------------ exhaustive search

def tokens(text):
    return re.findall(r"\d+(?:[.,]\d+)*|[^\W_]+", text.lower())


def bm25_reference(texts, query, k1=1.2, b=0.75):
    docs = [tokens(t) for t in texts]
    N = len(docs)
    avgdl = sum(len(d) for d in docs) / N
    out = {}
    for i, d in enumerate(docs):
        s = 0.0
        for term in set(tokens(query)):
            tf = d.count(term)
            if not tf:
                continue
            df = sum(1 for other in docs if term in other)
            idf = math.log((N - df + 0.5) / (df + 0.5) + 1)
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avgdl))
        if s:
            out[i] = s
    return out


def cosine(u, v):
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def as_stored(v):
    """Unit vector rounded to float32, the precision the index keeps on disk."""
    n = math.sqrt(sum(x * x for x in v))
    return [float(np.float32(x / n)) for x in v]


def hybrid_reference(chunks, embedder, query, k=60, top_k=10, depth=50):
    """Per-kind dense and lexical lists over every chunk, fused by RRF."""
    q = list(embedder.embed_text(query))
    lex = bm25_reference([c.text for c in chunks], query)
    lists = []
    for kind in KINDS:
        members = [i for i, c in enumerate(chunks) if c.kind == kind]
        dense = []
        for i in members:
            c = chunks[i]
            v = embedder.embed_image(c.image.payload, c.text) if c.image is not None else embedder.embed_text(c.text)
            dense.append((cosine(q, as_stored(list(v))), c.chunk_id))
        dense.sort(key=lambda p: (-p[0], p[1]))
        lexical = sorted(((lex[i], chunks[i].chunk_id) for i in members if i in lex), key=lambda p: (-p[0], p[1]))
        for ranked in (dense, lexical):
            if ranked:
                lists.append([cid for _, cid in ranked[:depth]])
    return rrf_reference(lists, k, top_k)


def sample_queries(chunks, n=20, seed=7):
    """Queries built from chunk vocabulary: single terms, pairs and misspellings."""
    rng = random.Random(seed)
    vocab = sorted({t for c in chunks for t in tokens(c.text)})
    out = []
    while len(out) < n:
        words = rng.sample(vocab, rng.randint(1, 3))
        if rng.random() < 0.3:
            w = words[0]
            words[0] = w[:-1] if len(w) > 2 else w + "x"
        out.append(" ".join(words))
    return out


# ------------------------------------------------------------------------- DAGs

def random_dag(rng, max_nodes=6):
    n = rng.randint(1, max_nodes)
    nodes = []
    for i in range(1, n + 1):
        deps = sorted(rng.sample(range(1, i), rng.randint(0, min(i - 1, 3)))) if i > 1 else []
        nodes.append((i, deps))
    perm = list(range(1, n + 1))
    rng.shuffle(perm)
    relabel = dict(zip(range(1, n + 1), perm))
    return {relabel[i]: sorted(relabel[d] for d in deps) for i, deps in nodes}


def ancestors(dag, node):
    out = set()
    stack = list(dag[node])
    while stack:
        d = stack.pop()
        if d not in out:
            out.add(d)
            stack.extend(dag[d])
    return out
