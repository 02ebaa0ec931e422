"""Okapi BM25 over an inverted index."""
from __future__ import annotations

import math
import re
from collections import Counter

# Numbers keep their separators ("1,200.00" is one token); everything else
# splits on whitespace and punctuation.
_TOKEN_RE = re.compile(r"\d+(?:[.,]\d+)*|[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class BM25Index:
    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.postings: dict[str, list[tuple[int, int]]] = {}
        self.doc_len: list[int] = []

    @classmethod
    def from_texts(cls, texts, k1: float = 1.2, b: float = 0.75) -> "BM25Index":
        idx = cls(k1, b)
        for doc, text in enumerate(texts):
            tokens = tokenize(text)
            idx.doc_len.append(len(tokens))
            for term, tf in sorted(Counter(tokens).items()):
                idx.postings.setdefault(term, []).append((doc, tf))
        return idx

    @property
    def n_docs(self) -> int:
        return len(self.doc_len)

    @property
    def avgdl(self) -> float:
        return sum(self.doc_len) / self.n_docs if self.n_docs else 0.0

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def scores(self, query: str) -> dict[int, float]:
        """Score every document sharing at least one term with ``query``."""
        out: dict[int, float] = {}
        avgdl = self.avgdl or 1.0
        for term in dict.fromkeys(tokenize(query)):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc, tf in plist:
                norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[doc] / avgdl)
                out[doc] = out.get(doc, 0.0) + idf * tf * (self.k1 + 1.0) / (tf + norm)
        return out
