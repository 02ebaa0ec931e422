"""Ranked lists and reciprocal rank fusion."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class FusionConfig:
    k: int = 60
    top_k: int = 10
    # depth of each per-(retriever, kind) list fed into the fusion
    depth: int = 50

    def __post_init__(self):
        if self.k < 1 or self.top_k < 1 or self.depth < 1:
            raise ValueError("k, top_k and depth must all be >= 1")


@dataclass
class RankedList:
    source: str
    entries: list = field(default_factory=list)  # [(chunk_id, score)], best first

    @classmethod
    def from_scores(cls, source: str, scores: dict, limit: int | None = None) -> "RankedList":
        """Order by score descending, ties by chunk_id ascending."""
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        if limit is not None:
            ordered = ordered[:limit]
        return cls(source, ordered)

    @property
    def ids(self) -> list[str]:
        return [cid for cid, _ in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass
class FusedEntry:
    chunk_id: str
    rrf_score: float
    contributing: list  # [(source, rank)]


@dataclass
class FusedResult:
    entries: list = field(default_factory=list)

    @property
    def ids(self) -> list[str]:
        return [e.chunk_id for e in self.entries]


def rrf_fuse(lists, config: FusionConfig | None = None) -> FusedResult:
    """Sum 1/(k + rank) over every list a chunk appears in (ranks are 1-based)."""
    config = config or FusionConfig()
    scores: dict[str, float] = {}
    contributing: dict[str, list] = {}
    for rl in lists:
        for rank, (chunk_id, _) in enumerate(rl.entries, start=1):
            scores[chunk_id] = scores.get(chunk_id, 0.0) + 1.0 / (config.k + rank)
            contributing.setdefault(chunk_id, []).append((rl.source, rank))
    ordered = sorted(scores, key=lambda cid: (-scores[cid], cid))[: config.top_k]
    return FusedResult([FusedEntry(cid, scores[cid], contributing[cid]) for cid in ordered])
