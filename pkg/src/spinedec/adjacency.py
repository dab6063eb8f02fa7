"""Two-tier token-transition store fed by aggressive logit harvesting.

Tier 1 keeps the top-K successors of every single token, tier 2 the top-K
successors of every observed (prev, cur) bigram. Every scored position of
every model call — accepted or rejected — is merged in, so the table warms up
far faster than accepted-positions-only harvesting would.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

__all__ = ["AdjacencyTable", "confidence_width", "DEFAULT_TOP_K", "MIN_SCORE"]

DEFAULT_TOP_K = 10
MIN_SCORE = 0.01

Entries = list[tuple[int, float]]


def _merge(existing: Entries, new: Iterable[tuple[int, float]], top_k: int, min_score: float) -> Entries:
    # Latest-wins per successor, then re-sort, truncate, threshold.
    scores = {t: s for t, s in existing}
    for t, s in new:
        scores[t] = s
    merged = sorted(scores.items(), key=lambda e: (-e[1], e[0]))
    return [(t, s) for t, s in merged[:top_k] if s >= min_score]


class AdjacencyTable:
    """Top-K successor lists per unigram and per bigram key."""

    def __init__(self, top_k: int = DEFAULT_TOP_K, min_score: float = MIN_SCORE):
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        self.top_k = top_k
        self.min_score = min_score
        self.unigram: dict[int, Entries] = {}
        self.bigram: dict[tuple[int, int], Entries] = {}

    def __len__(self) -> int:
        return len(self.unigram) + len(self.bigram)

    def harvest(self, positions: Iterable[tuple[Sequence[int], Sequence[tuple[int, float]]]]) -> None:
        """Merge scored positions into both tiers.

        Each item is ``(context, candidates)`` where ``context`` is the token
        path up to and including the position (only the last two tokens are
        used; one-token contexts feed the unigram tier only).
        """
        for context, candidates in positions:
            if not context:
                raise ValueError("harvest context must contain at least one token")
            cur = context[-1]
            self.unigram[cur] = _merge(
                self.unigram.get(cur, []), candidates, self.top_k, self.min_score
            )
            if len(context) >= 2:
                key = (context[-2], cur)
                self.bigram[key] = _merge(
                    self.bigram.get(key, []), candidates, self.top_k, self.min_score
                )

    def successors(
        self,
        prev: int | None,
        cur: int,
        width: int,
        use_bigram: bool = True,
    ) -> Entries:
        """Top-``width`` successors of the context, bigram tier first.

        Falls back to the unigram tier when the bigram key is absent or empty;
        entries below the score threshold are never returned.
        """
        if width < 0:
            raise ValueError("width must be >= 0")
        entries: Entries | None = None
        if use_bigram and prev is not None:
            entries = self.bigram.get((prev, cur))
        if not entries:
            entries = self.unigram.get(cur, [])
        return [(t, s) for t, s in entries[:width] if s >= self.min_score]

    def has_successors(self, prev: int | None, cur: int, use_bigram: bool = True) -> bool:
        return bool(self.successors(prev, cur, 1, use_bigram=use_bigram))

    def dump_json(self) -> str:
        """Debug dump: {key: [[token, score], ...]}; not load-bearing."""
        payload = {
            **{str(t): [[tok, s] for tok, s in ent] for t, ent in sorted(self.unigram.items())},
            **{f"{a},{b}": [[tok, s] for tok, s in ent] for (a, b), ent in sorted(self.bigram.items())},
        }
        return json.dumps(payload, sort_keys=True)


def confidence_width(score: float, sibling_scores: Sequence[float], base_allocation: int) -> int:
    """Children allowance for a successor, scaled by score vs. best sibling.

    ``round(base_allocation * score / max(sibling_scores))`` with half-up
    rounding; successors below the score threshold get 0 (pruned entirely).
    """
    if base_allocation < 0:
        raise ValueError("base_allocation must be >= 0")
    if score < MIN_SCORE:
        return 0
    best = max(sibling_scores) if sibling_scores else score
    if best <= 0:
        return 0
    return int(base_allocation * score / best + 0.5)
