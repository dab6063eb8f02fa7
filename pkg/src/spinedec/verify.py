"""Single-pass draft verification: unified greedy walk and linear bypass.

One model call scores the whole draft; the walk then follows matching children
from the root, preferring context-sourced (spine) children over transition
children, and stops at the first position where nothing matches. The model's
greedy prediction at the stopping point is appended as a bonus token, so every
cycle makes progress.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .models import ModelQuery, ModelResponse, Prediction, TargetModel
from .tree import Source, SpineTree, tree_query

__all__ = ["PathCategory", "WalkResult", "unified_greedy_walk", "linear_verify"]


class PathCategory:
    """How the accepted path used the two draft sources."""

    EMPTY = "empty"
    PURE_CONTEXT = "pure_context"
    SPINE_CONTINUATION = "spine_continuation"
    PURE_TRANSITION = "pure_transition"


@dataclass(frozen=True)
class WalkResult:
    """Accepted root path, the bonus token, and the path's source category."""

    accepted: tuple[int, ...]  # node indices along the accepted root path
    tokens: tuple[int, ...]    # accepted tokens followed by the bonus token
    bonus: int
    category: str
    response: ModelResponse    # the single scoring pass behind the walk

    @property
    def accepted_tokens(self) -> tuple[int, ...]:
        return self.tokens[:-1]


def _categorize(sources: Sequence[Source]) -> str:
    if not sources:
        return PathCategory.EMPTY
    context_prefix = 0
    for s in sources:
        if s is Source.CONTEXT:
            context_prefix += 1
        else:
            break
    if context_prefix == len(sources):
        return PathCategory.PURE_CONTEXT
    if context_prefix > 0:
        return PathCategory.SPINE_CONTINUATION
    return PathCategory.PURE_TRANSITION


def unified_greedy_walk(model: TargetModel, tree: SpineTree, base: Sequence[int]) -> WalkResult:
    """Verify a draft tree with one model call.

    From the root, advance to a context-sourced child whose token equals the
    greedy prediction at the current node, else a transition child (lower node
    index wins a tie), else stop. The bonus is the prediction at the last
    accepted position.
    """
    response = model.score_tree(tree_query(tree, base))

    def prediction(node_index: int) -> Prediction:
        if node_index == 0:
            return response.base[-1]
        return response.nodes[node_index - 1]

    accepted: list[int] = []
    sources: list[Source] = []
    current = 0
    while True:
        target = prediction(current).token
        chosen = None
        for want in (Source.CONTEXT, Source.TRANSITION):
            for child in tree.children[current]:
                node = tree.nodes[child]
                if node.source is want and node.token == target:
                    chosen = child
                    break
            if chosen is not None:
                break
        if chosen is None:
            break
        accepted.append(chosen)
        sources.append(tree.nodes[chosen].source)
        current = chosen
    bonus = prediction(current).token
    tokens = tuple(tree.nodes[i].token for i in accepted) + (bonus,)
    return WalkResult(
        accepted=tuple(accepted),
        tokens=tokens,
        bonus=bonus,
        category=_categorize(sources),
        response=response,
    )


def linear_verify(
    model: TargetModel,
    chain: Sequence[int],
    base: Sequence[int],
    source: Source = Source.CONTEXT,
) -> WalkResult:
    """Verify a draft chain as a plain linear sequence in one model call.

    Accepts the longest prefix where each chain token equals the greedy
    prediction at its predecessor; the bonus is the prediction at the last
    accepted position (so even a first-token mismatch yields one token).
    """
    if not chain:
        raise ValueError("chain must contain at least one token")
    nodes = tuple((token, tuple(range(i))) for i, token in enumerate(chain))
    response = model.score_tree(
        ModelQuery(base=tuple(base), nodes=nodes, scored_from=len(base) - 1)
    )
    accepted = 0
    prediction = response.base[-1]
    while accepted < len(chain) and chain[accepted] == prediction.token:
        prediction = response.nodes[accepted]
        accepted += 1
    category = PathCategory.EMPTY
    if accepted:
        category = (
            PathCategory.PURE_CONTEXT if source is Source.CONTEXT else PathCategory.PURE_TRANSITION
        )
    tokens = tuple(chain[:accepted]) + (prediction.token,)
    return WalkResult(
        accepted=tuple(range(1, accepted + 1)),
        tokens=tokens,
        bonus=prediction.token,
        category=category,
        response=response,
    )
