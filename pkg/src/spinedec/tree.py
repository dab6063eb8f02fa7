"""Anisotropic spine-tree construction and draft-tree structures.

A spine tree spends a fixed node budget asymmetrically: a deep chain of
context-matched tokens (the spine) carries the high-acceptance path, while
transition-table alternatives fork off the root and every spine node as wide,
shallow branches. Branch roots are then extended as chains of top successors,
deeper behind higher-scoring candidates.

Also here: the balanced k-ary ("isotropic") baseline tree built from the same
candidate pool, and the depth-linear branch allocation that maximizes the
continuation-synergy yield term under a branch budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

from .adjacency import AdjacencyTable, confidence_width
from .models import ModelQuery

__all__ = [
    "Source",
    "DraftNode",
    "TreeBudget",
    "SpineTree",
    "build_spine_tree",
    "build_iso_tree",
    "linear_allocation",
    "tree_query",
]

ROOT = -1


class Source(enum.Enum):
    """Where a draft token came from."""

    CONTEXT = "context"      # copied by n-gram context matching
    TRANSITION = "transition"  # retrieved from the adjacency table


@dataclass(frozen=True)
class DraftNode:
    token: int
    source: Source
    parent: int  # index of parent node; ROOT's parent is -1
    depth: int   # root is 0


@dataclass(frozen=True)
class TreeBudget:
    """Node-budget split for one tree build.

    ``spine_nodes(m)`` caps the spine at ``floor(B*r)``; of the remaining
    ``B - 1 - b_s`` slots a ``1 - rho`` share goes to root branches and the
    rest to spine branches (the root slot itself accounts for the ``- 1``).
    """

    budget: int = 60
    spine_ratio: float = 0.5
    spine_branch_ratio: float = 0.5
    max_depth: int = 6

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not (0.0 < self.spine_ratio < 1.0):
            raise ValueError("spine_ratio must be in (0, 1)")
        if not (0.0 < self.spine_branch_ratio < 1.0):
            raise ValueError("spine_branch_ratio must be in (0, 1)")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    def split(self, chain_len: int) -> tuple[int, int, int]:
        """Return (b_s, b_r, b_rho) for a draft chain of length ``chain_len``."""
        b_s = min(chain_len, math.floor(self.budget * self.spine_ratio))
        rest = max(self.budget - 1 - b_s, 0)
        b_r = math.floor(rest * (1.0 - self.spine_branch_ratio))
        b_rho = rest - b_r
        return b_s, b_r, b_rho


@dataclass
class SpineTree:
    """Draft nodes in construction order; ``nodes[0]`` is the anchor root."""

    nodes: list[DraftNode]
    spine: list[int]  # node indices of the spine chain, root first
    budget: int
    children: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.children:
            self.children = [[] for _ in self.nodes]
            for i, node in enumerate(self.nodes):
                if node.parent != ROOT:
                    self.children[node.parent].append(i)

    def __len__(self) -> int:
        return len(self.nodes)

    def ancestor_masks(self) -> list[frozenset[int]]:
        """Exact ancestor index set per node (empty for the root)."""
        masks: list[frozenset[int]] = []
        for i, node in enumerate(self.nodes):
            if node.parent == ROOT:
                masks.append(frozenset())
            elif node.parent >= i:
                raise RuntimeError(f"node {i} has non-earlier parent {node.parent}")
            else:
                masks.append(masks[node.parent] | {node.parent})
        return masks

    def path_tokens(self, index: int) -> list[int]:
        """Root-to-node token path including the node itself."""
        path: list[int] = []
        while index != ROOT:
            path.append(self.nodes[index].token)
            index = self.nodes[index].parent
        return path[::-1]

    def dump(self) -> str:
        """Indented debug text, one node per line: depth token source parent."""
        lines = []
        for i, n in enumerate(self.nodes):
            parent = "-" if n.parent == ROOT else str(n.parent)
            lines.append(f"{'  ' * n.depth}{n.depth} {n.token} {n.source.value} {parent}")
        return "\n".join(lines)


def tree_query(tree: SpineTree, base: Sequence[int]) -> ModelQuery:
    """Convert a tree to a scoring query; the root is the base's last token."""
    if not base or base[-1] != tree.nodes[0].token:
        raise ValueError("tree root must equal the last base token")
    masks = tree.ancestor_masks()
    nodes = tuple(
        (tree.nodes[i].token, tuple(a - 1 for a in sorted(masks[i]) if a != 0))
        for i in range(1, len(tree.nodes))
    )
    return ModelQuery(base=tuple(base), nodes=nodes, scored_from=len(base) - 1)


class _Builder:
    def __init__(self, anchor: int, budget: int):
        self.nodes: list[DraftNode] = [DraftNode(anchor, Source.CONTEXT, ROOT, 0)]
        self.children: list[list[int]] = [[]]
        self.child_tokens: list[set[int]] = [set()]
        self.budget = budget

    @property
    def remaining(self) -> int:
        return self.budget - len(self.nodes)

    def attach(self, parent: int, token: int, source: Source) -> int | None:
        """Add a child unless over budget or duplicating a sibling token."""
        if self.remaining <= 0 or token in self.child_tokens[parent]:
            return None
        index = len(self.nodes)
        self.nodes.append(DraftNode(token, source, parent, self.nodes[parent].depth + 1))
        self.children.append([])
        self.child_tokens.append(set())
        self.children[parent].append(index)
        self.child_tokens[parent].add(token)
        return index


def build_spine_tree(
    anchor: int,
    chain: Sequence[int],
    table: AdjacencyTable,
    budget: TreeBudget,
    prev_token: int | None = None,
    spine_source: Source = Source.CONTEXT,
    spine_branches: bool = True,
    use_bigram: bool = True,
) -> SpineTree:
    """Assemble the anisotropic draft tree for one decode cycle.

    Step 1 lays the spine chain, step 2 attaches root branches, step 3 spreads
    spine branches with harmonically decaying widths, and step 4 extends every
    branch root as a chain of top successors (highest-scoring roots first,
    each up to its confidence allowance and the depth cap) until the budget
    runs out. An empty chain yields a transition-only tree; an empty table, a
    bare chain.
    """
    b = _Builder(anchor, budget.budget)
    b_s, b_r, b_rho = budget.split(len(chain))

    # Step 1: spine chain.
    parent = 0
    for token in chain[:b_s]:
        index = b.attach(parent, token, spine_source)
        if index is None:
            break
        parent = index
    spine = [0] + [i for i in range(1, len(b.nodes))]

    def lookup(node_index: int, width: int) -> list[tuple[int, float]]:
        node = b.nodes[node_index]
        if node.parent == ROOT:
            prev = prev_token
        else:
            prev = b.nodes[node.parent].token
        return table.successors(prev, node.token, width, use_bigram=use_bigram)

    # Branch roots to extend in step 4, with their chain allowances.
    branch_roots: list[tuple[float, int]] = []
    allowance: dict[int, int] = {}

    def attach_branches(parent_index: int, count: int) -> None:
        if count <= 0:
            return
        entries = lookup(parent_index, count + len(b.child_tokens[parent_index]))
        taken: list[tuple[int, float]] = []
        for token, score in entries:
            if len(taken) >= count:
                break
            index = b.attach(parent_index, token, Source.TRANSITION)
            if index is not None:
                taken.append((index, score))
        sibling_scores = [s for _, s in taken]
        for index, score in taken:
            branch_roots.append((score, index))
            allowance[index] = confidence_width(score, sibling_scores, count)

    # Step 2: root branches.
    attach_branches(0, b_r)

    # Step 3: spine branches, 1/i harmonic decay over spine nodes.
    if spine_branches and b_s > 0 and b_rho > 0:
        spine_chain = spine[1:]
        harmonic = sum(1.0 / j for j in range(1, len(spine_chain) + 1))
        for i, node_index in enumerate(spine_chain, start=1):
            attach_branches(node_index, math.floor(b_rho * (1.0 / i) / harmonic))

    # Step 4: extend branch roots as top-successor chains, best scores first.
    for _score, root_index in sorted(branch_roots, key=lambda r: (-r[0], r[1])):
        leaf = root_index
        offset = 0  # depth below the branching point; branch token itself is 0
        left = allowance.get(root_index, 0)
        while left > 0 and offset < budget.max_depth - 1 and b.remaining > 0:
            entries = lookup(leaf, 1 + len(b.child_tokens[leaf]))
            nxt = None
            for token, _s in entries:
                nxt = b.attach(leaf, token, Source.TRANSITION)
                if nxt is not None:
                    break
            if nxt is None:
                break
            leaf, offset, left = nxt, offset + 1, left - 1

    return SpineTree(nodes=b.nodes, spine=spine, budget=budget.budget, children=b.children)


def build_iso_tree(
    anchor: int,
    fanout: int,
    node_budget: int,
    chain: Sequence[int],
    table: AdjacencyTable,
    prev_token: int | None = None,
    use_bigram: bool = True,
) -> SpineTree:
    """Balanced k-ary baseline tree over the same candidate pool.

    Levels are filled completely: the depth limit is the largest D with
    ``sum(k^d, d=1..D) <= budget`` and leftover budget stays unused. At each
    node the candidate pool is the context-match continuation (when the node
    sits on the matched chain) followed by table successors, by score.
    """
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    levels = 0
    total = 0
    while total + fanout ** (levels + 1) <= node_budget:
        levels += 1
        total += fanout**levels
    b = _Builder(anchor, total + 1)  # + root, which the level budget excludes

    # Track which node continues the matched chain (path == chain[:depth]).
    on_chain: dict[int, bool] = {0: bool(chain)}
    frontier = [0]
    for depth in range(1, levels + 1):
        next_frontier: list[int] = []
        for node_index in frontier:
            node = b.nodes[node_index]
            prev = prev_token if node.parent == ROOT else b.nodes[node.parent].token
            pool: list[tuple[int, Source]] = []
            if on_chain.get(node_index) and len(chain) >= depth:
                pool.append((chain[depth - 1], Source.CONTEXT))
            for token, _s in table.successors(prev, node.token, fanout + 1, use_bigram=use_bigram):
                pool.append((token, Source.TRANSITION))
            added = 0
            for token, source in pool:
                if added >= fanout:
                    break
                index = b.attach(node_index, token, source)
                if index is None:
                    continue
                added += 1
                if source is Source.CONTEXT and on_chain.get(node_index):
                    on_chain[index] = True
                next_frontier.append(index)
        frontier = next_frontier
    return SpineTree(nodes=b.nodes, spine=[0], budget=node_budget, children=b.children)


def linear_allocation(p_s: float, p_t: float, m: int, branch_budget: int) -> list[int]:
    """Depth-linear branch widths maximizing the continuation-synergy term.

    Continuous solution: ``w_i = w_0 - i * |ln p_s| / |ln(1 - p_t)|`` with
    ``w_0`` fixed by the budget, clipped at 0, then rounded to integers that
    preserve the total (largest-remainder rounding, ties to shallower nodes).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if branch_budget < 0:
        raise ValueError("branch budget must be >= 0")
    if not (0.0 < p_t < 1.0) or not (0.0 < p_s < 1.0):
        raise ValueError("acceptance rates must lie in (0, 1)")
    if p_s < p_t:
        raise ValueError(f"spine rate {p_s} must be >= branch rate {p_t}")
    if branch_budget == 0:
        return [0] * m
    slope = abs(math.log(p_s)) / abs(math.log(1.0 - p_t))
    active = m
    w0 = float(branch_budget)
    while active >= 1:
        w0 = (branch_budget + slope * active * (active - 1) / 2.0) / active
        if w0 - slope * (active - 1) >= 0.0:
            break
        active -= 1
    cont = [max(w0 - slope * i, 0.0) if i < active else 0.0 for i in range(m)]
    floors = [math.floor(w) for w in cont]
    remainder = branch_budget - sum(floors)
    fractions = sorted(
        ((cont[i] - floors[i], -i) for i in range(m)), reverse=True
    )
    widths = list(floors)
    for frac, neg_i in fractions[:remainder]:
        widths[-neg_i] += 1
    return widths
