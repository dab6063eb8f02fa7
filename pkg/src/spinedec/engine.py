"""The full speculative decode loop and its baseline engines.

Each cycle routes by confidence: a long or consensus-backed context match is
verified as a bare linear chain (bypass); otherwise any available draft source
builds a spine tree verified by the unified greedy walk; with no source at
all, the cycle degrades to a single autoregressive step. Every scored
position, including rejected branches, is harvested into the adjacency table,
and an EMA of spine acceptance retunes the spine ratio each cycle.

Output is provably identical to plain greedy decoding: a token is only ever
emitted after the target model predicted it at its exact position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

from .adjacency import AdjacencyTable
from .context import ContextIndex
from .models import ModelQuery, TargetModel, TokenSequence, ar_decode
from .tree import Source, SpineTree, TreeBudget, build_iso_tree, build_spine_tree
from .verify import PathCategory, WalkResult, linear_verify, unified_greedy_walk

__all__ = [
    "EngineConfig",
    "EmaState",
    "update_ema",
    "spine_ratio_tier",
    "CycleRecord",
    "DecodeStats",
    "spine_decode",
    "baseline_decode",
    "decode",
    "ENGINE_KINDS",
]

ENGINE_KINDS = ("spine", "context", "transition", "iso3", "iso5", "ar")


@dataclass(frozen=True)
class EngineConfig:
    """All decode hyperparameters; defaults are fixed across experiments."""

    ngram_lengths: tuple[int, ...] = (3, 4, 5)
    max_spine_continuation: int = 20
    transition_top_k: int = 10
    node_budget: int = 60
    max_tree_depth: int = 6
    min_score_threshold: float = 0.01
    spine_branch_ratio: float = 0.5
    ema_smoothing: float = 0.3
    ema_init: float = 0.3
    # (upper bound, ratio) pairs scanned in order; the last entry is the
    # catch-all for estimates at or above the final bound.
    spine_ratio_tiers: tuple[tuple[float, float], ...] = ((0.2, 0.15), (0.4, 0.30), (1.0, 0.50))
    bypass_threshold: int = 8
    # Ablation switches.
    disable_spine_branches: bool = False
    disable_bigram: bool = False
    disable_bypass: bool = False
    disable_spine: bool = False
    control_swap_sources: bool = False

    def to_json(self) -> str:
        raw = {
            "ngram_lengths": list(self.ngram_lengths),
            "max_spine_continuation": self.max_spine_continuation,
            "transition_top_k": self.transition_top_k,
            "node_budget": self.node_budget,
            "max_tree_depth": self.max_tree_depth,
            "min_score_threshold": self.min_score_threshold,
            "spine_branch_ratio": self.spine_branch_ratio,
            "ema_smoothing": self.ema_smoothing,
            "ema_init": self.ema_init,
            "spine_ratio_tiers": [list(t) for t in self.spine_ratio_tiers],
            "bypass_threshold": self.bypass_threshold,
            "disable_spine_branches": self.disable_spine_branches,
            "disable_bigram": self.disable_bigram,
            "disable_bypass": self.disable_bypass,
            "disable_spine": self.disable_spine,
            "control_swap_sources": self.control_swap_sources,
        }
        return json.dumps(raw, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EngineConfig":
        raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "ngram_lengths" in raw:
            raw["ngram_lengths"] = tuple(int(n) for n in raw["ngram_lengths"])
        if "spine_ratio_tiers" in raw:
            raw["spine_ratio_tiers"] = tuple(
                (float(b), float(r)) for b, r in raw["spine_ratio_tiers"]
            )
        return cls(**raw)


@dataclass(frozen=True)
class EmaState:
    """Running estimate of spine acceptance, smoothed exponentially."""

    value: float = 0.3
    alpha: float = 0.3

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError("EMA value must stay in [0, 1]")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("EMA smoothing must lie in (0, 1]")


def update_ema(state: EmaState, observation: float) -> EmaState:
    """One smoothing step toward the cycle's observed spine acceptance."""
    if not (0.0 <= observation <= 1.0):
        raise ValueError(f"observation {observation} outside [0, 1]")
    return replace(state, value=(1.0 - state.alpha) * state.value + state.alpha * observation)


def spine_ratio_tier(estimate: float, tiers: Sequence[tuple[float, float]]) -> float:
    """Step function from the acceptance estimate to the spine ratio."""
    for bound, ratio in tiers[:-1]:
        if estimate < bound:
            return ratio
    return tiers[-1][1]


@dataclass(frozen=True)
class CycleRecord:
    """Bookkeeping for one model call.

    ``offered_*``/``accepted_*`` are verification outcomes (pre-truncation);
    ``emitted``/``accepted_emitted``/``bonus_emitted`` count tokens actually
    appended to the output after the length/EOS cut.
    """

    kind: str  # "prefill" | "bypass" | "tree" | "fallback"
    emitted: int
    accepted_emitted: int
    bonus_emitted: int
    category: str
    offered_context: int = 0
    offered_transition: int = 0
    accepted_context: int = 0
    accepted_transition: int = 0
    offered_spine: int = 0
    accepted_spine: int = 0


@dataclass
class DecodeStats:
    """Per-run decode telemetry; one record per model call."""

    budget: int
    records: list[CycleRecord] = field(default_factory=list)

    @property
    def model_calls(self) -> int:
        return len(self.records)

    @property
    def total_tokens(self) -> int:
        return sum(r.emitted for r in self.records)

    @property
    def tau(self) -> float:
        """Mean tokens per model call; 1.0 for an empty run by convention."""
        if not self.records:
            return 1.0
        return self.total_tokens / self.model_calls

    @property
    def cycle_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r.kind] = counts.get(r.kind, 0) + 1
        return counts

    @property
    def category_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            if r.kind != "prefill":
                counts[r.category] = counts.get(r.category, 0) + 1
        return counts

    @property
    def accepted_lengths(self) -> list[int]:
        return [r.accepted_emitted for r in self.records if r.kind != "prefill"]

    @property
    def offered_by_source(self) -> dict[str, int]:
        return {
            "context": sum(r.offered_context for r in self.records),
            "transition": sum(r.offered_transition for r in self.records),
        }

    @property
    def accepted_by_source(self) -> dict[str, int]:
        return {
            "context": sum(r.accepted_context for r in self.records),
            "transition": sum(r.accepted_transition for r in self.records),
        }

    @property
    def spine_offered_total(self) -> int:
        return sum(r.offered_spine for r in self.records)

    @property
    def spine_accepted_total(self) -> int:
        return sum(r.accepted_spine for r in self.records)

    def mean_spine_len(self) -> float:
        """Mean structural spine length over tree cycles (0 if none)."""
        tree_records = [r for r in self.records if r.kind == "tree"]
        if not tree_records:
            return 0.0
        return sum(r.offered_spine for r in tree_records) / len(tree_records)

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "total_tokens": self.total_tokens,
            "model_calls": self.model_calls,
            "tau": self.tau,
            "cycle_counts": dict(sorted(self.cycle_counts.items())),
            "category_counts": dict(sorted(self.category_counts.items())),
            "offered_by_source": self.offered_by_source,
            "accepted_by_source": self.accepted_by_source,
            "accepted_lengths": self.accepted_lengths,
        }


def _table_chain(
    table: AdjacencyTable, prev: int | None, anchor: int, length: int, use_bigram: bool
) -> tuple[int, ...]:
    """Greedy top-1 successor walk used by the source-swap control."""
    chain: list[int] = []
    a, b = prev, anchor
    while len(chain) < length:
        entries = table.successors(a, b, 1, use_bigram=use_bigram)
        if not entries:
            break
        token = entries[0][0]
        chain.append(token)
        a, b = b, token
    return tuple(chain)


class _Run:
    """Mutable state for one decode run."""

    def __init__(self, model: TargetModel, prompt: Sequence[int], max_tokens: int, config: EngineConfig):
        if not prompt:
            raise ValueError("prompt must be non-empty")
        self.model = model
        self.config = config
        self.max_tokens = max_tokens
        self.history: list[int] = list(prompt)
        self.out: list[int] = []
        self.table = AdjacencyTable(top_k=config.transition_top_k, min_score=config.min_score_threshold)
        self.index = ContextIndex(
            prompt, lengths=config.ngram_lengths, max_chain=config.max_spine_continuation
        )
        self.stats = DecodeStats(budget=config.node_budget)
        self.ema = EmaState(value=config.ema_init, alpha=config.ema_smoothing)

    @property
    def done(self) -> bool:
        return len(self.out) >= self.max_tokens or (
            bool(self.out) and self.out[-1] == self.model.eos_token
        )

    def emit(self, appended: Sequence[int], accepted_count: int) -> tuple[int, int, int]:
        """Append tokens subject to the length/EOS cut; returns emit counts."""
        allowed = self.max_tokens - len(self.out)
        emit = list(appended[:allowed])
        if self.model.eos_token in emit:
            emit = emit[: emit.index(self.model.eos_token) + 1]
        self.out.extend(emit)
        self.history.extend(emit)
        self.index.extend(emit)
        accepted_emitted = min(len(emit), accepted_count)
        bonus_emitted = len(emit) - accepted_emitted
        return len(emit), accepted_emitted, bonus_emitted


def _prefill(run: _Run) -> None:
    prompt = run.history
    response = run.model.score_tree(ModelQuery(base=tuple(prompt)))
    run.table.harvest(
        (tuple(prompt[max(0, i - 1): i + 1]), response.base[i].top_k)
        for i in range(len(prompt))
    )
    anchor = response.base[-1].token
    emitted, accepted_emitted, bonus_emitted = run.emit([anchor], accepted_count=0)
    run.stats.records.append(
        CycleRecord(
            kind="prefill",
            emitted=emitted,
            accepted_emitted=accepted_emitted,
            bonus_emitted=bonus_emitted,
            category=PathCategory.EMPTY,
        )
    )


def _harvest_chain(run: _Run, chain: Sequence[int], walk: WalkResult) -> None:
    anchor = run.history[-1]
    items = [(tuple(run.history[-2:]), walk.response.base[-1].top_k)]
    for j, token in enumerate(chain):
        prev = chain[j - 1] if j > 0 else anchor
        items.append(((prev, token), walk.response.nodes[j].top_k))
    run.table.harvest(items)


def _harvest_tree(run: _Run, tree: SpineTree, walk: WalkResult) -> None:
    items = [(tuple(run.history[-2:]), walk.response.base[-1].top_k)]
    for i in range(1, len(tree.nodes)):
        node = tree.nodes[i]
        parent_token = tree.nodes[node.parent].token
        items.append(((parent_token, node.token), walk.response.nodes[i - 1].top_k))
    run.table.harvest(items)


def _record_walk(
    run: _Run,
    kind: str,
    walk: WalkResult,
    offered: dict[Source, int],
    accepted: dict[Source, int],
    offered_spine: int,
    accepted_spine: int,
) -> None:
    emitted, accepted_emitted, bonus_emitted = run.emit(
        walk.tokens, accepted_count=len(walk.accepted_tokens)
    )
    run.stats.records.append(
        CycleRecord(
            kind=kind,
            emitted=emitted,
            accepted_emitted=accepted_emitted,
            bonus_emitted=bonus_emitted,
            category=walk.category,
            offered_context=offered.get(Source.CONTEXT, 0),
            offered_transition=offered.get(Source.TRANSITION, 0),
            accepted_context=accepted.get(Source.CONTEXT, 0),
            accepted_transition=accepted.get(Source.TRANSITION, 0),
            offered_spine=offered_spine,
            accepted_spine=accepted_spine,
        )
    )


def _fallback_cycle(run: _Run) -> None:
    response = run.model.score_tree(
        ModelQuery(base=tuple(run.history), scored_from=len(run.history) - 1)
    )
    run.table.harvest([(tuple(run.history[-2:]), response.base[-1].top_k)])
    bonus = response.base[-1].token
    emitted, accepted_emitted, bonus_emitted = run.emit([bonus], accepted_count=0)
    run.stats.records.append(
        CycleRecord(
            kind="fallback",
            emitted=emitted,
            accepted_emitted=accepted_emitted,
            bonus_emitted=bonus_emitted,
            category=PathCategory.EMPTY,
        )
    )


def _decode_loop(
    model: TargetModel,
    prompt: Sequence[int],
    max_tokens: int,
    config: EngineConfig,
    mode: str,
    iso_k: int = 3,
) -> tuple[TokenSequence, DecodeStats]:
    if max_tokens < 0:
        raise ValueError("max_tokens must be >= 0")
    run = _Run(model, prompt, max_tokens, config)
    if max_tokens == 0:
        return TokenSequence(tokens=(), role="generated"), run.stats
    _prefill(run)
    use_bigram = not config.disable_bigram
    use_context = not config.disable_spine

    while not run.done:
        anchor = run.history[-1]
        prev = run.history[-2]
        match = run.index.match() if use_context else None
        chain = match.chain if match else ()
        consensus = match.consensus if match else False

        # Bypass: a long or consensus-backed match is verified linearly.
        if (
            mode == "spine"
            and not config.disable_bypass
            and chain
            and (len(chain) >= config.bypass_threshold or consensus)
        ):
            verify_chain: tuple[int, ...] = chain
            source = Source.CONTEXT
            if config.control_swap_sources:
                verify_chain = _table_chain(run.table, prev, anchor, len(chain), use_bigram)
                source = Source.TRANSITION
            if verify_chain:
                walk = linear_verify(model, verify_chain, run.history, source=source)
                _harvest_chain(run, verify_chain, walk)
                accepted_n = len(walk.accepted_tokens)
                _record_walk(
                    run,
                    "bypass",
                    walk,
                    offered={source: len(verify_chain)},
                    accepted={source: accepted_n},
                    offered_spine=len(verify_chain),
                    accepted_spine=accepted_n,
                )
                run.ema = update_ema(run.ema, accepted_n / len(verify_chain))
                continue

        # Tree: any available draft source fills the node budget.
        has_transitions = run.table.has_successors(prev, anchor, use_bigram=use_bigram)
        if chain or has_transitions:
            if mode == "iso":
                tree = build_iso_tree(
                    anchor, iso_k, config.node_budget, chain, run.table,
                    prev_token=prev, use_bigram=use_bigram,
                )
            else:
                ratio = spine_ratio_tier(run.ema.value, config.spine_ratio_tiers)
                budget = TreeBudget(
                    budget=config.node_budget,
                    spine_ratio=ratio,
                    spine_branch_ratio=config.spine_branch_ratio,
                    max_depth=config.max_tree_depth,
                )
                spine_chain: tuple[int, ...] = chain
                spine_source = Source.CONTEXT
                if config.control_swap_sources and chain:
                    spine_chain = _table_chain(run.table, prev, anchor, len(chain), use_bigram)
                    spine_source = Source.TRANSITION
                tree = build_spine_tree(
                    anchor, spine_chain, run.table, budget,
                    prev_token=prev,
                    spine_source=spine_source,
                    spine_branches=not config.disable_spine_branches,
                    use_bigram=use_bigram,
                )
            if len(tree) > 1:
                walk = unified_greedy_walk(model, tree, run.history)
                _harvest_tree(run, tree, walk)
                offered: dict[Source, int] = {}
                for node in tree.nodes[1:]:
                    offered[node.source] = offered.get(node.source, 0) + 1
                accepted: dict[Source, int] = {}
                for i in walk.accepted:
                    src = tree.nodes[i].source
                    accepted[src] = accepted.get(src, 0) + 1
                spine_set = set(tree.spine[1:])
                offered_spine = len(spine_set)
                accepted_spine = sum(1 for i in walk.accepted if i in spine_set)
                _record_walk(
                    run, "tree", walk, offered, accepted, offered_spine, accepted_spine
                )
                if mode == "spine":
                    observation = accepted_spine / offered_spine if offered_spine else 0.0
                    run.ema = update_ema(run.ema, observation)
                continue

        _fallback_cycle(run)

    return TokenSequence(tokens=tuple(run.out), role="generated"), run.stats


def spine_decode(
    model: TargetModel,
    prompt: Sequence[int],
    max_tokens: int,
    config: EngineConfig | None = None,
) -> tuple[TokenSequence, DecodeStats]:
    """Full adaptive spine-tree decoding; output equals ``ar_decode`` exactly."""
    return _decode_loop(model, prompt, max_tokens, config or EngineConfig(), mode="spine")


def _context_only_loop(
    model: TargetModel, prompt: Sequence[int], max_tokens: int, config: EngineConfig
) -> tuple[TokenSequence, DecodeStats]:
    if max_tokens < 0:
        raise ValueError("max_tokens must be >= 0")
    run = _Run(model, prompt, max_tokens, config)
    if max_tokens == 0:
        return TokenSequence(tokens=(), role="generated"), run.stats
    _prefill(run)
    while not run.done:
        match = run.index.match()
        if match.chain:
            walk = linear_verify(model, match.chain, run.history, source=Source.CONTEXT)
            _harvest_chain(run, match.chain, walk)
            accepted_n = len(walk.accepted_tokens)
            _record_walk(
                run,
                "bypass",
                walk,
                offered={Source.CONTEXT: len(match.chain)},
                accepted={Source.CONTEXT: accepted_n},
                offered_spine=len(match.chain),
                accepted_spine=accepted_n,
            )
        else:
            _fallback_cycle(run)
    return TokenSequence(tokens=tuple(run.out), role="generated"), run.stats


def _ar_loop(model: TargetModel, prompt: Sequence[int], max_tokens: int) -> tuple[TokenSequence, DecodeStats]:
    sequence = ar_decode(model, prompt, max_tokens)
    stats = DecodeStats(budget=0)
    for i, _token in enumerate(sequence.tokens):
        stats.records.append(
            CycleRecord(
                kind="prefill" if i == 0 else "fallback",
                emitted=1,
                accepted_emitted=0,
                bonus_emitted=1,
                category=PathCategory.EMPTY,
            )
        )
    return sequence, stats


def baseline_decode(
    kind: str,
    model: TargetModel,
    prompt: Sequence[int],
    max_tokens: int,
    config: EngineConfig | None = None,
    iso_k: int = 3,
) -> tuple[TokenSequence, DecodeStats]:
    """Single-source and isotropic baselines sharing the lossless loop.

    ``context``: n-gram match + linear verification only. ``transition``:
    adjacency-only spine tree (no spine, no bypass). ``iso``: balanced
    ``iso_k``-ary tree from the same candidate pool.
    """
    config = config or EngineConfig()
    if kind == "context":
        return _context_only_loop(model, prompt, max_tokens, config)
    if kind == "transition":
        flagged = replace(config, disable_spine=True, disable_bypass=True)
        return _decode_loop(model, prompt, max_tokens, flagged, mode="spine")
    if kind == "iso":
        return _decode_loop(model, prompt, max_tokens, config, mode="iso", iso_k=iso_k)
    raise ValueError(f"unknown baseline kind: {kind!r}")


def decode(
    engine: str,
    model: TargetModel,
    prompt: Sequence[int],
    max_tokens: int,
    config: EngineConfig | None = None,
) -> tuple[TokenSequence, DecodeStats]:
    """Dispatch by engine name: spine, context, transition, iso3, iso5, ar."""
    if engine == "spine":
        return spine_decode(model, prompt, max_tokens, config)
    if engine in ("context", "transition"):
        return baseline_decode(engine, model, prompt, max_tokens, config)
    if engine.startswith("iso") and engine[3:].isdigit():
        return baseline_decode("iso", model, prompt, max_tokens, config, iso_k=int(engine[3:]))
    if engine == "ar":
        return _ar_loop(model, prompt, max_tokens)
    raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINE_KINDS}")
