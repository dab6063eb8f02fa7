"""Analytic and Monte-Carlo yield analysis for two-source draft trees.

Under the independence model — spine tokens accepted with probability ``p_s``,
branch tokens with ``p_t < p_s`` — the expected tokens per verification call
of a spine tree with branch widths ``w_0..w_{m-1}`` and branch depth ``D`` is
bounded below by

    sum_{i=1..m} p_s^i                                   (spine term)
  + sum_{i=0..m-1} p_s^i (1-p_s) phi(w_i) (1 + ell_bar)  (synergy term)
  + 1                                                    (bonus token)

with ``phi(w) = 1 - (1-p_t)^w`` and ``ell_bar = sum_{k=1..D-1} p_t^k``. The
bound is tight when branches extend as independent chains. This module
evaluates the bound, simulates the acceptance process directly to validate it,
computes balanced k-ary ("isotropic") reference yields, scans for spine-over-
isotropic dominance, and extracts empirical acceptance rates from decode logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .engine import DecodeStats, EngineConfig
from .tree import linear_allocation

__all__ = [
    "AcceptanceModel",
    "TreeShape",
    "YieldReport",
    "TaggedTree",
    "phi",
    "ell_bar",
    "synergy",
    "spine_yield",
    "spine_shape_tree",
    "monte_carlo_yield",
    "iso_yield",
    "best_iso_yield",
    "best_spine_yield",
    "dominance_scan",
    "DominanceRow",
    "BoundSetting",
    "BoundRow",
    "BoundReport",
    "verify_bound",
    "setting_from_stats",
    "measure_heterogeneity",
    "Heterogeneity",
    "MC_CHUNK",
]

MC_CHUNK = 1 << 16


@dataclass(frozen=True)
class AcceptanceModel:
    """Per-source acceptance probabilities under the independence assumption."""

    p_s: float
    p_t: float
    independent: bool = True

    def __post_init__(self):
        for name, p in (("p_s", self.p_s), ("p_t", self.p_t)):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class TreeShape:
    """Spine length, per-node branch widths, branch depth, and node budget."""

    m: int
    widths: tuple[int, ...]
    depth: int = 6
    budget: int = 60

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("spine length must be >= 0")
        if len(self.widths) != self.m:
            raise ValueError(f"need one width per spine node: m={self.m}, got {len(self.widths)}")
        if any(w < 0 for w in self.widths):
            raise ValueError("branch widths must be >= 0")
        if self.depth < 1:
            raise ValueError("branch depth must be >= 1")
        if self.m + sum(self.widths) > self.budget:
            raise ValueError(
                f"shape exceeds budget: {self.m} + {sum(self.widths)} > {self.budget}"
            )


@dataclass(frozen=True)
class YieldReport:
    """Analytic bound with its components, plus optional measured references."""

    tau_eq: float
    spine_term: float
    synergy_term: float
    bonus: float = 1.0
    tau_meas: float | None = None
    stderr: float | None = None
    tau_iso: float | None = None


def phi(width: int, p_t: float) -> float:
    """Probability that at least one of ``width`` branch tokens is accepted."""
    if width < 0:
        raise ValueError("width must be >= 0")
    return 1.0 - (1.0 - p_t) ** width


def ell_bar(p_t: float, depth: int) -> float:
    """Expected chain extension behind an accepted branch token.

    ``sum_{k=1..depth-1} p_t^k``; ranges from 0 (p_t -> 0) to depth-1 (p_t -> 1).
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    return sum(p_t**k for k in range(1, depth))


def synergy(p_s: float, p_t: float, widths: Sequence[int], depth: int) -> float:
    """The continuation-synergy term of the yield bound."""
    extension = 1.0 + ell_bar(p_t, depth)
    return sum(
        p_s**i * (1.0 - p_s) * phi(w, p_t) * extension for i, w in enumerate(widths)
    )


def spine_yield(model: AcceptanceModel, shape: TreeShape) -> YieldReport:
    """Analytic lower bound on expected tokens per call for a spine tree."""
    spine_term = sum(model.p_s**i for i in range(1, shape.m + 1))
    synergy_term = synergy(model.p_s, model.p_t, shape.widths, shape.depth)
    return YieldReport(
        tau_eq=spine_term + synergy_term + 1.0,
        spine_term=spine_term,
        synergy_term=synergy_term,
    )


@dataclass(frozen=True)
class TaggedTree:
    """Explicit draft tree for simulation: parent index and source per node.

    ``parents[i] == -1`` hangs node i off the (virtual) anchor root; ``spine``
    marks which nodes accept at ``p_s`` versus ``p_t``.
    """

    parents: tuple[int, ...]
    spine: tuple[bool, ...]

    def __post_init__(self):
        if len(self.parents) != len(self.spine):
            raise ValueError("parents and spine tags must align")
        for i, p in enumerate(self.parents):
            if not (-1 <= p < i):
                raise ValueError(f"node {i} has invalid parent {p}")

    def children(self) -> list[list[int]]:
        """Child lists ordered spine-first then by index (walk priority)."""
        kids: dict[int, list[int]] = {}
        for i in range(len(self.parents)):
            kids.setdefault(self.parents[i], []).append(i)
        out = []
        for v in range(-1, len(self.parents)):
            ordered = sorted(kids.get(v, []), key=lambda c: (not self.spine[c], c))
            out.append(ordered)
        return out  # out[v + 1] are the children of node v


def spine_shape_tree(shape: TreeShape) -> TaggedTree:
    """Canonical tree for a shape: spine chain + independent branch chains.

    Branches at spine node i (i=0 is the anchor) are ``widths[i]`` transition
    tokens, each extended as a chain to depth ``shape.depth`` below its
    branching point. This is the structure on which the bound is tight.
    """
    parents: list[int] = []
    spine: list[bool] = []
    spine_index: list[int] = []  # node index of spine token i+1
    for i in range(shape.m):
        parents.append(-1 if i == 0 else spine_index[i - 1])
        spine.append(True)
        spine_index.append(len(parents) - 1)
    for i, width in enumerate(shape.widths):
        attach = -1 if i == 0 else spine_index[i - 1]
        for _ in range(width):
            parents.append(attach)
            spine.append(False)
            leaf = len(parents) - 1
            for _ in range(shape.depth - 1):
                parents.append(leaf)
                spine.append(False)
                leaf = len(parents) - 1
    return TaggedTree(parents=tuple(parents), spine=tuple(spine))


def monte_carlo_yield(
    model: AcceptanceModel,
    tree: TaggedTree,
    trials: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Simulate the acceptance walk; returns (mean tau, standard error).

    Per trial every node is independently accepted (``p_s`` for spine tags,
    ``p_t`` otherwise) and a greedy walk advances from the root into the first
    accepted child, spine children first; tau is the walk length plus one
    bonus token. Acceptance bits are sampled lazily: only children actually
    inspected by the walk draw randomness, which leaves the distribution
    unchanged. Fixed seed and chunking make results bit-reproducible.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    children = tree.children()
    prob = np.array([model.p_s if s else model.p_t for s in tree.spine], dtype=np.float64)
    total = 0.0
    total_sq = 0.0
    remaining = trials
    while remaining > 0:
        n = min(remaining, MC_CHUNK)
        remaining -= n
        depth = np.zeros(n, dtype=np.int64)
        current = np.full(n, -1, dtype=np.int64)
        active = np.arange(n)
        while active.size:
            next_active: list[np.ndarray] = []
            for v in np.unique(current[active]):
                group = active[current[active] == v]
                kids = children[v + 1]
                if not kids:
                    continue
                bits = rng.random((group.size, len(kids))) < prob[kids]
                hit = bits.any(axis=1)
                chosen = np.asarray(kids)[bits.argmax(axis=1)]
                advanced = group[hit]
                current[advanced] = chosen[hit]
                depth[advanced] += 1
                next_active.append(advanced)
            active = np.concatenate(next_active) if next_active else np.empty(0, dtype=np.int64)
        tau = depth + 1
        total += float(tau.sum())
        total_sq += float((tau * tau).sum())
    mean = total / trials
    if trials == 1:
        return mean, 0.0
    var = max((total_sq - trials * mean * mean) / (trials - 1), 0.0)
    return mean, math.sqrt(var / trials)


def iso_yield(fanout: int, budget: int, p_t: float) -> float:
    """Expected tokens per call for a balanced k-ary single-rate tree.

    Complete levels only: depth is the largest D with sum(k^d, d<=D) <= budget;
    each level advances with probability ``1 - (1-p_t)^k``.
    """
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    levels = 0
    total = 0
    while total + fanout ** (levels + 1) <= budget:
        levels += 1
        total += fanout**levels
    q = 1.0 - (1.0 - p_t) ** fanout
    return sum(q**d for d in range(1, levels + 1)) + 1.0


def best_iso_yield(budget: int, p_t: float) -> tuple[float, int]:
    """Best balanced k-ary yield over integer fan-outs 1..budget."""
    best = (-math.inf, 0)
    for k in range(1, budget + 1):
        tau = iso_yield(k, budget, p_t)
        if tau > best[0]:
            best = (tau, k)
    return best


def best_spine_yield(
    p_s: float, p_t: float, budget: int, depth: int = 6
) -> tuple[float, int, tuple[int, ...]]:
    """Best spine-tree analytic yield over spine lengths 1..budget.

    Branch widths follow the depth-linear optimum for each candidate length.
    """
    best: tuple[float, int, tuple[int, ...]] = (-math.inf, 0, ())
    for m in range(1, budget + 1):
        widths = tuple(linear_allocation(p_s, p_t, m, budget - m))
        report = spine_yield(
            AcceptanceModel(p_s=p_s, p_t=p_t),
            TreeShape(m=m, widths=widths, depth=depth, budget=budget),
        )
        if report.tau_eq > best[0]:
            best = (report.tau_eq, m, widths)
    return best


@dataclass(frozen=True)
class DominanceRow:
    p_s: float
    p_t: float
    budget: int
    tau_spine: float
    best_m: int
    tau_iso: float
    best_k: int

    @property
    def gap(self) -> float:
        return self.tau_spine - self.tau_iso

    @property
    def violation(self) -> bool:
        return self.p_s > self.p_t and self.gap <= 0.0


def dominance_scan(
    points: Iterable[tuple[float, float, int]], depth: int = 6
) -> list[DominanceRow]:
    """Best-spine vs best-isotropic yield over a (p_s, p_t, budget) grid."""
    rows = []
    for p_s, p_t, budget in points:
        if p_s < p_t:
            raise ValueError(f"grid point has p_s {p_s} < p_t {p_t}")
        tau_spine, best_m, _w = best_spine_yield(p_s, p_t, budget, depth)
        tau_iso, best_k = best_iso_yield(budget, p_t)
        rows.append(
            DominanceRow(
                p_s=p_s, p_t=p_t, budget=budget,
                tau_spine=tau_spine, best_m=best_m, tau_iso=tau_iso, best_k=best_k,
            )
        )
    return rows


@dataclass(frozen=True)
class BoundSetting:
    """One bound-verification setting: rates, shape, and a measured yield.

    ``tau_meas``/``stderr`` come from engine logs; leave them None to have
    ``verify_bound`` fill them by simulating the canonical tree.
    """

    setting_id: str
    p_s: float
    p_t: float
    m: int
    budget: int
    depth: int = 6
    tau_meas: float | None = None
    stderr: float | None = None


@dataclass(frozen=True)
class BoundRow:
    setting: BoundSetting
    tau_eq: float
    tau_meas: float
    stderr: float
    tau_iso: float

    @property
    def ratio(self) -> float:
        return self.tau_eq / self.tau_iso

    @property
    def violation(self) -> bool:
        return self.tau_eq > self.tau_meas + 3.0 * self.stderr


@dataclass(frozen=True)
class BoundReport:
    rows: tuple[BoundRow, ...]
    violations: int
    pearson_r: float | None


def _bound_widths(setting: BoundSetting) -> tuple[int, ...]:
    if setting.m == 0:
        return ()
    branch_budget = max(setting.budget - setting.m, 0)
    degenerate = (
        setting.p_t <= 0.0
        or setting.p_s >= 1.0
        or setting.p_t >= 1.0
        or setting.p_s < setting.p_t  # measured logs can leave the p_s > p_t regime
    )
    if degenerate:
        # Spread evenly; the bound holds for any widths, only optimality needs
        # the heterogeneous regime.
        base = branch_budget // setting.m
        extra = branch_budget - base * setting.m
        return tuple(base + (1 if i < extra else 0) for i in range(setting.m))
    return tuple(linear_allocation(setting.p_s, setting.p_t, setting.m, branch_budget))


def verify_bound(
    settings: Sequence[BoundSetting],
    iso_fanout: int = 3,
    trials: int = 100_000,
    seed: int = 0,
) -> BoundReport:
    """Check the yield lower bound per setting and compare to the iso yield.

    Settings without a measured yield are simulated on the canonical spine
    tree with the optimal linear allocation. Reports the heterogeneity
    correlation of the analytic gain (tau_eq / tau_iso) against p_s / p_t over
    settings where both are finite.
    """
    rows: list[BoundRow] = []
    for i, setting in enumerate(settings):
        widths = _bound_widths(setting)
        report = spine_yield(
            AcceptanceModel(p_s=setting.p_s, p_t=setting.p_t),
            TreeShape(m=setting.m, widths=widths, depth=setting.depth,
                      budget=max(setting.budget, setting.m + sum(widths))),
        )
        tau_meas, stderr = setting.tau_meas, setting.stderr
        if tau_meas is None:
            shape = TreeShape(
                m=setting.m, widths=widths, depth=setting.depth,
                budget=max(setting.budget, setting.m + sum(widths)),
            )
            tau_meas, stderr = monte_carlo_yield(
                AcceptanceModel(p_s=setting.p_s, p_t=setting.p_t),
                spine_shape_tree(shape),
                trials=trials,
                seed=seed + i,
            )
        rows.append(
            BoundRow(
                setting=setting,
                tau_eq=report.tau_eq,
                tau_meas=tau_meas,
                stderr=stderr if stderr is not None else 0.0,
                tau_iso=iso_yield(iso_fanout, setting.budget, setting.p_t),
            )
        )
    gains, ratios = [], []
    for row in rows:
        if row.setting.p_t > 0.0 and math.isfinite(row.ratio):
            gains.append(row.ratio)
            ratios.append(row.setting.p_s / row.setting.p_t)
    pearson = None
    if len(gains) >= 3 and np.std(gains) > 0 and np.std(ratios) > 0:
        pearson = float(np.corrcoef(ratios, gains)[0, 1])
    return BoundReport(
        rows=tuple(rows),
        violations=sum(r.violation for r in rows),
        pearson_r=pearson,
    )


@dataclass(frozen=True)
class Heterogeneity:
    """Empirical per-source acceptance rates from a decode run.

    A source with zero offered tokens has an undefined rate (None); the ratio
    is ``inf`` when branches were offered but never accepted.
    """

    p_s: float | None
    p_t: float | None
    ratio: float | None


def measure_heterogeneity(stats: DecodeStats) -> Heterogeneity:
    """Fraction of drafted tokens accepted, per source, plus their ratio."""
    if not stats.records:
        raise ValueError("decode stats contain no cycles")
    offered = stats.offered_by_source
    accepted = stats.accepted_by_source
    p_s = accepted["context"] / offered["context"] if offered["context"] else None
    p_t = accepted["transition"] / offered["transition"] if offered["transition"] else None
    ratio: float | None = None
    if p_s is not None and p_t is not None:
        ratio = math.inf if p_t == 0.0 else p_s / p_t
    return Heterogeneity(p_s=p_s, p_t=p_t, ratio=ratio)


def setting_from_stats(
    setting_id: str, stats: DecodeStats, config: EngineConfig
) -> BoundSetting:
    """Build a bound-verification setting from one engine run's logs.

    Undefined rates enter as 0.0 (a source never offered contributes nothing
    to the analytic yield, keeping the bound conservative); the measured side
    is the run's tau with the per-cycle sample stderr of emitted tokens.
    """
    het = measure_heterogeneity(stats)
    per_cycle = [float(r.emitted) for r in stats.records]
    stderr = 0.0
    if len(per_cycle) > 1:
        stderr = float(np.std(per_cycle, ddof=1) / math.sqrt(len(per_cycle)))
    return BoundSetting(
        setting_id=setting_id,
        p_s=het.p_s if het.p_s is not None else 0.0,
        p_t=het.p_t if het.p_t is not None else 0.0,
        m=round(stats.mean_spine_len()),
        budget=config.node_budget,
        depth=config.max_tree_depth,
        tau_meas=stats.tau,
        stderr=stderr,
    )
