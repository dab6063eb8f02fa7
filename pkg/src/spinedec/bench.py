"""Corpus generation, engine orchestration, and reproducible reports.

A corpus is a seeded model spec plus prompt/generation sizes; everything a run
emits is a pure function of (corpus, config, engine), so reports are
byte-identical across repeat runs and across worker counts. Every engine run
is checked against the autoregressive oracle before it is reported; a
divergence is a hard failure carrying the first differing position.
"""

from __future__ import annotations

import json
import random
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from .engine import DecodeStats, EngineConfig, decode
from .models import SyntheticModelSpec, ar_decode, build_synthetic

__all__ = [
    "CorpusSpec",
    "LosslessnessError",
    "PromptResult",
    "RunReport",
    "prompts_for",
    "run_prompt",
    "run_corpus",
    "ablation_table",
    "ABLATION_FLAGS",
    "QUARTILE_METHOD",
]

QUARTILE_METHOD = "inclusive (statistics.quantiles, n=4)"

ABLATION_FLAGS = (
    "disable_spine_branches",
    "disable_bigram",
    "disable_bypass",
    "disable_spine",
    "control_swap_sources",
)


class LosslessnessError(AssertionError):
    """An engine diverged from the autoregressive oracle."""

    def __init__(self, prompt_id: int, position: int, got: int | None, want: int | None):
        self.prompt_id = prompt_id
        self.position = position
        super().__init__(
            f"prompt {prompt_id}: first divergence at position {position} "
            f"(engine={got!r}, reference={want!r})"
        )


@dataclass(frozen=True)
class CorpusSpec:
    """A fully seed-determined benchmark corpus."""

    name: str
    model: SyntheticModelSpec
    prompts: int
    prompt_len: int
    max_tokens: int

    def __post_init__(self):
        if self.prompts < 1 or self.prompt_len < 1 or self.max_tokens < 0:
            raise ValueError("corpus counts must be positive")

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "model": json.loads(self.model.to_json()),
                "prompts": self.prompts,
                "prompt_len": self.prompt_len,
                "max_tokens": self.max_tokens,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CorpusSpec":
        raw = json.loads(text)
        return cls(
            name=raw["name"],
            model=SyntheticModelSpec.from_json(json.dumps(raw["model"])),
            prompts=int(raw["prompts"]),
            prompt_len=int(raw["prompt_len"]),
            max_tokens=int(raw["max_tokens"]),
        )


def prompts_for(spec: CorpusSpec) -> list[tuple[int, ...]]:
    """Deterministic prompts; EOS is reserved and never appears in them."""
    prompts = []
    for i in range(spec.prompts):
        rng = random.Random(f"{spec.model.seed}:{spec.name}:prompt:{i}")
        prompts.append(
            tuple(rng.randrange(spec.model.vocab - 1) for _ in range(spec.prompt_len))
        )
    return prompts


@dataclass(frozen=True)
class PromptResult:
    prompt_id: int
    tokens: tuple[int, ...]
    stats: DecodeStats

    def row(self) -> dict:
        counts = self.stats.cycle_counts
        categories = self.stats.category_counts
        src_off = self.stats.offered_by_source
        src_acc = self.stats.accepted_by_source
        return {
            "prompt_id": self.prompt_id,
            "tokens": self.stats.total_tokens,
            "model_calls": self.stats.model_calls,
            "tau": self.stats.tau,
            "offered_context": src_off["context"],
            "offered_transition": src_off["transition"],
            "accepted_context": src_acc["context"],
            "accepted_transition": src_acc["transition"],
            "bypass_cycles": counts.get("bypass", 0),
            "tree_cycles": counts.get("tree", 0),
            "fallback_cycles": counts.get("fallback", 0),
            "pure_context_paths": categories.get("pure_context", 0),
            "spine_continuation_paths": categories.get("spine_continuation", 0),
            "pure_transition_paths": categories.get("pure_transition", 0),
            "empty_paths": categories.get("empty", 0),
        }


def run_prompt(
    spec: CorpusSpec, prompt_id: int, engine: str, config: EngineConfig
) -> PromptResult:
    """Run one prompt through an engine and assert losslessness.

    Builds a private model instance so prompt jobs are schedule-independent.
    """
    prompt = prompts_for(spec)[prompt_id]
    model = build_synthetic(spec.model)
    reference = ar_decode(model, prompt, spec.max_tokens).tokens
    sequence, stats = decode(engine, model, prompt, spec.max_tokens, config)
    if sequence.tokens != reference:
        for pos in range(max(len(sequence.tokens), len(reference))):
            got = sequence.tokens[pos] if pos < len(sequence.tokens) else None
            want = reference[pos] if pos < len(reference) else None
            if got != want:
                raise LosslessnessError(prompt_id, pos, got, want)
    return PromptResult(prompt_id=prompt_id, tokens=sequence.tokens, stats=stats)


@dataclass(frozen=True)
class RunReport:
    """Aggregated corpus run, reproducible bit-for-bit from its inputs."""

    corpus: CorpusSpec
    engine: str
    config: EngineConfig
    results: tuple[PromptResult, ...]

    @property
    def taus(self) -> list[float]:
        return [r.stats.tau for r in self.results]

    @property
    def mean_tau(self) -> float:
        return statistics.fmean(self.taus)

    @property
    def median_tau(self) -> float:
        return statistics.median(self.taus)

    @property
    def iqr_tau(self) -> float:
        if len(self.taus) < 2:
            return 0.0
        q1, _q2, q3 = statistics.quantiles(self.taus, n=4, method="inclusive")
        return q3 - q1

    @property
    def pooled_tau(self) -> float:
        calls = sum(r.stats.model_calls for r in self.results)
        if calls == 0:
            return 1.0
        return sum(r.stats.total_tokens for r in self.results) / calls

    @property
    def cv_tau(self) -> float:
        """Coefficient of variation of per-prompt tau (0 for a single prompt)."""
        if len(self.taus) < 2 or self.mean_tau == 0.0:
            return 0.0
        return statistics.stdev(self.taus) / self.mean_tau

    def to_dict(self) -> dict:
        return {
            "header": {
                "corpus": json.loads(self.corpus.to_json()),
                "engine": self.engine,
                "config": json.loads(self.config.to_json()),
                "quartile_method": QUARTILE_METHOD,
            },
            "aggregate": {
                "mean_tau": self.mean_tau,
                "median_tau": self.median_tau,
                "iqr_tau": self.iqr_tau,
                "pooled_tau": self.pooled_tau,
                "cv_tau": self.cv_tau,
                "speedup_proxy_vs_ar": self.mean_tau,  # tau_AR == 1.0 exactly
            },
            "per_prompt": [r.row() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def run_corpus(
    spec: CorpusSpec,
    engine: str,
    config: EngineConfig | None = None,
    jobs: int = 1,
) -> RunReport:
    """Run every prompt of a corpus; results are ordered by prompt id."""
    config = config or EngineConfig()
    ids = list(range(spec.prompts))
    if jobs <= 1:
        results = [run_prompt(spec, i, engine, config) for i in ids]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda i: run_prompt(spec, i, engine, config), ids))
    results.sort(key=lambda r: r.prompt_id)
    return RunReport(corpus=spec, engine=engine, config=config, results=tuple(results))


def synergy_ratio(spine: RunReport, context: RunReport, transition: RunReport) -> float:
    """Mean-tau ratio of the combined engine over its best standalone source."""
    return spine.mean_tau / max(context.mean_tau, transition.mean_tau)


def ablation_table(
    spec: CorpusSpec,
    config: EngineConfig | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Full engine plus one row per single-flag ablation, with relative deltas."""
    from dataclasses import replace

    config = config or EngineConfig()
    full = run_corpus(spec, "spine", config, jobs=jobs)
    rows = [
        {
            "label": "full",
            "mean_tau": full.mean_tau,
            "median_tau": full.median_tau,
            "delta_rel": 0.0,
        }
    ]
    for flag in ABLATION_FLAGS:
        report = run_corpus(spec, "spine", replace(config, **{flag: True}), jobs=jobs)
        rows.append(
            {
                "label": flag,
                "mean_tau": report.mean_tau,
                "median_tau": report.median_tau,
                "delta_rel": (report.mean_tau - full.mean_tau) / full.mean_tau,
            }
        )
    return rows
