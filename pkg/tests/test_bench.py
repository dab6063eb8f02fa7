from __future__ import annotations

import json

import pytest

import spinedec.bench as bench
from spinedec.bench import (
    CorpusSpec,
    LosslessnessError,
    ablation_table,
    prompts_for,
    run_corpus,
    run_prompt,
    synergy_ratio,
)
from spinedec.engine import EngineConfig
from spinedec.models import SyntheticModelSpec, TokenSequence

TINY = CorpusSpec(
    name="tiny",
    model=SyntheticModelSpec("template-repeater", 11, 48, 0.9),
    prompts=3,
    prompt_len=8,
    max_tokens=60,
)


def test_corpus_spec_round_trip():
    assert CorpusSpec.from_json(TINY.to_json()) == TINY


def test_corpus_counts_validated():
    with pytest.raises(ValueError):
        CorpusSpec("x", TINY.model, prompts=0, prompt_len=4, max_tokens=10)


def test_prompts_are_deterministic_and_avoid_eos():
    first = prompts_for(TINY)
    second = prompts_for(TINY)
    assert first == second
    assert len(first) == 3
    assert all(len(p) == 8 for p in first)
    eos = TINY.model.vocab - 1
    assert all(eos not in p for p in first)
    # Different corpus names reseed the prompts.
    renamed = CorpusSpec("other", TINY.model, 3, 8, 60)
    assert prompts_for(renamed) != first


def test_run_corpus_ar_tau_is_exactly_one():
    report = run_corpus(TINY, "ar")
    assert report.mean_tau == 1.0
    assert report.median_tau == 1.0
    assert report.iqr_tau == 0.0


def test_reports_are_byte_identical_across_runs_and_jobs():
    one = run_corpus(TINY, "spine", EngineConfig(), jobs=1).to_json()
    two = run_corpus(TINY, "spine", EngineConfig(), jobs=1).to_json()
    threaded = run_corpus(TINY, "spine", EngineConfig(), jobs=2).to_json()
    assert one == two == threaded


def test_report_carries_header_and_rows():
    report = run_corpus(TINY, "spine")
    payload = report.to_dict()
    assert payload["header"]["engine"] == "spine"
    assert payload["header"]["quartile_method"] == bench.QUARTILE_METHOD
    assert len(payload["per_prompt"]) == 3
    row = payload["per_prompt"][0]
    assert row["tau"] >= 1.0
    assert row["tokens"] == 60
    assert report.pooled_tau >= 1.0
    assert report.cv_tau >= 0.0


def test_losslessness_failure_reports_first_divergence(monkeypatch):
    from spinedec.engine import decode as real_decode

    def broken_decode(engine, model, prompt, max_tokens, config):
        sequence, stats = real_decode("ar", model, prompt, max_tokens)
        tampered = list(sequence.tokens)
        tampered[5] = (tampered[5] + 1) % 7
        return TokenSequence(tokens=tuple(tampered), role="generated"), stats

    monkeypatch.setattr(bench, "decode", broken_decode)
    with pytest.raises(LosslessnessError) as err:
        run_prompt(TINY, 0, "spine", EngineConfig())
    assert err.value.position == 5
    assert err.value.prompt_id == 0


def test_ablation_table_layout():
    rows = ablation_table(TINY)
    labels = [r["label"] for r in rows]
    assert labels == [
        "full",
        "disable_spine_branches",
        "disable_bigram",
        "disable_bypass",
        "disable_spine",
        "control_swap_sources",
    ]
    assert rows[0]["delta_rel"] == 0.0
    for row in rows[1:]:
        expected = (row["mean_tau"] - rows[0]["mean_tau"]) / rows[0]["mean_tau"]
        assert row["delta_rel"] == pytest.approx(expected)


def test_control_row_is_small_on_shape_dominated_corpora():
    # When the transition table's top-1 chain tracks the model as well as
    # context matches do (order-2 model, exact bigram signal), swapping spine
    # sources while keeping the shape barely moves tau, unlike the structural
    # ablations on the same corpus.
    spec = CorpusSpec(
        name="shape-dominated",
        model=SyntheticModelSpec("markov-order-2", 11, 64),
        prompts=6,
        prompt_len=12,
        max_tokens=256,
    )
    rows = {r["label"]: r["delta_rel"] for r in ablation_table(spec)}
    structural = max(abs(rows["disable_bigram"]), abs(rows["disable_spine"]))
    assert structural > 0.05
    assert abs(rows["control_swap_sources"]) < 0.2 * structural


def test_synergy_ratio_uses_the_best_standalone_source():
    spine = run_corpus(TINY, "spine")
    context = run_corpus(TINY, "context")
    transition = run_corpus(TINY, "transition")
    ratio = synergy_ratio(spine, context, transition)
    assert ratio == pytest.approx(
        spine.mean_tau / max(context.mean_tau, transition.mean_tau)
    )


def test_report_json_is_valid_and_sorted():
    text = run_corpus(TINY, "iso3").to_json()
    payload = json.loads(text)
    assert list(payload) == sorted(payload)
