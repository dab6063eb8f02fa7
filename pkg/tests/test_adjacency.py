from __future__ import annotations

import json
import random

import pytest

from spinedec.adjacency import AdjacencyTable, confidence_width


def test_single_harvest_lands_in_both_tiers_sorted():
    table = AdjacencyTable()
    table.harvest([((3, 4), [(9, 0.2), (1, 0.5), (7, 0.3)])])
    expected = [(1, 0.5), (7, 0.3), (9, 0.2)]
    assert table.bigram[(3, 4)] == expected
    assert table.unigram[4] == expected


def test_latest_score_wins_for_a_repeated_successor():
    table = AdjacencyTable()
    table.harvest([((3, 4), [(1, 0.5), (7, 0.3)])])
    table.harvest([((3, 4), [(1, 0.05)])])
    assert table.bigram[(3, 4)] == [(7, 0.3), (1, 0.05)]


def test_one_token_context_feeds_unigram_only():
    table = AdjacencyTable()
    table.harvest([((4,), [(1, 0.5)])])
    assert table.unigram[4] == [(1, 0.5)]
    assert not table.bigram


def test_empty_context_is_an_input_error():
    with pytest.raises(ValueError):
        AdjacencyTable().harvest([((), [(1, 0.5)])])


def test_successors_prefers_bigram_and_truncates():
    table = AdjacencyTable()
    table.harvest([((3, 4), [(i, 0.5 - 0.05 * i) for i in range(5)])])
    table.harvest([((4,), [(9, 0.9)])])
    assert table.successors(3, 4, 3) == [(0, 0.5), (1, 0.45), (2, 0.4)]
    # Unigram fallback when the bigram key is missing.
    assert table.successors(8, 4, 3)[0][0] == 9


def test_successors_width_zero_and_empty_table():
    table = AdjacencyTable()
    assert table.successors(1, 2, 4) == []
    table.harvest([((1, 2), [(5, 0.5)])])
    assert table.successors(1, 2, 0) == []


def test_successors_bigram_disabled_uses_unigram():
    table = AdjacencyTable()
    table.harvest([((1, 2), [(5, 0.5)])])
    table.unigram[2] = [(8, 0.4)]
    assert table.successors(1, 2, 2, use_bigram=False) == [(8, 0.4)]


def test_entries_below_threshold_are_dropped():
    table = AdjacencyTable()
    table.harvest([((3, 4), [(1, 0.5), (2, 0.009)])])
    assert table.bigram[(3, 4)] == [(1, 0.5)]


def test_truncation_to_top_k():
    table = AdjacencyTable(top_k=3)
    table.harvest([((3, 4), [(i, 0.1 * (9 - i)) for i in range(9)])])
    assert [t for t, _ in table.bigram[(3, 4)]] == [0, 1, 2]


def test_random_harvests_match_reference_dictionary():
    rng = random.Random(77)
    table = AdjacencyTable(top_k=4)
    reference: dict[object, dict[int, float]] = {}

    def reference_merge(key, candidates):
        kept = dict(reference.get(key, {}))
        kept.update(candidates)
        ordered = sorted(kept.items(), key=lambda e: (-e[1], e[0]))[:4]
        reference[key] = {t: s for t, s in ordered if s >= 0.01}

    for _ in range(1000):
        context = tuple(rng.randrange(6) for _ in range(rng.choice((1, 2)))) or (0,)
        candidates = [
            (rng.randrange(12), round(rng.random(), 3)) for _ in range(rng.randint(1, 5))
        ]
        dedup = {}
        for t, s in candidates:
            dedup[t] = s
        candidates = list(dedup.items())
        table.harvest([(context, candidates)])
        reference_merge(context[-1], candidates)
        if len(context) == 2:
            reference_merge((context[0], context[1]), candidates)

    for key, kept in reference.items():
        expected = sorted(kept.items(), key=lambda e: (-e[1], e[0]))
        store = table.bigram if isinstance(key, tuple) else table.unigram
        assert store.get(key, []) == expected, key
    # Invariants after heavy churn: sorted, deduplicated, bounded.
    for store in (table.unigram, table.bigram):
        for entries in store.values():
            assert len(entries) <= 4
            tokens = [t for t, _ in entries]
            assert len(tokens) == len(set(tokens))
            scores = [s for _, s in entries]
            assert scores == sorted(scores, reverse=True)
            assert all(s >= 0.01 for s in scores)


def test_confidence_width_ratio_one_returns_base_allocation():
    assert confidence_width(0.4, [0.4, 0.1], 5) == 5


def test_confidence_width_below_threshold_prunes():
    assert confidence_width(0.005, [0.5], 4) == 0


def test_confidence_width_scales_with_sibling_ratio():
    siblings = [0.5, 0.25]
    assert [confidence_width(s, siblings, 4) for s in siblings] == [4, 2]


def test_confidence_width_rounds_half_up():
    assert confidence_width(0.25, [0.4], 4) == 3  # 4 * 0.625 = 2.5


def test_confidence_width_rejects_negative_allocation():
    with pytest.raises(ValueError):
        confidence_width(0.5, [0.5], -1)


def test_dump_json_round_trips_through_json():
    table = AdjacencyTable()
    table.harvest([((3, 4), [(1, 0.5)]), ((4,), [(2, 0.25)])])
    payload = json.loads(table.dump_json())
    assert payload["3,4"] == [[1, 0.5]]
    assert payload["4"] == [[1, 0.5], [2, 0.25]]
