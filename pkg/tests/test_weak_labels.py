from collections import Counter

import numpy as np
import pytest

from config import RULE_MAP_PATH, TAXONOMY_PATH
from pipeline.data_loader import GOLDEN, NOISY, TransactionRecord
from weak_labels.annotator import annotate, annotate_dataset, jaccard, mean_jaccard, row_jaccard
from weak_labels.rule_map import (
    ConceptTaxonomy,
    DuplicateRuleError,
    EmptyConceptListError,
    RuleMapError,
    UnknownConceptError,
    UnknownRuleError,
    build_rule_map,
    load_rule_map,
    load_taxonomy,
    parse_rule_map,
    write_rule_map,
)

TAXONOMY = ConceptTaxonomy(("Suspicious Items", "Suspicious Customer", "Suspicious Payment", "Suspicious Device"))

TWO_RULES = """
# rule_id | description | concepts
risky_product_styles | Order contains risky product styles | Suspicious Items
n_cards_last_week | Customer used n different cards in the last week | Suspicious Customer; Suspicious Payment
"""


@pytest.fixture
def rule_map():
    return parse_rule_map(TWO_RULES, TAXONOMY)


def _record(rid, rules, golden=None, y_d=0):
    return TransactionRecord(
        id=rid, split="train", features=np.zeros(2), y_d=y_d,
        triggered_rules=frozenset(rules), golden_concepts=golden,
    )


def test_shipped_knowledge_base_loads():
    taxonomy = load_taxonomy(TAXONOMY_PATH)
    rule_map = load_rule_map(RULE_MAP_PATH, taxonomy)
    assert taxonomy.k == 14
    assert len(rule_map) == 11
    assert rule_map.concepts_for("n_cards_last_week") == {"Suspicious Customer", "Suspicious Payment"}


def test_annotate_single_and_multi_concept_rules(rule_map):
    assert list(annotate({"risky_product_styles"}, rule_map, TAXONOMY)) == [1, 0, 0, 0]
    assert list(annotate({"n_cards_last_week"}, rule_map, TAXONOMY)) == [0, 1, 1, 0]
    both = annotate({"risky_product_styles", "n_cards_last_week"}, rule_map, TAXONOMY)
    assert list(both) == [1, 1, 1, 0]


def test_annotate_nothing_triggered_is_all_zero(rule_map):
    vec = annotate(set(), rule_map, TAXONOMY)
    assert vec.dtype == np.int8
    assert not vec.any()


def test_unknown_rules_are_skipped_and_counted(rule_map):
    seen = Counter()
    vec = annotate({"retired_rule", "risky_product_styles"}, rule_map, TAXONOMY, unknown=seen)
    assert list(vec) == [1, 0, 0, 0]
    assert seen == Counter({"retired_rule": 1})
    with pytest.raises(UnknownRuleError):
        annotate({"retired_rule"}, rule_map, TAXONOMY, strict=True)


def test_annotate_is_monotone_and_order_free(rng, rule_map):
    rules = ["risky_product_styles", "n_cards_last_week", "retired_rule"]
    for _ in range(200):
        small = {r for r in rules if rng.random() < 0.5}
        large = small | {r for r in rules if rng.random() < 0.5}
        a = annotate(small, rule_map, TAXONOMY)
        b = annotate(large, rule_map, TAXONOMY)
        assert np.all(a <= b)
        assert np.array_equal(annotate(sorted(large), rule_map, TAXONOMY), annotate(sorted(large, reverse=True), rule_map, TAXONOMY))


def test_annotate_union_over_random_rule_sets(rng):
    taxonomy = load_taxonomy(TAXONOMY_PATH)
    rule_map = load_rule_map(RULE_MAP_PATH, taxonomy)
    rules = rule_map.rule_ids + ["retired_rule"]
    for _ in range(10_000):
        small = {r for r in rules if rng.random() < 0.3}
        large = small | {r for r in rules if rng.random() < 0.3}
        a = annotate(small, rule_map, taxonomy)
        b = annotate(large, rule_map, taxonomy)
        assert np.all(a <= b)
        assert np.array_equal(annotate(list(large) + list(small), rule_map, taxonomy), b)
        expected = {c for r in large if r in rule_map for c in rule_map.concepts_for(r)}
        assert {taxonomy.names[i] for i in np.flatnonzero(b)} == expected


def test_parse_rule_map_errors():
    with pytest.raises(UnknownConceptError) as err:
        parse_rule_map("r1 | desc | Suspicious Moon", TAXONOMY)
    assert err.value.rule_id == "r1"
    assert err.value.concept == "Suspicious Moon"
    with pytest.raises(DuplicateRuleError):
        parse_rule_map("r1 | a | Suspicious Items\nr1 | b | Suspicious Device", TAXONOMY)
    with pytest.raises(EmptyConceptListError):
        parse_rule_map("r1 | a |  ", TAXONOMY)
    with pytest.raises(RuleMapError):
        parse_rule_map("r1 | only two fields", TAXONOMY)


def test_empty_rule_map_annotates_zeros():
    empty = parse_rule_map("# nothing here\n\n", TAXONOMY)
    assert len(empty) == 0
    assert not annotate({"anything"}, empty, TAXONOMY).any()


def test_rule_map_file_round_trip(tmp_path, rule_map):
    path = write_rule_map(rule_map, TAXONOMY, tmp_path / "rules.txt")
    again = load_rule_map(path, TAXONOMY)
    assert again == rule_map
    assert path.read_text() == write_rule_map(again, TAXONOMY, tmp_path / "rules2.txt").read_text()


def test_build_rule_map_validates(rule_map):
    built = build_rule_map([
        ("risky_product_styles", "Order contains risky product styles", ["Suspicious Items"]),
        ("n_cards_last_week", "Customer used n different cards in the last week", ["Suspicious Payment", "Suspicious Customer"]),
    ], TAXONOMY)
    assert built == rule_map
    with pytest.raises(UnknownConceptError):
        build_rule_map([("x", "d", ["Nope"])], TAXONOMY)


def test_annotate_dataset_keeps_golden_and_tags_sources(rule_map):
    golden_vec = np.array([0, 0, 0, 1], dtype=np.int8)
    records = [
        _record("a", {"risky_product_styles"}),
        _record("b", {"n_cards_last_week"}, golden=golden_vec),
        _record("c", {"retired_rule"}),
    ]
    out, stats = annotate_dataset(records, rule_map, TAXONOMY)
    assert [r.label_source for r in out] == [NOISY, GOLDEN, NOISY]
    assert list(out[0].noisy_concepts) == [1, 0, 0, 0]
    assert out[1].golden_concepts is golden_vec
    assert list(out[1].concepts) == [0, 0, 0, 1]
    assert list(out[1].noisy_concepts) == [0, 1, 1, 0]
    assert stats.records == 3
    assert stats.golden_kept == 1
    assert stats.noisy_assigned == 2
    assert stats.unknown_rule_count == 1
    # input records are not modified
    assert records[0].noisy_concepts is None


def test_annotate_dataset_is_idempotent(rule_map):
    records = [_record(str(i), rules) for i, rules in enumerate([{"risky_product_styles"}, set(), {"n_cards_last_week"}])]
    once, _ = annotate_dataset(records, rule_map, TAXONOMY)
    twice, _ = annotate_dataset(once, rule_map, TAXONOMY)
    for a, b in zip(once, twice):
        assert np.array_equal(a.noisy_concepts, b.noisy_concepts)
        assert a.label_source == b.label_source


def test_jaccard_examples():
    assert jaccard([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(1 / 3)
    assert jaccard([0, 0, 0], [0, 0, 0]) == 1.0
    assert jaccard([1, 0], [0, 1]) == 0.0
    assert jaccard([1, 0, 1], [1, 0, 1]) == 1.0
    with pytest.raises(ValueError):
        jaccard([1, 0], [1, 0, 0])


def test_jaccard_is_symmetric_and_bounded(rng):
    for _ in range(200):
        a = rng.integers(0, 2, size=6)
        b = rng.integers(0, 2, size=6)
        j = jaccard(a, b)
        assert 0.0 <= j <= 1.0
        assert j == jaccard(b, a)


def test_row_jaccard_matches_scalar(rng):
    A = rng.integers(0, 2, size=(50, 5))
    B = rng.integers(0, 2, size=(50, 5))
    rows = row_jaccard(A, B)
    assert np.allclose(rows, [jaccard(a, b) for a, b in zip(A, B)])
    assert mean_jaccard(A, B) == pytest.approx(rows.mean())
