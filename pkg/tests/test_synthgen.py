from dataclasses import replace

import numpy as np
import pytest

from config import ConfigError, parse_settings
from pipeline.data_loader import GOLDEN, NOISY, load_dataset, records_to_arrays, save_dataset
from synthetic.generate_transactions import (
    LEARNABILITY_FLOOR,
    CalibrationError,
    GenConfig,
    RuleNoise,
    draw_rule_noise,
    fire_rules,
    generate,
    report,
)
from weak_labels.annotator import row_jaccard


def test_split_sizes_and_prevalence(small_dataset, small_gen_config):
    stats = small_dataset.provenance["stats"]
    assert stats["split_sizes"] == {"train": 3000, "validation": 600, "test": 600}
    for split, target in small_gen_config.target_prevalence.items():
        assert abs(stats["prevalence"][split] - target) <= 0.2 * target


def test_golden_subset_is_carved_from_train(small_dataset):
    subset = [r for r in small_dataset.records if r.split == "train" and r.label_source == GOLDEN]
    assert len(subset) == 200
    assert sum(r.y_d for r in subset) == 74  # round(200 * 0.37)
    golden_train = small_dataset.golden_train()
    holdout = small_dataset.golden_holdout()
    assert len(golden_train) == 130
    assert len(holdout) == 70
    assert sum(r.y_d for r in golden_train) == 48  # round(130 * 0.37)
    assert not {r.id for r in golden_train} & {r.id for r in holdout}


def test_evaluation_splits_are_golden(small_dataset):
    for split in ("validation", "test"):
        assert all(r.is_golden for r in small_dataset.split(split))


def test_every_record_has_a_noisy_vector(small_dataset):
    assert all(r.noisy_concepts is not None for r in small_dataset.records)
    noisy = small_dataset.noisy_train()
    assert len(noisy) == 2800
    assert all(r.label_source == NOISY and r.golden_concepts is None for r in noisy)


def test_generation_is_deterministic(tmp_path, small_gen_config, small_dataset):
    again = generate(small_gen_config)
    a = save_dataset(small_dataset, tmp_path / "a")
    b = save_dataset(again, tmp_path / "b")
    for name in ("records.jsonl", "taxonomy.txt", "rule_map.txt", "provenance.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_different_seeds_differ(small_gen_config, small_dataset):
    other = generate(replace(small_gen_config, seed=small_gen_config.seed + 1))
    assert not np.array_equal(other.records[0].features, small_dataset.records[0].features)


def test_noiseless_rules_reproduce_golden_concepts(noiseless_dataset):
    golden = [r for r in noiseless_dataset.records if r.is_golden]
    A = np.array([r.noisy_concepts for r in golden])
    B = np.array([r.golden_concepts for r in golden])
    assert np.array_equal(A, B)
    assert noiseless_dataset.provenance["stats"]["mean_jaccard"] == 1.0


def test_jaccard_calibration_hits_target():
    cfg = GenConfig(
        n_train=4000, n_validation=500, n_test=500,
        train_prevalence=0.05, golden_subset_size=300, golden_train_size=200, seed=11,
    )
    dataset = generate(cfg)
    mean_j = dataset.provenance["stats"]["mean_jaccard"]
    assert abs(mean_j - 0.4) <= 0.05
    assert dataset.provenance["calibration"]["noise_level"] is not None


def test_concepts_are_learnable(small_dataset):
    auc = small_dataset.provenance["calibration"]["learnability_auc"]
    assert auc is not None and auc > LEARNABILITY_FLOOR


def test_impossible_golden_fraction_fails():
    cfg = GenConfig(
        n_train=1000, n_validation=100, n_test=100, feature_dim=6, k=4, rule_count=6,
        train_prevalence=0.01, golden_subset_size=200, golden_train_size=100,
        miss_rate=0.2, false_fire_rate=0.02,
    )
    with pytest.raises(CalibrationError) as err:
        generate(cfg)
    assert err.value.what == "golden subset fraud fraction"


def test_config_validation_names_the_field():
    with pytest.raises(ConfigError) as err:
        GenConfig(golden_train_size=2000).validate()
    assert err.value.field == "gen.golden_train_size"
    with pytest.raises(ConfigError) as err:
        GenConfig(miss_rate=0.1).validate()
    assert err.value.field == "gen.miss_rate"
    with pytest.raises(ConfigError):
        GenConfig(rule_count=3).validate()


def test_config_from_settings():
    settings = parse_settings(
        "gen.n_train = 1234\ngen.golden_subset_size = 300\ngen.golden_train_size = 200\n"
        "gen.miss_rate = 0.2\ngen.false_fire_rate = 0.01\n"
    )
    cfg = GenConfig.from_settings(settings, seed=9)
    assert cfg.n_train == 1234
    assert cfg.golden_subset_size == 300
    assert cfg.miss_rate == 0.2
    assert cfg.seed == 9
    with pytest.raises(ConfigError) as err:
        GenConfig.from_settings(parse_settings("gen.n_train = lots\n"))
    assert err.value.field == "gen.n_train"
    with pytest.raises(ConfigError) as err:
        GenConfig.from_settings(parse_settings("gen.n_train = 1234\n"))
    assert err.value.field == "gen.golden_subset_size"


def test_report_recomputes_statistics(small_dataset):
    stats = report(small_dataset)
    assert stats.golden_size == 200
    assert stats.golden_fraud_fraction == pytest.approx(0.37)
    both = [r for r in small_dataset.records if r.is_golden]
    expected = row_jaccard(np.array([r.noisy_concepts for r in both]), np.array([r.golden_concepts for r in both]))
    assert stats.mean_jaccard == pytest.approx(expected.mean())
    assert set(stats.concept_rates_golden) == set(small_dataset.taxonomy.names)
    assert set(stats.rule_fire_rates) == set(small_dataset.rule_map.rule_ids)


def test_dataset_files_round_trip(tmp_path, small_dataset):
    loaded = load_dataset(save_dataset(small_dataset, tmp_path / "ds"))
    assert len(loaded.records) == len(small_dataset.records)
    assert loaded.taxonomy == small_dataset.taxonomy
    assert [r.id for r in loaded.golden_train()] == [r.id for r in small_dataset.golden_train()]
    a = records_to_arrays(small_dataset.split("test"), small_dataset.taxonomy.k, "golden")
    b = records_to_arrays(loaded.split("test"), loaded.taxonomy.k, "golden")
    assert np.array_equal(a.X, b.X)
    assert np.array_equal(a.y_e, b.y_e)


def test_load_dataset_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nowhere")


def _one_concept_rules(n, rng):
    golden = (rng.random((n, 3)) < 0.3).astype(np.int8)
    membership = np.eye(3, dtype=np.int8)
    return golden, membership, rng.random((n, 3))


def test_fire_rules_without_noise_is_exact_detection(rng):
    golden, membership, draws = _one_concept_rules(2000, rng)
    X = rng.standard_normal((2000, 5))
    noise = draw_rule_noise(X, 3, rng)
    fires = fire_rules(golden, membership, draws, 0.0, 0.0, noise)
    assert np.array_equal(fires, golden.astype(bool))


def test_fire_rules_miss_rate_is_per_rule(rng):
    n = 20000
    golden, membership, draws = _one_concept_rules(n, rng)
    noise = RuleNoise(np.array([0.5, 1.5, 1.0]), np.ones(3), np.ones((n, 3)))
    fires = fire_rules(golden, membership, draws, 0.4, 0.0, noise)
    present = golden.astype(bool)
    missed = [1.0 - fires[present[:, r], r].mean() for r in range(3)]
    assert missed == pytest.approx([0.2, 0.6, 0.4], abs=0.03)
    assert not fires[~present].any()


def test_false_fires_follow_the_lookalike_pattern(rng):
    n = 20000
    golden, membership, draws = _one_concept_rules(n, rng)
    lookalike = np.where(np.arange(n)[:, None] % 2 == 0, 0.2, 1.8) * np.ones((1, 3))
    noise = RuleNoise(np.ones(3), np.ones(3), lookalike)
    fires = fire_rules(golden, membership, draws, 0.0, 0.1, noise)
    absent = ~golden.astype(bool)
    even = (np.arange(n) % 2 == 0)[:, None] & absent
    odd = (np.arange(n) % 2 == 1)[:, None] & absent
    assert fires[even].mean() == pytest.approx(0.02, abs=0.01)
    assert fires[odd].mean() == pytest.approx(0.18, abs=0.02)


def test_rule_noise_draws():
    X = np.random.default_rng(0).standard_normal((20000, 6))
    noise = draw_rule_noise(X, 4, np.random.default_rng(5))
    assert noise.lookalike.shape == (20000, 4)
    assert ((noise.lookalike > 0) & (noise.lookalike < 2)).all()
    assert noise.lookalike.mean(axis=0) == pytest.approx(np.ones(4), abs=0.05)
    for scale in (noise.miss_scale, noise.false_fire_scale):
        assert ((scale >= 0.5) & (scale <= 1.5)).all()
    again = draw_rule_noise(X, 4, np.random.default_rng(5))
    assert np.array_equal(again.lookalike, noise.lookalike)
