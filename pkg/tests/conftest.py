import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from synthetic.generate_transactions import GenConfig, generate
from training.strategies import FinetuneConfig, StrategyConfig

# Small enough for a few seconds of generation, large enough that every
# batch stratum below has rows to spare.
SMALL_GEN = GenConfig(
    n_train=3000,
    n_validation=600,
    n_test=600,
    feature_dim=8,
    k=6,
    rule_count=12,
    train_prevalence=0.05,
    validation_prevalence=0.05,
    test_prevalence=0.05,
    golden_subset_size=200,
    golden_train_size=130,
    miss_rate=0.3,
    false_fire_rate=0.03,
    seed=7,
)

SMALL_STRATEGY = StrategyConfig(
    hidden_dims=[8],
    learning_rate=0.05,
    epochs=2,
    batch_size=20,
    golden_fraction=0.1,
    seed=3,
    finetune=FinetuneConfig(epochs=2, batch_size=20, learning_rate=0.05),
)


@pytest.fixture(scope="session")
def small_gen_config() -> GenConfig:
    return replace(SMALL_GEN)


@pytest.fixture(scope="session")
def small_dataset(small_gen_config):
    return generate(small_gen_config)


@pytest.fixture(scope="session")
def noiseless_dataset(small_gen_config):
    return generate(replace(small_gen_config, miss_rate=0.0, false_fire_rate=0.0))


@pytest.fixture
def small_strategy() -> StrategyConfig:
    return replace(SMALL_STRATEGY, finetune=replace(SMALL_STRATEGY.finetune))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
