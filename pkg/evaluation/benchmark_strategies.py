"""
Directional benchmark of the learning strategies on synthetic data.

For every master seed: generate the default benchmark dataset, train the
fully-supervised baseline, the two-stage model (pre-train, then fine-tune
with pure-golden batches and with hybrid batches at two golden fractions)
and the hybrid model, and evaluate all of them on the golden test split.

Checks reported at the end:
- two-stage and hybrid beat the baseline's recall@FPR
- fine-tuning raises test mAP over the pre-trained base model
- fine-tuning never lowers golden-validation mAP below the base model
- hybrid fine-tuning with golden fraction 0.5 does not lose mAP vs 0.1

    python evaluation/benchmark_strategies.py [seed ...]
"""

import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# ----------------------------------------------------------
# 0. PATCH PYTHON PATH TO PROJECT ROOT
# ----------------------------------------------------------

CURRENT_DIR = Path(__file__).resolve().parent      # .../evaluation
PROJECT_ROOT = CURRENT_DIR.parent

if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

import pandas as pd

from config import RUNS_DIR, setup_logging
from evaluation.metrics import DEFAULT_FPR_TARGET, evaluate_model, mean_average_precision
from network.bottleneck import predict
from pipeline.data_loader import records_to_arrays
from synthetic.generate_transactions import GenConfig, generate
from training.strategies import (
    FinetuneBatchMode,
    Strategy,
    StrategyConfig,
    fine_tune,
    pretrain,
    train_hybrid,
    train_supervised,
)

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = [0, 1, 2, 3, 4]
OUT_PATH = RUNS_DIR / "benchmark" / "summary.csv"
HYBRID_FRACTIONS = (0.1, 0.5)
MIN_WINS = 4  # out of 5 seeds

SUMMARY_COLUMNS = [
    "seed", "model", "recall_at_fpr", "realized_fpr", "map", "validation_map", "concept_jaccard",
]


def _validation_map(model, validation) -> float:
    arrays = records_to_arrays(validation, model.k, "golden", model.class_count)
    return mean_average_precision(predict(model, arrays.X).concepts, arrays.y_e)[0]


def benchmark_seed(
    seed: int,
    gen_cfg: Optional[GenConfig] = None,
    strategy_cfg: Optional[StrategyConfig] = None,
    fpr_target: float = DEFAULT_FPR_TARGET,
) -> List[Dict]:
    gen_cfg = replace(gen_cfg or GenConfig(), seed=seed)
    cfg = replace(strategy_cfg or StrategyConfig(), seed=seed)

    dataset = generate(gen_cfg)
    golden, noisy = dataset.golden_train(), dataset.noisy_train()
    validation, test = dataset.split("validation"), dataset.split("test")
    init = cfg.build_model(dataset.feature_dim, dataset.taxonomy.names)

    models = {}
    models["fully-supervised"] = train_supervised(init, golden, cfg, validation).model
    base = pretrain(init, noisy, cfg, validation).model
    models["pretrain"] = base
    pure = cfg.with_finetune(batch_mode=FinetuneBatchMode.PURE_GOLDEN)
    models["two-stage"] = fine_tune(base, golden, pure, noisy, validation).model
    for fraction in HYBRID_FRACTIONS:
        mixed = cfg.with_finetune(batch_mode=FinetuneBatchMode.HYBRID, golden_fraction=fraction)
        models[f"two-stage-hybrid-{fraction:g}"] = fine_tune(base, golden, mixed, noisy, validation).model
    hybrid_cfg = replace(cfg, variant=Strategy.HYBRID)
    models["hybrid"] = train_hybrid(init, golden, noisy, hybrid_cfg, validation).model

    rows = []
    for name, model in models.items():
        report = evaluate_model(model, validation, test, fpr_target)
        rows.append({
            "seed": seed,
            "model": name,
            "recall_at_fpr": report.recall_at_fpr,
            "realized_fpr": report.realized_fpr,
            "map": report.map,
            "validation_map": _validation_map(model, validation),
            "concept_jaccard": report.concept_jaccard,
        })
        logger.info("seed %d %-24s recall %.4f  mAP %.4f", seed, name, report.recall_at_fpr, report.map)
    return rows


def run_benchmark(seeds: Sequence[int] = DEFAULT_SEEDS, **kwargs) -> pd.DataFrame:
    rows = []
    for seed in seeds:
        rows.extend(benchmark_seed(seed, **kwargs))
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def check_orderings(summary: pd.DataFrame) -> Dict[str, int]:
    """Seeds on which each ordering holds; the golden-fraction check compares means (0 or 1)."""
    pivot_recall = summary.pivot(index="seed", columns="model", values="recall_at_fpr")
    pivot_map = summary.pivot(index="seed", columns="model", values="map")
    pivot_val = summary.pivot(index="seed", columns="model", values="validation_map")
    lo, hi = (f"two-stage-hybrid-{f:g}" for f in HYBRID_FRACTIONS)
    return {
        "two_stage_beats_baseline": int((pivot_recall["two-stage"] > pivot_recall["fully-supervised"]).sum()),
        "hybrid_beats_baseline": int((pivot_recall["hybrid"] > pivot_recall["fully-supervised"]).sum()),
        "finetune_improves_map": int((pivot_map["two-stage"] > pivot_map["pretrain"]).sum()),
        "finetune_keeps_validation_map": int((pivot_val["two-stage"] >= pivot_val["pretrain"]).sum()),
        "golden_fraction_map_not_lower": int(pivot_map[hi].mean() >= pivot_map[lo].mean()),
        "seeds": int(len(pivot_map)),
    }


def main(argv: Optional[List[str]] = None) -> None:
    setup_logging()
    seeds = [int(s) for s in (argv if argv is not None else sys.argv[1:])] or DEFAULT_SEEDS
    summary = run_benchmark(seeds)
    OUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    summary.to_csv(OUT_PATH, index=False, float_format="%.6f")

    print(summary.groupby("model")[["recall_at_fpr", "map"]].mean().round(4))
    checks = check_orderings(summary)
    n = checks.pop("seeds")
    print("=" * 80)
    for name, wins in checks.items():
        if name == "golden_fraction_map_not_lower":
            print(f"{name}: {'yes' if wins else 'no'}")
        else:
            needed = min(MIN_WINS, n)
            print(f"{name}: {wins}/{n} seeds ({'ok' if wins >= needed else 'below'} {needed})")
    print(f"Saved per-seed results to {OUT_PATH}")


if __name__ == "__main__":
    main()
