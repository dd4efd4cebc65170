"""
Command-line entry point.

    python cli.py gen-data --config configs/default.cfg --seed 1
    python cli.py annotate --data data/synthetic
    python cli.py train    --strategy two-stage --seed 0
    python cli.py evaluate --checkpoint runs/two-stage-s0/model.final.ckpt
    python cli.py grid     --workers 4
    python cli.py pareto   --grid-dir runs/grid
    python cli.py plot     --grid-dir runs/grid

Every subcommand prints one JSON summary line on success. Invalid
configuration exits with status 2, any other failure with status 1.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from config import (
    DATA_DIR,
    DEFAULT_CONFIG_PATH,
    MAX_WORKERS,
    RUNS_DIR,
    ConfigError,
    as_float,
    check_sections,
    load_settings,
    section,
    setup_logging,
)

SECTIONS = ["gen", "strategy", "finetune", "grid", "eval"]


def _settings(args) -> Dict[str, str]:
    if args.config is not None:
        settings = load_settings(args.config)
    elif DEFAULT_CONFIG_PATH.exists():
        settings = load_settings(DEFAULT_CONFIG_PATH)
    else:
        settings = {}
    check_sections(settings, SECTIONS)
    return settings


def _fpr_target(settings: Dict[str, str]) -> float:
    values = section(settings, "eval", ["fpr_target"])
    if "fpr_target" not in values:
        return 0.05
    target = as_float("eval.fpr_target", values["fpr_target"])
    if not 0.0 <= target <= 1.0:
        raise ConfigError("eval.fpr_target", f"must be in [0, 1], got {target}")
    return target


def _emit(summary: Dict) -> None:
    print(json.dumps(summary, sort_keys=True, default=str))


# ----------------------------------------------------------
# Subcommands
# ----------------------------------------------------------


def cmd_gen_data(args) -> None:
    from pipeline.data_loader import save_dataset
    from synthetic.generate_transactions import GenConfig, generate

    cfg = GenConfig.from_settings(_settings(args), seed=args.seed)
    dataset = generate(cfg)
    out = save_dataset(dataset, args.out)
    stats = dataset.provenance["stats"]
    _emit({
        "command": "gen-data",
        "out": str(out),
        "records": len(dataset.records),
        "golden_train": len(dataset.golden_train()),
        "prevalence": stats["prevalence"],
        "mean_jaccard": stats["mean_jaccard"],
        "learnability_auc": dataset.provenance["calibration"]["learnability_auc"],
    })


def cmd_annotate(args) -> None:
    from pipeline.data_loader import load_dataset, save_dataset
    from weak_labels.annotator import annotate_dataset
    from weak_labels.rule_map import load_rule_map

    _settings(args)
    dataset = load_dataset(args.data)
    if args.rule_map is not None:
        dataset.rule_map = load_rule_map(args.rule_map, dataset.taxonomy)
    dataset.records, stats = annotate_dataset(dataset.records, dataset.rule_map, dataset.taxonomy, strict=args.strict)
    out = save_dataset(dataset, args.out or args.data)
    _emit({
        "command": "annotate",
        "out": str(out),
        "records": stats.records,
        "golden_kept": stats.golden_kept,
        "noisy_assigned": stats.noisy_assigned,
        "unknown_rules": stats.unknown_rule_count,
    })


def cmd_train(args) -> None:
    from pipeline.data_loader import load_dataset
    from pipeline.orchestrator import PRETRAIN_CKPT, run_strategy
    from training.strategies import Strategy, StrategyConfig, parse_enum

    settings = _settings(args)
    cfg = StrategyConfig.from_settings(settings, seed=args.seed)
    if args.strategy is not None:
        cfg.variant = parse_enum(Strategy, "--strategy", args.strategy)
        cfg.validate()
    run_dir = args.run_dir or RUNS_DIR / f"{cfg.variant.value}-s{cfg.seed}"
    dataset = load_dataset(args.data)
    run = run_strategy(cfg, dataset, run_dir, fpr_target=_fpr_target(settings))
    summary = {
        "command": "train",
        "run_id": run.run_id,
        "strategy": run.strategy,
        "checkpoint": str(run.checkpoint),
        "recall_at_fpr": run.report.recall_at_fpr,
        "map": run.report.map,
    }
    if run.base_report is not None:
        summary["pretrain_checkpoint"] = str(run.run_dir / PRETRAIN_CKPT)
        summary["base_map"] = run.base_report.map
    _emit(summary)


def cmd_evaluate(args) -> None:
    from evaluation.metrics import evaluate_model
    from network.checkpoint import load_model
    from pipeline.data_loader import load_dataset

    settings = _settings(args)
    model = load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    report = evaluate_model(model, dataset.split("validation"), dataset.split("test"), _fpr_target(settings))
    _emit({"command": "evaluate", "checkpoint": str(args.checkpoint), **report.to_dict()})


def cmd_grid(args) -> None:
    import pandas as pd

    from pipeline.data_loader import load_dataset
    from pipeline.grid_runner import FAILURES_FILE, RESULTS_FILE, GridSpec, run_grid

    settings = _settings(args)
    grid = GridSpec.from_settings(settings, seed=args.seed)
    dataset = load_dataset(args.data)
    records = run_grid(dataset, grid, args.grid_dir, max_workers=args.workers, fpr_target=_fpr_target(settings))
    failures = len(pd.read_csv(Path(args.grid_dir) / FAILURES_FILE))
    _emit({
        "command": "grid",
        "runs": len(records),
        "failures": failures,
        "results": str(Path(args.grid_dir) / RESULTS_FILE),
    })


def cmd_pareto(args) -> None:
    import pandas as pd

    from pipeline.grid_runner import write_pareto

    _settings(args)
    path = write_pareto(args.grid_dir)
    front = pd.read_csv(path)
    _emit({
        "command": "pareto",
        "out": str(path),
        "runs": int(len(front)),
        "front_overall": int(front["front_overall"].sum()),
        "front_within_strategy": int(front["front_within_strategy"].sum()),
    })


def cmd_plot(args) -> None:
    import pandas as pd

    from pipeline.grid_runner import RESULTS_FILE
    from pipeline.plotting import emit_tradeoff_plot

    _settings(args)
    results_path = Path(args.grid_dir) / RESULTS_FILE
    if not results_path.exists():
        raise FileNotFoundError(f"No {RESULTS_FILE} in {args.grid_dir}; run the grid first")
    out = args.out or Path(args.grid_dir) / "tradeoff.svg"
    summary = emit_tradeoff_plot(pd.read_csv(results_path), out)
    _emit({"command": "plot", **summary})


# ----------------------------------------------------------
# Parser
# ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cli.py", description="Concept-bottleneck fraud explainability")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="key = value config file (default: configs/default.cfg)")
        p.add_argument("--seed", type=int, default=None, help="overrides the seed in the config")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "generate a synthetic dataset")
    p.add_argument("--out", type=Path, default=DATA_DIR)

    p = add("annotate", cmd_annotate, "re-annotate noisy concepts of an existing dataset")
    p.add_argument("--data", type=Path, default=DATA_DIR)
    p.add_argument("--rule-map", type=Path, default=None, help="rule map file (default: the dataset's own)")
    p.add_argument("--strict", action="store_true", help="fail on triggered rules missing from the map")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: overwrite --data)")

    p = add("train", cmd_train, "train one strategy")
    p.add_argument("--data", type=Path, default=DATA_DIR)
    p.add_argument("--strategy", default=None, help="fully-supervised, two-stage or hybrid")
    p.add_argument("--run-dir", type=Path, default=None)

    p = add("evaluate", cmd_evaluate, "evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, default=DATA_DIR)

    p = add("grid", cmd_grid, "run the hyperparameter grid")
    p.add_argument("--data", type=Path, default=DATA_DIR)
    p.add_argument("--grid-dir", type=Path, default=RUNS_DIR / "grid")
    p.add_argument("--workers", type=int, default=MAX_WORKERS)

    p = add("pareto", cmd_pareto, "write pareto.csv for a finished grid")
    p.add_argument("--grid-dir", type=Path, default=RUNS_DIR / "grid")

    p = add("plot", cmd_plot, "write the trade-off SVG for a finished grid")
    p.add_argument("--grid-dir", type=Path, default=RUNS_DIR / "grid")
    p.add_argument("--out", type=Path, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, FloatingPointError) as e:
        print(f"error: {type(e).__name__}: {e}".splitlines()[0], file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
