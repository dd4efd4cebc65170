import json
from dataclasses import replace
from pathlib import Path

import pandas as pd
import pytest

from config import ConfigError, DEFAULT_CONFIG_PATH, load_settings, parse_settings
from evaluation.metrics import EvalReport
from network.checkpoint import load_model
from pipeline.grid_runner import (
    FAILURES_FILE,
    PARETO_COLUMNS,
    PARETO_FILE,
    RESULT_COLUMNS,
    RESULTS_FILE,
    GridSpec,
    RunRecord,
    cell_seed,
    pareto_frame,
    run_grid,
    select_pareto,
    write_pareto,
)
from pipeline.orchestrator import FINAL_CKPT, PRETRAIN_CKPT, RUN_META_FILE, StrategyRun, load_run, run_strategy
from training.strategies import FinetuneBatchMode, Strategy, StrategyConfig


def _tiny_grid(template, **changes):
    grid = GridSpec(
        layers=[[4]],
        learning_rates=[0.05],
        alphas=[0.5],
        seeds=[0],
        strategies=list(Strategy),
        template=template,
        ft_epochs=[1],
        ft_batch_sizes=[20],
        ft_learning_rates=[0.05],
        ft_modes=[FinetuneBatchMode.PURE_GOLDEN],
    )
    return replace(grid, **changes)


def test_default_grid_size():
    grid = GridSpec()
    assert grid.size_per_seed == 27
    assert len(grid.cells()) == 27
    # 2 epochs x 2 batch sizes x 2 rates x (pure-golden + hybrid at 2 golden fractions)
    assert len(grid.finetune_cells()) == 24
    assert grid.cells()[0] == (0, [32], 0.1, 0.3)


def test_default_config_file_builds_the_grid():
    grid = GridSpec.from_settings(load_settings(DEFAULT_CONFIG_PATH))
    assert grid.layers == [[32], [64, 32], [128, 64, 32]]
    assert grid.seeds == [0, 1]
    assert grid.strategies == list(Strategy)
    assert grid.ft_modes == list(FinetuneBatchMode)
    assert grid.ft_golden_fractions == [0.1, 0.5]
    assert GridSpec.from_settings(load_settings(DEFAULT_CONFIG_PATH), seed=5).seeds == [5]


def test_golden_fractions_only_multiply_hybrid_cells():
    grid = GridSpec(ft_epochs=[5], ft_batch_sizes=[32], ft_learning_rates=[0.05], ft_golden_fractions=[0.1, 0.25, 0.5])
    cells = grid.finetune_cells()
    assert [j for j, _ in cells] == [0, 1, 2, 3]
    pure = [c for _, c in cells if c["batch_mode"] is FinetuneBatchMode.PURE_GOLDEN]
    assert pure == [{"epochs": 5, "batch_size": 32, "learning_rate": 0.05, "batch_mode": FinetuneBatchMode.PURE_GOLDEN}]
    hybrid = [c["golden_fraction"] for _, c in cells if c["batch_mode"] is FinetuneBatchMode.HYBRID]
    assert hybrid == [0.1, 0.25, 0.5]
    only_pure = replace(grid, ft_modes=[FinetuneBatchMode.PURE_GOLDEN])
    assert len(only_pure.finetune_cells()) == 1


def test_grid_settings_parse_golden_fractions():
    grid = GridSpec.from_settings(parse_settings("grid.ft_modes = hybrid\ngrid.ft_golden_fractions = 0.2, 0.4\n"))
    assert grid.ft_golden_fractions == [0.2, 0.4]
    assert len(grid.finetune_cells()) == 2 * 2 * 2 * 2
    with pytest.raises(ConfigError) as err:
        GridSpec.from_settings(parse_settings("grid.ft_golden_fractions = 0.2, 1.5\n"))
    assert err.value.field == "grid.ft_golden_fractions"


def test_grid_settings_errors():
    with pytest.raises(ConfigError) as err:
        GridSpec.from_settings(parse_settings("grid.alphas = 0.5, 2\n"))
    assert err.value.field == "grid.alphas"
    with pytest.raises(ConfigError) as err:
        GridSpec.from_settings(parse_settings("grid.strategies = hybrid, magic\n"))
    assert err.value.field == "grid.strategies"


def test_cell_seed_is_a_pure_function():
    assert cell_seed(0, 3) == cell_seed(0, 3)
    seeds = {cell_seed(m, c) for m in range(3) for c in range(27)}
    assert len(seeds) == 81


def test_run_strategy_two_stage_writes_both_checkpoints(tmp_path, small_dataset, small_strategy):
    cfg = replace(small_strategy, variant=Strategy.TWO_STAGE)
    run = run_strategy(cfg, small_dataset, tmp_path / "run")
    assert (run.run_dir / PRETRAIN_CKPT).exists()
    assert (run.run_dir / FINAL_CKPT).exists()
    assert run.base_report is not None
    assert run.strategy == "two-stage"
    reloaded = load_run(run.run_dir)
    assert reloaded.report == run.report
    assert reloaded.config == cfg
    assert load_model(run.checkpoint).concept_names == list(small_dataset.taxonomy.names)
    meta = json.loads((run.run_dir / RUN_META_FILE).read_text())
    assert 0 <= meta["selected_epoch"] <= cfg.finetune.epochs
    assert meta["selected_epoch"] == run.traces[-1].selected_epoch


def test_load_run_ignores_incomplete_directories(tmp_path):
    (tmp_path / "half").mkdir()
    (tmp_path / "half" / "config").write_text("strategy.epochs = 1\n")
    assert load_run(tmp_path / "half") is None


def test_small_grid_end_to_end(tmp_path, small_dataset, small_strategy):
    grid = _tiny_grid(replace(small_strategy, epochs=1))
    records = run_grid(small_dataset, grid, tmp_path / "grid", max_workers=1)
    results = pd.read_csv(tmp_path / "grid" / RESULTS_FILE)
    assert list(results.columns) == RESULT_COLUMNS
    assert sorted(results["strategy"]) == ["fully-supervised", "hybrid", "pretrain", "two-stage"]
    assert len(records) == 4
    assert list(results["model_id"]) == sorted(results["model_id"])
    two_stage = results[results["strategy"] == "two-stage"].iloc[0]
    assert two_stage["model_id"] == "two-stage-s0-c000-ft00"
    assert two_stage["finetune"] == "e1-b20-lr0.05-pure-golden"
    # one run per strategy: each is on its own front
    assert results["pareto"].all()
    assert pd.read_csv(tmp_path / "grid" / FAILURES_FILE).empty


def test_grid_is_deterministic_and_resumable(tmp_path, small_dataset, small_strategy):
    grid = _tiny_grid(replace(small_strategy, epochs=1), strategies=[Strategy.FULLY_SUPERVISED, Strategy.HYBRID])
    run_grid(small_dataset, grid, tmp_path / "a", max_workers=1)
    run_grid(small_dataset, grid, tmp_path / "b", max_workers=1)
    first = (tmp_path / "a" / RESULTS_FILE).read_bytes()
    assert first == (tmp_path / "b" / RESULTS_FILE).read_bytes()
    # a second pass reuses every completed run
    run_grid(small_dataset, grid, tmp_path / "a", max_workers=1)
    assert (tmp_path / "a" / RESULTS_FILE).read_bytes() == first


def test_resume_reruns_cells_whose_settings_changed(tmp_path, small_dataset, small_strategy):
    grid = _tiny_grid(replace(small_strategy, epochs=1), strategies=[Strategy.FULLY_SUPERVISED])
    run_grid(small_dataset, grid, tmp_path, max_workers=1)
    run_dir = tmp_path / "fully-supervised-s0-c000"
    assert load_run(run_dir).config.epochs == 1
    assert pd.read_csv(run_dir / "trace.csv")["epoch"].max() == 1

    run_grid(small_dataset, replace(grid, template=replace(small_strategy, epochs=2)), tmp_path, max_workers=1)
    assert "strategy.epochs = 2" in (run_dir / "config").read_text()
    assert load_run(run_dir).config.epochs == 2
    assert pd.read_csv(run_dir / "trace.csv")["epoch"].max() == 2


def test_hybrid_finetune_cells_run_in_the_grid(tmp_path, small_dataset, small_strategy):
    grid = _tiny_grid(
        replace(small_strategy, epochs=1),
        strategies=[Strategy.TWO_STAGE],
        ft_modes=list(FinetuneBatchMode),
        ft_golden_fractions=[0.1, 0.5],
    )
    run_grid(small_dataset, grid, tmp_path, max_workers=1)
    results = pd.read_csv(tmp_path / RESULTS_FILE)
    tuned = results[results["strategy"] == "two-stage"]
    assert list(tuned["finetune"]) == [
        "e1-b20-lr0.05-pure-golden",
        "e1-b20-lr0.05-hybrid-g0.1",
        "e1-b20-lr0.05-hybrid-g0.5",
    ]
    assert load_run(tmp_path / "two-stage-s0-c000-ft02").config.finetune.golden_fraction == 0.5


def test_failed_cells_are_recorded(tmp_path, small_dataset, small_strategy):
    grid = _tiny_grid(replace(small_strategy, batch_size=5000), strategies=[Strategy.FULLY_SUPERVISED, Strategy.HYBRID])
    records = run_grid(small_dataset, grid, tmp_path / "grid", max_workers=1)
    assert records == []
    failures = pd.read_csv(tmp_path / "grid" / FAILURES_FILE)
    assert sorted(failures["run_id"]) == ["fully-supervised-s0-c000", "hybrid-s0-c000"]
    assert failures["error"].str.contains("StratumExhaustedError").all()
    assert pd.read_csv(tmp_path / "grid" / RESULTS_FILE).empty


def test_pareto_frame():
    results = pd.DataFrame({
        "model_id": ["b", "a", "c", "d"],
        "strategy": ["hybrid", "hybrid", "fully-supervised", "fully-supervised"],
        "seed": [0, 0, 0, 0],
        "recall_at_fpr": [0.5, 0.7, 0.6, 0.4],
        "map": [0.9, 0.6, 0.6, 0.4],
    })
    front = pareto_frame(results)
    assert list(front.columns) == PARETO_COLUMNS
    assert list(front["run_id"]) == ["a", "b", "c", "d"]
    assert list(front["front_overall"]) == [True, True, False, False]
    assert list(front["front_within_strategy"]) == [True, True, True, False]


def _record(run_id, strategy, recall, map_):
    report = EvalReport(recall, 0.05, 0.05, 0.5, [map_], map_, 0)
    run = StrategyRun(run_id, strategy, StrategyConfig(), report, Path("."), Path("."), Path("."), 0.0)
    return RunRecord(run_id, strategy, 0, 0, StrategyConfig(), run)


def test_select_pareto_marks_both_fronts():
    records = select_pareto([
        _record("h0", "hybrid", 0.5, 0.9),
        _record("h1", "hybrid", 0.7, 0.6),
        _record("f0", "fully-supervised", 0.6, 0.6),
        _record("f1", "fully-supervised", 0.4, 0.4),
    ])
    assert [r.pareto_overall for r in records] == [True, True, False, False]
    assert [r.pareto_within_strategy for r in records] == [True, True, True, False]
    assert records[2].to_row()["pareto"] is True
    assert select_pareto([]) == []


def test_write_pareto_needs_results(tmp_path):
    with pytest.raises(FileNotFoundError):
        write_pareto(tmp_path)


def test_write_pareto_after_grid(tmp_path, small_dataset, small_strategy):
    grid = _tiny_grid(replace(small_strategy, epochs=1), strategies=[Strategy.FULLY_SUPERVISED])
    run_grid(small_dataset, grid, tmp_path, max_workers=1)
    path = write_pareto(tmp_path)
    assert path == tmp_path / PARETO_FILE
    assert pd.read_csv(path)["front_overall"].tolist() == [True]


@pytest.mark.slow
def test_process_pool_matches_serial(tmp_path, small_dataset, small_strategy):
    grid = _tiny_grid(replace(small_strategy, epochs=1), alphas=[0.3, 0.7])
    run_grid(small_dataset, grid, tmp_path / "serial", max_workers=1)
    run_grid(small_dataset, grid, tmp_path / "pool", max_workers=2)
    assert (tmp_path / "serial" / RESULTS_FILE).read_bytes() == (tmp_path / "pool" / RESULTS_FILE).read_bytes()
