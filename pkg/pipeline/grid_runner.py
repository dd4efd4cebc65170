"""
Hyperparameter grid over learning strategies.

Phase one trains every (layers x learning rate x alpha) cell for every seed
and strategy; for two-stage this is the pre-training of the base models.
Phase two fine-tunes, per seed, the Pareto-optimal base models over the
fine-tune grid (epochs x batch sizes x learning rates x batch modes, with hybrid mode
also crossed with the golden fractions).

Layout under the grid directory:
    <run_id>/{config, trace.csv, *.ckpt, report.csv, report.json, run.json}
    results.csv    one row per completed run, sorted by run_id
    failures.csv   run_id, error for every failed cell
    pareto.csv     written by `write_pareto`

Cell seeds derive from (master seed, cell index) only, so results do not
depend on worker scheduling. A cell whose run directory is complete and was
produced with the same settings is reused; otherwise it is trained again.
"""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import (
    MAX_WORKERS,
    SHOW_PROGRESS,
    ConfigError,
    as_float_list,
    as_int_list,
    as_list,
    section,
)
from evaluation.metrics import DEFAULT_FPR_TARGET, REPORT_COLUMNS, pareto_front
from network.checkpoint import load_model
from pipeline.data_loader import SyntheticDataset
from pipeline.orchestrator import PRETRAIN_LABEL, StrategyRun, load_run, run_strategy
from training.strategies import FinetuneBatchMode, Strategy, StrategyConfig, parse_enum

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
FAILURES_FILE = "failures.csv"
PARETO_FILE = "pareto.csv"

RESULT_COLUMNS = REPORT_COLUMNS + ["cell", "finetune"]
PARETO_COLUMNS = ["run_id", "strategy", "seed", "front_within_strategy", "front_overall"]

GRID_KEYS = [
    "layers", "learning_rates", "alphas", "seeds", "strategies",
    "ft_epochs", "ft_batch_sizes", "ft_learning_rates", "ft_modes", "ft_golden_fractions",
]


@dataclass
class GridSpec:
    layers: List[List[int]] = field(default_factory=lambda: [[32], [64, 32], [128, 64, 32]])
    learning_rates: List[float] = field(default_factory=lambda: [0.1, 0.01, 0.001])
    alphas: List[float] = field(default_factory=lambda: [0.3, 0.5, 0.7])
    seeds: List[int] = field(default_factory=lambda: [0, 1])
    strategies: List[Strategy] = field(default_factory=lambda: list(Strategy))
    template: StrategyConfig = field(default_factory=StrategyConfig)
    ft_epochs: List[int] = field(default_factory=lambda: [20, 40])
    ft_batch_sizes: List[int] = field(default_factory=lambda: [32, 64])
    ft_learning_rates: List[float] = field(default_factory=lambda: [0.05, 0.01])
    ft_modes: List[FinetuneBatchMode] = field(default_factory=lambda: list(FinetuneBatchMode))
    ft_golden_fractions: List[float] = field(default_factory=lambda: [0.1, 0.5])   # hybrid mode only

    def validate(self) -> "GridSpec":
        for name in ("layers", "learning_rates", "alphas", "seeds", "strategies"):
            if not getattr(self, name):
                raise ConfigError(f"grid.{name}", "must not be empty")
        if any(not dims or min(dims) < 1 for dims in self.layers):
            raise ConfigError("grid.layers", f"every option needs layer widths >= 1, got {self.layers}")
        if any(lr < 0 for lr in self.learning_rates):
            raise ConfigError("grid.learning_rates", "must be >= 0")
        if any(not 0.0 <= a <= 1.0 for a in self.alphas):
            raise ConfigError("grid.alphas", "must be in [0, 1]")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("grid.seeds", "must be >= 0")
        if Strategy.TWO_STAGE in self.strategies:
            for name in ("ft_epochs", "ft_batch_sizes", "ft_learning_rates", "ft_modes"):
                if not getattr(self, name):
                    raise ConfigError(f"grid.{name}", "two-stage needs a nonempty fine-tune grid")
            if any(v < 1 for v in self.ft_epochs + self.ft_batch_sizes):
                raise ConfigError("grid.ft_epochs", "fine-tune epochs and batch sizes must be positive")
            if any(v <= 0 for v in self.ft_learning_rates):
                raise ConfigError("grid.ft_learning_rates", "must be positive")
            if FinetuneBatchMode.HYBRID in self.ft_modes:
                if not self.ft_golden_fractions:
                    raise ConfigError("grid.ft_golden_fractions", "hybrid fine-tuning needs at least one fraction")
                if any(not 0.0 <= g <= 1.0 for g in self.ft_golden_fractions):
                    raise ConfigError("grid.ft_golden_fractions", "must be in [0, 1]")
        self.template.validate()
        return self

    def cells(self) -> List[Tuple[int, List[int], float, float]]:
        """(cell index, hidden dims, learning rate, alpha), same for every seed and strategy."""
        product = itertools.product(self.layers, self.learning_rates, self.alphas)
        return [(i, list(dims), lr, alpha) for i, (dims, lr, alpha) in enumerate(product)]

    def finetune_cells(self) -> List[Tuple[int, Dict]]:
        """Fine-tune settings per cell; the golden-fraction axis only multiplies hybrid mode."""
        cells = []
        axes = (self.ft_epochs, self.ft_batch_sizes, self.ft_learning_rates, self.ft_modes)
        for e, b, lr, mode in itertools.product(*axes):
            changes = {"epochs": e, "batch_size": b, "learning_rate": lr, "batch_mode": mode}
            if mode is FinetuneBatchMode.HYBRID:
                cells.extend({**changes, "golden_fraction": g} for g in self.ft_golden_fractions)
            else:
                cells.append(changes)
        return list(enumerate(cells))

    @property
    def size_per_seed(self) -> int:
        return len(self.layers) * len(self.learning_rates) * len(self.alphas)

    @classmethod
    def from_settings(cls, settings: Dict[str, str], seed: Optional[int] = None) -> "GridSpec":
        values = section(settings, "grid", GRID_KEYS)
        kwargs = {"template": StrategyConfig.from_settings(settings)}
        for key, raw in values.items():
            fname = f"grid.{key}"
            if key == "layers":
                kwargs[key] = [as_int_list(fname, opt, minimum=1) for opt in as_list(raw, sep=";")]
            elif key in ("seeds", "ft_epochs", "ft_batch_sizes"):
                kwargs[key] = as_int_list(fname, raw)
            elif key == "strategies":
                kwargs[key] = [parse_enum(Strategy, fname, s) for s in as_list(raw)]
            elif key == "ft_modes":
                kwargs[key] = [parse_enum(FinetuneBatchMode, fname, s) for s in as_list(raw)]
            else:
                kwargs[key] = as_float_list(fname, raw)
        if seed is not None:
            kwargs["seeds"] = [seed]
        return cls(**kwargs).validate()


def cell_seed(master_seed: int, cell_index: int) -> int:
    """Counter-based per-cell seed; independent of execution order."""
    return int(np.random.SeedSequence([master_seed, cell_index]).generate_state(1)[0])


@dataclass
class RunRecord:
    run_id: str
    strategy: str
    master_seed: int
    cell_index: int
    config: StrategyConfig
    run: StrategyRun
    finetune_index: Optional[int] = None
    pareto_within_strategy: bool = False
    pareto_overall: bool = False

    @property
    def report(self):
        return self.run.report

    def to_row(self) -> Dict:
        cfg = self.config
        row = self.report.to_row(
            self.run_id, self.master_seed, self.strategy, cfg.alpha, cfg.learning_rate, cfg.hidden_dims
        )
        row["pareto"] = self.pareto_within_strategy
        row["cell"] = self.cell_index
        if self.strategy == Strategy.TWO_STAGE.value:
            ft = cfg.finetune
            row["finetune"] = f"e{ft.epochs}-b{ft.batch_size}-lr{ft.learning_rate!r}-{ft.batch_mode.value}"
            if ft.batch_mode is FinetuneBatchMode.HYBRID:
                row["finetune"] += f"-g{ft.golden_fraction!r}"
        else:
            row["finetune"] = ""
        return row


@dataclass
class _Task:
    run_id: str
    strategy: str
    master_seed: int
    cell_index: int
    config: StrategyConfig
    run_dir: Path
    pretrain_only: bool = False
    base_checkpoint: Optional[Path] = None
    finetune_index: Optional[int] = None


# dataset shared read-only by the worker processes
_WORKER_DATASET: Optional[SyntheticDataset] = None


def _init_worker(dataset: SyntheticDataset) -> None:
    global _WORKER_DATASET
    _WORKER_DATASET = dataset


def _execute(task: _Task, dataset: SyntheticDataset, fpr_target: float) -> StrategyRun:
    existing = load_run(task.run_dir)
    if existing is not None:
        if existing.config == task.config and existing.report.fpr_target == fpr_target:
            logger.info("Reusing completed run %s", task.run_id)
            return existing
        logger.warning("Settings of %s changed since it last ran; re-running", task.run_id)
    base = load_model(task.base_checkpoint) if task.base_checkpoint else None
    return run_strategy(
        task.config, dataset, task.run_dir, task.run_id,
        base_model=base, pretrain_only=task.pretrain_only, fpr_target=fpr_target,
    )


def _execute_in_worker(task: _Task, fpr_target: float) -> StrategyRun:
    return _execute(task, _WORKER_DATASET, fpr_target)


def _run_tasks(
    tasks: List[_Task],
    dataset: SyntheticDataset,
    max_workers: int,
    fpr_target: float,
    failures: Dict[str, str],
    desc: str,
) -> List[RunRecord]:
    done: Dict[str, StrategyRun] = {}

    def record_failure(task: _Task, error: Exception) -> None:
        failures[task.run_id] = f"{type(error).__name__}: {error}"
        logger.warning("Grid cell %s failed: %s", task.run_id, failures[task.run_id])

    if max_workers <= 1:
        for task in tqdm(tasks, desc=desc, disable=not SHOW_PROGRESS):
            try:
                done[task.run_id] = _execute(task, dataset, fpr_target)
            except Exception as e:
                record_failure(task, e)
    else:
        with ProcessPoolExecutor(max_workers=max_workers, initializer=_init_worker, initargs=(dataset,)) as pool:
            futures = {pool.submit(_execute_in_worker, task, fpr_target): task for task in tasks}
            for fut in tqdm(as_completed(futures), total=len(futures), desc=desc, disable=not SHOW_PROGRESS):
                task = futures[fut]
                try:
                    done[task.run_id] = fut.result()
                except Exception as e:
                    record_failure(task, e)

    return [
        RunRecord(t.run_id, done[t.run_id].strategy, t.master_seed, t.cell_index, t.config, done[t.run_id], t.finetune_index)
        for t in tasks
        if t.run_id in done
    ]


def _phase_one_tasks(grid: GridSpec, out_dir: Path) -> List[_Task]:
    tasks = []
    for master in grid.seeds:
        for strategy in grid.strategies:
            for idx, dims, lr, alpha in grid.cells():
                cfg = replace(
                    grid.template, variant=strategy, hidden_dims=dims,
                    learning_rate=lr, alpha=alpha, seed=cell_seed(master, idx),
                )
                pretrain_only = strategy is Strategy.TWO_STAGE
                label = PRETRAIN_LABEL if pretrain_only else strategy.value
                run_id = f"{label}-s{master}-c{idx:03d}"
                tasks.append(_Task(run_id, label, master, idx, cfg, out_dir / run_id, pretrain_only))
    return tasks


def _phase_two_tasks(grid: GridSpec, bases: List[RunRecord], out_dir: Path) -> List[_Task]:
    tasks = []
    for base in bases:
        for j, changes in grid.finetune_cells():
            cfg = base.config.with_finetune(**changes)
            run_id = f"{Strategy.TWO_STAGE.value}-s{base.master_seed}-c{base.cell_index:03d}-ft{j:02d}"
            tasks.append(_Task(
                run_id, Strategy.TWO_STAGE.value, base.master_seed, base.cell_index, cfg,
                out_dir / run_id, base_checkpoint=base.run.checkpoint, finetune_index=j,
            ))
    return tasks


def _seed_front(records: List[RunRecord]) -> List[RunRecord]:
    """Pareto-optimal records, computed separately for every master seed."""
    front = []
    for master in sorted({r.master_seed for r in records}):
        group = [r for r in records if r.master_seed == master]
        flags = pareto_front([(r.report.recall_at_fpr, r.report.map) for r in group])
        front.extend(r for r, on in zip(group, flags) if on)
    return front


def select_pareto(records: List[RunRecord]) -> List[RunRecord]:
    """Set front membership within each strategy and over all records."""
    if not records:
        return records
    overall = pareto_front([(r.report.recall_at_fpr, r.report.map) for r in records])
    for r, on in zip(records, overall):
        r.pareto_overall = on
    for strategy in sorted({r.strategy for r in records}):
        group = [r for r in records if r.strategy == strategy]
        flags = pareto_front([(r.report.recall_at_fpr, r.report.map) for r in group])
        for r, on in zip(group, flags):
            r.pareto_within_strategy = on
    return records


def results_frame(records: List[RunRecord]) -> pd.DataFrame:
    rows = sorted((r.to_row() for r in records), key=lambda row: row["model_id"])
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def pareto_frame(results: pd.DataFrame) -> pd.DataFrame:
    """Pareto membership recomputed from a results table."""
    if results.empty:
        return pd.DataFrame(columns=PARETO_COLUMNS)
    points = list(zip(results["recall_at_fpr"], results["map"]))
    out = pd.DataFrame({
        "run_id": results["model_id"].astype(str),
        "strategy": results["strategy"].astype(str),
        "seed": results["seed"],
        "front_within_strategy": False,
        "front_overall": pareto_front(points),
    })
    for _, idx in results.groupby("strategy").groups.items():
        group = results.loc[idx]
        out.loc[idx, "front_within_strategy"] = pareto_front(list(zip(group["recall_at_fpr"], group["map"])))
    out["front_within_strategy"] = out["front_within_strategy"].astype(bool)
    return out.sort_values("run_id").reset_index(drop=True)[PARETO_COLUMNS]


def write_pareto(grid_dir: Path) -> Path:
    grid_dir = Path(grid_dir)
    results_path = grid_dir / RESULTS_FILE
    if not results_path.exists():
        raise FileNotFoundError(f"No {RESULTS_FILE} in {grid_dir}; run the grid first")
    out = pareto_frame(pd.read_csv(results_path))
    out.to_csv(grid_dir / PARETO_FILE, index=False)
    return grid_dir / PARETO_FILE


def run_grid(
    dataset: SyntheticDataset,
    grid: GridSpec,
    out_dir: Path,
    max_workers: int = MAX_WORKERS,
    fpr_target: float = DEFAULT_FPR_TARGET,
) -> List[RunRecord]:
    """Run both phases, then write results.csv and failures.csv. Returns the completed records."""
    grid.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures: Dict[str, str] = {}

    logger.info(
        "Grid: %d cells x %d seeds x %d strategies (%d workers)",
        grid.size_per_seed, len(grid.seeds), len(grid.strategies), max_workers,
    )
    records = _run_tasks(_phase_one_tasks(grid, out_dir), dataset, max_workers, fpr_target, failures, "grid")

    bases = [r for r in records if r.strategy == PRETRAIN_LABEL]
    if bases:
        front = _seed_front(bases)
        logger.info("Fine-tuning %d Pareto-optimal base models", len(front))
        records += _run_tasks(_phase_two_tasks(grid, front, out_dir), dataset, max_workers, fpr_target, failures, "finetune")

    select_pareto(records)
    results_frame(records).to_csv(out_dir / RESULTS_FILE, index=False, float_format="%.17g")
    pd.DataFrame(sorted(failures.items()), columns=["run_id", "error"]).to_csv(out_dir / FAILURES_FILE, index=False)
    if failures:
        logger.warning("%d grid cells failed; see %s", len(failures), out_dir / FAILURES_FILE)
    return records
