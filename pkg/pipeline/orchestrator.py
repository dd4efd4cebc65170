import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from config import parse_settings
from evaluation.metrics import DEFAULT_FPR_TARGET, REPORT_COLUMNS, EvalReport, evaluate_model
from network.bottleneck import ConceptBottleneckModel
from network.checkpoint import save_model
from pipeline.data_loader import SyntheticDataset
from training.strategies import (
    Strategy,
    StrategyConfig,
    TrainingTrace,
    fine_tune,
    pretrain,
    train_hybrid,
    train_supervised,
)

logger = logging.getLogger(__name__)

# runs/<run_id>/...
CONFIG_FILE = "config"
TRACE_FILE = "trace.csv"
PRETRAIN_TRACE_FILE = "pretrain.trace.csv"
PRETRAIN_CKPT = "model.pretrain.ckpt"
FINAL_CKPT = "model.final.ckpt"
REPORT_FILE = "report.csv"
REPORT_JSON = "report.json"
RUN_META_FILE = "run.json"  # wall time; not part of the deterministic outputs

PRETRAIN_LABEL = "pretrain"


@dataclass
class StrategyRun:
    run_id: str
    strategy: str
    config: StrategyConfig
    report: EvalReport
    run_dir: Path
    checkpoint: Path
    trace_path: Path
    wall_time: float
    base_report: Optional[EvalReport] = None
    traces: List[TrainingTrace] = field(default_factory=list)


def report_from_dict(obj: Dict) -> EvalReport:
    obj = dict(obj)
    obj["threshold"] = float(obj["threshold"])
    return EvalReport(**obj)


def _write_report(run_dir: Path, run_id: str, strategy: str, cfg: StrategyConfig, report: EvalReport) -> None:
    row = report.to_row(run_id, cfg.seed, strategy, cfg.alpha, cfg.learning_rate, cfg.hidden_dims)
    pd.DataFrame([row], columns=REPORT_COLUMNS).to_csv(run_dir / REPORT_FILE, index=False, float_format="%.17g")
    with (run_dir / REPORT_JSON).open("w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def run_strategy(
    cfg: StrategyConfig,
    dataset: SyntheticDataset,
    run_dir: Path,
    run_id: Optional[str] = None,
    base_model: Optional[ConceptBottleneckModel] = None,
    pretrain_only: bool = False,
    fpr_target: float = DEFAULT_FPR_TARGET,
) -> StrategyRun:
    """
    Train, evaluate and persist one strategy run into `run_dir`.

    Two-stage runs write both checkpoints. With `base_model` the pre-training
    stage is skipped and fine-tuning continues from it; with `pretrain_only`
    the run stops after the first stage and is labeled "pretrain".
    """
    cfg.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    run_id = run_id or run_dir.name
    for stale in (REPORT_FILE, REPORT_JSON, RUN_META_FILE):
        (run_dir / stale).unlink(missing_ok=True)
    validation = dataset.split("validation")
    test = dataset.split("test")
    golden = dataset.golden_train()
    noisy = dataset.noisy_train()

    # 1) Build the initial model
    model = cfg.build_model(dataset.feature_dim, dataset.taxonomy.names)
    (run_dir / CONFIG_FILE).write_text(cfg.to_text(), encoding="utf-8")

    # 2) Train
    traces: List[TrainingTrace] = []
    base_report = None
    strategy = cfg.variant.value
    if cfg.variant is Strategy.FULLY_SUPERVISED:
        traces.append(train_supervised(model, golden, cfg, validation))
    elif cfg.variant is Strategy.HYBRID:
        traces.append(train_hybrid(model, golden, noisy, cfg, validation))
    else:
        if base_model is None:
            base_trace = pretrain(model, noisy, cfg, validation)
            base_trace.write_csv(run_dir / PRETRAIN_TRACE_FILE)
            traces.append(base_trace)
            base_model = base_trace.model
        save_model(base_model, run_dir / PRETRAIN_CKPT)
        base_report = evaluate_model(base_model, validation, test, fpr_target)
        if pretrain_only:
            strategy = PRETRAIN_LABEL
        else:
            traces.append(fine_tune(base_model, golden, cfg, noisy, validation))

    # 3) Evaluate + persist
    if pretrain_only:
        final_model, report = base_model, base_report
        checkpoint = run_dir / PRETRAIN_CKPT
        trace_path = run_dir / PRETRAIN_TRACE_FILE
    else:
        final_model = traces[-1].model
        report = evaluate_model(final_model, validation, test, fpr_target)
        checkpoint = save_model(final_model, run_dir / FINAL_CKPT)
        trace_path = traces[-1].write_csv(run_dir / TRACE_FILE)

    _write_report(run_dir, run_id, strategy, cfg, report)
    wall_time = sum(t.wall_time for t in traces)
    meta = {"run_id": run_id, "wall_time": wall_time}
    if base_report is not None and not pretrain_only:
        meta["base_report"] = base_report.to_dict()
    if traces and traces[-1].selected_epoch is not None:
        meta["selected_epoch"] = traces[-1].selected_epoch
    (run_dir / RUN_META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    logger.info(
        "Run %s (%s): recall@%.0f%%FPR %.4f, mAP %.4f",
        run_id, strategy, 100 * fpr_target, report.recall_at_fpr, report.map,
    )
    return StrategyRun(
        run_id, strategy, cfg, report, run_dir, checkpoint, trace_path, wall_time, base_report, traces
    )


def load_run(run_dir: Path) -> Optional[StrategyRun]:
    """A completed run from disk, or None when any of its files is missing or unreadable."""
    run_dir = Path(run_dir)
    try:
        row = pd.read_csv(run_dir / REPORT_FILE).iloc[0]
        report = report_from_dict(json.loads((run_dir / REPORT_JSON).read_text(encoding="utf-8")))
        settings = parse_settings((run_dir / CONFIG_FILE).read_text(encoding="utf-8"), str(run_dir / CONFIG_FILE))
        cfg = StrategyConfig.from_settings(settings)
        meta = json.loads((run_dir / RUN_META_FILE).read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError, IndexError) as e:
        logger.debug("Ignoring incomplete run at %s (%s)", run_dir, e)
        return None
    strategy = str(row["strategy"])
    if strategy == PRETRAIN_LABEL:
        checkpoint, trace_path = run_dir / PRETRAIN_CKPT, run_dir / PRETRAIN_TRACE_FILE
    else:
        checkpoint, trace_path = run_dir / FINAL_CKPT, run_dir / TRACE_FILE
    if not checkpoint.exists():
        return None
    base = meta.get("base_report")
    return StrategyRun(
        str(row["model_id"]), strategy, cfg, report, run_dir, checkpoint, trace_path,
        float(meta.get("wall_time", 0.0)), report_from_dict(base) if base else None,
    )

