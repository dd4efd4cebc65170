"""
Learning strategies for the concept-bottleneck model.

- fully-supervised: train on the golden pool only
- two-stage:        pre-train on noisy concept labels, then fine-tune on
                    golden labels (optionally with the trunk frozen)
- hybrid:           train from scratch on batches mixing a fixed fraction of
                    golden rows with noisy rows

Every strategy is a loop of `train_step` over `make_batches`; the batch plan
and the seed fully determine the result.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import (
    SHOW_PROGRESS,
    ConfigError,
    as_bool,
    as_float,
    as_int,
    as_int_list,
    as_optional_float,
    section,
)
from evaluation.metrics import mean_average_precision
from network.bottleneck import ConceptBottleneckModel, MetaLossConfig, meta_loss, predict, train_step
from network.nn_core import NonFiniteError
from pipeline.data_loader import TrainingArrays, TransactionRecord, records_to_arrays
from training.batching import BatchPlan, make_batches

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["epoch", "split", "total_loss", "decision_loss", "explain_loss"]


class Strategy(str, Enum):
    FULLY_SUPERVISED = "fully-supervised"
    TWO_STAGE = "two-stage"
    HYBRID = "hybrid"


class FinetuneBatchMode(str, Enum):
    PURE_GOLDEN = "pure-golden"
    HYBRID = "hybrid"


class TrainingDivergedError(FloatingPointError):
    def __init__(self, stage: str, epoch: int, detail: str = "loss is NaN or Inf"):
        super().__init__(f"{stage} diverged at epoch {epoch}: {detail}")
        self.stage = stage
        self.epoch = epoch


def parse_enum(enum_cls, field_name: str, raw: str):
    try:
        return enum_cls(raw.strip().lower())
    except ValueError:
        choices = ", ".join(m.value for m in enum_cls)
        raise ConfigError(field_name, f"expected one of: {choices}; got {raw!r}") from None


# ----------------------------------------------------------
# 1. CONFIGS
# ----------------------------------------------------------

FINETUNE_KEYS = [
    "epochs", "batch_size", "learning_rate", "freeze_trunk",
    "batch_mode", "golden_fraction", "fraud_prevalence", "select_best",
]

STRATEGY_KEYS = [
    "variant", "hidden_dims", "hidden_activation", "alpha", "learning_rate",
    "epochs", "batch_size", "fraud_prevalence", "golden_fraction", "mask_empty_noisy", "seed",
]


@dataclass
class FinetuneConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.05
    freeze_trunk: bool = True
    batch_mode: FinetuneBatchMode = FinetuneBatchMode.PURE_GOLDEN
    golden_fraction: float = 0.5      # hybrid batch mode only
    fraud_prevalence: Optional[float] = 0.37
    # keep the epoch with the best golden-validation mAP (epoch 0 is the base)
    select_best: bool = True

    def validate(self) -> "FinetuneConfig":
        if self.epochs < 0:
            raise ConfigError("finetune.epochs", f"must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("finetune.batch_size", f"must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError("finetune.learning_rate", f"must be > 0, got {self.learning_rate}")
        if self.batch_mode is FinetuneBatchMode.HYBRID and not 0.0 <= self.golden_fraction <= 1.0:
            raise ConfigError("finetune.golden_fraction", f"must be in [0, 1], got {self.golden_fraction}")
        if self.fraud_prevalence is not None and not 0.0 < self.fraud_prevalence < 1.0:
            raise ConfigError("finetune.fraud_prevalence", f"must be in (0, 1), got {self.fraud_prevalence}")
        return self

    def batch_plan(self, shuffle_seed: int) -> BatchPlan:
        golden_fraction = self.golden_fraction if self.batch_mode is FinetuneBatchMode.HYBRID else None
        return BatchPlan(self.batch_size, self.fraud_prevalence, golden_fraction, shuffle_seed)

    @classmethod
    def from_settings(cls, settings: Dict[str, str]) -> "FinetuneConfig":
        values = section(settings, "finetune", FINETUNE_KEYS)
        kwargs = {}
        for key, raw in values.items():
            fname = f"finetune.{key}"
            if key in ("epochs", "batch_size"):
                kwargs[key] = as_int(fname, raw)
            elif key in ("freeze_trunk", "select_best"):
                kwargs[key] = as_bool(fname, raw)
            elif key == "batch_mode":
                kwargs[key] = parse_enum(FinetuneBatchMode, fname, raw)
            elif key == "fraud_prevalence":
                kwargs[key] = as_optional_float(fname, raw)
            else:
                kwargs[key] = as_float(fname, raw)
        return cls(**kwargs).validate()

    def to_settings(self) -> Dict[str, str]:
        return {
            "finetune.epochs": str(self.epochs),
            "finetune.batch_size": str(self.batch_size),
            "finetune.learning_rate": repr(self.learning_rate),
            "finetune.freeze_trunk": str(self.freeze_trunk).lower(),
            "finetune.batch_mode": self.batch_mode.value,
            "finetune.golden_fraction": repr(self.golden_fraction),
            "finetune.fraud_prevalence": "none" if self.fraud_prevalence is None else repr(self.fraud_prevalence),
            "finetune.select_best": str(self.select_best).lower(),
        }


@dataclass
class StrategyConfig:
    variant: Strategy = Strategy.FULLY_SUPERVISED
    hidden_dims: List[int] = field(default_factory=lambda: [64, 32])
    hidden_activation: str = "relu"
    alpha: float = 0.5
    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 100
    # the baseline fixes 37% fraud per batch
    fraud_prevalence: Optional[float] = 0.37
    golden_fraction: Optional[float] = 0.10   # hybrid only
    # drop all-zero noisy concept vectors from the explain loss
    mask_empty_noisy: bool = False
    seed: int = 0
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def validate(self) -> "StrategyConfig":
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("strategy.hidden_dims", f"every layer width must be >= 1, got {self.hidden_dims}")
        if self.hidden_activation not in ("relu", "sigmoid"):
            raise ConfigError("strategy.hidden_activation", f"expected relu or sigmoid, got {self.hidden_activation!r}")
        try:
            MetaLossConfig(self.alpha)
        except ValueError as e:
            raise ConfigError("strategy.alpha", str(e)) from None
        if self.learning_rate < 0:
            raise ConfigError("strategy.learning_rate", f"must be >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError("strategy.epochs", f"must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("strategy.batch_size", f"must be >= 1, got {self.batch_size}")
        if self.fraud_prevalence is not None and not 0.0 < self.fraud_prevalence < 1.0:
            raise ConfigError("strategy.fraud_prevalence", f"must be in (0, 1), got {self.fraud_prevalence}")
        if self.variant is Strategy.HYBRID:
            if self.golden_fraction is None or not 0.0 <= self.golden_fraction <= 1.0:
                raise ConfigError("strategy.golden_fraction", f"hybrid needs a value in [0, 1], got {self.golden_fraction}")
        if self.seed < 0:
            raise ConfigError("strategy.seed", f"must be >= 0, got {self.seed}")
        self.finetune.validate()
        return self

    def batch_plan(self) -> BatchPlan:
        golden_fraction = self.golden_fraction if self.variant is Strategy.HYBRID else None
        return BatchPlan(self.batch_size, self.fraud_prevalence, golden_fraction, self.seed)

    def build_model(self, input_dim: int, concept_names: Sequence[str], class_count: int = 2) -> ConceptBottleneckModel:
        return ConceptBottleneckModel.build(
            input_dim, self.hidden_dims, concept_names, class_count, self.hidden_activation, seed=self.seed
        )

    @classmethod
    def from_settings(cls, settings: Dict[str, str], seed: Optional[int] = None) -> "StrategyConfig":
        values = section(settings, "strategy", STRATEGY_KEYS)
        kwargs = {}
        for key, raw in values.items():
            fname = f"strategy.{key}"
            if key == "variant":
                kwargs[key] = parse_enum(Strategy, fname, raw)
            elif key == "hidden_dims":
                kwargs[key] = as_int_list(fname, raw, minimum=1)
            elif key == "hidden_activation":
                kwargs[key] = raw.strip().lower()
            elif key in ("epochs", "batch_size", "seed"):
                kwargs[key] = as_int(fname, raw)
            elif key in ("fraud_prevalence", "golden_fraction"):
                kwargs[key] = as_optional_float(fname, raw)
            elif key == "mask_empty_noisy":
                kwargs[key] = as_bool(fname, raw)
            else:
                kwargs[key] = as_float(fname, raw)
        if seed is not None:
            kwargs["seed"] = seed
        kwargs["finetune"] = FinetuneConfig.from_settings(settings)
        return cls(**kwargs).validate()

    def to_settings(self) -> Dict[str, str]:
        def opt(v):
            return "none" if v is None else repr(v)

        out = {
            "strategy.variant": self.variant.value,
            "strategy.hidden_dims": ",".join(str(h) for h in self.hidden_dims),
            "strategy.hidden_activation": self.hidden_activation,
            "strategy.alpha": repr(self.alpha),
            "strategy.learning_rate": repr(self.learning_rate),
            "strategy.epochs": str(self.epochs),
            "strategy.batch_size": str(self.batch_size),
            "strategy.fraud_prevalence": opt(self.fraud_prevalence),
            "strategy.golden_fraction": opt(self.golden_fraction),
            "strategy.mask_empty_noisy": str(self.mask_empty_noisy).lower(),
            "strategy.seed": str(self.seed),
        }
        out.update(self.finetune.to_settings())
        return out

    def to_text(self) -> str:
        return "".join(f"{key} = {value}\n" for key, value in self.to_settings().items())

    def with_finetune(self, **changes) -> "StrategyConfig":
        return replace(self, finetune=replace(self.finetune, **changes))


# ----------------------------------------------------------
# 2. TRACES
# ----------------------------------------------------------


class EpochLoss(NamedTuple):
    epoch: int
    split: str
    total_loss: float
    decision_loss: float
    explain_loss: float


@dataclass
class TrainingTrace:
    stage: str
    model: ConceptBottleneckModel
    rows: List[EpochLoss] = field(default_factory=list)
    wall_time: float = 0.0
    # set when the model was picked by validation mAP
    selected_epoch: Optional[int] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row._asdict() for row in self.rows], columns=TRACE_COLUMNS)

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    def final_loss(self, split: str = "train") -> Optional[EpochLoss]:
        rows = [r for r in self.rows if r.split == split]
        return rows[-1] if rows else None


# ----------------------------------------------------------
# 3. TRAINING LOOP
# ----------------------------------------------------------


def _epoch_rows(model, epoch: int, alpha: float, splits: Dict[str, TrainingArrays], stage: str) -> List[EpochLoss]:
    rows = []
    for name, arrays in splits.items():
        if len(arrays) == 0:
            continue
        try:
            losses = meta_loss(predict(model, arrays.X), arrays.y_d, arrays.y_e, arrays.concept_mask, alpha)
        except NonFiniteError as e:
            raise TrainingDivergedError(stage, epoch, str(e)) from e
        if not np.isfinite(losses.total):
            raise TrainingDivergedError(stage, epoch, f"{name} loss is {losses.total}")
        rows.append(EpochLoss(epoch, name, float(losses.total), float(losses.decision), float(losses.explain)))
    return rows


def _fit(
    model: ConceptBottleneckModel,
    arrays: TrainingArrays,
    plan: BatchPlan,
    *,
    alpha: float,
    learning_rate: float,
    epochs: int,
    stage: str,
    freeze_trunk: bool = False,
    validation: Optional[TrainingArrays] = None,
    select_on: Optional[TrainingArrays] = None,
) -> TrainingTrace:
    """
    Mini-batch SGD for `epochs` epochs.

    With `select_on` (golden concept labels) the returned model is the epoch,
    0 included, with the highest concept mAP on it; ties keep the earlier one.
    """
    splits = {"train": arrays}
    if validation is not None:
        splits["validation"] = validation
    started = time.perf_counter()
    rows = _epoch_rows(model, 0, alpha, splits, stage)
    best = None if select_on is None else (_concept_map(model, select_on), 0, model)

    for epoch in tqdm(range(1, epochs + 1), desc=stage, disable=not SHOW_PROGRESS):
        for idx in make_batches(arrays, plan, epoch):
            batch = arrays.take(idx)
            try:
                model, _ = train_step(
                    model, batch.X, batch.y_d, batch.y_e, batch.concept_mask,
                    alpha=alpha, learning_rate=learning_rate, freeze_trunk=freeze_trunk,
                )
            except NonFiniteError as e:
                raise TrainingDivergedError(stage, epoch, str(e)) from e
        rows.extend(_epoch_rows(model, epoch, alpha, splits, stage))
        logger.debug("%s epoch %d: train loss %.5f", stage, epoch, rows[-len(splits)].total_loss)
        if best is not None:
            score = _concept_map(model, select_on)
            if score > best[0]:
                best = (score, epoch, model)

    if best is not None:
        logger.info("%s: keeping epoch %d (validation mAP %.4f)", stage, best[1], best[0])
        trace = TrainingTrace(stage, best[2], rows, time.perf_counter() - started, selected_epoch=best[1])
    else:
        trace = TrainingTrace(stage, model, rows, time.perf_counter() - started)
    last = trace.final_loss("train")
    logger.info(
        "%s: %d epochs, final train loss %.5f (%.1fs)",
        stage, epochs, last.total_loss if last else float("nan"), trace.wall_time,
    )
    return trace


def _concept_map(model: ConceptBottleneckModel, arrays: TrainingArrays) -> float:
    rows = arrays.concept_mask
    score, _, _ = mean_average_precision(predict(model, arrays.X[rows]).concepts, arrays.y_e[rows])
    return score


def _validation_arrays(model, validation: Optional[Sequence[TransactionRecord]]) -> Optional[TrainingArrays]:
    if not validation:
        return None
    return records_to_arrays(validation, model.k, "golden", model.class_count)


# ----------------------------------------------------------
# 4. STRATEGIES
# ----------------------------------------------------------


def train_supervised(
    model: ConceptBottleneckModel,
    golden: Sequence[TransactionRecord],
    cfg: StrategyConfig,
    validation: Optional[Sequence[TransactionRecord]] = None,
) -> TrainingTrace:
    """Baseline: golden decision and concept labels only."""
    missing = [r.id for r in golden if not r.is_golden]
    if missing:
        raise ValueError(f"supervised training needs golden concept labels; {len(missing)} records lack them (e.g. {missing[0]})")
    arrays = records_to_arrays(golden, model.k, "golden", model.class_count)
    plan = BatchPlan(cfg.batch_size, cfg.fraud_prevalence, None, cfg.seed)
    return _fit(
        model, arrays, plan,
        alpha=cfg.alpha, learning_rate=cfg.learning_rate, epochs=cfg.epochs,
        stage="supervised", validation=_validation_arrays(model, validation),
    )


def pretrain(
    model: ConceptBottleneckModel,
    noisy: Sequence[TransactionRecord],
    cfg: StrategyConfig,
    validation: Optional[Sequence[TransactionRecord]] = None,
) -> TrainingTrace:
    """First stage of two-stage learning: noisy concept targets, golden decisions."""
    missing = [r.id for r in noisy if r.noisy_concepts is None]
    if missing:
        raise ValueError(f"pre-training needs noisy concept labels; {len(missing)} records lack them (e.g. {missing[0]})")
    arrays = records_to_arrays(noisy, model.k, "noisy", model.class_count, cfg.mask_empty_noisy)
    plan = BatchPlan(cfg.batch_size, cfg.fraud_prevalence, None, cfg.seed)
    return _fit(
        model, arrays, plan,
        alpha=cfg.alpha, learning_rate=cfg.learning_rate, epochs=cfg.epochs,
        stage="pretrain", validation=_validation_arrays(model, validation),
    )


def fine_tune(
    base: ConceptBottleneckModel,
    golden: Sequence[TransactionRecord],
    cfg: StrategyConfig,
    noisy: Optional[Sequence[TransactionRecord]] = None,
    validation: Optional[Sequence[TransactionRecord]] = None,
) -> TrainingTrace:
    """
    Second stage: continue from `base` on golden labels.

    cfg.finetune picks the epochs, batch size, learning rate, whether the
    trunk is frozen, and the batch mode. Hybrid mode mixes `noisy` rows into
    every batch at cfg.finetune.golden_fraction. Heads are not re-initialized.
    With cfg.finetune.select_best and golden `validation` records, the
    returned model is the epoch with the best validation concept mAP, which
    is the base model itself when no epoch improves on it.
    """
    ft = cfg.finetune
    if ft.batch_mode is FinetuneBatchMode.HYBRID:
        if noisy is None:
            raise ValueError("hybrid fine-tuning needs noisy records")
        records = list(golden) + list(noisy)
        source = "auto"
    else:
        records = list(golden)
        source = "golden"
    arrays = records_to_arrays(records, base.k, source, base.class_count, cfg.mask_empty_noisy)
    val_arrays = _validation_arrays(base, validation)
    select_on = None
    if ft.select_best and val_arrays is not None:
        if val_arrays.y_e[val_arrays.concept_mask].any():
            select_on = val_arrays
        else:
            logger.warning("Validation records have no positive concept; keeping the last fine-tuning epoch")
    # separate shuffle stream from the pre-training stage
    plan = ft.batch_plan(shuffle_seed=cfg.seed + 1)
    return _fit(
        base, arrays, plan,
        alpha=cfg.alpha, learning_rate=ft.learning_rate, epochs=ft.epochs,
        stage="finetune", freeze_trunk=ft.freeze_trunk,
        validation=val_arrays,
        select_on=select_on,
    )


def train_hybrid(
    model: ConceptBottleneckModel,
    golden: Sequence[TransactionRecord],
    noisy: Sequence[TransactionRecord],
    cfg: StrategyConfig,
    validation: Optional[Sequence[TransactionRecord]] = None,
) -> TrainingTrace:
    """From-scratch training on batches with cfg.golden_fraction golden rows."""
    if cfg.golden_fraction is None:
        raise ValueError("hybrid training needs golden_fraction")
    # golden rows first so golden_fraction=1 indexes exactly like train_supervised
    arrays = records_to_arrays(
        list(golden) + list(noisy), model.k, "auto", model.class_count, cfg.mask_empty_noisy
    )
    plan = BatchPlan(cfg.batch_size, cfg.fraud_prevalence, cfg.golden_fraction, cfg.seed)
    return _fit(
        model, arrays, plan,
        alpha=cfg.alpha, learning_rate=cfg.learning_rate, epochs=cfg.epochs,
        stage="hybrid", validation=_validation_arrays(model, validation),
    )
