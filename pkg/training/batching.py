"""
Stratified mini-batches with fixed composition.

A BatchPlan may fix the fraud prevalence of every batch, the fraction of
golden-labeled rows in every batch, or both. Rows are grouped into strata
(source x class); each stratum is consumed as a stream of fresh
permutations, so no row repeats within a stratum before the stratum is used
up. An epoch is one pass over the stratum that lasts longest; smaller strata
(typically the golden pool) are cycled with reshuffling. Partial final
batches are dropped so every batch has the exact composition.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from pipeline.data_loader import TrainingArrays, TransactionRecord

# stratum key: (source, class); source is "pooled" when golden_fraction is unset,
# class is "any" when fraud_prevalence is unset
Stratum = Tuple[str, str]

_SOURCE_CODE = {"pooled": 0, "golden": 0, "noisy": 1}
_CLASS_CODE = {"any": 0, "fraud": 0, "legit": 1}


class StratumExhaustedError(ValueError):
    def __init__(self, stratum: Stratum, available: int, needed: int):
        super().__init__(
            f"stratum {stratum[0]}/{stratum[1]} has {available} rows, one batch needs {needed}"
        )
        self.stratum = stratum
        self.available = available
        self.needed = needed


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    fraud_prevalence: Optional[float] = None
    golden_fraction: Optional[float] = None
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.fraud_prevalence is not None and not 0.0 < self.fraud_prevalence < 1.0:
            raise ValueError(f"fraud_prevalence must be in (0, 1), got {self.fraud_prevalence}")
        if self.golden_fraction is not None and not 0.0 <= self.golden_fraction <= 1.0:
            raise ValueError(f"golden_fraction must be in [0, 1], got {self.golden_fraction}")

    def composition(self) -> Dict[Stratum, int]:
        """Rows per batch for each stratum, in canonical order (zero-count strata included)."""
        bs = self.batch_size
        if self.golden_fraction is None:
            sources = {"pooled": bs}
        else:
            n_golden = round_half_up(bs * self.golden_fraction)
            sources = {"golden": n_golden, "noisy": bs - n_golden}

        if self.fraud_prevalence is None:
            return {(src, "any"): n for src, n in sources.items()}

        n_fraud = round_half_up(bs * self.fraud_prevalence)
        if len(sources) == 1:
            return {("pooled", "fraud"): n_fraud, ("pooled", "legit"): bs - n_fraud}

        n_golden, n_noisy = sources["golden"], sources["noisy"]
        golden_fraud = round_half_up(n_golden * self.fraud_prevalence)
        noisy_fraud = n_fraud - golden_fraud
        if noisy_fraud < 0:
            golden_fraud, noisy_fraud = n_fraud, 0
        elif noisy_fraud > n_noisy:
            golden_fraud, noisy_fraud = n_fraud - n_noisy, n_noisy
        return {
            ("golden", "fraud"): golden_fraud,
            ("golden", "legit"): n_golden - golden_fraud,
            ("noisy", "fraud"): noisy_fraud,
            ("noisy", "legit"): n_noisy - noisy_fraud,
        }


def _flags(records) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(records, TrainingArrays):
        return records.is_fraud, records.is_golden
    is_fraud = np.array([r.y_d == 1 for r in records], dtype=bool)
    is_golden = np.array([r.is_golden for r in records], dtype=bool)
    return is_fraud, is_golden


def stratum_pools(records, plan: BatchPlan) -> Dict[Stratum, np.ndarray]:
    is_fraud, is_golden = _flags(records)
    pools = {}
    for (source, cls) in plan.composition():
        keep = np.ones(is_fraud.shape[0], dtype=bool)
        if source == "golden":
            keep &= is_golden
        elif source == "noisy":
            keep &= ~is_golden
        if cls == "fraud":
            keep &= is_fraud
        elif cls == "legit":
            keep &= ~is_fraud
        pools[(source, cls)] = np.flatnonzero(keep)
    return pools


def _stream(pool: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    parts, have = [], 0
    while have < length:
        perm = rng.permutation(pool)
        parts.append(perm)
        have += perm.shape[0]
    return np.concatenate(parts)[:length]


def make_batches(
    records: Union[Sequence[TransactionRecord], TrainingArrays],
    plan: BatchPlan,
    epoch: int = 0,
) -> List[np.ndarray]:
    """Index arrays (into `records`) for every batch of one epoch; deterministic in (plan, epoch)."""
    composition = plan.composition()
    pools = stratum_pools(records, plan)
    active = {key: n for key, n in composition.items() if n > 0}
    for key, needed in active.items():
        if pools[key].shape[0] < needed:
            raise StratumExhaustedError(key, int(pools[key].shape[0]), needed)

    n_batches = max(pools[key].shape[0] // needed for key, needed in active.items())
    streams = []
    for key, needed in active.items():
        rng = np.random.default_rng(
            [plan.shuffle_seed, epoch, _SOURCE_CODE[key[0]], _CLASS_CODE[key[1]]]
        )
        streams.append((needed, _stream(pools[key], n_batches * needed, rng)))

    batches = []
    for b in range(n_batches):
        batches.append(np.concatenate([s[b * n:(b + 1) * n] for n, s in streams]))
    return batches
