"""
Synthetic fraud-transaction datasets with planted concepts.

Generative process (fully determined by the seed):
1. features x ~ N(0, I_d)
2. golden concepts ~ Bernoulli(sigmoid(W_c x + b_c)), W_c sparse and planted
3. fraud iff w_f . y_E_golden + noise > tau, tau set per split by quantile
   so the realized prevalence hits the split's target
4. expert rules: k single-concept anchor rules plus multi-concept rules; a
   rule detects when all its concepts are present and misses at its own
   miss rate. Otherwise it false-fires at its own rate, more often on
   transactions that look like its trigger pattern (a random feature
   direction per rule). Per-rule rates spread around `miss_rate` and
   `false_fire_rate`, which are tuned so the mean Jaccard(noisy, golden)
   lands near `noise_target_jaccard`
5. a golden subset is carved from the training period at a fixed fraud
   fraction; all validation / test records are golden evaluation sets

Writes to data/synthetic/ by default:
    python synthetic/generate_transactions.py
"""

import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

# ----------------------------------------------------------
# 0. PATCH PYTHON PATH TO PROJECT ROOT
# ----------------------------------------------------------

CURRENT_DIR = Path(__file__).resolve().parent      # .../synthetic
PROJECT_ROOT = CURRENT_DIR.parent

if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score

from config import (
    TAXONOMY_PATH,
    ConfigError,
    as_float,
    as_int,
    as_optional_float,
    section,
)
from pipeline.data_loader import (
    GOLDEN,
    SPLITS,
    SyntheticDataset,
    TransactionRecord,
)
from training.batching import round_half_up
from weak_labels.annotator import annotate_dataset, row_jaccard
from weak_labels.rule_map import ConceptTaxonomy, build_rule_map, load_taxonomy

logger = logging.getLogger(__name__)

# names beyond the kb taxonomy are numbered
DEFAULT_CONCEPTS = load_taxonomy(TAXONOMY_PATH).names

PREVALENCE_TOLERANCE = 0.20  # relative
JACCARD_TOLERANCE = 0.05     # absolute
LEARNABILITY_FLOOR = 0.9     # held-out AUC of a classifier on golden concepts

# noise level nu in [0, 1] maps to these rates
MAX_MISS_RATE = 0.9
MAX_FALSE_FIRE_RATE = 0.08

CONCEPT_SIGNAL = 3.0  # norm of each planted concept weight row
RATE_SPREAD = 0.5      # per-rule rates lie in [1 - spread, 1 + spread] x the mean rate
LOOKALIKE_SIGNAL = 2.0  # slope of the false-fire propensity along a rule's trigger pattern


class CalibrationError(RuntimeError):
    def __init__(self, what: str, target: float, realized: float):
        super().__init__(f"cannot calibrate {what}: target {target:.4f}, realized {realized:.4f}")
        self.what = what
        self.target = target
        self.realized = realized


GEN_KEYS = [
    "n_train", "n_validation", "n_test", "feature_dim", "k", "rule_count",
    "train_prevalence", "validation_prevalence", "test_prevalence",
    "golden_subset_size", "golden_fraud_fraction", "golden_train_size",
    "noise_target_jaccard", "miss_rate", "false_fire_rate", "label_noise", "seed",
]


@dataclass
class GenConfig:
    n_train: int = 50_000
    n_validation: int = 2_000
    n_test: int = 2_000
    feature_dim: int = 20
    k: int = 14
    rule_count: int = 40
    train_prevalence: float = 0.02
    validation_prevalence: float = 0.04
    test_prevalence: float = 0.04
    golden_subset_size: int = 1300
    golden_fraud_fraction: float = 0.37
    golden_train_size: int = 842
    noise_target_jaccard: float = 0.4
    # explicit rule noise; when both are set the Jaccard tuning is skipped
    miss_rate: Optional[float] = None
    false_fire_rate: Optional[float] = None
    label_noise: float = 0.35
    seed: int = 0
    concept_names: List[str] = field(default_factory=list)

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_validation + self.n_test

    @property
    def target_prevalence(self) -> Dict[str, float]:
        return {
            "train": self.train_prevalence,
            "validation": self.validation_prevalence,
            "test": self.test_prevalence,
        }

    @property
    def split_sizes(self) -> Dict[str, int]:
        return {"train": self.n_train, "validation": self.n_validation, "test": self.n_test}

    def names(self) -> List[str]:
        if self.concept_names:
            return list(self.concept_names)
        if self.k <= len(DEFAULT_CONCEPTS):
            return list(DEFAULT_CONCEPTS[: self.k])
        return list(DEFAULT_CONCEPTS) + [f"Concept {i}" for i in range(len(DEFAULT_CONCEPTS), self.k)]

    def validate(self) -> "GenConfig":
        if self.n_train < 1 or self.n_validation < 0 or self.n_test < 0:
            raise ConfigError("gen.n_train", "split sizes must be >= 0 (train >= 1)")
        if self.feature_dim < 1:
            raise ConfigError("gen.feature_dim", "must be >= 1")
        if self.k < 1:
            raise ConfigError("gen.k", "must be >= 1")
        if self.concept_names and len(self.concept_names) != self.k:
            raise ConfigError("gen.k", f"{len(self.concept_names)} concept names for k={self.k}")
        if self.rule_count < self.k:
            raise ConfigError("gen.rule_count", f"needs at least one anchor rule per concept (>= {self.k})")
        for split, prev in self.target_prevalence.items():
            if not 0.0 < prev < 1.0:
                raise ConfigError(f"gen.{split}_prevalence", f"must be in (0, 1), got {prev}")
        if not 0.0 <= self.golden_fraud_fraction <= 1.0:
            raise ConfigError("gen.golden_fraud_fraction", "must be in [0, 1]")
        if not 0 <= self.golden_subset_size <= self.n_train:
            raise ConfigError("gen.golden_subset_size", f"must be in [0, n_train={self.n_train}]")
        if not 0 <= self.golden_train_size <= self.golden_subset_size:
            raise ConfigError("gen.golden_train_size", "must be in [0, golden_subset_size]")
        if not 0.0 < self.noise_target_jaccard <= 1.0:
            raise ConfigError("gen.noise_target_jaccard", "must be in (0, 1]")
        for name in ("miss_rate", "false_fire_rate"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ConfigError(f"gen.{name}", "must be in [0, 1]")
        if (self.miss_rate is None) != (self.false_fire_rate is None):
            raise ConfigError("gen.miss_rate", "set both miss_rate and false_fire_rate, or neither")
        if self.label_noise < 0:
            raise ConfigError("gen.label_noise", "must be >= 0")
        return self

    @classmethod
    def from_settings(cls, settings: Dict[str, str], seed: Optional[int] = None) -> "GenConfig":
        values = section(settings, "gen", GEN_KEYS)
        kwargs = {}
        for key, raw in values.items():
            fname = f"gen.{key}"
            if key in ("miss_rate", "false_fire_rate"):
                kwargs[key] = as_optional_float(fname, raw)
            elif isinstance(getattr(cls, key), float):
                kwargs[key] = as_float(fname, raw)
            else:
                kwargs[key] = as_int(fname, raw)
        if seed is not None:
            kwargs["seed"] = seed
        return cls(**kwargs).validate()

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["concept_names"] = self.names()
        return out


@dataclass
class DatasetReport:
    split_sizes: Dict[str, int]
    prevalence: Dict[str, Optional[float]]  # None marks an empty split
    golden_size: int
    golden_fraud_fraction: Optional[float]
    mean_jaccard: Optional[float]
    median_jaccard: Optional[float]
    concept_rates_golden: Dict[str, float]
    concept_rates_noisy: Dict[str, float]
    rule_fire_rates: Dict[str, float]

    def to_dict(self) -> Dict:
        return asdict(self)


# ----------------------------------------------------------
# Generation steps
# ----------------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _plant_concepts(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n, d = X.shape
    active = max(2, d // 5)
    W = np.zeros((k, d))
    for c in range(k):
        cols = rng.choice(d, size=min(active, d), replace=False)
        w = rng.normal(size=cols.shape[0])
        W[c, cols] = CONCEPT_SIGNAL * w / np.linalg.norm(w)
    base_rates = rng.uniform(0.05, 0.20, size=k)
    logits = X @ W.T
    bias = np.array([-np.quantile(logits[:, c], 1.0 - base_rates[c]) for c in range(k)])
    probs = _sigmoid(logits + bias)
    return (rng.random((n, k)) < probs).astype(np.int8)


def _fraud_weights(k: int, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(k)
    strong = order[: max(1, (k + 1) // 2)]
    w = rng.uniform(0.0, 0.3, size=k)
    w[strong] = rng.uniform(1.0, 3.0, size=strong.shape[0])
    return w


def _calibrate_labels(score: np.ndarray, split_of: np.ndarray, cfg: GenConfig):
    y_d = np.zeros(score.shape[0], dtype=np.int64)
    thresholds = {}
    for split, target in cfg.target_prevalence.items():
        idx = np.flatnonzero(split_of == split)
        if idx.size == 0:
            continue
        tau = float(np.quantile(score[idx], 1.0 - target))
        y_d[idx] = score[idx] > tau
        realized = float(y_d[idx].mean())
        if abs(realized - target) > PREVALENCE_TOLERANCE * target:
            raise CalibrationError(f"{split} prevalence", target, realized)
        thresholds[split] = tau
    return y_d, thresholds


def _build_rules(taxonomy: ConceptTaxonomy, rule_count: int, rng: np.random.Generator):
    k = taxonomy.k
    concept_sets = [[c] for c in range(k)]
    for _ in range(rule_count - k):
        size = min(k, int(rng.integers(2, 4)))
        concept_sets.append(sorted(rng.choice(k, size=size, replace=False).tolist()))
    rules = []
    for r, cs in enumerate(concept_sets):
        names = [taxonomy.names[c] for c in cs]
        kind = "Anchor rule" if len(cs) == 1 else "Composite rule"
        rules.append((f"R{r:03d}", f"{kind} flagging {' + '.join(names).lower()}", names))
    membership = np.zeros((rule_count, k), dtype=np.int8)
    for r, cs in enumerate(concept_sets):
        membership[r, cs] = 1
    return build_rule_map(rules, taxonomy), membership


@dataclass
class RuleNoise:
    miss_scale: np.ndarray         # (rules,)
    false_fire_scale: np.ndarray   # (rules,)
    lookalike: np.ndarray          # (records, rules), mean 1 under x ~ N(0, I)


def draw_rule_noise(X: np.ndarray, rule_count: int, rng: np.random.Generator) -> RuleNoise:
    V = rng.standard_normal((rule_count, X.shape[1]))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    # 2 * sigmoid of a symmetric variable has mean exactly 1
    lookalike = 2.0 * _sigmoid(LOOKALIKE_SIGNAL * (X @ V.T))
    lo, hi = 1.0 - RATE_SPREAD, 1.0 + RATE_SPREAD
    return RuleNoise(rng.uniform(lo, hi, rule_count), rng.uniform(lo, hi, rule_count), lookalike)


def fire_rules(
    golden: np.ndarray,
    membership: np.ndarray,
    draws: np.ndarray,
    miss: float,
    false_fire: float,
    noise: RuleNoise,
) -> np.ndarray:
    """Rule firings (records x rules). Zero rates reproduce exact detection."""
    # a rule detects when every concept it maps to is present
    needed = membership.sum(axis=1)
    detect = (golden.astype(np.int64) @ membership.T.astype(np.int64)) == needed[None, :]
    miss_r = np.clip(miss * noise.miss_scale, 0.0, 1.0)
    false_fire_r = np.clip(false_fire * noise.false_fire_scale[None, :] * noise.lookalike, 0.0, 1.0)
    return np.where(detect, draws >= miss_r[None, :], draws < false_fire_r)


def _noisy_from_fires(fires: np.ndarray, membership: np.ndarray) -> np.ndarray:
    return ((fires.astype(np.int64) @ membership.astype(np.int64)) > 0).astype(np.int8)


def _tune_noise(golden, membership, draws, noise: RuleNoise, target: float):
    """Bisection on the noise level so mean Jaccard(noisy, golden) ~ target."""

    def mean_j(nu):
        fires = fire_rules(golden, membership, draws, nu * MAX_MISS_RATE, nu * MAX_FALSE_FIRE_RATE, noise)
        return float(row_jaccard(_noisy_from_fires(fires, membership), golden).mean())

    if mean_j(0.0) <= target:
        return 0.0, mean_j(0.0)
    lo, hi = 0.0, 1.0
    if mean_j(hi) > target:
        return hi, mean_j(hi)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if mean_j(mid) > target:
            lo = mid
        else:
            hi = mid
    nu = 0.5 * (lo + hi)
    return nu, mean_j(nu)


def _carve_golden(y_d: np.ndarray, train_idx: np.ndarray, size: int, fraud_fraction: float, rng):
    fraud_pool = train_idx[y_d[train_idx] == 1]
    legit_pool = train_idx[y_d[train_idx] == 0]
    n_fraud = round_half_up(size * fraud_fraction)
    n_legit = size - n_fraud
    if n_fraud > fraud_pool.size or n_legit > legit_pool.size:
        raise CalibrationError(
            "golden subset fraud fraction", fraud_fraction,
            fraud_pool.size / max(1, size),
        )
    fraud = rng.choice(fraud_pool, size=n_fraud, replace=False)
    legit = rng.choice(legit_pool, size=n_legit, replace=False)
    return np.sort(fraud), np.sort(legit)


def _learnability_auc(golden: np.ndarray, y_d: np.ndarray, split_of: np.ndarray) -> Optional[float]:
    train = split_of == "train"
    held_out = ~train
    if held_out.sum() == 0 or len(np.unique(y_d[held_out])) < 2 or len(np.unique(y_d[train])) < 2:
        return None
    clf = LogisticRegression(max_iter=1000)
    clf.fit(golden[train], y_d[train])
    return float(roc_auc_score(y_d[held_out], clf.predict_proba(golden[held_out])[:, 1]))


def generate(cfg: GenConfig) -> SyntheticDataset:
    cfg.validate()
    names = cfg.names()
    taxonomy = ConceptTaxonomy(tuple(names))
    n, d, k = cfg.n_total, cfg.feature_dim, cfg.k
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(6)]
    rng_x, rng_c, rng_d, rng_rules, rng_fire, rng_golden = streams

    split_of = np.array(["train"] * cfg.n_train + ["validation"] * cfg.n_validation + ["test"] * cfg.n_test)

    X = rng_x.standard_normal((n, d))
    golden = _plant_concepts(X, k, rng_c)

    w_f = _fraud_weights(k, rng_d)
    score = golden @ w_f + cfg.label_noise * rng_d.standard_normal(n)
    y_d, thresholds = _calibrate_labels(score, split_of, cfg)

    rule_map, membership = _build_rules(taxonomy, cfg.rule_count, rng_rules)
    noise = draw_rule_noise(X, cfg.rule_count, rng_rules)
    draws = rng_fire.random((n, cfg.rule_count))
    if cfg.miss_rate is not None:
        miss, false_fire = cfg.miss_rate, cfg.false_fire_rate
        nu = None
    else:
        nu, realized_j = _tune_noise(golden, membership, draws, noise, cfg.noise_target_jaccard)
        if abs(realized_j - cfg.noise_target_jaccard) > JACCARD_TOLERANCE:
            raise CalibrationError("noisy-vs-golden Jaccard", cfg.noise_target_jaccard, realized_j)
        miss, false_fire = nu * MAX_MISS_RATE, nu * MAX_FALSE_FIRE_RATE
    fires = fire_rules(golden, membership, draws, miss, false_fire, noise)

    train_idx = np.flatnonzero(split_of == "train")
    g_fraud, g_legit = _carve_golden(y_d, train_idx, cfg.golden_subset_size, cfg.golden_fraud_fraction, rng_golden)
    golden_rows = np.zeros(n, dtype=bool)
    golden_rows[g_fraud] = True
    golden_rows[g_legit] = True
    golden_rows[split_of != "train"] = True

    # stratified hold-out of the golden subset: not used for training
    gt_fraud = min(g_fraud.size, round_half_up(cfg.golden_train_size * cfg.golden_fraud_fraction))
    gt_legit = min(g_legit.size, cfg.golden_train_size - gt_fraud)
    holdout = np.sort(np.concatenate([
        rng_golden.permutation(g_fraud)[gt_fraud:],
        rng_golden.permutation(g_legit)[gt_legit:],
    ]))

    rule_ids = rule_map.rule_ids
    width = len(str(n))
    records = []
    for i in range(n):
        records.append(TransactionRecord(
            id=f"tx-{i:0{width}d}",
            split=str(split_of[i]),
            features=X[i],
            y_d=int(y_d[i]),
            triggered_rules=frozenset(rule_ids[r] for r in np.flatnonzero(fires[i])),
            golden_concepts=golden[i].copy() if golden_rows[i] else None,
        ))
    records, _ = annotate_dataset(records, rule_map, taxonomy)

    dataset = SyntheticDataset(records, rule_map, taxonomy)
    stats = report(dataset)
    learnability_auc = _learnability_auc(golden, y_d, split_of)
    if learnability_auc is not None and learnability_auc <= LEARNABILITY_FLOOR:
        logger.warning("Learnability AUC %.3f is below %.2f", learnability_auc, LEARNABILITY_FLOOR)
    dataset.provenance = {
        "config": cfg.to_dict(),
        "calibration": {
            "decision_thresholds": thresholds,
            "noise_level": nu,
            "miss_rate": float(miss),
            "false_fire_rate": float(false_fire),
            "learnability_auc": learnability_auc,
        },
        "golden_holdout_ids": [records[i].id for i in holdout],
        "stats": stats.to_dict(),
    }
    logger.info(
        "Generated %d records (train %d / val %d / test %d), mean Jaccard %.3f",
        n, cfg.n_train, cfg.n_validation, cfg.n_test, stats.mean_jaccard or float("nan"),
    )
    return dataset


def report(dataset: SyntheticDataset) -> DatasetReport:
    """Dataset statistics, recomputed from the records."""
    records = dataset.records
    taxonomy = dataset.taxonomy
    sizes, prevalence = {}, {}
    for split in SPLITS:
        labels = [r.y_d for r in records if r.split == split]
        sizes[split] = len(labels)
        prevalence[split] = float(np.mean(labels)) if labels else None

    both = [r for r in records if r.golden_concepts is not None and r.noisy_concepts is not None]
    if both:
        scores = row_jaccard(
            np.array([r.noisy_concepts for r in both]), np.array([r.golden_concepts for r in both])
        )
        mean_j, median_j = float(scores.mean()), float(np.median(scores))
    else:
        mean_j = median_j = None

    def rates(vectors) -> Dict[str, float]:
        if not vectors:
            return {name: 0.0 for name in taxonomy.names}
        m = np.array(vectors).mean(axis=0)
        return {name: float(m[i]) for i, name in enumerate(taxonomy.names)}

    golden_subset = [r for r in records if r.split == "train" and r.label_source == GOLDEN]
    fire_counts = {rid: 0 for rid in dataset.rule_map.rule_ids}
    for r in records:
        for rid in r.triggered_rules:
            if rid in fire_counts:
                fire_counts[rid] += 1
    total = max(1, len(records))
    return DatasetReport(
        split_sizes=sizes,
        prevalence=prevalence,
        golden_size=len(golden_subset),
        golden_fraud_fraction=float(np.mean([r.y_d for r in golden_subset])) if golden_subset else None,
        mean_jaccard=mean_j,
        median_jaccard=median_j,
        concept_rates_golden=rates([r.golden_concepts for r in records if r.golden_concepts is not None]),
        concept_rates_noisy=rates([r.noisy_concepts for r in records if r.noisy_concepts is not None]),
        rule_fire_rates={rid: c / total for rid, c in fire_counts.items()},
    )


if __name__ == "__main__":
    from config import DATA_DIR, setup_logging
    from pipeline.data_loader import save_dataset

    setup_logging()
    ds = generate(GenConfig())
    save_dataset(ds, DATA_DIR)
    print(f"Saved synthetic dataset to {DATA_DIR}")
