"""
Dataset records and dataset files.

- TransactionRecord / SyntheticDataset: in-memory dataset
- save_dataset / load_dataset: the on-disk layout
    <dir>/records.jsonl     one JSON object per record
    <dir>/taxonomy.txt      concept names, index order
    <dir>/rule_map.txt      rule-to-concept map
    <dir>/provenance.json   generator config + realized statistics
- records_to_arrays: numpy matrices for training / evaluation
"""

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# ----------------------------------------------------------
# 0. PATCH PYTHON PATH TO PROJECT ROOT
# ----------------------------------------------------------

CURRENT_DIR = Path(__file__).resolve().parent          # .../pipeline
PROJECT_ROOT = CURRENT_DIR.parent

if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

import numpy as np

from network.bottleneck import one_hot
from weak_labels.rule_map import (
    ConceptTaxonomy,
    RuleConceptMap,
    load_rule_map,
    load_taxonomy,
    write_rule_map,
    write_taxonomy,
)

SPLITS = ("train", "validation", "test")
GOLDEN, NOISY = "golden", "noisy"

RECORDS_FILE = "records.jsonl"
TAXONOMY_FILE = "taxonomy.txt"
RULE_MAP_FILE = "rule_map.txt"
PROVENANCE_FILE = "provenance.json"


@dataclass
class TransactionRecord:
    id: str
    split: str
    features: np.ndarray
    y_d: int
    triggered_rules: frozenset = field(default_factory=frozenset)
    golden_concepts: Optional[np.ndarray] = None
    noisy_concepts: Optional[np.ndarray] = None
    label_source: Optional[str] = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"record {self.id}: split must be one of {SPLITS}, got {self.split!r}")
        if self.y_d not in (0, 1):
            raise ValueError(f"record {self.id}: y_d must be 0 or 1, got {self.y_d!r}")
        self.triggered_rules = frozenset(self.triggered_rules)

    @property
    def is_golden(self) -> bool:
        return self.golden_concepts is not None

    @property
    def concepts(self) -> Optional[np.ndarray]:
        """The training target: golden when present, else noisy."""
        return self.golden_concepts if self.golden_concepts is not None else self.noisy_concepts


@dataclass
class SyntheticDataset:
    records: List[TransactionRecord]
    rule_map: RuleConceptMap
    taxonomy: ConceptTaxonomy
    provenance: Dict = field(default_factory=dict)

    def split(self, name: str) -> List[TransactionRecord]:
        return [r for r in self.records if r.split == name]

    def _holdout_ids(self) -> set:
        return set(self.provenance.get("golden_holdout_ids", []))

    def golden_train(self) -> List[TransactionRecord]:
        """Golden training pool: the golden subset minus its hold-out."""
        holdout = self._holdout_ids()
        return [r for r in self.records if r.split == "train" and r.label_source == GOLDEN and r.id not in holdout]

    def golden_holdout(self) -> List[TransactionRecord]:
        holdout = self._holdout_ids()
        return [r for r in self.records if r.id in holdout]

    def noisy_train(self) -> List[TransactionRecord]:
        return [r for r in self.records if r.split == "train" and r.label_source == NOISY]

    @property
    def feature_dim(self) -> int:
        return int(self.records[0].features.shape[0]) if self.records else 0


@dataclass
class TrainingArrays:
    X: np.ndarray             # n x d
    y_d: np.ndarray           # n x m one-hot
    y_e: np.ndarray           # n x k (zeros where unlabeled)
    concept_mask: np.ndarray  # n, rows with a concept vector
    is_fraud: np.ndarray      # n bool
    is_golden: np.ndarray     # n bool

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx: np.ndarray) -> "TrainingArrays":
        return TrainingArrays(
            self.X[idx], self.y_d[idx], self.y_e[idx], self.concept_mask[idx], self.is_fraud[idx], self.is_golden[idx]
        )


def records_to_arrays(
    records: Sequence[TransactionRecord],
    k: int,
    concept_source: str = "auto",
    class_count: int = 2,
    mask_empty_noisy: bool = False,
) -> TrainingArrays:
    """
    Stack records into matrices.

    concept_source: "golden", "noisy" or "auto" (golden when present, else noisy).
    mask_empty_noisy: drop all-zero noisy vectors from the explain loss.
    """
    if concept_source not in ("golden", "noisy", "auto"):
        raise ValueError(f"concept_source must be golden/noisy/auto, got {concept_source!r}")
    n = len(records)
    d = records[0].features.shape[0] if n else 0
    X = np.zeros((n, d))
    y_e = np.zeros((n, k))
    mask = np.zeros(n, dtype=bool)
    labels = np.zeros(n, dtype=np.int64)
    golden = np.zeros(n, dtype=bool)
    for i, rec in enumerate(records):
        X[i] = rec.features
        labels[i] = rec.y_d
        golden[i] = rec.is_golden
        if concept_source == "golden":
            vec, from_noisy = rec.golden_concepts, False
        elif concept_source == "noisy":
            vec, from_noisy = rec.noisy_concepts, True
        else:
            vec, from_noisy = rec.concepts, not rec.is_golden
        if vec is None:
            continue
        y_e[i] = vec
        mask[i] = not (mask_empty_noisy and from_noisy and not np.any(vec))
    return TrainingArrays(X, one_hot(labels, class_count), y_e, mask, labels == 1, golden)


# ----------------------------------------------------------
# Record <-> JSON line
# ----------------------------------------------------------


def record_to_json(rec: TransactionRecord, taxonomy: ConceptTaxonomy) -> str:
    obj = {
        "id": rec.id,
        "split": rec.split,
        "features": [float(v) for v in rec.features],
        "y_d": int(rec.y_d),
        "rules": sorted(rec.triggered_rules),
        "golden_concepts": None if rec.golden_concepts is None else taxonomy.names_of(rec.golden_concepts),
        "noisy_concepts": None if rec.noisy_concepts is None else taxonomy.names_of(rec.noisy_concepts),
        "label_source": rec.label_source,
    }
    return json.dumps(obj, ensure_ascii=False)


def record_from_json(line: str, taxonomy: ConceptTaxonomy, lineno: int = 0) -> TransactionRecord:
    try:
        obj = json.loads(line)
        golden = obj.get("golden_concepts")
        noisy = obj.get("noisy_concepts")
        return TransactionRecord(
            id=str(obj["id"]),
            split=obj["split"],
            features=np.asarray(obj["features"], dtype=np.float64),
            y_d=int(obj["y_d"]),
            triggered_rules=frozenset(obj.get("rules", [])),
            golden_concepts=None if golden is None else taxonomy.vector(golden),
            noisy_concepts=None if noisy is None else taxonomy.vector(noisy),
            label_source=obj.get("label_source"),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise ValueError(f"{RECORDS_FILE} line {lineno}: bad record ({e})") from e


def save_dataset(dataset: SyntheticDataset, out_dir: Path) -> Path:
    """Write the dataset directory. Byte-stable for identical datasets."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / RECORDS_FILE).open("w", encoding="utf-8") as f:
        for rec in dataset.records:
            f.write(record_to_json(rec, dataset.taxonomy) + "\n")
    write_taxonomy(dataset.taxonomy, out_dir / TAXONOMY_FILE)
    write_rule_map(dataset.rule_map, dataset.taxonomy, out_dir / RULE_MAP_FILE)
    with (out_dir / PROVENANCE_FILE).open("w", encoding="utf-8") as f:
        json.dump(dataset.provenance, f, indent=2, sort_keys=True)
        f.write("\n")
    return out_dir


def load_dataset(data_dir: Path) -> SyntheticDataset:
    data_dir = Path(data_dir)
    records_path = data_dir / RECORDS_FILE
    if not records_path.exists():
        raise FileNotFoundError(f"Dataset not found at {records_path}")
    taxonomy = load_taxonomy(data_dir / TAXONOMY_FILE)
    rule_map = load_rule_map(data_dir / RULE_MAP_FILE, taxonomy)
    records = []
    with records_path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if line.strip():
                records.append(record_from_json(line, taxonomy, lineno))
    provenance = {}
    if (data_dir / PROVENANCE_FILE).exists():
        provenance = json.loads((data_dir / PROVENANCE_FILE).read_text(encoding="utf-8"))
    return SyntheticDataset(records, rule_map, taxonomy, provenance)


if __name__ == "__main__":
    from config import DATA_DIR

    ds = load_dataset(DATA_DIR)
    print("Loaded", len(ds.records), "records from", DATA_DIR)
    for name in SPLITS:
        print(f"  {name}: {len(ds.split(name))}")
