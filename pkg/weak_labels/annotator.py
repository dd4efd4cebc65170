"""
Distant supervision: turn triggered expert rules into noisy concept labels.

annotate() takes the union of the concept sets of every triggered rule that
the rule map knows. Rules are positive evidence only, so nothing is ever
switched off. Unknown rule ids (retired rules in old logs) are skipped and
counted, or raise in strict mode.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import SHOW_PROGRESS
from pipeline.data_loader import GOLDEN, NOISY, TransactionRecord
from weak_labels.rule_map import ConceptTaxonomy, RuleConceptMap, UnknownRuleError

logger = logging.getLogger(__name__)


@dataclass
class AnnotationStats:
    records: int = 0
    golden_kept: int = 0
    noisy_assigned: int = 0
    unknown_rules: Counter = field(default_factory=Counter)

    @property
    def unknown_rule_count(self) -> int:
        return sum(self.unknown_rules.values())


def annotate(
    triggered_rules: Iterable[str],
    rule_map: RuleConceptMap,
    taxonomy: ConceptTaxonomy,
    strict: bool = False,
    unknown: Optional[Counter] = None,
) -> np.ndarray:
    """0/1 concept vector: union of the concepts mapped from the triggered rules."""
    vec = np.zeros(taxonomy.k, dtype=np.int8)
    for rule_id in triggered_rules:
        if rule_id not in rule_map:
            if strict:
                raise UnknownRuleError(f"triggered rule '{rule_id}' is not in the rule map")
            if unknown is not None:
                unknown[rule_id] += 1
            continue
        for concept in rule_map.concepts_for(rule_id):
            vec[taxonomy.index(concept)] = 1
    return vec


def annotate_dataset(
    records: Sequence[TransactionRecord],
    rule_map: RuleConceptMap,
    taxonomy: ConceptTaxonomy,
    strict: bool = False,
) -> Tuple[List[TransactionRecord], AnnotationStats]:
    """
    Bulk annotation. Every record gets a noisy vector computed from its
    triggered rules; golden concepts are never touched and keep the record's
    label_source at "golden".
    """
    stats = AnnotationStats()
    out = []
    for rec in tqdm(records, desc="Annotating", disable=not SHOW_PROGRESS):
        noisy = annotate(rec.triggered_rules, rule_map, taxonomy, strict, stats.unknown_rules)
        if rec.is_golden:
            stats.golden_kept += 1
            source = GOLDEN
        else:
            stats.noisy_assigned += 1
            source = NOISY
        out.append(replace(rec, noisy_concepts=noisy, label_source=source))
    stats.records = len(out)
    if stats.unknown_rules:
        logger.warning(
            "Skipped %d triggered rule ids not in the rule map (%d distinct)",
            stats.unknown_rule_count,
            len(stats.unknown_rules),
        )
    return out, stats


def jaccard(a, b) -> float:
    a = np.asarray(a).reshape(-1).astype(bool)
    b = np.asarray(b).reshape(-1).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"concept vectors differ in length: {a.shape[0]} vs {b.shape[0]}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def row_jaccard(A, B) -> np.ndarray:
    """Row-wise Jaccard of two n x k 0/1 matrices (empty vs empty counts as 1)."""
    A = np.asarray(A).astype(bool)
    B = np.asarray(B).astype(bool)
    if A.shape != B.shape:
        raise ValueError(f"concept matrices differ in shape: {A.shape} vs {B.shape}")
    inter = np.count_nonzero(A & B, axis=1)
    union = np.count_nonzero(A | B, axis=1)
    out = np.ones(A.shape[0])
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out


def mean_jaccard(A, B) -> float:
    scores = row_jaccard(A, B)
    return float(scores.mean()) if scores.size else float("nan")
