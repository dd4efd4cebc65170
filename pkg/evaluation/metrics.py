"""
Decision and explanation metrics used for model selection.

- threshold_at_fpr / recall_at_fpr: fraud recall at a fixed false-positive
  rate, threshold picked on validation and applied to test
- average_precision / mean_average_precision: per-concept AP, macro mAP
  over concepts with at least one positive
- pareto_front: non-dominated (recall, mAP) points

A transaction is flagged iff score >= threshold. AP breaks score ties by
input order.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from network.bottleneck import ConceptBottleneckModel, predict
from pipeline.data_loader import TransactionRecord, records_to_arrays
from weak_labels.annotator import mean_jaccard

DEFAULT_FPR_TARGET = 0.05

REPORT_COLUMNS = [
    "model_id", "seed", "strategy", "alpha", "lr", "layers",
    "recall_at_fpr", "realized_fpr", "threshold", "map", "excluded_concepts", "pareto",
    "concept_jaccard",
]


class NoNegativesError(ValueError):
    pass


class NoPositivesError(ValueError):
    pass


class NoPositiveConceptsError(ValueError):
    pass


def _scores_and_labels(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return scores, labels.astype(bool)


# ----------------------------------------------------------
# 1. DECISION TASK
# ----------------------------------------------------------


def threshold_at_fpr(scores, labels, fpr_target: float = DEFAULT_FPR_TARGET) -> float:
    """
    Smallest threshold whose FPR on (scores, labels) is <= fpr_target.

    Candidates are the distinct scores plus +inf, so the result maximizes
    recall under the FPR constraint.
    """
    scores, labels = _scores_and_labels(scores, labels)
    negatives = np.sort(scores[~labels])
    if negatives.size == 0:
        raise NoNegativesError("threshold selection needs at least one negative example")
    candidates = np.append(np.unique(scores), np.inf)
    flagged_neg = negatives.size - np.searchsorted(negatives, candidates, side="left")
    ok = flagged_neg / negatives.size <= fpr_target
    # FPR is non-increasing in the threshold and +inf always qualifies
    return float(candidates[np.argmax(ok)])


def recall_at_fpr(scores, labels, threshold: float) -> Tuple[float, float]:
    """(recall, realized FPR) at `threshold`; FPR is nan when there are no negatives."""
    scores, labels = _scores_and_labels(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositivesError("recall needs at least one positive example")
    flagged = scores >= threshold
    recall = np.count_nonzero(flagged & labels) / n_pos
    n_neg = labels.size - n_pos
    fpr = np.count_nonzero(flagged & ~labels) / n_neg if n_neg else float("nan")
    return float(recall), float(fpr)


# ----------------------------------------------------------
# 2. EXPLANATION TASK
# ----------------------------------------------------------


def average_precision(scores, labels) -> Optional[float]:
    """Mean precision at the rank of each positive; None when there are no positives."""
    scores, labels = _scores_and_labels(scores, labels)
    if not labels.any():
        return None
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    hits = np.cumsum(ranked)
    ranks = np.flatnonzero(ranked) + 1
    return float(np.mean(hits[ranks - 1] / ranks))


def mean_average_precision(scores, labels) -> Tuple[float, List[Optional[float]], int]:
    """
    Macro mAP over the k concept columns.

    Returns (mAP, per-concept AP with None for excluded concepts, number excluded).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise ValueError(f"score matrix {scores.shape} and label matrix {labels.shape} must match (n x k)")
    per_concept = [average_precision(scores[:, c], labels[:, c]) for c in range(scores.shape[1])]
    included = [ap for ap in per_concept if ap is not None]
    if not included:
        raise NoPositiveConceptsError("no concept has a positive example; mAP is undefined")
    return float(np.mean(included)), per_concept, len(per_concept) - len(included)


# ----------------------------------------------------------
# 3. MODEL SELECTION
# ----------------------------------------------------------


def pareto_front(points: Sequence[Tuple[float, float]]) -> List[bool]:
    """
    Front membership under weak dominance, maximizing both coordinates.

    Identical points never dominate each other, so duplicates of a front
    point are all on the front.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("pareto_front needs at least one point")
    # [i, j]: does j dominate i
    ge = (pts[None, :, :] >= pts[:, None, :]).all(axis=2)
    gt = (pts[None, :, :] > pts[:, None, :]).any(axis=2)
    dominated = (ge & gt).any(axis=1)
    return [not d for d in dominated]


@dataclass
class EvalReport:
    recall_at_fpr: float
    realized_fpr: float
    fpr_target: float
    threshold: float
    per_concept_ap: List[Optional[float]]
    map: float
    concepts_excluded: int
    concept_jaccard: float = float("nan")
    pareto_member: bool = False

    def to_row(self, model_id: str, seed: int, strategy: str, alpha: float, lr: float, layers: Sequence[int]) -> Dict:
        return {
            "model_id": model_id,
            "seed": seed,
            "strategy": strategy,
            "alpha": alpha,
            "lr": lr,
            "layers": "-".join(str(h) for h in layers),
            "recall_at_fpr": self.recall_at_fpr,
            "realized_fpr": self.realized_fpr,
            "threshold": self.threshold,
            "map": self.map,
            "excluded_concepts": self.concepts_excluded,
            "pareto": self.pareto_member,
            "concept_jaccard": self.concept_jaccard,
        }

    def to_dict(self) -> Dict:
        out = asdict(self)
        # JSON has no inf
        if math.isinf(self.threshold):
            out["threshold"] = "inf" if self.threshold > 0 else "-inf"
        return out


def evaluate_model(
    model: ConceptBottleneckModel,
    validation: Sequence[TransactionRecord],
    test: Sequence[TransactionRecord],
    fpr_target: float = DEFAULT_FPR_TARGET,
) -> EvalReport:
    """Threshold on validation fraud scores; recall, mAP and concept Jaccard on test."""
    if not validation or not test:
        raise ValueError("evaluation needs nonempty validation and test records")
    val_scores = predict(model, np.stack([r.features for r in validation])).fraud_scores()
    threshold = threshold_at_fpr(val_scores, [r.y_d for r in validation], fpr_target)

    arrays = records_to_arrays(test, model.k, "golden", model.class_count)
    pred = predict(model, arrays.X)
    recall, realized = recall_at_fpr(pred.fraud_scores(), arrays.is_fraud.astype(int), threshold)

    labeled = arrays.concept_mask
    if not labeled.any():
        raise NoPositiveConceptsError("no test record carries golden concept labels")
    mAP, per_concept, excluded = mean_average_precision(pred.concepts[labeled], arrays.y_e[labeled])
    jac = mean_jaccard(pred.concepts[labeled] >= 0.5, arrays.y_e[labeled])
    return EvalReport(recall, realized, fpr_target, threshold, per_concept, mAP, excluded, jac)
