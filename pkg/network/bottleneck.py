"""
Concept-bottleneck multi-task network.

    x -> trunk (hidden layers) -> explain head (k sigmoid concepts) -> decision head (m softmax classes)

The decision head consumes only the k concept probabilities, never trunk
features. Training minimises the meta-loss

    L = alpha * L_D(decision, y_D) + (1 - alpha) * L_E(concepts, y_E)
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from network.nn_core import (
    DenseLayer,
    DimensionMismatchError,
    ParamGradients,
    as_matrix,
    backward,
    categorical_ce,
    forward,
    init_layers,
    multilabel_bce,
    multilabel_bce_grad,
    sgd_step,
    softmax_ce_grad,
)

HIDDEN_ACTIVATIONS = ("relu", "sigmoid")


@dataclass
class ConceptBottleneckModel:
    trunk: List[DenseLayer]
    explain_head: DenseLayer
    decision_head: DenseLayer
    concept_names: List[str]

    def __post_init__(self):
        self.trunk = list(self.trunk)
        self.concept_names = list(self.concept_names)
        k = len(self.concept_names)
        if len(set(self.concept_names)) != k:
            raise ValueError("concept names must be unique")
        if self.explain_head.activation != "sigmoid":
            raise ValueError("explain head must use sigmoid activation")
        if self.decision_head.activation != "softmax":
            raise ValueError("decision head must use softmax activation")
        if self.explain_head.out_dim != k:
            raise DimensionMismatchError(f"explain head has {self.explain_head.out_dim} outputs for {k} concepts")
        if self.decision_head.in_dim != k:
            raise DimensionMismatchError(f"decision head reads {self.decision_head.in_dim} inputs, bottleneck has {k}")
        for idx, layer in enumerate(self.trunk):
            if layer.activation not in HIDDEN_ACTIVATIONS + ("identity",):
                raise ValueError(f"trunk layer {idx}: unsupported activation {layer.activation!r}")
            if idx and self.trunk[idx - 1].out_dim != layer.in_dim:
                raise DimensionMismatchError(f"trunk layer {idx} does not chain with layer {idx - 1}")
        if self.trunk and self.trunk[-1].out_dim != self.explain_head.in_dim:
            raise DimensionMismatchError("trunk output dim != explain head input dim")

    @classmethod
    def build(
        cls,
        input_dim: int,
        hidden_dims: Sequence[int],
        concept_names: Sequence[str],
        class_count: int = 2,
        hidden_activation: str = "relu",
        seed=0,
    ) -> "ConceptBottleneckModel":
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        k = len(concept_names)
        dims = [input_dim, *hidden_dims, k, class_count]
        acts = [hidden_activation] * len(hidden_dims) + ["sigmoid", "softmax"]
        layers = init_layers(dims, acts, seed)
        return cls(layers[:-2], layers[-2], layers[-1], list(concept_names))

    @property
    def body(self) -> List[DenseLayer]:
        """Trunk plus explain head: the layers whose output is the concept vector."""
        return self.trunk + [self.explain_head]

    @property
    def layers(self) -> List[DenseLayer]:
        return self.body + [self.decision_head]

    @property
    def input_dim(self) -> int:
        return self.body[0].in_dim

    @property
    def hidden_dims(self) -> List[int]:
        return [layer.out_dim for layer in self.trunk]

    @property
    def k(self) -> int:
        return len(self.concept_names)

    @property
    def class_count(self) -> int:
        return self.decision_head.out_dim

    def with_layers(self, trunk, explain_head, decision_head) -> "ConceptBottleneckModel":
        return ConceptBottleneckModel(trunk, explain_head, decision_head, self.concept_names)

    def copy(self) -> "ConceptBottleneckModel":
        return self.with_layers(
            [layer.copy() for layer in self.trunk], self.explain_head.copy(), self.decision_head.copy()
        )


@dataclass(frozen=True)
class MetaLossConfig:
    alpha: float = 0.5

    def __post_init__(self):
        check_alpha(self.alpha)


@dataclass
class Prediction:
    concepts: np.ndarray  # n x k, strictly inside (0, 1)
    decision: np.ndarray  # n x m, rows on the simplex

    def fraud_scores(self, fraud_class: int = 1) -> np.ndarray:
        return self.decision[:, fraud_class]


class LossParts(NamedTuple):
    total: float
    decision: float
    explain: float


@dataclass
class ModelGradients:
    body: ParamGradients  # trunk layers followed by the explain head
    decision_head: ParamGradients

    @property
    def trunk(self) -> ParamGradients:
        return ParamGradients(self.body.weights[:-1], self.body.biases[:-1])

    @property
    def explain_head(self) -> ParamGradients:
        return ParamGradients(self.body.weights[-1:], self.body.biases[-1:])


def check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")


def _check_input(model: ConceptBottleneckModel, X) -> np.ndarray:
    X = as_matrix(X, "X")
    if X.shape[1] != model.input_dim:
        raise DimensionMismatchError(f"X has {X.shape[1]} columns, model expects {model.input_dim}")
    return X


def predict(model: ConceptBottleneckModel, X) -> Prediction:
    X = _check_input(model, X)
    concepts = forward(model.body, X).output
    decision = forward([model.decision_head], concepts).output
    return Prediction(concepts, decision)


def meta_loss(pred: Prediction, y_d, y_e, concept_mask=None, alpha: float = 0.5) -> LossParts:
    check_alpha(alpha)
    decision_part = categorical_ce(pred.decision, y_d)
    explain_part = multilabel_bce(pred.concepts, y_e, concept_mask)
    total = alpha * decision_part + (1.0 - alpha) * explain_part
    return LossParts(total, decision_part, explain_part)


def compute_gradients(
    model: ConceptBottleneckModel,
    X,
    y_d,
    y_e,
    concept_mask=None,
    alpha: float = 0.5,
) -> Tuple[ModelGradients, LossParts]:
    """Exact meta-loss gradients for every parameter, plus the loss at the current parameters."""
    check_alpha(alpha)
    X = _check_input(model, X)
    y_d = np.asarray(y_d, dtype=np.float64)
    y_e = np.asarray(y_e, dtype=np.float64)
    if y_d.shape != (X.shape[0], model.class_count):
        raise DimensionMismatchError(f"y_D shape {y_d.shape} != ({X.shape[0]}, {model.class_count})")
    if y_e.shape != (X.shape[0], model.k):
        raise DimensionMismatchError(f"y_E shape {y_e.shape} != ({X.shape[0]}, {model.k})")

    body_cache = forward(model.body, X)
    concepts = body_cache.output
    head_cache = forward([model.decision_head], concepts)
    pred = Prediction(concepts, head_cache.output)
    losses = meta_loss(pred, y_d, y_e, concept_mask, alpha)

    # decision loss flows through the decision head into the concept layer
    head_grads, grad_concepts = backward(
        [model.decision_head],
        head_cache,
        alpha * softmax_ce_grad(pred.decision, y_d),
        through_output_activation=False,
    )
    grad_concepts = grad_concepts + (1.0 - alpha) * multilabel_bce_grad(concepts, y_e, concept_mask)
    body_grads, _ = backward(model.body, body_cache, grad_concepts)
    return ModelGradients(body_grads, head_grads), losses


def train_step(
    model: ConceptBottleneckModel,
    X,
    y_d,
    y_e,
    concept_mask=None,
    alpha: float = 0.5,
    learning_rate: float = 0.01,
    freeze_trunk: bool = False,
) -> Tuple[ConceptBottleneckModel, LossParts]:
    """One forward/backward/update. Returns the updated model and the pre-update loss."""
    if np.asarray(X).shape[0] == 0:
        raise ValueError("train_step needs a nonempty batch")
    grads, losses = compute_gradients(model, X, y_d, y_e, concept_mask, alpha)
    freeze = [freeze_trunk] * len(model.trunk) + [False]
    body = sgd_step(model.body, grads.body, learning_rate, freeze)
    (decision_head,) = sgd_step([model.decision_head], grads.decision_head, learning_rate)
    return model.with_layers(body[:-1], body[-1], decision_head), losses


def one_hot(labels, class_count: int = 2) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ValueError(f"labels must lie in [0, {class_count})")
    out = np.zeros((labels.shape[0], class_count))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out
