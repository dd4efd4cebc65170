"""
Minimal dense-network kernel on numpy float64 arrays.

- DenseLayer: weights (out_dim x in_dim), bias (out_dim), activation
- forward / backward: exact backprop over an ordered layer list
- softmax_rows, sigmoid_elementwise, multilabel_bce, categorical_ce
- sgd_step: plain mini-batch gradient descent with per-layer freezing
- init_layers: Glorot-uniform weights, zero biases

A "Matrix" is a 2-D float64 numpy array (rows x cols). Layers are treated as
values: sgd_step returns new DenseLayer objects and never mutates its input.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

ACTIVATIONS = ("identity", "relu", "sigmoid", "softmax")

# Probability clamp used by both losses.
EPS = 1e-12

# Largest float64 strictly below 1.0 and smallest positive normal.
_SIGMOID_HI = np.nextafter(1.0, 0.0)
_SIGMOID_LO = np.finfo(np.float64).tiny


class DimensionMismatchError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class StaleCacheError(RuntimeError):
    pass


class NotOneHotError(ValueError):
    pass


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and check every entry is finite."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2:
            raise DimensionMismatchError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionMismatchError(
                f"bias length {self.bias.shape[0]} != weights rows {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r} (expected one of {ACTIVATIONS})")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class ParamGradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, layers: Sequence[DenseLayer]) -> "ParamGradients":
        return cls(
            [np.zeros_like(layer.weights) for layer in layers],
            [np.zeros_like(layer.bias) for layer in layers],
        )

    def __len__(self) -> int:
        return len(self.weights)

    def matches(self, layers: Sequence[DenseLayer]) -> bool:
        return len(self.weights) == len(layers) and all(
            gw.shape == layer.weights.shape and gb.shape == layer.bias.shape
            for gw, gb, layer in zip(self.weights, self.biases, layers)
        )


class ActivationCache(list):
    """
    Per-layer activations from `forward` (last entry is the network output).
    Also remembers the input and the exact layer objects it was computed with,
    so `backward` can refuse a cache from another network or parameter state.
    """

    def __init__(self, inputs: np.ndarray, layers: Sequence[DenseLayer], activations: List[np.ndarray]):
        super().__init__(activations)
        self.inputs = inputs
        self.layers = tuple(layers)

    @property
    def output(self) -> np.ndarray:
        return self[-1]


# ----------------------------------------------------------
# Activations
# ----------------------------------------------------------


def softmax_rows(logits) -> np.ndarray:
    z = as_matrix(logits, "logits")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid_elementwise(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    check_finite(z, "sigmoid input")
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # saturated entries are pinned inside the open interval
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return sigmoid_elementwise(z)
    return softmax_rows(z)


def _activation_backward(a: np.ndarray, grad_a: np.ndarray, activation: str) -> np.ndarray:
    """Map dL/da to dL/dz for a layer whose output activation is `a`."""
    if activation == "identity":
        return grad_a
    if activation == "relu":
        return grad_a * (a > 0.0)
    if activation == "sigmoid":
        return grad_a * a * (1.0 - a)
    # softmax Jacobian-vector product, row-wise
    return a * (grad_a - np.sum(grad_a * a, axis=1, keepdims=True))


# ----------------------------------------------------------
# Forward / backward
# ----------------------------------------------------------


def forward(layers: Sequence[DenseLayer], inputs) -> ActivationCache:
    if not layers:
        raise DimensionMismatchError("forward needs at least one layer")
    x = as_matrix(inputs, "input")
    a = x
    activations = []
    for idx, layer in enumerate(layers):
        if layer.activation == "softmax" and idx != len(layers) - 1:
            raise ValueError(f"layer {idx}: softmax is only allowed on the final layer")
        if a.shape[1] != layer.in_dim:
            raise DimensionMismatchError(
                f"layer {idx}: expects {layer.in_dim} inputs, got {a.shape[1]}"
            )
        z = a @ layer.weights.T + layer.bias
        a = _activate(z, layer.activation)
        check_finite(a, f"layer {idx} activation")
        activations.append(a)
    return ActivationCache(x, layers, activations)


def backward(
    layers: Sequence[DenseLayer],
    cache: ActivationCache,
    grad_output,
    through_output_activation: bool = True,
) -> Tuple[ParamGradients, np.ndarray]:
    """
    Backpropagate dL/d(output) through `layers`.

    With `through_output_activation=False`, `grad_output` is taken as the
    gradient w.r.t. the final layer's pre-activation (used for the fused
    softmax + cross-entropy gradient `pred - target`).

    Returns the parameter gradients and dL/d(input).
    """
    if len(cache.layers) != len(layers) or any(c is not l for c, l in zip(cache.layers, layers)):
        raise StaleCacheError("activation cache was not produced by these layers")
    grad = as_matrix(grad_output, "output gradient")
    if grad.shape != cache.output.shape:
        raise DimensionMismatchError(
            f"output gradient shape {grad.shape} != output shape {cache.output.shape}"
        )

    grads = ParamGradients.zeros_like(layers)
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        a = cache[idx]
        if idx == len(layers) - 1 and not through_output_activation:
            dz = grad
        else:
            dz = _activation_backward(a, grad, layer.activation)
        a_prev = cache[idx - 1] if idx > 0 else cache.inputs
        grads.weights[idx] = dz.T @ a_prev
        grads.biases[idx] = dz.sum(axis=0)
        grad = dz @ layer.weights
    for gw, gb in zip(grads.weights, grads.biases):
        check_finite(gw, "weight gradient")
        check_finite(gb, "bias gradient")
    return grads, grad


# ----------------------------------------------------------
# Losses
# ----------------------------------------------------------


def _row_mask(mask, n: int) -> np.ndarray:
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape[0] != n:
        raise DimensionMismatchError(f"mask length {mask.shape[0]} != {n} rows")
    return mask


def multilabel_bce(pred, target, mask=None) -> float:
    """Mean over unmasked rows of the summed per-concept binary cross-entropy."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 2:
        raise DimensionMismatchError(f"pred shape {p.shape} != target shape {y.shape}")
    rows = _row_mask(mask, p.shape[0])
    n = int(rows.sum())
    if n == 0:
        return 0.0
    pc = np.clip(p[rows], EPS, 1.0 - EPS)
    yr = y[rows]
    per_row = -(yr * np.log(pc) + (1.0 - yr) * np.log(1.0 - pc)).sum(axis=1)
    return float(per_row.sum() / n)


def multilabel_bce_grad(pred, target, mask=None) -> np.ndarray:
    """dL/dpred of `multilabel_bce` (masked rows get zero)."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    rows = _row_mask(mask, p.shape[0])
    n = int(rows.sum())
    grad = np.zeros_like(p)
    if n == 0:
        return grad
    pc = np.clip(p[rows], EPS, 1.0 - EPS)
    yr = y[rows]
    grad[rows] = (-(yr / pc) + (1.0 - yr) / (1.0 - pc)) / n
    return grad


def check_one_hot(target: np.ndarray) -> None:
    is_binary = np.all((target == 0.0) | (target == 1.0), axis=1)
    sums_one = target.sum(axis=1) == 1.0
    bad = np.flatnonzero(~(is_binary & sums_one))
    if bad.size:
        raise NotOneHotError(f"target row {int(bad[0])} is not one-hot: {target[bad[0]].tolist()}")


def categorical_ce(pred, target) -> float:
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 2:
        raise DimensionMismatchError(f"pred shape {p.shape} != target shape {y.shape}")
    check_one_hot(y)
    picked = np.clip(np.sum(p * y, axis=1), EPS, 1.0)
    return float(-np.log(picked).mean())


def softmax_ce_grad(pred, target) -> np.ndarray:
    """Fused gradient of categorical_ce(softmax(z)) w.r.t. the logits z."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    return (p - y) / p.shape[0]


# ----------------------------------------------------------
# Optimisation / initialisation
# ----------------------------------------------------------


def sgd_step(
    layers: Sequence[DenseLayer],
    grads: ParamGradients,
    learning_rate: float,
    freeze: Optional[Sequence[bool]] = None,
) -> List[DenseLayer]:
    if learning_rate < 0:
        raise ValueError(f"learning_rate must be >= 0, got {learning_rate}")
    if not grads.matches(layers):
        raise DimensionMismatchError("gradient shapes do not mirror the layers")
    freeze = list(freeze) if freeze is not None else [False] * len(layers)
    if len(freeze) != len(layers):
        raise DimensionMismatchError(f"freeze has {len(freeze)} flags for {len(layers)} layers")

    updated = []
    for layer, gw, gb, frozen in zip(layers, grads.weights, grads.biases, freeze):
        if frozen:
            updated.append(layer)
            continue
        new = DenseLayer(layer.weights - learning_rate * gw, layer.bias - learning_rate * gb, layer.activation)
        check_finite(new.weights, "updated weights")
        check_finite(new.bias, "updated bias")
        updated.append(new)
    return updated


def init_layers(
    layer_dims: Sequence[int],
    activations: Sequence[str],
    rng_seed: Union[int, np.random.Generator] = 0,
) -> List[DenseLayer]:
    """
    Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    `layer_dims` lists input dim then every layer's output dim.
    """
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ValueError("layer_dims needs an input dim and at least one layer dim")
    if any(int(d) < 1 for d in dims):
        raise ValueError(f"all layer dims must be >= 1, got {dims}")
    if len(activations) != len(dims) - 1:
        raise ValueError(f"{len(activations)} activations for {len(dims) - 1} layers")

    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    layers = []
    for fan_in, fan_out, activation in zip(dims[:-1], dims[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(weights, np.zeros(fan_out), activation))
    return layers
