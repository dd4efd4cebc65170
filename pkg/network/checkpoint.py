"""
Text checkpoints for dense layer stacks and bottleneck models.

    CBX-CKPT v1
    concepts <name1> <name2> ...      (bottleneck checkpoints only; names percent-encoded)
    <layer count>
    dims <out> <in>
    act <activation>
    <out weight rows, space-separated, 17 significant digits>
    <bias row>
    ...

17 significant digits round-trip every float64 bit-exactly.
"""

from pathlib import Path
from typing import List, Optional, Sequence, Tuple
from urllib.parse import quote, unquote

import numpy as np

from network.bottleneck import ConceptBottleneckModel
from network.nn_core import ACTIVATIONS, DenseLayer

MAGIC = "CBX-CKPT v1"


class CheckpointError(ValueError):
    pass


def _fmt_row(values: np.ndarray) -> str:
    return " ".join(f"{float(v):.17g}" for v in values)


def dumps_layers(layers: Sequence[DenseLayer], concept_names: Optional[Sequence[str]] = None) -> str:
    lines = [MAGIC]
    if concept_names is not None:
        lines.append("concepts " + " ".join(quote(name, safe="") for name in concept_names))
    lines.append(str(len(layers)))
    for layer in layers:
        lines.append(f"dims {layer.out_dim} {layer.in_dim}")
        lines.append(f"act {layer.activation}")
        lines.extend(_fmt_row(row) for row in layer.weights)
        lines.append(_fmt_row(layer.bias))
    return "\n".join(lines) + "\n"


def _parse_row(line: str, width: int, lineno: int) -> List[float]:
    parts = line.split()
    if len(parts) != width:
        raise CheckpointError(f"line {lineno}: expected {width} values, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise CheckpointError(f"line {lineno}: non-numeric value") from None


def loads_layers(text: str) -> Tuple[List[DenseLayer], Optional[List[str]]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise CheckpointError(f"missing '{MAGIC}' header")
    pos = 1
    concept_names = None
    if pos < len(lines) and lines[pos].startswith("concepts"):
        concept_names = [unquote(tok) for tok in lines[pos].split()[1:]]
        pos += 1

    def take() -> Tuple[int, str]:
        nonlocal pos
        if pos >= len(lines):
            raise CheckpointError("unexpected end of checkpoint")
        pos += 1
        return pos, lines[pos - 1]

    lineno, line = take()
    try:
        count = int(line)
    except ValueError:
        raise CheckpointError(f"line {lineno}: expected layer count, got {line!r}") from None

    layers = []
    for idx in range(count):
        lineno, line = take()
        parts = line.split()
        if len(parts) != 3 or parts[0] != "dims":
            raise CheckpointError(f"line {lineno}: expected 'dims <out> <in>' for layer {idx}")
        try:
            out_dim, in_dim = int(parts[1]), int(parts[2])
        except ValueError:
            raise CheckpointError(f"line {lineno}: layer {idx} dims must be integers, got {line!r}") from None
        if out_dim < 1 or in_dim < 1:
            raise CheckpointError(f"line {lineno}: layer {idx} dims must be >= 1, got {line!r}")
        lineno, line = take()
        parts = line.split()
        if len(parts) != 2 or parts[0] != "act" or parts[1] not in ACTIVATIONS:
            raise CheckpointError(f"line {lineno}: expected 'act <name>' for layer {idx}")
        activation = parts[1]
        weights = [_parse_row(take()[1], in_dim, pos) for _ in range(out_dim)]
        bias = _parse_row(take()[1], out_dim, pos)
        layers.append(DenseLayer(np.array(weights).reshape(out_dim, in_dim), np.array(bias), activation))
    return layers, concept_names


def save_model(model: ConceptBottleneckModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_layers(model.layers, model.concept_names), encoding="utf-8")
    return path


def load_model(path: Path) -> ConceptBottleneckModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found at {path}")
    layers, concept_names = loads_layers(path.read_text(encoding="utf-8"))
    if concept_names is None:
        raise CheckpointError(f"{path} has no 'concepts' line; not a bottleneck checkpoint")
    if len(layers) < 2:
        raise CheckpointError(f"{path} has {len(layers)} layers; a bottleneck model needs at least 2")
    return ConceptBottleneckModel(layers[:-2], layers[-2], layers[-1], concept_names)
