"""Feedforward ReLU networks: construction, evaluation, quantization, perturbation.

A network is an alternating stack of affine and ReLU layers that ends with an
affine layer.  Values are immutable after construction (arrays are marked
read-only) so networks can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np


class ParseError(ValueError):
    """A file or JSON document does not match the expected schema."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Affine:
    """Affine layer ``x -> weights @ x + bias``.

    ``weights`` has shape (out_dim, in_dim), row-major; ``bias`` has shape
    (out_dim,).
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = _as_readonly(self.weights)
        b = _as_readonly(self.bias)
        if w.ndim != 2:
            raise ValueError(f"affine weights must be 2-d, got shape {w.shape}")
        if b.ndim != 1:
            raise ValueError(f"affine bias must be 1-d, got shape {b.shape}")
        if w.shape[0] != b.shape[0]:
            raise ValueError(
                f"affine weights rows ({w.shape[0]}) != bias length ({b.shape[0]})"
            )
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("affine weights and bias must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Affine):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(
            self.bias, other.bias
        )


@dataclass(frozen=True)
class Relu:
    """Elementwise ReLU layer ``x -> max(x, 0)``."""


Layer = Union[Affine, Relu]


class ReluId(NamedTuple):
    """Identifies one ReLU unit: ``layer`` is the index among the network's
    ReLU layers (0 for the first ReLU layer), ``neuron`` the index within it.

    Tuple ordering (layer-major, then neuron) is the tie-breaking order used
    throughout the package.
    """

    layer: int
    neuron: int


@dataclass(frozen=True, eq=False)
class Network:
    """An alternating Affine/ReLU stack ending in an Affine layer."""

    layers: tuple
    name: str = ""

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        prev_dim = None
        for i, layer in enumerate(layers):
            if isinstance(layer, Affine):
                if prev_dim is not None and layer.in_dim != prev_dim:
                    raise ValueError(
                        f"layers[{i}]: affine expects input dim {layer.in_dim}, "
                        f"previous layer produces {prev_dim}"
                    )
                prev_dim = layer.out_dim
            elif isinstance(layer, Relu):
                if i == 0 or not isinstance(layers[i - 1], Affine):
                    raise ValueError(f"layers[{i}]: ReLU must follow an affine layer")
            else:
                raise ValueError(f"layers[{i}]: unknown layer type {type(layer)!r}")
        if not isinstance(layers[-1], Affine):
            raise ValueError("final layer must be affine")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.name == other.name
            and len(self.layers) == len(other.layers)
            and all(a == b for a, b in zip(self.layers, other.layers))
        )


def relu_layer_sizes(net: Network) -> list[int]:
    """Width of each ReLU layer, in network order."""
    return [
        net.layers[i - 1].out_dim
        for i, layer in enumerate(net.layers)
        if isinstance(layer, Relu)
    ]


def relu_ids(net: Network) -> list[ReluId]:
    """All ReLU units of the network, in tie-breaking order."""
    return [
        ReluId(layer, j)
        for layer, size in enumerate(relu_layer_sizes(net))
        for j in range(size)
    ]


def evaluate(net: Network, x) -> np.ndarray:
    """Exact forward evaluation N(x)."""
    v = np.asarray(x, dtype=float)
    if v.shape != (net.input_dim,):
        raise ValueError(f"input has shape {v.shape}, network expects ({net.input_dim},)")
    for layer in net.layers:
        if isinstance(layer, Affine):
            v = layer.weights @ v + layer.bias
        else:
            v = np.maximum(v, 0.0)
    return v


def same_architecture(a: Network, b: Network) -> bool:
    """True iff layer kinds and all dimensions match (weights may differ)."""
    if len(a.layers) != len(b.layers):
        return False
    for la, lb in zip(a.layers, b.layers):
        if type(la) is not type(lb):
            return False
        if isinstance(la, Affine) and la.weights.shape != lb.weights.shape:
            return False
    return True


def _round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _quantize_tensor(w: np.ndarray, bits: int) -> np.ndarray:
    """Symmetric per-tensor quantize/dequantize with zero-point 0.

    The scale is max|w| / (2^(bits-1) - 1); integer codes are rounded half
    away from zero and clamped to +-(2^(bits-1) - 1).  Dequantized values are
    evaluated as max|w| * (q / qmax), which is the exact value scale*q and
    additionally makes the map idempotent bit-for-bit (codes at the extremes
    dequantize to exactly +-max|w|).  An all-zero tensor has no scale and is
    returned unchanged.
    """
    m = float(np.max(np.abs(w)))
    if m == 0.0:
        return np.array(w, dtype=float)
    qmax = float(2 ** (bits - 1) - 1)
    q = np.clip(_round_half_away(w / m * qmax), -qmax, qmax)
    return m * (q / qmax)


def quantize(net: Network, bits: int) -> Network:
    """Return the network with every affine weight matrix and bias replaced
    by its symmetrically quantized-then-dequantized value."""
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    layers = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            layers.append(
                Affine(_quantize_tensor(layer.weights, bits), _quantize_tensor(layer.bias, bits))
            )
        else:
            layers.append(layer)
    return Network(tuple(layers), name=net.name)


@dataclass(frozen=True)
class QuantizeInt8:
    pass


@dataclass(frozen=True)
class QuantizeInt16:
    pass


@dataclass(frozen=True)
class UniformRandom:
    """Multiply every affine weight matrix entry by (1 + u), u ~ U[-fraction, fraction]."""

    fraction: float
    seed: int

    def __post_init__(self) -> None:
        if self.fraction < 0:
            raise ValueError(f"fraction must be >= 0, got {self.fraction}")


@dataclass(frozen=True, eq=False)
class LastLayer:
    """Add a fixed matrix to the final affine layer's weight matrix."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "matrix", _as_readonly(self.matrix))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LastLayer):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)


PerturbSpec = Union[QuantizeInt8, QuantizeInt16, UniformRandom, LastLayer]


def perturb(net: Network, spec: PerturbSpec) -> Network:
    """Apply a perturbation, producing a new network of the same architecture.

    Biases are never touched: quantization handles them inside
    :func:`quantize`, and the random and last-layer perturbations act on
    weight matrices only.
    """
    if isinstance(spec, QuantizeInt8):
        return quantize(net, 8)
    if isinstance(spec, QuantizeInt16):
        return quantize(net, 16)
    if isinstance(spec, UniformRandom):
        rng = np.random.default_rng(spec.seed)
        layers = []
        for layer in net.layers:
            if isinstance(layer, Affine):
                u = rng.uniform(-spec.fraction, spec.fraction, size=layer.weights.shape)
                layers.append(Affine(layer.weights * (1.0 + u), layer.bias))
            else:
                layers.append(layer)
        return Network(tuple(layers), name=net.name)
    if isinstance(spec, LastLayer):
        last = net.layers[-1]
        if spec.matrix.shape != last.weights.shape:
            raise ValueError(
                f"last-layer perturbation has shape {spec.matrix.shape}, "
                f"final affine weights have shape {last.weights.shape}"
            )
        layers = list(net.layers[:-1])
        layers.append(Affine(last.weights + spec.matrix, last.bias))
        return Network(tuple(layers), name=net.name)
    raise ValueError(f"unknown perturbation spec {spec!r}")


def affine_from_conv(
    weights: np.ndarray,
    bias: np.ndarray,
    input_shape: tuple,
    stride: int = 1,
    padding: int = 0,
) -> Affine:
    """Lower a 2-d convolution to a dense affine layer.

    ``weights`` has shape (out_channels, in_channels, kh, kw); ``input_shape``
    is (in_channels, height, width).  Inputs and outputs are flattened in
    C-order (channel, row, column).  The verifier core only sees affine and
    ReLU layers, so convolutional models are lowered at ingestion.
    """
    w = np.asarray(weights, dtype=float)
    b = np.asarray(bias, dtype=float)
    if w.ndim != 4:
        raise ValueError(f"conv weights must be 4-d, got shape {w.shape}")
    out_ch, in_ch, kh, kw = w.shape
    if b.shape != (out_ch,):
        raise ValueError(f"conv bias must have shape ({out_ch},), got {b.shape}")
    c, h, wd = input_shape
    if c != in_ch:
        raise ValueError(f"input has {c} channels, kernel expects {in_ch}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("kernel does not fit in the padded input")
    dense = np.zeros((out_ch * oh * ow, c * h * wd))
    full_bias = np.zeros(out_ch * oh * ow)
    for oc in range(out_ch):
        for oy in range(oh):
            for ox in range(ow):
                row = (oc * oh + oy) * ow + ox
                full_bias[row] = b[oc]
                for ic in range(in_ch):
                    for ky in range(kh):
                        for kx in range(kw):
                            iy = oy * stride + ky - padding
                            ix = ox * stride + kx - padding
                            if 0 <= iy < h and 0 <= ix < wd:
                                col = (ic * h + iy) * wd + ix
                                dense[row, col] = w[oc, ic, ky, kx]
    return Affine(dense, full_bias)


def _layer_to_json(layer: Layer) -> dict:
    if isinstance(layer, Affine):
        return {
            "type": "affine",
            "weights": layer.weights.tolist(),
            "bias": layer.bias.tolist(),
        }
    return {"type": "relu"}


def _layer_from_json(obj: object, where: str) -> Layer:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object, got {type(obj).__name__}")
    kind = obj.get("type")
    if kind == "relu":
        return Relu()
    if kind != "affine":
        raise ParseError(f"{where}.type: expected 'affine' or 'relu', got {kind!r}")
    weights = obj.get("weights")
    bias = obj.get("bias")
    if not isinstance(weights, list) or not weights:
        raise ParseError(f"{where}.weights: expected a non-empty list of rows")
    row_len = None
    for r, row in enumerate(weights):
        if not isinstance(row, list) or not all(
            isinstance(v, (int, float)) for v in row
        ):
            raise ParseError(f"{where}.weights[{r}]: expected a list of numbers")
        if row_len is None:
            row_len = len(row)
        elif len(row) != row_len:
            raise ParseError(
                f"{where}.weights[{r}]: row length {len(row)} != {row_len}"
            )
    if not isinstance(bias, list) or not all(isinstance(v, (int, float)) for v in bias):
        raise ParseError(f"{where}.bias: expected a list of numbers")
    if len(bias) != len(weights):
        raise ParseError(
            f"{where}.bias: length {len(bias)} != weights rows {len(weights)}"
        )
    try:
        return Affine(np.array(weights, dtype=float), np.array(bias, dtype=float))
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def network_to_json(net: Network) -> dict:
    return {"name": net.name, "layers": [_layer_to_json(l) for l in net.layers]}


def network_from_json(obj: object, where: str = "network") -> Network:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object, got {type(obj).__name__}")
    name = obj.get("name", "")
    if not isinstance(name, str):
        raise ParseError(f"{where}.name: expected a string")
    layers_json = obj.get("layers")
    if not isinstance(layers_json, list) or not layers_json:
        raise ParseError(f"{where}.layers: expected a non-empty list")
    layers = [
        _layer_from_json(item, f"{where}.layers[{i}]")
        for i, item in enumerate(layers_json)
    ]
    try:
        return Network(tuple(layers), name=name)
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def save_network(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_json(net), fh, indent=1)
        fh.write("\n")


def load_network(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return network_from_json(obj, where=str(path))
