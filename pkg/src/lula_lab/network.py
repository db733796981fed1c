"""Feedforward network: definition, forward pass, reverse-mode gradients, I/O.

Parameter flattening contract (frozen, shared by every module): layers in
order, and within a layer the weight matrix in row-major (C) order followed
by the bias vector. Jacobians, curvature matrices over the full parameter
set, and gradient masks all use this ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ModelFormatError
from .numerics import Rng

__all__ = [
    "ACTIVATIONS",
    "LayerSpec",
    "Network",
    "ForwardTrace",
    "ParamGrads",
    "forward",
    "backward",
    "output_jacobian",
    "save",
    "load",
]

ACTIVATIONS = ("relu", "selu", "tanh", "identity")

# Standard self-normalizing constants (Klambauer et al.), full precision.
SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


def apply_activation(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "selu":
        return SELU_SCALE * np.where(a > 0.0, a, SELU_ALPHA * np.expm1(a))
    if name == "tanh":
        return np.tanh(a)
    if name == "identity":
        return a
    raise ValueError(f"unknown activation {name!r}")


def activation_derivative(name: str, a: np.ndarray) -> np.ndarray:
    # Derivative as a function of the pre-activation; relu'(0) is taken as 0.
    if name == "relu":
        return (a > 0.0).astype(np.float64)
    if name == "selu":
        return SELU_SCALE * np.where(a > 0.0, 1.0, SELU_ALPHA * np.exp(a))
    if name == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    if name == "identity":
        return np.ones_like(a)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class LayerSpec:
    """Shape and nonlinearity of one affine layer."""

    in_dim: int
    out_dim: int
    activation: str

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class Network:
    """Immutable feedforward network: a chain of affine layers.

    Hidden layers apply their configured activation; the output layer is
    always linear (its spec must use the identity activation).
    """

    def __init__(
        self,
        specs: Sequence[LayerSpec],
        weights: Sequence[np.ndarray],
        biases: Sequence[np.ndarray],
    ):
        if not specs:
            raise ValueError("network needs at least one layer")
        if len(specs) != len(weights) or len(specs) != len(biases):
            raise ValueError("specs, weights, and biases must align")
        if specs[-1].activation != "identity":
            raise ValueError("output layer activation must be identity")
        for i, (spec, w, b) in enumerate(zip(specs, weights, biases)):
            if w.shape != (spec.out_dim, spec.in_dim):
                raise ValueError(
                    f"layer {i}: weight shape {w.shape} does not match spec "
                    f"({spec.out_dim}, {spec.in_dim})"
                )
            if b.shape != (spec.out_dim,):
                raise ValueError(f"layer {i}: bias shape {b.shape} invalid")
            if i > 0 and spec.in_dim != specs[i - 1].out_dim:
                raise ValueError(f"layer {i}: dimension chain broken")
        self.specs = tuple(specs)
        self.weights = tuple(np.array(w, dtype=np.float64) for w in weights)
        self.biases = tuple(np.array(b, dtype=np.float64) for b in biases)

    @property
    def num_layers(self) -> int:
        return len(self.specs)

    @property
    def input_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].out_dim

    @property
    def num_params(self) -> int:
        return sum(s.out_dim * (s.in_dim + 1) for s in self.specs)

    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(s.out_dim for s in self.specs)

    @staticmethod
    def init_random(
        dims: Sequence[int], hidden_activation: str, rng: Rng
    ) -> "Network":
        """Fresh network with N(0, c/fan_in) weights and zero biases.

        c is 2 for relu/selu and 1 otherwise.
        """
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        gain = 2.0 if hidden_activation in ("relu", "selu") else 1.0
        specs, weights, biases = [], [], []
        for i in range(len(dims) - 1):
            act = hidden_activation if i < len(dims) - 2 else "identity"
            specs.append(LayerSpec(dims[i], dims[i + 1], act))
            std = np.sqrt(gain / dims[i])
            weights.append(rng.normal(0.0, std, (dims[i + 1], dims[i])))
            biases.append(np.zeros(dims[i + 1]))
        return Network(specs, weights, biases)

    def flatten_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel(order="C"))
            parts.append(b)
        return np.concatenate(parts)

    def with_flat_params(self, theta: np.ndarray) -> "Network":
        """New network with the same specs and parameters taken from theta."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_params,):
            raise ValueError(
                f"expected {self.num_params} parameters, got {theta.shape}"
            )
        weights, biases, offset = [], [], 0
        for spec in self.specs:
            n_w = spec.out_dim * spec.in_dim
            weights.append(
                theta[offset : offset + n_w].reshape(spec.out_dim, spec.in_dim)
            )
            offset += n_w
            biases.append(theta[offset : offset + spec.out_dim])
            offset += spec.out_dim
        return Network(self.specs, weights, biases)

    def with_last_layer(self, weight: np.ndarray, bias: np.ndarray) -> "Network":
        weights = list(self.weights[:-1]) + [weight]
        biases = list(self.biases[:-1]) + [bias]
        return Network(self.specs, weights, biases)


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer pre-activations and activations for one batch.

    ``activations[0]`` is the input batch; ``activations[-1]`` is the output.
    ``pre_activations[l]`` belongs to layer l (0-based).
    """

    pre_activations: tuple[np.ndarray, ...]
    activations: tuple[np.ndarray, ...]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class ParamGrads:
    """Per-layer gradients, aligned with Network.weights / Network.biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel(order="C"))
            parts.append(b)
        return np.concatenate(parts)

    def copy(self) -> "ParamGrads":
        return ParamGrads(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )


def _as_batch(x: np.ndarray, input_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != input_dim:
        raise ValueError(
            f"input batch must have {input_dim} columns, got shape {x.shape}"
        )
    return x


def forward(net: Network, x: np.ndarray) -> ForwardTrace:
    """Run the network on a batch (rows are samples) and record the trace."""
    h = _as_batch(x, net.input_dim)
    pre, acts = [], [h]
    for i, spec in enumerate(net.specs):
        a = acts[-1] @ net.weights[i].T + net.biases[i]
        pre.append(a)
        acts.append(apply_activation(spec.activation, a))
    return ForwardTrace(tuple(pre), tuple(acts))


def forward_from_layer(
    net: Network, start: int, hidden: np.ndarray
) -> np.ndarray:
    """Features entering the output layer, given the input to layer ``start``.

    ``hidden`` is the activation batch feeding layer ``start`` (0-based), i.e.
    ``forward(net, x).activations[start]``. Layers start .. L-2 are applied,
    so the result is the final hidden activation. Used to re-evaluate features
    cheaply when only upper layers changed.
    """
    h = hidden
    for i in range(start, net.num_layers - 1):
        a = h @ net.weights[i].T + net.biases[i]
        h = apply_activation(net.specs[i].activation, a)
    return h


def backward(
    net: Network, trace: ForwardTrace, output_grad: np.ndarray
) -> tuple[ParamGrads, np.ndarray]:
    """Gradients of sum(output_grad * output) w.r.t. parameters and inputs.

    ``output_grad`` must match the traced output batch shape. Returns the
    per-layer parameter gradients (summed over the batch) and the gradient
    with respect to the input batch.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise ValueError(
            f"output_grad shape {g.shape} does not match output "
            f"{trace.output.shape}"
        )
    n_layers = net.num_layers
    grad_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    delta = g  # output layer is linear
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = delta.T @ trace.activations[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            upstream = delta @ net.weights[i]
            phi_grad = activation_derivative(
                net.specs[i - 1].activation, trace.pre_activations[i - 1]
            )
            delta = upstream * phi_grad
        else:
            delta = delta @ net.weights[0]
    return ParamGrads(grad_w, grad_b), delta


def output_jacobian(net: Network, x: np.ndarray) -> np.ndarray:
    """Jacobian of the outputs w.r.t. the flattened parameters, shape (k, d).

    Row i holds the gradient of output i in the frozen flattening order
    (layer-major, weights row-major, then bias).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("output_jacobian expects a single input vector")
    trace = forward(net, x[None, :])
    k = net.output_dim
    rows = []
    for i in range(k):
        onehot = np.zeros((1, k))
        onehot[0, i] = 1.0
        grads, _ = backward(net, trace, onehot)
        rows.append(grads.flatten())
    return np.stack(rows, axis=0)


def last_hidden_features(net: Network, x: np.ndarray) -> np.ndarray:
    """Activations feeding the output layer, shape (m, n_last_hidden).

    For a single-layer network this is the input batch itself.
    """
    trace = forward(net, x)
    return trace.activations[-2]


def augment_ones(features: np.ndarray) -> np.ndarray:
    """Append a constant-1 column (the bias feature)."""
    return np.concatenate(
        [features, np.ones((features.shape[0], 1))], axis=1
    )


# ---------------------------------------------------------------------------
# Model file format: self-describing structured text, one value per field,
# floats written with 17 significant digits so a save/load round trip is
# bitwise exact. Documented in the README.

_MAGIC = "lula-lab-model"
_VERSION = "v1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save(net: Network, path: str) -> None:
    lines = [f"{_MAGIC} {_VERSION}", f"num_layers {net.num_layers}"]
    for i, spec in enumerate(net.specs):
        lines.append(
            f"layer {i} in {spec.in_dim} out {spec.out_dim} "
            f"activation {spec.activation}"
        )
        lines.append(f"W {spec.out_dim} {spec.in_dim}")
        for row in net.weights[i]:
            lines.append(" ".join(_fmt(v) for v in row))
        lines.append(f"b {spec.out_dim}")
        lines.append(" ".join(_fmt(v) for v in net.biases[i]))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


class _LineReader:
    def __init__(self, path: str):
        with open(path, "r", encoding="utf-8") as handle:
            self.lines = handle.read().splitlines()
        self.pos = 0

    def next(self, what: str) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise ModelFormatError(f"unexpected end of file while reading {what}")


def _parse_floats(line: str, count: int, what: str) -> np.ndarray:
    parts = line.split()
    if len(parts) != count:
        raise ModelFormatError(
            f"{what}: expected {count} values, found {len(parts)}"
        )
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise ModelFormatError(f"{what}: {exc}") from exc


def load(path: str) -> Network:
    """Read a model file written by :func:`save`."""
    reader = _LineReader(path)
    header = reader.next("header").split()
    if len(header) != 2 or header[0] != _MAGIC:
        raise ModelFormatError("not a lula-lab model file")
    if header[1] != _VERSION:
        raise ModelFormatError(f"unsupported model version {header[1]!r}")
    fields = reader.next("num_layers").split()
    if len(fields) != 2 or fields[0] != "num_layers":
        raise ModelFormatError("expected num_layers line")
    try:
        n_layers = int(fields[1])
    except ValueError as exc:
        raise ModelFormatError(f"bad num_layers: {fields[1]!r}") from exc
    if n_layers < 1:
        raise ModelFormatError("num_layers must be at least 1")

    specs, weights, biases = [], [], []
    for i in range(n_layers):
        fields = reader.next(f"layer {i} header").split()
        if (
            len(fields) != 8
            or fields[0] != "layer"
            or fields[2] != "in"
            or fields[4] != "out"
            or fields[6] != "activation"
        ):
            raise ModelFormatError(f"malformed layer header at layer {i}")
        if int(fields[1]) != i:
            raise ModelFormatError(f"layer index mismatch at layer {i}")
        in_dim, out_dim, act = int(fields[3]), int(fields[5]), fields[7]
        if act not in ACTIVATIONS:
            raise ModelFormatError(f"unknown activation {act!r} at layer {i}")
        w_header = reader.next(f"W header, layer {i}").split()
        if w_header != ["W", str(out_dim), str(in_dim)]:
            raise ModelFormatError(f"malformed W header at layer {i}")
        rows = [
            _parse_floats(reader.next(f"W row, layer {i}"), in_dim, f"layer {i} W")
            for _ in range(out_dim)
        ]
        b_header = reader.next(f"b header, layer {i}").split()
        if b_header != ["b", str(out_dim)]:
            raise ModelFormatError(f"malformed b header at layer {i}")
        bias = _parse_floats(reader.next(f"b values, layer {i}"), out_dim, f"layer {i} b")
        specs.append(LayerSpec(in_dim, out_dim, act))
        weights.append(np.stack(rows, axis=0))
        biases.append(bias)
    return Network(specs, weights, biases)
