"""MAP estimation: negative log-likelihood losses and first-order optimizers.

Additive normalization constants (the 0.5*log(2*pi) terms of the Gaussian)
are dropped from every loss, so a perfect regression fit scores exactly zero.
All log-likelihood comparisons inside the package use the same convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .network import Network, ParamGrads, backward, forward
from .numerics import Rng

__all__ = [
    "LossKind",
    "TrainConfig",
    "map_loss",
    "train_map",
]

LOSS_KINDS = ("gaussian_nll", "categorical_ce", "binary_ce")


@dataclass(frozen=True)
class LossKind:
    """Likelihood family used for the data term.

    ``noise_precision`` (beta) only applies to the Gaussian case; targets for
    binary_ce are 0/1 against a single logit output.
    """

    kind: str
    noise_precision: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "gaussian_nll" and self.noise_precision <= 0.0:
            raise ValueError("noise_precision must be positive")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_targets(loss: LossKind, outputs: np.ndarray, targets: np.ndarray):
    if loss.kind == "gaussian_nll":
        y = np.asarray(targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape != outputs.shape:
            raise ValueError(
                f"target shape {y.shape} does not match outputs {outputs.shape}"
            )
        return y
    y = np.asarray(targets)
    if y.ndim != 1:
        raise ValueError("classification targets must be a 1-d label vector")
    return y.astype(np.int64)


def pointwise_nll(
    loss: LossKind, outputs: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """Per-example negative log-likelihood, constants dropped."""
    y = _as_targets(loss, outputs, targets)
    if loss.kind == "gaussian_nll":
        resid = outputs - y
        return 0.5 * loss.noise_precision * np.sum(resid * resid, axis=1)
    if loss.kind == "categorical_ce":
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(outputs.shape[0])
        return log_norm - shifted[rows, y]
    # binary_ce: stable softplus(f) - y * f on a single logit column
    f = outputs[:, 0]
    return np.maximum(f, 0.0) - y * f + np.log1p(np.exp(-np.abs(f)))


def nll_output_grad(
    loss: LossKind, outputs: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """Gradient of the summed NLL with respect to the outputs."""
    y = _as_targets(loss, outputs, targets)
    if loss.kind == "gaussian_nll":
        return loss.noise_precision * (outputs - y)
    if loss.kind == "categorical_ce":
        probs = softmax(outputs)
        rows = np.arange(outputs.shape[0])
        probs[rows, y] -= 1.0
        return probs
    g = sigmoid(outputs[:, 0]) - y
    return g[:, None]


def output_hessians(loss: LossKind, outputs: np.ndarray) -> np.ndarray:
    """Per-example Hessian of the NLL w.r.t. the outputs, shape (m, k, k).

    This is the inner curvature factor of the generalized Gauss-Newton:
    beta * I for the Gaussian, diag(p) - p p^T for the categorical, and
    sigma * (1 - sigma) for the single-logit binary case.
    """
    m, k = outputs.shape
    if loss.kind == "gaussian_nll":
        return np.broadcast_to(
            loss.noise_precision * np.eye(k), (m, k, k)
        ).copy()
    if loss.kind == "categorical_ce":
        p = softmax(outputs)
        h = -p[:, :, None] * p[:, None, :]
        rows = np.arange(k)
        h[:, rows, rows] += p
        return h
    s = sigmoid(outputs[:, 0])
    return (s * (1.0 - s)).reshape(m, 1, 1)


def map_loss(
    net: Network,
    features: np.ndarray,
    targets: np.ndarray,
    loss: LossKind,
    weight_decay: float,
) -> tuple[float, ParamGrads]:
    """Summed NLL plus (weight_decay / 2) * ||theta||^2, with gradients."""
    if features.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    trace = forward(net, features)
    nll = pointwise_nll(loss, trace.output, targets)
    value = float(np.sum(nll))
    grads, _ = backward(net, trace, nll_output_grad(loss, trace.output, targets))
    if weight_decay != 0.0:
        theta = net.flatten_params()
        value += 0.5 * weight_decay * float(theta @ theta)
        for i in range(net.num_layers):
            grads.weights[i] = grads.weights[i] + weight_decay * net.weights[i]
            grads.biases[i] = grads.biases[i] + weight_decay * net.biases[i]
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss value {value}")
    return value, grads


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int | None = None
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")


class _Sgd:
    def __init__(self, dim: int, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity = np.zeros(dim)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.velocity = self.momentum * self.velocity + grad
        return theta - self.lr * self.velocity


class _Adam:
    def __init__(self, dim: int, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad * grad
        m_hat = self.m / (1.0 - self.b1**self.t)
        v_hat = self.v / (1.0 - self.b2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train_map(
    net: Network,
    features: np.ndarray,
    targets: np.ndarray,
    loss: LossKind,
    config: TrainConfig,
) -> tuple[Network, list[float]]:
    """Minimize the MAP objective; returns the trained net and loss history.

    Minibatch gradients are averaged over the batch with the weight-decay
    term scaled by 1/m, so the optimized objective is the full MAP loss
    divided by the dataset size (identical minimizer). The history records
    the full summed MAP loss once per epoch. Deterministic given the seed.
    """
    features = np.asarray(features, dtype=np.float64)
    m = features.shape[0]
    if m == 0:
        raise ValueError("training data must be nonempty")
    theta = net.flatten_params()
    if config.optimizer == "adam":
        opt = _Adam(theta.size, config.learning_rate)
    else:
        opt = _Sgd(theta.size, config.learning_rate, config.momentum)
    rng = Rng(config.seed)
    batch = config.batch_size or m
    history: list[float] = []
    current = net
    for epoch in range(config.epochs):
        order = rng.derive(epoch).permutation(m)
        for start in range(0, m, batch):
            idx = order[start : start + batch]
            trace = forward(current, features[idx])
            out_grad = nll_output_grad(loss, trace.output, targets[idx])
            grads, _ = backward(current, trace, out_grad)
            g = grads.flatten() / idx.size + (config.weight_decay / m) * theta
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient at epoch {epoch}")
            theta = opt.step(theta, g)
            current = current.with_flat_params(theta)
        value, _ = map_loss(current, features, targets, loss, config.weight_decay)
        history.append(value)
    return current, history
