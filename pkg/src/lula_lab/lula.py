"""Uncertainty units: construction, masked training, and unit-count search.

An augmentation adds inactive hidden units to a trained network. Each added
unit has trainable incoming weights (the free parameters) but structurally
zero outgoing weights, so the network function is preserved exactly while
the loss curvature, and hence the Laplace posterior, gains extra directions.
Training minimizes the total output variance on inliers minus the variance
on outliers, touching only the free parameters via gradient masking.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, NotPositiveDefinite
from .laplace import (
    LaplacePosterior,
    PredictConfig,
    build_posterior,
    fit_curvature,
    mc_predict,
    linearized_variance_batch,
)
from .network import (
    LayerSpec,
    Network,
    ParamGrads,
    activation_derivative,
    apply_activation,
    augment_ones,
    forward,
)
from .numerics import Rng
from .training import LossKind

__all__ = [
    "LulaAugmentation",
    "LulaTrainConfig",
    "augment",
    "mask_gradient",
    "total_variance",
    "total_variance_batch",
    "lula_objective",
    "objective_gradient",
    "train_lula",
    "grid_search_units",
]

DEFAULT_UNIT_GRID = (32, 64, 128, 256, 512)

# Relative step for the central-difference gradient of the variance objective.
FD_STEP = 1e-4


@dataclass(frozen=True)
class LulaAugmentation:
    """Bookkeeping for added units: per-hidden-layer counts and free masks.

    Masks are boolean arrays shaped like the augmented weight matrices and
    bias vectors, true exactly on the free blocks (incoming weights and
    biases of the added units) and false on every original parameter and on
    the structurally-zero blocks.
    """

    unit_counts: tuple[int, ...]
    weight_masks: tuple[np.ndarray, ...]
    bias_masks: tuple[np.ndarray, ...]
    init_std: float | None

    @property
    def num_free(self) -> int:
        return int(
            sum(m.sum() for m in self.weight_masks)
            + sum(m.sum() for m in self.bias_masks)
        )


@dataclass(frozen=True)
class LulaTrainConfig:
    """Settings for uncertainty training.

    The masked update defaults to Adam: the variance objective's gradient
    spans several orders of magnitude across free coordinates (fresh units
    start with near-zero curvature, so their posterior variance is about
    1/prior_precision), and the plain step either stalls or overshoots.
    ``optimizer = "gd"`` selects the unnormalized step instead.
    """

    learning_rate: float = 0.1
    epochs: int = 20
    sample_count: int = 30
    variance_evaluator: str = "linearized"
    gradient_method: str = "finite_difference"
    optimizer: str = "adam"
    in_batch: int = 128
    out_batch: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        if self.variance_evaluator not in ("linearized", "mc"):
            raise ValueError(
                f"unknown variance evaluator {self.variance_evaluator!r}"
            )
        if self.gradient_method not in ("finite_difference", "analytic"):
            raise ValueError(
                f"unknown gradient method {self.gradient_method!r}"
            )
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _mask_shapes(dims: tuple[int, ...], counts) -> tuple[list, list]:
    """Free-parameter masks for original layer dims and added counts."""
    n_layers = len(dims) - 1
    padded = [0] + list(counts) + [0]  # no additions on input or output
    weight_masks, bias_masks = [], []
    for layer in range(n_layers):
        in_orig, out_orig = dims[layer], dims[layer + 1]
        m_in, m_out = padded[layer], padded[layer + 1]
        w_mask = np.zeros((out_orig + m_out, in_orig + m_in), dtype=bool)
        w_mask[out_orig:, :in_orig] = True
        b_mask = np.zeros(out_orig + m_out, dtype=bool)
        b_mask[out_orig:] = True
        weight_masks.append(w_mask)
        bias_masks.append(b_mask)
    return weight_masks, bias_masks


def augment(
    net: Network,
    counts,
    rng: Rng,
    init_std: float | None = None,
) -> tuple[Network, LulaAugmentation]:
    """Add inactive units to the hidden layers of a trained network.

    ``counts`` gives the number of added units per hidden layer (length
    num_layers - 1; the input and output layers never change size). Each
    augmented weight matrix has the block form [[W, 0], [W_free, 0]] and the
    output layer becomes [W, 0] with its bias untouched, so the forward map
    is preserved exactly. Free blocks are drawn from N(0, std^2) with
    std = init_std, or 0.1 * sqrt(2 / fan_in) per layer when init_std is
    None (a zero draw would silence every relu gradient).

    Returns the augmented network and the mask record.
    """
    counts = [int(c) for c in counts]
    n_hidden = net.num_layers - 1
    if len(counts) != n_hidden:
        raise ValueError(
            f"expected {n_hidden} counts (hidden layers only, additions on the "
            f"input or output layer are not allowed), got {len(counts)}"
        )
    if any(c < 0 for c in counts):
        raise ValueError("unit counts must be nonnegative")

    dims = net.layer_dims()
    padded = [0] + counts + [0]
    specs, weights, biases = [], [], []
    for layer in range(net.num_layers):
        spec = net.specs[layer]
        m_in, m_out = padded[layer], padded[layer + 1]
        w = net.weights[layer]
        b = net.biases[layer]
        new_w = np.zeros((spec.out_dim + m_out, spec.in_dim + m_in))
        new_w[: spec.out_dim, : spec.in_dim] = w
        new_b = np.zeros(spec.out_dim + m_out)
        new_b[: spec.out_dim] = b
        if m_out > 0:
            std = init_std if init_std is not None else 0.1 * np.sqrt(2.0 / spec.in_dim)
            new_w[spec.out_dim :, : spec.in_dim] = rng.normal(
                0.0, std, (m_out, spec.in_dim)
            )
            new_b[spec.out_dim :] = rng.normal(0.0, std, m_out)
        specs.append(
            LayerSpec(spec.in_dim + m_in, spec.out_dim + m_out, spec.activation)
        )
        weights.append(new_w)
        biases.append(new_b)

    weight_masks, bias_masks = _mask_shapes(dims, counts)
    aug = LulaAugmentation(
        tuple(counts),
        tuple(weight_masks),
        tuple(bias_masks),
        init_std,
    )
    return Network(specs, weights, biases), aug


def mask_gradient(grads: ParamGrads, aug: LulaAugmentation) -> ParamGrads:
    """Zero every gradient entry outside the free blocks, exactly."""
    if len(grads.weights) != len(aug.weight_masks):
        raise ValueError("gradient layer count does not match augmentation")
    out_w, out_b = [], []
    for gw, gb, mw, mb in zip(
        grads.weights, grads.biases, aug.weight_masks, aug.bias_masks
    ):
        if gw.shape != mw.shape or gb.shape != mb.shape:
            raise ValueError("gradient shapes do not match augmentation masks")
        out_w.append(np.where(mw, gw, 0.0))
        out_b.append(np.where(mb, gb, 0.0))
    return ParamGrads(out_w, out_b)


def _mc_variance_from_outputs(sum_f, sum_sq, count):
    mean = sum_f / count
    return np.maximum(sum_sq / count - mean * mean, 0.0)


def total_variance_batch(
    net: Network,
    post: LaplacePosterior,
    x: np.ndarray,
    cfg: LulaTrainConfig,
) -> np.ndarray:
    """Total output variance per input row, shape (m,).

    The linearized evaluator sums the per-output quadratic forms; the mc
    evaluator uses the plain S-sample moment estimator with a fixed seed, so
    repeated calls are deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if cfg.variance_evaluator == "linearized":
        return linearized_variance_batch(net, post, x).sum(axis=1)
    samples = post.sample(Rng(cfg.seed), cfg.sample_count)
    if post.subset == "last_layer":
        hbar = augment_ones(forward(net, x).activations[-2])
        k, feat = post.num_outputs, post.feature_dim
        sum_f = np.zeros((x.shape[0], k))
        sum_sq = np.zeros((x.shape[0], k))
        for s in samples:
            out = hbar @ s.reshape(k, feat).T
            sum_f += out
            sum_sq += out * out
    else:
        sum_f = np.zeros((x.shape[0], net.output_dim))
        sum_sq = np.zeros_like(sum_f)
        for s in samples:
            out = forward(net.with_flat_params(s), x).output
            sum_f += out
            sum_sq += out * out
    return _mc_variance_from_outputs(sum_f, sum_sq, cfg.sample_count).sum(axis=1)


def total_variance(
    net: Network, post: LaplacePosterior, x: np.ndarray, cfg: LulaTrainConfig
) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("total_variance expects a single input vector")
    return float(total_variance_batch(net, post, x[None, :], cfg)[0])


def lula_objective(
    net: Network,
    post: LaplacePosterior,
    in_batch: np.ndarray,
    out_batch: np.ndarray,
    cfg: LulaTrainConfig,
) -> float:
    """Mean total variance over inliers minus mean over outliers."""
    in_batch = np.atleast_2d(np.asarray(in_batch, dtype=np.float64))
    out_batch = np.atleast_2d(np.asarray(out_batch, dtype=np.float64))
    if in_batch.shape[0] == 0 or out_batch.shape[0] == 0:
        raise ValueError("both batches must be nonempty")
    v_in = total_variance_batch(net, post, in_batch, cfg)
    v_out = total_variance_batch(net, post, out_batch, cfg)
    return float(np.mean(v_in) - np.mean(v_out))


def _free_coordinates(aug: LulaAugmentation):
    coords = []
    for layer, (mw, mb) in enumerate(zip(aug.weight_masks, aug.bias_masks)):
        for row, col in zip(*np.nonzero(mw)):
            coords.append((layer, "w", int(row), int(col)))
        for (idx,) in zip(*np.nonzero(mb)):
            coords.append((layer, "b", int(idx), 0))
    return coords


class _ObjectiveEvaluator:
    """Evaluates the variance objective under single-coordinate perturbations.

    The posterior is a fixed input here: the gradient is taken with the
    covariance held at its value from the top of the current epoch (it is
    refreshed once per epoch by the training loop). Activations below the
    lowest perturbed layer never change, so they are cached per batch.

    Requires a last-layer posterior (the training loop's default); for the
    linearized evaluator, a perturbation at the final hidden layer touches a
    single feature column, so the quadratic form is updated in O(batch)
    instead of re-evaluated.
    """

    def __init__(self, net, post, in_batch, out_batch, cfg):
        if post.subset != "last_layer":
            raise ValueError("coordinate evaluator needs a last_layer posterior")
        self.net = net
        self.post = post
        self.cfg = cfg
        self.top = net.num_layers - 2  # final hidden layer index
        self.in_trace = forward(net, in_batch)
        self.out_trace = forward(net, out_batch)
        if cfg.variance_evaluator == "linearized":
            self.block_sum = post.sum_output_block_cov()
            self.sample_mats = None
            self._rank_one = [
                self._rank_one_cache(t) for t in (self.in_trace, self.out_trace)
            ]
        else:
            samples = post.sample(Rng(cfg.seed), cfg.sample_count)
            self.sample_mats = samples.reshape(
                cfg.sample_count, post.num_outputs, post.feature_dim
            )
            self.block_sum = None
            self._rank_one = None

    def _rank_one_cache(self, trace):
        hbar = augment_ones(trace.activations[-2])
        t_hbar = hbar @ self.block_sum
        nu = np.einsum("mf,mf->m", hbar, t_hbar)
        return {
            "hbar": hbar,
            "t_hbar": t_hbar,
            "nu_mean": float(np.mean(nu)),
            "h_prev": trace.activations[self.top] if self.top >= 0 else None,
            "a_top": trace.pre_activations[self.top] if self.top >= 0 else None,
        }

    def _features(self, acts, layer, weights, biases):
        h = acts[layer]
        for i in range(layer, self.net.num_layers - 1):
            a = h @ weights[i].T + biases[i]
            h = apply_activation(self.net.specs[i].activation, a)
        return h

    def _nu_mean(self, features):
        hbar = augment_ones(features)
        if self.block_sum is not None:
            return float(
                np.mean(np.einsum("mf,fg,mg->m", hbar, self.block_sum, hbar))
            )
        sum_f = np.zeros((hbar.shape[0], self.post.num_outputs))
        sum_sq = np.zeros_like(sum_f)
        for mat in self.sample_mats:
            out = hbar @ mat.T
            sum_f += out
            sum_sq += out * out
        var = _mc_variance_from_outputs(sum_f, sum_sq, self.cfg.sample_count)
        return float(np.mean(var.sum(axis=1)))

    def _nu_mean_rank_one(self, cache, row, col, value, is_bias) -> float:
        # nu is quadratic in the feature vector and only column `row` of the
        # final hidden activation changes, so update each row's quadratic
        # form in closed form.
        base_w = self.net.weights[self.top]
        base_b = self.net.biases[self.top]
        if is_bias:
            a_new = cache["a_top"][:, row] + (value - base_b[row])
        else:
            a_new = cache["a_top"][:, row] + (value - base_w[row, col]) * cache[
                "h_prev"
            ][:, col]
        act = self.net.specs[self.top].activation
        h_new = apply_activation(act, a_new)
        delta = h_new - cache["hbar"][:, row]
        t_uu = self.block_sum[row, row]
        nu_shift = 2.0 * delta * cache["t_hbar"][:, row] + delta * delta * t_uu
        return cache["nu_mean"] + float(np.mean(nu_shift))

    def objective_with(self, layer, kind, row, col, value) -> float:
        if self._rank_one is not None and layer == self.top:
            cache_in, cache_out = self._rank_one
            is_bias = kind == "b"
            return self._nu_mean_rank_one(
                cache_in, row, col, value, is_bias
            ) - self._nu_mean_rank_one(cache_out, row, col, value, is_bias)
        weights = list(self.net.weights)
        biases = list(self.net.biases)
        if kind == "w":
            perturbed = weights[layer].copy()
            perturbed[row, col] = value
            weights[layer] = perturbed
        else:
            perturbed = biases[layer].copy()
            perturbed[row] = value
            biases[layer] = perturbed
        nu_in = self._nu_mean(
            self._features(self.in_trace.activations, layer, weights, biases)
        )
        nu_out = self._nu_mean(
            self._features(self.out_trace.activations, layer, weights, biases)
        )
        return nu_in - nu_out


class _SlowEvaluator:
    """Coordinate perturbations via full objective re-evaluation.

    Used for posteriors over all layers, where changing any parameter can
    shift every term of the variance; correct for any subset, just slow.
    """

    def __init__(self, net, post, in_batch, out_batch, cfg):
        self.net = net
        self.post = post
        self.cfg = cfg
        self.in_batch = in_batch
        self.out_batch = out_batch

    def objective_with(self, layer, kind, row, col, value) -> float:
        weights = list(self.net.weights)
        biases = list(self.net.biases)
        if kind == "w":
            perturbed = weights[layer].copy()
            perturbed[row, col] = value
            weights[layer] = perturbed
        else:
            perturbed = biases[layer].copy()
            perturbed[row] = value
            biases[layer] = perturbed
        moved = Network(self.net.specs, weights, biases)
        return lula_objective(moved, self.post, self.in_batch, self.out_batch, self.cfg)


def _thread_count() -> int:
    raw = os.environ.get("LULA_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _fd_gradient(net, aug, post, in_batch, out_batch, cfg) -> ParamGrads:
    if post.subset == "last_layer":
        evaluator = _ObjectiveEvaluator(net, post, in_batch, out_batch, cfg)
    else:
        evaluator = _SlowEvaluator(net, post, in_batch, out_batch, cfg)
    coords = _free_coordinates(aug)
    grad_w = [np.zeros_like(w) for w in net.weights]
    grad_b = [np.zeros_like(b) for b in net.biases]

    def one(coord):
        layer, kind, row, col = coord
        base = (
            net.weights[layer][row, col] if kind == "w" else net.biases[layer][row]
        )
        step = FD_STEP * max(1.0, abs(base))
        hi = evaluator.objective_with(layer, kind, row, col, base + step)
        lo = evaluator.objective_with(layer, kind, row, col, base - step)
        return (hi - lo) / (2.0 * step)

    threads = _thread_count()
    if threads > 1 and len(coords) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one, coords))
    else:
        values = [one(c) for c in coords]
    for coord, value in zip(coords, values):
        layer, kind, row, col = coord
        if kind == "w":
            grad_w[layer][row, col] = value
        else:
            grad_b[layer][row] = value
    return ParamGrads(grad_w, grad_b)


def _analytic_gradient(net, aug, post, in_batch, out_batch, cfg) -> ParamGrads:
    """Closed-form gradient for the linearized evaluator, last-layer posterior.

    With the covariance fixed, the objective depends on the free parameters
    only through the added units of the final hidden layer: units added at
    deeper layers feed structurally-zero columns everywhere downstream, so
    their free parameters have exactly zero gradient.
    """
    if cfg.variance_evaluator != "linearized" or post.subset != "last_layer":
        raise ValueError(
            "analytic gradient requires the linearized evaluator and a "
            "last_layer posterior; use finite_difference otherwise"
        )
    grad_w = [np.zeros_like(w) for w in net.weights]
    grad_b = [np.zeros_like(b) for b in net.biases]
    top = net.num_layers - 2  # final hidden layer
    if top < 0 or aug.unit_counts[top] == 0:
        return ParamGrads(grad_w, grad_b)
    added = aug.unit_counts[top]
    n_out_orig = net.specs[top].out_dim - added
    # free columns span the original input features of the layer only
    n_in_orig = aug.weight_masks[top].shape[1] - (
        aug.unit_counts[top - 1] if top > 0 else 0
    )
    block_sum = post.sum_output_block_cov()

    def accumulate(batch, sign):
        trace = forward(net, batch)
        hbar = augment_ones(trace.activations[-2])
        dnu_dhbar = 2.0 * hbar @ block_sum
        dnu_dadded = dnu_dhbar[:, n_out_orig : n_out_orig + added]
        pre_added = trace.pre_activations[top][:, n_out_orig:]
        delta = dnu_dadded * activation_derivative(
            net.specs[top].activation, pre_added
        )
        weight = sign / batch.shape[0]
        h_prev = trace.activations[top][:, :n_in_orig]
        grad_w[top][n_out_orig:, :n_in_orig] += weight * (delta.T @ h_prev)
        grad_b[top][n_out_orig:] += weight * delta.sum(axis=0)

    accumulate(np.atleast_2d(in_batch), 1.0)
    accumulate(np.atleast_2d(out_batch), -1.0)
    return ParamGrads(grad_w, grad_b)


def objective_gradient(
    net: Network,
    aug: LulaAugmentation,
    post: LaplacePosterior,
    in_batch: np.ndarray,
    out_batch: np.ndarray,
    cfg: LulaTrainConfig,
) -> ParamGrads:
    """Gradient of the variance objective over the free parameters only.

    The default central finite differences perturb each free coordinate with
    step 1e-4 * max(1, |value|); the analytic path is restricted to the
    linearized evaluator with a last-layer posterior and is validated against
    the finite-difference oracle in the test suite. Either way the posterior
    is treated as fixed.
    """
    in_batch = np.atleast_2d(np.asarray(in_batch, dtype=np.float64))
    out_batch = np.atleast_2d(np.asarray(out_batch, dtype=np.float64))
    if cfg.gradient_method == "analytic":
        return _analytic_gradient(net, aug, post, in_batch, out_batch, cfg)
    return _fd_gradient(net, aug, post, in_batch, out_batch, cfg)


def _draw_batch(features: np.ndarray, size: int, rng: Rng) -> np.ndarray:
    if size >= features.shape[0]:
        return features
    idx = rng.permutation(features.shape[0])[:size]
    return features[idx]


def train_lula(
    net: Network,
    aug: LulaAugmentation,
    in_features: np.ndarray,
    out_features: np.ndarray,
    loss: LossKind,
    prior_precision: float,
    cfg: LulaTrainConfig,
) -> tuple[Network, list[float], LaplacePosterior]:
    """Tune the free parameters of an augmented network.

    Per epoch: refit a diagonal last-layer posterior of the current network
    on the inlier features, evaluate the variance objective on fresh seeded
    batches, take a masked gradient step. Original parameters and structural
    zeros are preserved bitwise throughout. Returns the tuned network, the
    per-epoch objective history, and a final refit posterior.
    """
    in_features = np.atleast_2d(np.asarray(in_features, dtype=np.float64))
    out_features = np.atleast_2d(np.asarray(out_features, dtype=np.float64))
    rng = Rng(cfg.seed)
    current = net
    history: list[float] = []
    adam_m = adam_v = None
    if cfg.optimizer == "adam":
        adam_m = ParamGrads(
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases],
        )
        adam_v = adam_m.copy()
    for epoch in range(cfg.epochs):
        curv = fit_curvature(current, in_features, loss, "diag_ggn", "last_layer")
        post = build_posterior(curv, prior_precision)
        in_batch = _draw_batch(in_features, cfg.in_batch, rng.derive(2 * epoch))
        out_batch = _draw_batch(out_features, cfg.out_batch, rng.derive(2 * epoch + 1))
        value = lula_objective(current, post, in_batch, out_batch, cfg)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite objective at epoch {epoch}")
        history.append(value)
        grads = mask_gradient(
            objective_gradient(current, aug, post, in_batch, out_batch, cfg), aug
        )
        steps = _update_direction(grads, adam_m, adam_v, epoch, cfg)
        weights = [
            w - cfg.learning_rate * s for w, s in zip(current.weights, steps.weights)
        ]
        biases = [
            b - cfg.learning_rate * s for b, s in zip(current.biases, steps.biases)
        ]
        current = Network(current.specs, weights, biases)
    curv = fit_curvature(current, in_features, loss, "diag_ggn", "last_layer")
    return current, history, build_posterior(curv, prior_precision)


def _update_direction(grads, adam_m, adam_v, epoch, cfg) -> ParamGrads:
    # masked entries carry exactly-zero gradients, so both branches leave
    # them bitwise untouched (0 - lr * 0)
    if cfg.optimizer == "gd":
        return grads
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = epoch + 1
    out_w, out_b = [], []
    for kind, store_m, store_v, g_list in (
        ("w", adam_m.weights, adam_v.weights, grads.weights),
        ("b", adam_m.biases, adam_v.biases, grads.biases),
    ):
        out = out_w if kind == "w" else out_b
        for i, g in enumerate(g_list):
            store_m[i] = b1 * store_m[i] + (1.0 - b1) * g
            store_v[i] = b2 * store_v[i] + (1.0 - b2) * g * g
            m_hat = store_m[i] / (1.0 - b1**t)
            v_hat = store_v[i] / (1.0 - b2**t)
            out.append(m_hat / (np.sqrt(v_hat) + eps))
    return ParamGrads(out_w, out_b)


def grid_search_units(
    net: Network,
    candidate_counts,
    in_val: np.ndarray,
    out_val: np.ndarray,
    loss: LossKind,
    prior_precision: float,
    cfg: LulaTrainConfig,
    num_classes: int,
    init_std: float | None = None,
) -> tuple[int, dict[int, float]]:
    """Pick the added-unit count minimizing the confidence-distance score.

    Each candidate count (added on the final hidden layer) is trained with
    :func:`train_lula`; the score is |1 - MMC_in| + |1/k - MMC_out| on the
    validation sets using the refit posterior. Ties break toward the smaller
    count; candidates whose posterior fails to factor are skipped with a
    warning. ``candidate_counts=None`` selects the default grid, dropping
    counts whose augmented posterior would exceed the dense dimension cap.
    """
    from .laplace import DEFAULT_DENSE_CAP
    from .metrics import mmc

    n_hidden = net.num_layers - 1
    if n_hidden < 1:
        raise ValueError("network has no hidden layer to augment")
    if candidate_counts is None:
        feat = net.specs[-1].in_dim
        candidate_counts = [
            c
            for c in DEFAULT_UNIT_GRID
            if net.output_dim * (feat + c + 1) <= DEFAULT_DENSE_CAP
        ]
    candidates = sorted(set(int(c) for c in candidate_counts))
    if not candidates:
        raise ValueError("candidate set must be nonempty")
    predict_cfg = PredictConfig(
        method="mc", sample_count=cfg.sample_count, seed=cfg.seed
    )
    scores: dict[int, float] = {}
    best_count, best_score = None, np.inf
    for count in candidates:
        counts = [0] * n_hidden
        counts[-1] = count
        rng = Rng(cfg.seed).derive(10_000 + count)
        try:
            aug_net, aug = augment(net, counts, rng, init_std)
            trained, _, post = train_lula(
                aug_net, aug, in_val, out_val, loss, prior_precision, cfg
            )
            mmc_in = mmc(mc_predict(trained, post, in_val, predict_cfg, loss).probabilities)
            mmc_out = mmc(mc_predict(trained, post, out_val, predict_cfg, loss).probabilities)
        except NotPositiveDefinite as exc:
            warnings.warn(f"skipping count {count}: {exc}")
            continue
        score = abs(1.0 - mmc_in) + abs(1.0 / num_classes - mmc_out)
        scores[count] = float(score)
        if score < best_score:
            best_score, best_count = score, count
    if best_count is None:
        raise NotPositiveDefinite("every candidate count failed to factor")
    return best_count, scores
