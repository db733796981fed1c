"""Curvature estimation, Laplace posteriors, and predictive approximations.

Curvature is always the generalized Gauss-Newton (GGN): the indefinite exact
Hessian is replaced by sum_x J_x^T Lambda_x J_x with J_x the output Jacobian
and Lambda_x the output-space Hessian of the negative log-likelihood. The
posterior precision is the data-term curvature plus prior_precision * I.

Parameter subsets:

* ``all_layers``: the full flattened parameter vector (frozen layer-major
  ordering from :mod:`lula_lab.network`).
* ``last_layer``: only the output layer, with biases folded into the weight
  matrix through a constant-1 feature. Ordering is row-major over the
  augmented matrix [W | b], i.e. index (i, c) -> i * F + c with F the
  augmented feature count.

For the Kronecker-factored kind, the stored factors follow the convention
output_factor = sum over data of Lambda_x (k x k) and input_factor = average
over data of the augmented feature outer products (F x F), so that
kron(output_factor, input_factor) targets the data-term GGN. Variance queries
use the exact dense reconstruction kron(G, A) + lambda * I; sampling uses the
standard per-factor damped approximation (G + sqrt(lambda) I) kron
(A + sqrt(lambda) I), which is documented as an approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite
from .network import (
    Network,
    augment_ones,
    forward,
    output_jacobian,
)
from .numerics import Rng, inverse_cholesky_factor, kron
from .training import LossKind, output_hessians, sigmoid, softmax

__all__ = [
    "CURVATURE_KINDS",
    "SUBSETS",
    "Curvature",
    "LaplacePosterior",
    "PredictConfig",
    "Predictive",
    "fit_curvature",
    "build_posterior",
    "sample_params",
    "linearized_variance",
    "probit_predict_binary",
    "mc_predict",
    "tune_prior_precision",
]

CURVATURE_KINDS = ("full_ggn", "diag_ggn", "kfac_last_layer")
SUBSETS = ("all_layers", "last_layer")

DEFAULT_DENSE_CAP = 5000
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-4.0, 4.0, 17))


@dataclass
class Curvature:
    """Data-term GGN over a parameter subset (prior term not included)."""

    kind: str
    subset: str
    mean: np.ndarray
    num_outputs: int
    feature_dim: int | None = None
    full: np.ndarray | None = None
    diag: np.ndarray | None = None
    output_factor: np.ndarray | None = None
    input_factor: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def last_layer_mean(net: Network) -> np.ndarray:
    """Last-layer parameters in the augmented row-major ordering."""
    w, b = net.weights[-1], net.biases[-1]
    return np.concatenate([w, b[:, None]], axis=1).ravel(order="C")


def set_last_layer_flat(net: Network, flat: np.ndarray) -> Network:
    """Inverse of :func:`last_layer_mean`."""
    k = net.output_dim
    feat = net.specs[-1].in_dim + 1
    mat = flat.reshape(k, feat)
    return net.with_last_layer(mat[:, :-1].copy(), mat[:, -1].copy())


def fit_curvature(
    net: Network,
    features: np.ndarray,
    loss: LossKind,
    kind: str,
    subset: str = "last_layer",
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> Curvature:
    """Accumulate the data-term GGN over the given dataset.

    Targets are not needed: the inner factor is the output-space Hessian of
    the negative log-likelihood, a function of the outputs alone. For the
    last-layer subset the exact per-example structure
    Lambda_x kron (hbar hbar^T) is used directly; the Kronecker kind stores
    the two factors instead of assembling them.
    """
    if kind not in CURVATURE_KINDS:
        raise ValueError(f"unknown curvature kind {kind!r}")
    if subset not in SUBSETS:
        raise ValueError(f"unknown subset {subset!r}")
    if kind == "kfac_last_layer" and subset != "last_layer":
        raise ValueError("kfac_last_layer requires the last_layer subset")
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        raise ValueError("curvature data must be nonempty")
    k = net.output_dim

    if subset == "last_layer":
        trace = forward(net, features)
        hbar = augment_ones(trace.activations[-2])
        lambdas = output_hessians(loss, trace.output)
        feat = hbar.shape[1]
        dim = k * feat
        mean = last_layer_mean(net)
        if kind == "kfac_last_layer":
            return Curvature(
                kind,
                subset,
                mean,
                k,
                feature_dim=feat,
                output_factor=lambdas.sum(axis=0),
                input_factor=(hbar.T @ hbar) / features.shape[0],
            )
        if kind == "full_ggn":
            if dim > dense_cap:
                raise ValueError(
                    f"full_ggn dimension {dim} exceeds cap {dense_cap}"
                )
            h = np.einsum("mij,mc,md->icjd", lambdas, hbar, hbar, optimize=True)
            return Curvature(
                kind, subset, mean, k, feature_dim=feat, full=h.reshape(dim, dim)
            )
        lam_diag = np.einsum("mii->mi", lambdas)
        diag = np.einsum("mi,mc->ic", lam_diag, hbar * hbar).ravel(order="C")
        return Curvature(kind, subset, mean, k, feature_dim=feat, diag=diag)

    # all_layers: accumulate per example through the output Jacobian
    dim = net.num_params
    if kind == "full_ggn" and dim > dense_cap:
        raise ValueError(f"full_ggn dimension {dim} exceeds cap {dense_cap}")
    trace = forward(net, features)
    lambdas = output_hessians(loss, trace.output)
    mean = net.flatten_params()
    if kind == "full_ggn":
        acc = np.zeros((dim, dim))
        for i in range(features.shape[0]):
            jac = output_jacobian(net, features[i])
            acc += jac.T @ lambdas[i] @ jac
        return Curvature(kind, subset, mean, k, full=acc)
    acc_diag = np.zeros(dim)
    for i in range(features.shape[0]):
        jac = output_jacobian(net, features[i])
        acc_diag += np.einsum("ip,ij,jp->p", jac, lambdas[i], jac)
    return Curvature(kind, subset, mean, k, diag=acc_diag)


def _positive_diag(entries: np.ndarray) -> np.ndarray:
    """Apply the jitter ladder to a diagonal precision; raise if hopeless."""
    if np.all(entries > 0.0):
        return entries
    base = float(np.mean(entries))
    if not np.isfinite(base) or base <= 0.0:
        base = 1.0
    for scale in (1e-8, 1e-6):
        candidate = entries + scale * base
        if np.all(candidate > 0.0):
            return candidate
    raise NotPositiveDefinite("diagonal precision has non-positive entries")


class LaplacePosterior:
    """Gaussian over a parameter subset with precision H_data + lambda * I.

    Construction factors everything needed for sampling and variance
    queries; instances are immutable afterwards. Raises
    :class:`NotPositiveDefinite` when the damped curvature cannot be
    factored.
    """

    def __init__(
        self,
        curvature: Curvature,
        prior_precision: float,
        mean: np.ndarray | None = None,
        dense_cap: int = DEFAULT_DENSE_CAP,
    ):
        if prior_precision < 0.0:
            raise ValueError("prior_precision must be nonnegative")
        self.kind = curvature.kind
        self.subset = curvature.subset
        self.prior_precision = float(prior_precision)
        self.num_outputs = curvature.num_outputs
        self.feature_dim = curvature.feature_dim
        self.mean = np.array(
            curvature.mean if mean is None else mean, dtype=np.float64
        )
        if self.mean.shape != (curvature.dim,):
            raise ValueError("mean does not match curvature dimension")
        self._cov_factor: np.ndarray | None = None
        self._var_diag: np.ndarray | None = None
        self._out_sample_factor: np.ndarray | None = None
        self._feat_sample_factor: np.ndarray | None = None
        self._dense_cap = dense_cap
        self._output_factor = curvature.output_factor
        self._input_factor = curvature.input_factor

        lam = self.prior_precision
        if curvature.full is not None:
            precision = curvature.full + lam * np.eye(curvature.dim)
            self._cov_factor = inverse_cholesky_factor(precision)
        elif curvature.diag is not None:
            self._var_diag = 1.0 / _positive_diag(curvature.diag + lam)
        else:
            damp = np.sqrt(lam)
            g = curvature.output_factor + damp * np.eye(self.num_outputs)
            a = curvature.input_factor + damp * np.eye(self.feature_dim)
            self._out_sample_factor = inverse_cholesky_factor(g)
            self._feat_sample_factor = inverse_cholesky_factor(a)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def _dense_factor(self) -> np.ndarray:
        # Exact covariance factor for the Kronecker kind, cached lazily.
        if self._cov_factor is None:
            dim = self.dim
            if dim > self._dense_cap:
                raise ValueError(
                    f"dense reconstruction of dimension {dim} exceeds cap "
                    f"{self._dense_cap}"
                )
            precision = kron(self._output_factor, self._input_factor)
            precision += self.prior_precision * np.eye(dim)
            self._cov_factor = inverse_cholesky_factor(precision)
        return self._cov_factor

    def sample(self, rng: Rng, count: int) -> np.ndarray:
        """Draw parameter vectors, shape (count, dim), around the mean."""
        count = int(count)
        if self._var_diag is not None:
            z = rng.standard_normal((count, self.dim))
            return self.mean[None, :] + z * np.sqrt(self._var_diag)[None, :]
        if self.kind == "kfac_last_layer":
            # Matrix-normal draw S = M_G Z M_A^T; row-major flattening makes
            # the flat covariance the Kronecker product of the factor inverses.
            k, feat = self.num_outputs, self.feature_dim
            z = rng.standard_normal((count, k, feat))
            mats = np.einsum(
                "ij,njg,fg->nif", self._out_sample_factor, z, self._feat_sample_factor
            )
            return self.mean[None, :] + mats.reshape(count, self.dim)
        z = rng.standard_normal((count, self.dim))
        return self.mean[None, :] + z @ self._cov_factor.T

    def marginal_variances(self) -> np.ndarray:
        if self._var_diag is not None:
            return self._var_diag.copy()
        factor = self._dense_factor() if self.kind == "kfac_last_layer" else self._cov_factor
        return np.einsum("ij,ij->i", factor, factor)

    def quad_forms(self, vectors: np.ndarray) -> np.ndarray:
        """g^T Sigma g for each row g of ``vectors``."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if vectors.shape[1] != self.dim:
            raise ValueError("vector dimension does not match posterior")
        if self._var_diag is not None:
            return (vectors * vectors) @ self._var_diag
        factor = self._dense_factor() if self.kind == "kfac_last_layer" else self._cov_factor
        half = vectors @ factor
        return np.einsum("ij,ij->i", half, half)

    def output_block_cov(self) -> np.ndarray:
        """Per-output diagonal covariance blocks, shape (k, F, F).

        Only defined for last-layer posteriors; block i is the covariance of
        the augmented weight row feeding output i.
        """
        if self.subset != "last_layer":
            raise ValueError("output blocks only defined for last_layer subset")
        k, feat = self.num_outputs, self.feature_dim
        if self._var_diag is not None:
            blocks = np.zeros((k, feat, feat))
            var = self._var_diag.reshape(k, feat)
            for i in range(k):
                np.fill_diagonal(blocks[i], var[i])
            return blocks
        factor = self._dense_factor() if self.kind == "kfac_last_layer" else self._cov_factor
        blocks = np.empty((k, feat, feat))
        for i in range(k):
            rows = factor[i * feat : (i + 1) * feat]
            blocks[i] = rows @ rows.T
        return blocks

    def sum_output_block_cov(self) -> np.ndarray:
        """Sum over outputs of the diagonal covariance blocks (F x F)."""
        return self.output_block_cov().sum(axis=0)


def build_posterior(
    curvature: Curvature,
    prior_precision: float,
    mean: np.ndarray | None = None,
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> LaplacePosterior:
    """Gaussian posterior with covariance (H_data + prior_precision I)^-1."""
    return LaplacePosterior(curvature, prior_precision, mean, dense_cap)


def sample_params(post: LaplacePosterior, rng: Rng, count: int) -> np.ndarray:
    return post.sample(rng, count)


def _last_layer_feature_batch(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    return augment_ones(forward(net, x).activations[-2])


def linearized_variance_batch(
    net: Network, post: LaplacePosterior, x: np.ndarray
) -> np.ndarray:
    """Per-output linearized predictive variances, shape (m, k).

    v_i(x) = g_i^T Sigma g_i with g_i the output-i gradient restricted to the
    posterior subset, evaluated at the network's current parameters.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if post.subset == "last_layer":
        hbar = _last_layer_feature_batch(net, x)
        blocks = post.output_block_cov()
        return np.stack(
            [np.einsum("mf,fg,mg->m", hbar, blocks[i], hbar) for i in range(post.num_outputs)],
            axis=1,
        )
    out = np.empty((x.shape[0], post.num_outputs))
    for j in range(x.shape[0]):
        jac = output_jacobian(net, x[j])
        out[j] = post.quad_forms(jac)
    return out


def linearized_variance(
    net: Network, post: LaplacePosterior, x: np.ndarray
) -> np.ndarray:
    """Variance vector v(x) for a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("linearized_variance expects a single input vector")
    return linearized_variance_batch(net, post, x[None, :])[0]


def probit_predict_binary(f_map, v):
    """Binary predictive sigma(f / sqrt(1 + pi/8 * v)); v may be an array."""
    f_map = np.asarray(f_map, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0.0):
        raise ValueError("variance must be nonnegative")
    scaled = f_map / np.sqrt(1.0 + (np.pi / 8.0) * v)
    result = sigmoid(np.atleast_1d(scaled))
    return float(result[0]) if scaled.ndim == 0 else result.reshape(scaled.shape)


@dataclass(frozen=True)
class PredictConfig:
    method: str = "mc"
    sample_count: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("mc", "probit_linearized"):
            raise ValueError(f"unknown predict method {self.method!r}")
        if self.method == "mc" and self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")


@dataclass
class Predictive:
    """Predictive summary; classification fills probabilities, regression the rest.

    Regression variance is reported both without (epistemic) and with
    (total) the aleatoric 1/beta term.
    """

    probabilities: np.ndarray | None = None
    mean: np.ndarray | None = None
    var_epistemic: np.ndarray | None = None
    var_total: np.ndarray | None = None


def _sampled_outputs_accumulate(
    net: Network, post: LaplacePosterior, x: np.ndarray, samples: np.ndarray, combine
) -> None:
    """Evaluate the net under each parameter sample, calling combine(outputs)."""
    if post.subset == "last_layer":
        hbar = _last_layer_feature_batch(net, x)
        k, feat = post.num_outputs, post.feature_dim
        for s in samples:
            mat = s.reshape(k, feat)
            combine(hbar @ mat.T)
    else:
        for s in samples:
            combine(forward(net.with_flat_params(s), x).output)


def mc_predict(
    net: Network,
    post: LaplacePosterior,
    x: np.ndarray,
    cfg: PredictConfig,
    loss: LossKind,
) -> Predictive:
    """Posterior predictive for a batch.

    Classification returns the sample average of softmax (or sigmoid) outputs;
    regression returns the MC moments of the sampled outputs. The
    probit_linearized method is the closed-form alternative: exact
    linearization for regression, the probit approximation for single-logit
    binary classification (no multi-class closed form is provided).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    m, k = x.shape[0], net.output_dim
    classification = loss.kind in ("categorical_ce", "binary_ce")

    if cfg.method == "probit_linearized":
        if loss.kind == "categorical_ce":
            raise ValueError(
                "probit_linearized supports binary (single-logit) or regression "
                "models only"
            )
        f_map = forward(net, x).output
        v = linearized_variance_batch(net, post, x)
        if loss.kind == "binary_ce":
            p1 = probit_predict_binary(f_map[:, 0], v[:, 0])
            return Predictive(probabilities=np.stack([1.0 - p1, p1], axis=1))
        return Predictive(
            mean=f_map,
            var_epistemic=v,
            var_total=v + 1.0 / loss.noise_precision,
        )

    samples = post.sample(Rng(cfg.seed), cfg.sample_count)
    if classification:
        acc = np.zeros((m, k if loss.kind == "categorical_ce" else 2))

        def combine(outputs):
            if loss.kind == "categorical_ce":
                acc[:] += softmax(outputs)
            else:
                p1 = sigmoid(outputs[:, 0])
                acc[:, 0] += 1.0 - p1
                acc[:, 1] += p1

        _sampled_outputs_accumulate(net, post, x, samples, combine)
        return Predictive(probabilities=acc / cfg.sample_count)

    total = np.zeros((m, k))
    total_sq = np.zeros((m, k))

    def combine(outputs):
        total[:] += outputs
        total_sq[:] += outputs * outputs

    _sampled_outputs_accumulate(net, post, x, samples, combine)
    mean = total / cfg.sample_count
    var = total_sq / cfg.sample_count - mean * mean
    var = np.maximum(var, 0.0)
    return Predictive(
        mean=mean,
        var_epistemic=var,
        var_total=var + 1.0 / loss.noise_precision,
    )


def predictive_log_likelihood(
    net: Network,
    post: LaplacePosterior,
    features: np.ndarray,
    targets: np.ndarray,
    loss: LossKind,
    cfg: PredictConfig,
) -> float:
    """Summed predictive log-likelihood of a labelled dataset.

    Classification scores log of the predictive probability of the true
    class; regression scores the full Gaussian density with the total
    (epistemic plus aleatoric) predictive variance.
    """
    pred = mc_predict(net, post, features, cfg, loss)
    if pred.probabilities is not None:
        labels = np.asarray(targets).astype(np.int64)
        p = pred.probabilities[np.arange(labels.shape[0]), labels]
        return float(np.sum(np.log(np.maximum(p, 1e-300))))
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    var = np.maximum(pred.var_total, 1e-300)
    dens = -0.5 * np.log(2.0 * np.pi * var) - (y - pred.mean) ** 2 / (2.0 * var)
    return float(np.sum(dens))


def tune_prior_precision(
    net: Network,
    curvature: Curvature,
    features: np.ndarray,
    targets: np.ndarray,
    loss: LossKind,
    objective: str = "val_log_likelihood",
    grid=None,
    predict_cfg: PredictConfig | None = None,
    out_features: np.ndarray | None = None,
    num_classes: int | None = None,
) -> tuple[float, list[tuple[float, float]]]:
    """Pick the prior precision over a candidate grid.

    ``val_log_likelihood`` maximizes the predictive log-likelihood on the
    given validation data. ``ood_mmc`` minimizes
    |1 - MMC_in| + |1/k - MMC_out| and additionally needs ``out_features``
    and ``num_classes``. Candidates whose posterior cannot be factored are
    skipped; returns (best, [(lambda, score), ...]) with score in the
    objective's native orientation.
    """
    from .metrics import mmc  # local import to avoid a cycle

    if objective not in ("val_log_likelihood", "ood_mmc"):
        raise ValueError(f"unknown tuning objective {objective!r}")
    cand = list(DEFAULT_LAMBDA_GRID if grid is None else grid)
    if not cand:
        raise ValueError("candidate grid must be nonempty")
    cfg = predict_cfg or PredictConfig()
    if objective == "ood_mmc" and (out_features is None or num_classes is None):
        raise ValueError("ood_mmc needs out_features and num_classes")

    scores: list[tuple[float, float]] = []
    best_lam, best_key = None, -np.inf
    for lam in cand:
        try:
            post = build_posterior(curvature, lam)
            if objective == "val_log_likelihood":
                score = predictive_log_likelihood(
                    net, post, features, targets, loss, cfg
                )
                key = score
            else:
                mmc_in = mmc(mc_predict(net, post, features, cfg, loss).probabilities)
                mmc_out = mmc(
                    mc_predict(net, post, out_features, cfg, loss).probabilities
                )
                score = abs(1.0 - mmc_in) + abs(1.0 / num_classes - mmc_out)
                key = -score
        except NotPositiveDefinite:
            continue
        scores.append((float(lam), float(score)))
        if key > best_key:
            best_key, best_lam = key, float(lam)
    if best_lam is None:
        raise NotPositiveDefinite(
            "no prior-precision candidate produced a positive-definite posterior"
        )
    return best_lam, scores
