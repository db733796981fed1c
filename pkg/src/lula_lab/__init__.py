"""Laplace-approximated networks with trainable uncertainty units.

The package turns a point-estimated feedforward network into a Gaussian
posterior over (a subset of) its parameters and then tunes the resulting
predictive uncertainty post hoc by adding inactive hidden units whose only
effect is on the loss curvature.
"""

from .errors import (
    ConfigError,
    DivergenceError,
    LulaLabError,
    ModelFormatError,
    NotPositiveDefinite,
)
from .numerics import Rng, cholesky_psd, kron, sample_gaussian, solve_psd
from .network import (
    ForwardTrace,
    LayerSpec,
    Network,
    backward,
    forward,
    load,
    output_jacobian,
    save,
)
from .training import LossKind, TrainConfig, map_loss, train_map
from .laplace import (
    Curvature,
    LaplacePosterior,
    PredictConfig,
    Predictive,
    build_posterior,
    fit_curvature,
    linearized_variance,
    mc_predict,
    probit_predict_binary,
    sample_params,
    tune_prior_precision,
)
from .lula import (
    LulaAugmentation,
    LulaTrainConfig,
    augment,
    grid_search_units,
    lula_objective,
    mask_gradient,
    total_variance,
    train_lula,
)
from .data import (
    Dataset,
    SplitSpec,
    gen_toy_regression,
    gen_two_moons,
    gen_uniform_noise,
    load_csv,
    split,
    standardize,
    synthesize_ood,
)
from .metrics import EvalReport, auroc, brier, mmc

__version__ = "0.1.0"
