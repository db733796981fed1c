import numpy as np
import pytest

from conftest import relative_error
from lula_lab.errors import NotPositiveDefinite
from lula_lab.laplace import (
    DEFAULT_LAMBDA_GRID,
    Curvature,
    PredictConfig,
    build_posterior,
    fit_curvature,
    last_layer_mean,
    linearized_variance,
    linearized_variance_batch,
    mc_predict,
    probit_predict_binary,
    sample_params,
    tune_prior_precision,
)
from lula_lab.network import LayerSpec, Network, forward
from lula_lab.numerics import Rng, kron
from lula_lab.training import LossKind, map_loss, sigmoid, softmax


def linear_net(weight, bias):
    w = np.atleast_2d(np.asarray(weight, dtype=float))
    return Network(
        [LayerSpec(w.shape[1], w.shape[0], "identity")],
        [w],
        [np.asarray(bias, dtype=float).ravel()],
    )


def fd_hessian(f, theta, eps=1e-4):
    d = theta.size
    h = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            pp = theta.copy(); pp[i] += eps; pp[j] += eps
            pm = theta.copy(); pm[i] += eps; pm[j] -= eps
            mp = theta.copy(); mp[i] -= eps; mp[j] += eps
            mm = theta.copy(); mm[i] -= eps; mm[j] -= eps
            h[i, j] = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * eps * eps)
    return h


class TestFitCurvature:
    def test_gaussian_single_point_outer_product(self):
        # For a linear model the GGN equals the exact loss Hessian, so the
        # finite-difference Hessian of the data term is the oracle here.
        net = linear_net([[0.7, -0.3]], [0.2])
        x = np.array([[1.5, -2.0]])
        y = np.array([[0.4]])
        loss = LossKind("gaussian_nll", 1.0)
        curv = fit_curvature(net, x, loss, "full_ggn", "last_layer")
        xbar = np.array([1.5, -2.0, 1.0])
        assert np.allclose(curv.full, np.outer(xbar, xbar), atol=1e-12)

        def data_term(theta):
            value, _ = map_loss(net.with_flat_params(theta), x, y, loss, 0.0)
            return value

        fd = fd_hessian(data_term, net.flatten_params())
        assert relative_error(curv.full, fd) <= 1e-6

    def test_binary_ce_factor_at_zero_logit(self):
        net = linear_net([[0.0, 0.0]], [0.0])
        x = np.array([[2.0, -1.0]])
        curv = fit_curvature(net, x, LossKind("binary_ce"), "full_ggn", "last_layer")
        hbar = np.array([2.0, -1.0, 1.0])
        assert np.allclose(curv.full, 0.25 * np.outer(hbar, hbar), atol=1e-12)
        kf = fit_curvature(net, x, LossKind("binary_ce"), "kfac_last_layer")
        assert kf.output_factor[0, 0] == pytest.approx(0.25, abs=1e-15)

    def test_zero_feature_gives_zero_rows(self):
        net = linear_net([[0.3, 0.4]], [0.0])
        x = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]])
        curv = fit_curvature(net, x, LossKind("gaussian_nll"), "full_ggn", "last_layer")
        assert np.array_equal(curv.full[1], np.zeros(3))
        assert np.array_equal(curv.full[:, 1], np.zeros(3))

    def test_diag_matches_full_diagonal(self):
        rng = Rng(2)
        net = Network.init_random([3, 5, 2], "tanh", rng)
        x = rng.standard_normal((20, 3))
        loss = LossKind("categorical_ce")
        for subset in ("last_layer", "all_layers"):
            full = fit_curvature(net, x, loss, "full_ggn", subset)
            diag = fit_curvature(net, x, loss, "diag_ggn", subset)
            assert np.allclose(diag.diag, np.diag(full.full), atol=1e-10)

    def test_all_layers_matches_fd_hessian_linear_model(self):
        # multi-output linear model: GGN == exact Hessian over all params
        net = linear_net([[0.5, 0.1], [-0.2, 0.3]], [0.0, 0.1])
        x = np.array([[1.0, 2.0], [0.5, -1.0]])
        y = np.array([0, 1])
        loss = LossKind("categorical_ce")
        curv = fit_curvature(net, x, loss, "full_ggn", "all_layers")

        def data_term(theta):
            value, _ = map_loss(net.with_flat_params(theta), x, y, loss, 0.0)
            return value

        fd = fd_hessian(data_term, net.flatten_params())
        assert relative_error(curv.full, fd) <= 1e-5

    def test_kfac_requires_last_layer(self):
        net = linear_net([[1.0]], [0.0])
        with pytest.raises(ValueError):
            fit_curvature(net, np.ones((1, 1)), LossKind("gaussian_nll"),
                          "kfac_last_layer", "all_layers")

    def test_dimension_cap(self):
        net = Network.init_random([50, 60, 2], "relu", Rng(0))
        with pytest.raises(ValueError):
            fit_curvature(net, np.ones((1, 50)), LossKind("categorical_ce"),
                          "full_ggn", "all_layers", dense_cap=100)

    def test_kfac_exact_for_gaussian(self):
        # constant output factor makes the Kronecker split exact
        rng = Rng(3)
        net = Network.init_random([2, 4, 3], "tanh", rng)
        x = rng.standard_normal((15, 2))
        loss = LossKind("gaussian_nll", 2.0)
        full = fit_curvature(net, x, loss, "full_ggn", "last_layer")
        kf = fit_curvature(net, x, loss, "kfac_last_layer")
        assert np.allclose(kron(kf.output_factor, kf.input_factor), full.full,
                           atol=1e-10)


class TestBuildPosterior:
    def test_prior_only(self):
        curv = Curvature("full_ggn", "last_layer", np.zeros(3), 1, 3,
                         full=np.zeros((3, 3)))
        post = build_posterior(curv, 2.0)
        assert np.allclose(post.marginal_variances(), 0.5 * np.ones(3), atol=1e-12)

    def test_identity_curvature(self):
        curv = Curvature("full_ggn", "last_layer", np.zeros(2), 1, 2,
                         full=np.eye(2))
        post = build_posterior(curv, 1.0)
        assert np.allclose(post.marginal_variances(), 0.5 * np.ones(2), atol=1e-12)

    def test_kfac_marginals_match_dense_inverse(self):
        # 3-class, 4-feature instance; oracle is the explicit dense inverse
        rng = Rng(4)
        net = Network.init_random([2, 4, 3], "tanh", rng)
        x = rng.standard_normal((25, 2))
        curv = fit_curvature(net, x, LossKind("categorical_ce"), "kfac_last_layer")
        lam = 0.37
        post = build_posterior(curv, lam)
        dense = kron(curv.output_factor, curv.input_factor) + lam * np.eye(post.dim)
        oracle = np.diag(np.linalg.inv(dense))
        assert np.allclose(post.marginal_variances(), oracle, atol=1e-10)

    def test_negative_curvature_fails(self):
        curv = Curvature("full_ggn", "last_layer", np.zeros(1), 1, 1,
                         full=np.array([[-10.0]]))
        with pytest.raises(NotPositiveDefinite):
            build_posterior(curv, 0.1)

    def test_variance_monotone_in_prior_precision(self):
        rng = Rng(5)
        net = Network.init_random([2, 4, 2], "tanh", rng)
        x = rng.standard_normal((10, 2))
        loss = LossKind("categorical_ce")
        for kind in ("full_ggn", "diag_ggn", "kfac_last_layer"):
            curv = fit_curvature(net, x, loss, kind, "last_layer")
            previous = None
            for lam in DEFAULT_LAMBDA_GRID:
                var = build_posterior(curv, lam).marginal_variances()
                if previous is not None:
                    assert np.all(var <= previous + 1e-12), kind
                previous = var


class TestSampling:
    def _posterior(self, kind="full_ggn", lam=0.5, seed=6):
        rng = Rng(seed)
        net = Network.init_random([2, 4, 2], "tanh", rng)
        x = rng.standard_normal((20, 2))
        curv = fit_curvature(net, x, LossKind("categorical_ce"), kind, "last_layer")
        return build_posterior(curv, lam)

    def test_huge_precision_collapses_to_mean(self):
        post = self._posterior(lam=1e12)
        samples = sample_params(post, Rng(0), 50)
        assert np.max(np.abs(samples - post.mean)) <= 1e-4

    def test_empirical_covariance_full(self):
        post = self._posterior(lam=0.8)
        samples = sample_params(post, Rng(1), 10000)
        emp = np.cov(samples.T, bias=True)
        factor = post._cov_factor
        target = factor @ factor.T
        assert np.linalg.norm(emp - target) / np.linalg.norm(target) <= 0.10

    def test_seed_reproducibility(self):
        post = self._posterior()
        assert np.array_equal(
            sample_params(post, Rng(9), 7), sample_params(post, Rng(9), 7)
        )

    def test_kfac_sampling_matches_dense_oracle(self):
        # Per-factor damping is an approximation; with a prior precision small
        # against the factor spectra it stays within 10 percent of the exact
        # damped inverse. The output factor must be nonsingular for the dense
        # oracle to be finite as lambda shrinks (categorical factors have a
        # softmax-shift null direction), hence the Gaussian likelihood here.
        rng = Rng(7)
        net = Network.init_random([3, 5, 3], "tanh", rng)
        x = rng.standard_normal((40, 3))
        curv = fit_curvature(net, x, LossKind("gaussian_nll", 1.0), "kfac_last_layer")
        lam = 1e-9
        post = build_posterior(curv, lam)
        samples = post.sample(Rng(2), 50000)
        emp = np.cov(samples.T, bias=True)
        dense = kron(curv.output_factor, curv.input_factor) + lam * np.eye(post.dim)
        oracle = np.linalg.inv(dense)
        assert np.linalg.norm(emp - oracle) / np.linalg.norm(oracle) <= 0.10

    def test_diag_sampling_variances(self):
        post = self._posterior(kind="diag_ggn", lam=0.3)
        samples = sample_params(post, Rng(3), 40000)
        emp = samples.var(axis=0)
        assert np.allclose(emp, post.marginal_variances(), rtol=0.1, atol=1e-6)


class TestLinearizedVariance:
    def test_collapsed_posterior_gives_zero(self):
        rng = Rng(8)
        net = Network.init_random([2, 4, 2], "tanh", rng)
        x = rng.standard_normal((5, 2))
        curv = fit_curvature(net, x, LossKind("categorical_ce"), "full_ggn",
                             "last_layer")
        post = build_posterior(curv, 1e12)
        v = linearized_variance(net, post, x[0])
        assert np.all(v >= 0.0) and np.all(v <= 1e-8)

    def test_diagonal_hand_case(self):
        # v = sum_i g_i^2 sigma_i with g = (1, 2), sigma = (0.5, 0.25) -> 1.5
        curv = Curvature("diag_ggn", "last_layer", np.zeros(2), 1, 2,
                         diag=np.array([1.0, 3.0]))
        post = build_posterior(curv, 1.0)  # variances (0.5, 0.25)
        assert post.quad_forms(np.array([[1.0, 2.0]]))[0] == pytest.approx(1.5, abs=1e-12)

    def test_matches_subset_jacobian_quadratic_form(self):
        rng = Rng(9)
        net = Network.init_random([2, 5, 3], "tanh", rng)
        x = rng.standard_normal((12, 2))
        loss = LossKind("categorical_ce")
        curv = fit_curvature(net, x, loss, "full_ggn", "all_layers")
        post = build_posterior(curv, 0.5)
        point = rng.standard_normal(2)
        v = linearized_variance(net, post, point)
        from lula_lab.network import output_jacobian

        jac = output_jacobian(net, point)
        factor = post._cov_factor
        expected = np.einsum("ij,ij->i", jac @ factor, jac @ factor)
        assert np.allclose(v, expected, atol=1e-10)

    def test_mc_agrees_for_linear_last_layer(self):
        # outputs are linear in the sampled last layer, so the MC variance is
        # an unbiased estimate of the quadratic form; 3 standard errors
        rng = Rng(10)
        net = Network.init_random([2, 6, 1], "tanh", rng)
        x = rng.standard_normal((30, 2))
        curv = fit_curvature(net, x, LossKind("gaussian_nll"), "full_ggn",
                             "last_layer")
        post = build_posterior(curv, 0.2)
        point = rng.standard_normal(2)
        v = linearized_variance(net, post, point)[0]
        hbar = np.concatenate([forward(net, point[None]).activations[-2][0], [1.0]])
        samples = post.sample(Rng(11), 50000)
        outputs = samples.reshape(50000, -1) @ hbar
        mc_var = outputs.var()
        se = v * np.sqrt(2.0 / 50000)
        assert abs(mc_var - v) <= 3 * se


class TestProbit:
    def test_zero_variance_reduces_to_sigmoid(self):
        assert probit_predict_binary(1.3, 0.0) == pytest.approx(
            float(sigmoid(np.array([1.3]))[0]), abs=1e-15
        )

    def test_zero_logit_gives_half(self):
        for v in (0.0, 0.5, 10.0, 1e6):
            assert probit_predict_binary(0.0, v) == pytest.approx(0.5, abs=1e-15)

    def test_frozen_numeric_value(self):
        # sigma(2 / sqrt(1 + pi/8 * 8/pi)) = sigma(sqrt 2), evaluated directly
        expected = 1.0 / (1.0 + np.exp(-np.sqrt(2.0)))
        assert probit_predict_binary(2.0, 8.0 / np.pi) == pytest.approx(
            expected, abs=1e-12
        )
        assert expected == pytest.approx(0.8044296825069569, abs=1e-12)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            probit_predict_binary(1.0, -0.1)

    def test_monotonicity_in_variance(self):
        vs = np.linspace(0.0, 20.0, 50)
        up = np.array([probit_predict_binary(2.0, v) for v in vs])
        down = np.array([probit_predict_binary(-2.0, v) for v in vs])
        assert np.all(np.diff(up) < 0.0)
        assert np.all(np.diff(down) > 0.0)


class TestMcPredict:
    def _setup(self, lam, seed=12):
        rng = Rng(seed)
        net = Network.init_random([2, 5, 3], "tanh", rng)
        x = rng.standard_normal((25, 2))
        loss = LossKind("categorical_ce")
        curv = fit_curvature(net, x, loss, "kfac_last_layer")
        return net, build_posterior(curv, lam), x, loss

    def test_collapsed_posterior_equals_map_softmax(self):
        net, post, x, loss = self._setup(1e12)
        pred = mc_predict(net, post, x, PredictConfig("mc", 200, 0), loss)
        expected = softmax(forward(net, x).output)
        assert np.max(np.abs(pred.probabilities - expected)) <= 1e-4

    def test_rows_on_simplex(self):
        net, post, x, loss = self._setup(0.5)
        pred = mc_predict(net, post, x, PredictConfig("mc", 64, 1), loss)
        assert np.all(pred.probabilities >= 0.0)
        assert np.max(np.abs(pred.probabilities.sum(axis=1) - 1.0)) <= 1e-12

    def test_binary_mc_close_to_probit(self):
        rng = Rng(13)
        net = Network.init_random([2, 6, 1], "tanh", rng)
        x = rng.standard_normal((60, 2))
        loss = LossKind("binary_ce")
        curv = fit_curvature(net, x, loss, "full_ggn", "last_layer")
        post = build_posterior(curv, 0.5)
        test_points = rng.standard_normal((50, 2))
        mc = mc_predict(net, post, test_points, PredictConfig("mc", 10000, 2), loss)
        closed = mc_predict(
            net, post, test_points, PredictConfig("probit_linearized", 1, 0), loss
        )
        assert np.max(np.abs(mc.probabilities - closed.probabilities)) <= 0.02

    def test_regression_moments(self):
        rng = Rng(14)
        net = Network.init_random([1, 5, 1], "tanh", rng)
        x = rng.standard_normal((20, 1))
        loss = LossKind("gaussian_nll", 4.0)
        curv = fit_curvature(net, x, loss, "full_ggn", "last_layer")
        post = build_posterior(curv, 1.0)
        pred = mc_predict(net, post, x, PredictConfig("mc", 5000, 3), loss)
        assert np.allclose(pred.var_total, pred.var_epistemic + 0.25, atol=1e-12)
        v_lin = linearized_variance_batch(net, post, x)
        # linear-in-parameters outputs: MC moments approach the closed form
        assert np.allclose(pred.var_epistemic, v_lin, rtol=0.2, atol=1e-4)

    def test_probit_linearized_rejects_multiclass(self):
        net, post, x, loss = self._setup(1.0)
        with pytest.raises(ValueError):
            mc_predict(net, post, x, PredictConfig("probit_linearized", 1, 0), loss)


class TestTunePriorPrecision:
    def _instance(self, seed=15):
        rng = Rng(seed)
        net = Network.init_random([2, 6, 2], "relu", rng)
        x = rng.standard_normal((40, 2))
        labels = (x[:, 0] > 0).astype(np.int64)
        loss = LossKind("categorical_ce")
        curv = fit_curvature(net, x, loss, "kfac_last_layer")
        return net, curv, x, labels, loss

    def test_singleton_grid(self):
        net, curv, x, y, loss = self._instance()
        lam, scores = tune_prior_precision(net, curv, x, y, loss, grid=[3.7])
        assert lam == 3.7
        assert len(scores) == 1

    def test_returns_argmax_of_scores(self):
        net, curv, x, y, loss = self._instance()
        lam, scores = tune_prior_precision(
            net, curv, x, y, loss, grid=[0.01, 100.0],
            predict_cfg=PredictConfig("mc", 64, 5),
        )
        best = max(scores, key=lambda pair: pair[1])
        assert lam == best[0]

    def test_determinism(self):
        net, curv, x, y, loss = self._instance()
        kwargs = dict(grid=[0.1, 1.0, 10.0], predict_cfg=PredictConfig("mc", 32, 7))
        first = tune_prior_precision(net, curv, x, y, loss, **kwargs)
        second = tune_prior_precision(net, curv, x, y, loss, **kwargs)
        assert first == second

    def test_all_candidates_failing_raises(self):
        curv = Curvature("full_ggn", "last_layer", np.zeros(1), 1, 1,
                         full=np.array([[-100.0]]))
        net = linear_net([[1.0]], [0.0])
        with pytest.raises(NotPositiveDefinite):
            tune_prior_precision(
                net, curv, np.ones((2, 1)), np.zeros((2, 1)),
                LossKind("gaussian_nll"), grid=[0.1, 1.0],
                predict_cfg=PredictConfig("probit_linearized", 1, 0),
            )

    def test_ood_mmc_objective(self):
        net, curv, x, y, loss = self._instance()
        out = Rng(1).uniform(-8.0, 8.0, (30, 2))
        lam, scores = tune_prior_precision(
            net, curv, x, y, loss, objective="ood_mmc",
            grid=[0.01, 1.0, 100.0], predict_cfg=PredictConfig("mc", 64, 3),
            out_features=out, num_classes=2,
        )
        best = min(scores, key=lambda pair: pair[1])
        assert lam == best[0]

    def test_last_layer_mean_roundtrip(self):
        net = linear_net([[1.0, 2.0], [3.0, 4.0]], [5.0, 6.0])
        assert np.array_equal(
            last_layer_mean(net), np.array([1.0, 2.0, 5.0, 3.0, 4.0, 6.0])
        )
