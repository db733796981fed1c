"""Command-line driver: train, laplace, lula, eval, demo-toy.

Every command is deterministic given the config seeds; outputs are CSV and
key=value text so plotting stays external. Exit codes: 0 success, 1 runtime
or numeric failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as data_mod
from . import lula as lula_mod
from . import metrics as metrics_mod
from . import network as net_mod
from .config import ExperimentConfig, default_config, load_config
from .errors import ConfigError, LulaLabError
from .laplace import (
    PredictConfig,
    build_posterior,
    fit_curvature,
    mc_predict,
    predictive_log_likelihood,
    tune_prior_precision,
)
from .numerics import Rng, _mix64
from .training import LossKind, TrainConfig, softmax, train_map

FLOAT_FMT = "{:.10g}"


def _fmt(value: float) -> str:
    return FLOAT_FMT.format(float(value))


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def _write_csv(path: str, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    _write_lines(path, lines)


# ---------------------------------------------------------------------------
# config -> pipeline pieces


def _resolve_loss(cfg: ExperimentConfig, task: str) -> LossKind:
    choice = cfg.get_choice(
        "train", "loss", ("auto", "gaussian_nll", "categorical_ce", "binary_ce")
    )
    if choice == "auto":
        choice = "gaussian_nll" if task == "regression" else "categorical_ce"
    if choice == "gaussian_nll":
        return LossKind("gaussian_nll", cfg.get_float("train", "noise_precision"))
    return LossKind(choice)


def _build_data(cfg: ExperimentConfig):
    """Generate/ingest, split, and optionally standardize the dataset."""
    generator = cfg.get_choice(
        "data", "generator", ("two_moons", "toy_regression", "csv")
    )
    seed = cfg.get_int("data", "seed")
    size = cfg.get_int("data", "size")
    noise = cfg.get_float("data", "noise_std")
    if generator == "two_moons":
        full = data_mod.gen_two_moons(size, noise, seed)
    elif generator == "toy_regression":
        full = data_mod.gen_toy_regression(
            size,
            (cfg.get_float("data", "x_low"), cfg.get_float("data", "x_high")),
            noise,
            seed,
        )
    else:
        path = cfg.get("data", "csv_path").strip()
        if not path:
            raise ConfigError("[data] csv_path is required for generator = csv")
        target = cfg.get("data", "target_column").strip()
        if not target:
            raise ConfigError("[data] target_column is required for generator = csv")
        if not cfg.get_bool("data", "header"):
            target = int(target)
        full = data_mod.load_csv(path, target, cfg.get_bool("data", "header"))
        loss_choice = cfg.get("train", "loss")
        if loss_choice in ("categorical_ce", "binary_ce"):
            labels = full.targets.ravel().astype(np.int64)
            full = data_mod.Dataset(full.features, labels, task="classification")
    fractions = cfg.get_float_list("data", "split")
    if len(fractions) != 3:
        raise ConfigError("[data] split needs exactly three fractions")
    spec = data_mod.SplitSpec(tuple(fractions), seed=_mix64(seed, 1))
    train, val, test = data_mod.split(full, spec)
    if cfg.get_bool("data", "standardize"):
        include_targets = (
            cfg.get_bool("data", "standardize_targets")
            and full.task == "regression"
        )
        train, (val, test), _ = data_mod.standardize(
            train, [val, test], include_targets=include_targets
        )
    return train, val, test, _resolve_loss(cfg, full.task)


def _init_network(cfg: ExperimentConfig, input_dim: int) -> net_mod.Network:
    dims = cfg.get_int_list("model", "dims")
    if len(dims) < 2:
        raise ConfigError("[model] dims needs at least input and output sizes")
    if dims[0] != input_dim:
        raise ConfigError(
            f"[model] dims starts with {dims[0]} but the data has "
            f"{input_dim} features"
        )
    activation = cfg.get_choice(
        "model", "activation", ("relu", "selu", "tanh", "identity")
    )
    seed = _mix64(cfg.get_int("train", "seed"), 99)
    return net_mod.Network.init_random(list(dims), activation, Rng(seed))


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    batch = cfg.get_int("train", "batch_size")
    return TrainConfig(
        optimizer=cfg.get_choice("train", "optimizer", ("adam", "sgd")),
        learning_rate=cfg.get_float("train", "learning_rate"),
        momentum=cfg.get_float("train", "momentum"),
        epochs=cfg.get_int("train", "epochs"),
        batch_size=batch if batch > 0 else None,
        weight_decay=cfg.get_float("train", "weight_decay"),
        seed=cfg.get_int("train", "seed"),
    )


def _predict_config(cfg: ExperimentConfig, section: str, seed: int) -> PredictConfig:
    return PredictConfig(
        method=cfg.get_choice(section, "method", ("mc", "probit_linearized")),
        sample_count=cfg.get_int(section, "sample_count"),
        seed=seed,
    )


def _fit_posterior(cfg: ExperimentConfig, net, train, val, loss):
    """Curvature on the train split, prior precision fixed or tuned on val."""
    kind = cfg.get_choice(
        "laplace", "curvature", ("full_ggn", "diag_ggn", "kfac_last_layer")
    )
    subset = cfg.get_choice("laplace", "subset", ("last_layer", "all_layers"))
    curv = fit_curvature(net, train.features, loss, kind, subset)
    raw_lam = cfg.get("laplace", "prior_precision").strip()
    seed = cfg.get_int("laplace", "seed")
    predict_cfg = _predict_config(cfg, "laplace", seed)
    if raw_lam == "tune":
        objective = cfg.get_choice(
            "laplace", "tune_objective", ("val_log_likelihood", "ood_mmc")
        )
        out_features = None
        num_classes = None
        if objective == "ood_mmc":
            out_features = data_mod.gen_uniform_noise(
                val.num_rows,
                val.num_features,
                cfg.get_float("lula", "ood_low"),
                cfg.get_float("lula", "ood_high"),
                _mix64(seed, 7),
            ).features
            num_classes = 2 if loss.kind == "binary_ce" else net.output_dim
        lam, scores = tune_prior_precision(
            net,
            curv,
            val.features,
            val.targets,
            loss,
            objective=objective,
            grid=cfg.lambda_grid(),
            predict_cfg=predict_cfg,
            out_features=out_features,
            num_classes=num_classes,
        )
    else:
        try:
            lam = float(raw_lam)
        except ValueError:
            raise ConfigError(
                f"[laplace] prior_precision must be a float or 'tune', got {raw_lam!r}"
            ) from None
        scores = [(lam, float("nan"))]
    return build_posterior(curv, lam), curv, lam, scores


def _resolve_counts(cfg: ExperimentConfig, net) -> list[int] | None:
    """Unit counts per hidden layer, or None when a grid search is requested."""
    raw = cfg.get("lula", "counts").strip()
    n_hidden = net.num_layers - 1
    if raw == "grid":
        return None
    values = [int(p) for p in raw.split(",") if p.strip()]
    if len(values) == 1 and n_hidden >= 1:
        counts = [0] * n_hidden
        counts[-1] = values[0]
        return counts
    if len(values) != n_hidden:
        raise ConfigError(
            f"[lula] counts: expected 1 or {n_hidden} values, got {len(values)}"
        )
    return values


def _lula_train_config(cfg: ExperimentConfig, epochs: int | None = None):
    return lula_mod.LulaTrainConfig(
        learning_rate=cfg.get_float("lula", "learning_rate"),
        epochs=cfg.get_int("lula", "epochs") if epochs is None else epochs,
        sample_count=cfg.get_int("lula", "sample_count"),
        variance_evaluator=cfg.get_choice(
            "lula", "variance_evaluator", ("linearized", "mc")
        ),
        gradient_method=cfg.get_choice(
            "lula", "gradient_method", ("finite_difference", "analytic")
        ),
        in_batch=cfg.get_int("lula", "in_batch"),
        out_batch=cfg.get_int("lula", "out_batch"),
        seed=cfg.get_int("lula", "seed"),
    )


def _init_std(cfg: ExperimentConfig) -> float | None:
    raw = cfg.get("lula", "init_std").strip()
    if raw == "default":
        return None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(
            f"[lula] init_std must be 'default' or a float, got {raw!r}"
        ) from None


def _ood_training_features(cfg: ExperimentConfig, num_features: int) -> np.ndarray:
    return data_mod.gen_uniform_noise(
        cfg.get_int("lula", "ood_size"),
        num_features,
        cfg.get_float("lula", "ood_low"),
        cfg.get_float("lula", "ood_high"),
        _mix64(cfg.get_int("lula", "seed"), 11),
    ).features


# ---------------------------------------------------------------------------
# augmentation sidecar file


def _save_augmentation(path: str, aug: lula_mod.LulaAugmentation) -> None:
    lines = ["lula-lab-augmentation v1"]
    lines.append("counts " + " ".join(str(c) for c in aug.unit_counts))
    lines.append(
        "init_std "
        + ("default" if aug.init_std is None else format(aug.init_std, ".17g"))
    )
    for i, (mw, mb) in enumerate(zip(aug.weight_masks, aug.bias_masks)):
        lines.append(f"layer {i} mask_w {mw.shape[0]} {mw.shape[1]}")
        for row in mw.astype(int):
            lines.append(" ".join(str(v) for v in row))
        lines.append(f"mask_b {mb.shape[0]}")
        lines.append(" ".join(str(v) for v in mb.astype(int)))
    _write_lines(path, lines)


# ---------------------------------------------------------------------------
# commands


def cmd_train(config_path: str, out_path: str, seed: int | None = None) -> int:
    cfg = _load(config_path, seed)
    train, val, test, loss = _build_data(cfg)
    net = _init_network(cfg, train.num_features)
    trained, history = train_map(
        net, train.features, train.targets, loss, _train_config(cfg)
    )
    net_mod.save(trained, out_path)
    base = os.path.splitext(out_path)[0]
    _write_csv(
        base + "_history.csv",
        ["epoch", "map_loss"],
        [(i, float(v)) for i, v in enumerate(history)],
    )
    print(f"wrote {out_path} and {base}_history.csv")
    return 0


def cmd_laplace(
    config_path: str, model_path: str, out_path: str | None, seed: int | None = None
) -> int:
    cfg = _load(config_path, seed)
    train, val, test, loss = _build_data(cfg)
    net = net_mod.load(model_path)
    post, curv, lam, scores = _fit_posterior(cfg, net, train, val, loss)
    out_path = out_path or os.path.splitext(model_path)[0] + "_laplace.txt"
    lines = [
        "lula-lab-posterior v1",
        f"curvature {curv.kind}",
        f"subset {curv.subset}",
        f"prior_precision {_fmt(lam)}",
        f"objective {cfg.get('laplace', 'tune_objective')}",
    ]
    for cand, score in scores:
        lines.append(f"grid_point {_fmt(cand)} {_fmt(score)}")
    _write_lines(out_path, lines)
    print(f"wrote {out_path} (prior precision {_fmt(lam)})")
    return 0


def _prop1_check(original, augmented, extent: float, seed: int) -> float:
    """Max relative output difference over 100 fresh random inputs."""
    rng = Rng(seed)
    x = rng.uniform(-extent, extent, (100, original.input_dim))
    a = net_mod.forward(original, x).output
    b = net_mod.forward(augmented, x).output
    scale = max(float(np.max(np.abs(a))), 1e-30)
    return float(np.max(np.abs(a - b)) / scale)


def cmd_lula(
    config_path: str, model_path: str, out_path: str, seed: int | None = None
) -> int:
    cfg = _load(config_path, seed)
    train, val, test, loss = _build_data(cfg)
    net = net_mod.load(model_path)
    raw_lam = cfg.get("laplace", "prior_precision").strip()
    if raw_lam == "tune":
        _, _, lam, _ = _fit_posterior(cfg, net, train, val, loss)
    else:
        lam = float(raw_lam)
    lcfg = _lula_train_config(cfg)
    init_std = _init_std(cfg)
    in_features = val.features if val.num_rows else train.features
    out_features = _ood_training_features(cfg, train.num_features)
    counts = _resolve_counts(cfg, net)
    if counts is None:
        if loss.kind == "gaussian_nll":
            raise ConfigError(
                "[lula] counts = grid needs a classification model (the score "
                "uses class confidences)"
            )
        num_classes = 2 if loss.kind == "binary_ce" else net.output_dim
        best, scores = lula_mod.grid_search_units(
            net,
            cfg.get_int_list("lula", "grid"),
            in_features,
            out_features,
            loss,
            lam,
            lcfg,
            num_classes,
            init_std,
        )
        print(
            "grid search: "
            + ", ".join(f"{c}:{_fmt(s)}" for c, s in sorted(scores.items()))
            + f" -> {best}"
        )
        counts = [0] * (net.num_layers - 1)
        counts[-1] = best
    aug_net, aug = augment_with_seed(net, counts, cfg, init_std)
    tuned, history, _ = lula_mod.train_lula(
        aug_net, aug, in_features, out_features, loss, lam, lcfg
    )
    rel = _prop1_check(
        net, tuned, cfg.get_float("eval", "grid_extent"), _mix64(lcfg.seed, 17)
    )
    print(f"output-preservation check: max relative difference {rel:.3e}")
    if rel > 1e-12:
        print("output-preservation check FAILED", file=sys.stderr)
        return 1
    net_mod.save(tuned, out_path)
    base = os.path.splitext(out_path)[0]
    _save_augmentation(base + "_augmentation.txt", aug)
    _write_csv(
        base + "_history.csv",
        ["epoch", "objective"],
        [(i, float(v)) for i, v in enumerate(history)],
    )
    print(f"wrote {out_path}, {base}_augmentation.txt, {base}_history.csv")
    return 0


def augment_with_seed(net, counts, cfg: ExperimentConfig, init_std):
    rng = Rng(_mix64(cfg.get_int("lula", "seed"), 23))
    return lula_mod.augment(net, counts, rng, init_std)


def _eval_ood_sets(cfg: ExperimentConfig, test, loss):
    """Named OOD feature sets derived from the test split."""
    kinds = [
        k.strip()
        for k in cfg.get("eval", "ood_kinds").split(",")
        if k.strip()
    ]
    seed = cfg.get_int("eval", "seed")
    sets = {}
    for i, kind in enumerate(kinds):
        if kind in ("permute", "blur", "contrast"):
            sets[kind] = data_mod.synthesize_ood(
                test, kind, Rng(_mix64(seed, 100 + i))
            ).features
        elif kind == "uniform":
            sets[kind] = data_mod.gen_uniform_noise(
                test.num_rows, test.num_features, -10.0, 10.0, _mix64(seed, 100 + i)
            ).features
        elif kind == "asymptotic":
            sets[kind] = data_mod.gen_uniform_noise(
                test.num_rows,
                test.num_features,
                0.0,
                1.0,
                _mix64(seed, 100 + i),
                scale=5000.0,
            ).features
        else:
            raise ConfigError(f"[eval] ood_kinds: unknown kind {kind!r}")
    return sets


def cmd_eval(
    config_path: str, model_path: str, out_dir: str, seed: int | None = None
) -> int:
    cfg = _load(config_path, seed)
    train, val, test, loss = _build_data(cfg)
    net = net_mod.load(model_path)
    post, curv, lam, _ = _fit_posterior(cfg, net, train, val, loss)
    ood_sets = _eval_ood_sets(cfg, test, loss)
    runs = cfg.get_int("eval", "runs")
    eval_seed = cfg.get_int("eval", "seed")
    report_total = (
        cfg.get_choice("eval", "report_std", ("epistemic", "total")) == "total"
    )
    classification = loss.kind in ("categorical_ce", "binary_ce")

    per_metric: dict[str, list[float]] = {}
    first_run_reports: list[metrics_mod.EvalReport] = []
    for r in range(runs):
        pcfg = _predict_config(cfg, "eval", _mix64(eval_seed, 1000 + r))
        reports = []
        if classification:
            pred_test = mc_predict(net, post, test.features, pcfg, loss)
            conf_test = pred_test.probabilities.max(axis=1)
            reports.append(
                metrics_mod.EvalReport(
                    name="test",
                    mmc=metrics_mod.mmc(pred_test.probabilities),
                    brier=metrics_mod.brier(pred_test.probabilities, test.targets),
                    confidences=conf_test,
                )
            )
            for name, feats in ood_sets.items():
                pred = mc_predict(net, post, feats, pcfg, loss)
                conf = pred.probabilities.max(axis=1)
                reports.append(
                    metrics_mod.EvalReport(
                        name=name,
                        mmc=metrics_mod.mmc(pred.probabilities),
                        auroc=metrics_mod.auroc(conf_test, conf),
                        confidences=conf,
                    )
                )
            for report in reports:
                per_metric.setdefault(f"{report.name}.mmc", []).append(report.mmc)
                if report.auroc is not None:
                    per_metric.setdefault(f"{report.name}.auroc", []).append(
                        report.auroc
                    )
                if report.brier is not None:
                    per_metric.setdefault(f"{report.name}.brier", []).append(
                        report.brier
                    )
        else:
            def std_summary(pred):
                var = pred.var_total if report_total else pred.var_epistemic
                return float(np.mean(np.sqrt(var)))

            pred_test = mc_predict(net, post, test.features, pcfg, loss)
            per_metric.setdefault("test.mean_std", []).append(std_summary(pred_test))
            per_metric.setdefault("test.log_likelihood", []).append(
                predictive_log_likelihood(
                    net, post, test.features, test.targets, loss, pcfg
                )
            )
            for name, feats in ood_sets.items():
                pred = mc_predict(net, post, feats, pcfg, loss)
                per_metric.setdefault(f"{name}.mean_std", []).append(
                    std_summary(pred)
                )
        if r == 0:
            first_run_reports = reports

    os.makedirs(out_dir, exist_ok=True)
    if first_run_reports:
        conf_rows = []
        for report in first_run_reports:
            for i, value in enumerate(report.confidences):
                conf_rows.append((report.name, i, float(value)))
        _write_csv(
            os.path.join(out_dir, "eval_confidences.csv"),
            ["dataset", "index", "confidence"],
            conf_rows,
        )
    rows = []
    summary = [
        "lula-lab-eval v1",
        f"model {os.path.basename(model_path)}",
        f"prior_precision {_fmt(lam)}",
        f"runs {runs}",
    ]
    for name in sorted(per_metric):
        values = np.array(per_metric[name])
        dataset, metric = name.split(".", 1)
        rows.append((dataset, metric, float(values.mean()), float(values.std())))
        summary.append(f"{name}.mean {_fmt(values.mean())}")
        summary.append(f"{name}.std {_fmt(values.std())}")
    _write_csv(
        os.path.join(out_dir, "eval_report.csv"),
        ["dataset", "metric", "mean", "std"],
        rows,
    )
    _write_lines(os.path.join(out_dir, "eval_summary.txt"), summary)
    print(f"wrote {out_dir}/eval_report.csv and {out_dir}/eval_summary.txt")
    return 0


# ---------------------------------------------------------------------------
# demo-toy: the MAP -> LA -> LA+LULA comparison on both toy tasks


def _demo_moons(cfg: ExperimentConfig, out_dir: str, summary: list[str]) -> None:
    seed = cfg.get_int("demo", "seed")
    size = cfg.get_int("demo", "moons_size")
    noise = cfg.get_float("demo", "moons_noise")
    full = data_mod.gen_two_moons(size, noise, _mix64(seed, 1))
    train, val, test = data_mod.split(
        full, data_mod.SplitSpec((0.6, 0.2, 0.2), seed=_mix64(seed, 2))
    )
    loss = LossKind("categorical_ce")
    net0 = net_mod.Network.init_random([2, 64, 64, 2], "relu", Rng(_mix64(seed, 3)))
    tcfg = TrainConfig(
        optimizer="adam",
        learning_rate=1e-3,
        epochs=cfg.get_int("demo", "moons_train_epochs"),
        batch_size=64,
        weight_decay=1e-3,
        seed=_mix64(seed, 4),
    )
    net, _ = train_map(net0, train.features, train.targets, loss, tcfg)

    # untuned vanilla posterior: the prior precision is the training decay
    lam = tcfg.weight_decay
    curv = fit_curvature(net, train.features, loss, "kfac_last_layer", "last_layer")
    post_la = build_posterior(curv, lam)

    units = cfg.get_int("demo", "moons_lula_units")
    aug_net, aug = lula_mod.augment(net, [0, units], Rng(_mix64(seed, 6)), 0.2)
    lcfg = lula_mod.LulaTrainConfig(
        learning_rate=0.5,
        epochs=cfg.get_int("demo", "moons_lula_epochs"),
        in_batch=512,
        out_batch=512,
        seed=_mix64(seed, 7),
    )
    out_train = data_mod.gen_uniform_noise(
        cfg.get_int("lula", "ood_size"), 2, -10.0, 10.0, _mix64(seed, 8)
    ).features
    tuned, _, _ = lula_mod.train_lula(
        aug_net, aug, val.features, out_train, loss, lam, lcfg
    )
    curv_lula = fit_curvature(
        tuned, train.features, loss, "kfac_last_layer", "last_layer"
    )
    post_lula = build_posterior(curv_lula, lam)

    extent = cfg.get_float("eval", "grid_extent")
    grid_n = cfg.get_int("eval", "grid_size")
    axis = np.linspace(-extent, extent, grid_n)
    xx, yy = np.meshgrid(axis, axis)
    lattice = np.stack([xx.ravel(), yy.ravel()], axis=1)

    pcfg = PredictConfig("mc", cfg.get_int("eval", "sample_count"), _mix64(seed, 9))
    stage_probs = {
        "map": softmax(net_mod.forward(net, lattice).output),
        "laplace": mc_predict(net, post_la, lattice, pcfg, loss).probabilities,
        "lula": mc_predict(tuned, post_lula, lattice, pcfg, loss).probabilities,
    }
    for stage, probs in stage_probs.items():
        rows = [
            (lattice[i, 0], lattice[i, 1], probs[i, 0], probs[i, 1], probs[i].max())
            for i in range(lattice.shape[0])
        ]
        _write_csv(
            os.path.join(out_dir, f"moons_{stage}.csv"),
            ["x1", "x2", "p0", "p1", "confidence"],
            rows,
        )

    # far-field ring and in-distribution confidences per stage
    ring_rng = Rng(_mix64(seed, 10))
    radius = ring_rng.uniform(
        cfg.get_float("eval", "ring_inner"), cfg.get_float("eval", "ring_outer"), 400
    )
    angle = ring_rng.uniform(0.0, 2.0 * np.pi, 400)
    ring = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    nets = {"map": net, "laplace": net, "lula": tuned}
    posts = {"map": None, "laplace": post_la, "lula": post_lula}
    for stage in ("map", "laplace", "lula"):
        if posts[stage] is None:
            conf_ring = softmax(net_mod.forward(nets[stage], ring).output).max(axis=1)
            conf_test = softmax(
                net_mod.forward(nets[stage], test.features).output
            ).max(axis=1)
        else:
            conf_ring = (
                mc_predict(nets[stage], posts[stage], ring, pcfg, loss)
                .probabilities.max(axis=1)
            )
            conf_test = (
                mc_predict(nets[stage], posts[stage], test.features, pcfg, loss)
                .probabilities.max(axis=1)
            )
        summary.append(f"moons.{stage}.ring_confidence {_fmt(conf_ring.mean())}")
        summary.append(f"moons.{stage}.test_confidence {_fmt(conf_test.mean())}")
    map_labels = net_mod.forward(net, test.features).output.argmax(axis=1)
    lula_labels = net_mod.forward(tuned, test.features).output.argmax(axis=1)
    summary.append(
        f"moons.label_agreement {_fmt(float(np.mean(map_labels == lula_labels)))}"
    )
    summary.append(f"moons.prior_precision {_fmt(lam)}")


def _demo_regression(cfg: ExperimentConfig, out_dir: str, summary: list[str]) -> None:
    seed = cfg.get_int("demo", "seed")
    full = data_mod.gen_toy_regression(
        cfg.get_int("demo", "reg_size"),
        (-4.0, 4.0),
        cfg.get_float("demo", "reg_noise"),
        _mix64(seed, 21),
    )
    train, val, test = data_mod.split(
        full, data_mod.SplitSpec((0.6, 0.2, 0.2), seed=_mix64(seed, 22))
    )
    train, (val, test), stats = data_mod.standardize(
        train, [val, test], include_targets=True
    )
    loss = LossKind("gaussian_nll", cfg.get_float("train", "noise_precision"))
    net0 = net_mod.Network.init_random([1, 50, 1], "relu", Rng(_mix64(seed, 23)))
    tcfg = TrainConfig(
        optimizer="adam",
        learning_rate=1e-2,
        epochs=cfg.get_int("demo", "reg_train_epochs"),
        batch_size=None,
        weight_decay=1e-3,
        seed=_mix64(seed, 24),
    )
    net, _ = train_map(net0, train.features, train.targets, loss, tcfg)

    lam = tcfg.weight_decay
    curv = fit_curvature(net, train.features, loss, "kfac_last_layer", "last_layer")
    post_la = build_posterior(curv, lam)

    units = cfg.get_int("demo", "reg_lula_units")
    aug_net, aug = lula_mod.augment(net, [units], Rng(_mix64(seed, 26)), 0.2)
    lcfg = lula_mod.LulaTrainConfig(
        learning_rate=1.0,
        epochs=cfg.get_int("demo", "reg_lula_epochs"),
        in_batch=512,
        out_batch=512,
        seed=_mix64(seed, 27),
    )
    out_train = data_mod.gen_uniform_noise(
        cfg.get_int("lula", "ood_size"), 1, -10.0, 10.0, _mix64(seed, 28)
    ).features
    tuned, _, _ = lula_mod.train_lula(
        aug_net, aug, val.features, out_train, loss, lam, lcfg
    )
    curv_lula = fit_curvature(
        tuned, train.features, loss, "kfac_last_layer", "last_layer"
    )
    post_lula = build_posterior(curv_lula, lam)

    extent = cfg.get_float("eval", "grid_extent")
    grid_n = cfg.get_int("eval", "grid_size")
    grid = np.linspace(-extent, extent, grid_n * 10).reshape(-1, 1)
    pcfg = PredictConfig("mc", cfg.get_int("eval", "sample_count"), _mix64(seed, 29))
    aleatoric = 1.0 / loss.noise_precision
    report_total = (
        cfg.get_choice("eval", "report_std", ("epistemic", "total")) == "total"
    )

    def stage_rows(network, post, x):
        mean_map = net_mod.forward(network, x).output
        if post is None:
            zeros = np.zeros_like(mean_map)
            return mean_map, zeros, np.full_like(mean_map, np.sqrt(aleatoric))
        pred = mc_predict(network, post, x, pcfg, loss)
        return pred.mean, np.sqrt(pred.var_epistemic), np.sqrt(pred.var_total)

    for stage, (network, post) in {
        "map": (net, None),
        "laplace": (net, post_la),
        "lula": (tuned, post_lula),
    }.items():
        mean, std_e, std_t = stage_rows(network, post, grid)
        rows = [
            (grid[i, 0], mean[i, 0], std_e[i, 0], std_t[i, 0])
            for i in range(grid.shape[0])
        ]
        _write_csv(
            os.path.join(out_dir, f"regression_{stage}.csv"),
            ["x", "mean", "std_epistemic", "std_total"],
            rows,
        )
        std_report = std_t if report_total else std_e
        far = np.abs(grid[:, 0]) >= cfg.get_float("eval", "far_field")
        summary.append(
            f"regression.{stage}.far_field_std {_fmt(std_report[far, 0].mean())}"
        )
        _, test_e, test_t = stage_rows(network, post, test.features)
        test_report = test_t if report_total else test_e
        summary.append(
            f"regression.{stage}.test_std {_fmt(float(test_report.mean()))}"
        )
    summary.append(f"regression.prior_precision {_fmt(lam)}")


def cmd_demo_toy(config_path: str | None, out_dir: str, seed: int | None = None) -> int:
    cfg = _load(config_path, seed) if config_path else default_config()
    if config_path is None and seed is not None:
        cfg = cfg.with_master_seed(seed)
    os.makedirs(out_dir, exist_ok=True)
    summary: list[str] = ["lula-lab-demo v1"]
    _demo_moons(cfg, out_dir, summary)
    _demo_regression(cfg, out_dir, summary)
    _write_lines(os.path.join(out_dir, "summary.txt"), summary)
    print(f"wrote 6 grid files and summary.txt in {out_dir}")
    return 0


# ---------------------------------------------------------------------------


def _load(config_path: str | None, seed: int | None) -> ExperimentConfig:
    cfg = load_config(config_path) if config_path else default_config()
    if seed is not None:
        cfg = cfg.with_master_seed(seed)
    return cfg


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lula-lab",
        description=(
            "Train a network, wrap it in a Laplace approximation, and tune "
            "its uncertainty with inactive hidden units."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False, out=None, config_required=True):
        p.add_argument(
            "--config",
            required=config_required,
            default=None,
            help="experiment config (INI); see python -m lula_lab.config",
        )
        if model:
            p.add_argument("--model", required=True, help="model file path")
        if out:
            p.add_argument("--out", required=out == "required", default=None, help="output path")
        p.add_argument("--seed", type=int, default=None, help="master seed override")

    common(sub.add_parser("train", help="MAP-train a network"), out="required")
    common(
        sub.add_parser("laplace", help="fit and tune a Laplace posterior"),
        model=True,
        out="optional",
    )
    common(
        sub.add_parser("lula", help="augment and train uncertainty units"),
        model=True,
        out="required",
    )
    common(
        sub.add_parser("eval", help="confidence metrics on test and OOD sets"),
        model=True,
        out="optional",
    )
    demo = sub.add_parser("demo-toy", help="MAP/LA/LA+LULA toy comparison")
    common(demo, out="required", config_required=False)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config, args.out, args.seed)
        if args.command == "laplace":
            return cmd_laplace(args.config, args.model, args.out, args.seed)
        if args.command == "lula":
            return cmd_lula(args.config, args.model, args.out, args.seed)
        if args.command == "eval":
            return cmd_eval(args.config, args.model, args.out or ".", args.seed)
        if args.command == "demo-toy":
            return cmd_demo_toy(args.config, args.out, args.seed)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LulaLabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
