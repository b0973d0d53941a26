"""Experiment runners behind the command-line subcommands.

Each runner takes plain config dicts (already merged with defaults and
validated by :mod:`tempair.cli`) and returns rows / reports; writing files
is left to the caller.
"""

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import augment as aug
from . import conjugate, linreg
from .datasets import make_dataset, teacher_spec
from .diagnostics import (
    correlation_report,
    effective_sample_size,
    intraclass_correlation,
    residual_series,
)
from .exceptions import ConfigError, SingularCovarianceError
from .net.equivariance import equivariance_deviation, total_variation_invariance
from .net.groups import group_elements
from .net.layers import Dense, GConvGG, GConvLift, GroupSpatialGAP, ReLU, Softmax
from .net.network import NetworkSpec, conv_classifier, forward, gconv_classifier, init_params
from .sampler import PriorSpec, SgMcmcConfig, bma_predict, run_chain
from ._validation import rel_err


# ---------------------------------------------------------------- conjugate tempering identity

def theorem1_cases(cfg, seed):
    """Random conjugate problems.  Variances are log-uniform on [0.1, 10]."""
    rng = np.random.default_rng(seed)
    cases = []
    for k in range(cfg["n_cases"]):
        mu0 = rng.normal(0.0, 2.0)
        sigma0_sq, sigma_sq, sigma_eta_sq = 10.0 ** rng.uniform(-1, 1, size=3)
        if cfg["sigma_eta_sq"] is not None:
            sigma_eta_sq = float(cfg["sigma_eta_sq"])
        n = int(rng.integers(1, cfg["max_n"] + 1))
        B = int(cfg["B"]) if cfg["B"] is not None else int(rng.integers(1, cfg["max_B"] + 1))
        model = conjugate.GaussianMeanModel(mu0, sigma0_sq, sigma_sq, sigma_eta_sq)
        sources = rng.normal(mu0, math.sqrt(sigma0_sq + sigma_sq), size=n)
        data = conjugate.augment_gaussian(model, sources, B, seed=aug.derive_seed(seed, k))
        cases.append((model, data))
    return cases


def theorem1_row(k, model, data, temperature):
    T = conjugate.optimal_temperature(model, data.B) if temperature == "optimal" else float(temperature)
    corr = conjugate.correlated_posterior(model, data)
    iid = conjugate.iid_tempered_posterior(model, data, T)
    dense = conjugate.dense_posterior_oracle(model, data)
    return {
        "case": k, "n": data.n, "B": data.B, "mu0": model.mu0, "sigma0_sq": model.sigma0_sq,
        "sigma_sq": model.sigma_sq, "sigma_eta_sq": model.sigma_eta_sq, "T": T,
        "mean_rel_iid": rel_err(iid.mean, corr.mean), "var_rel_iid": rel_err(iid.variance, corr.variance),
        "mean_rel_dense": rel_err(corr.mean, dense.mean), "var_rel_dense": rel_err(corr.variance, dense.variance),
    }


THEOREM1_COLUMNS = ("case", "n", "B", "mu0", "sigma0_sq", "sigma_sq", "sigma_eta_sq", "T",
                    "mean_rel_iid", "var_rel_iid", "mean_rel_dense", "var_rel_dense")


def run_theorem1(cfg, seed):
    """Compare tempered-iid, closed-form correlated and dense posteriors.

    Raises :class:`SingularCovarianceError` for degenerate cases.
    """
    rows = [theorem1_row(k, m, d, cfg["temperature"]) for k, (m, d) in enumerate(theorem1_cases(cfg, seed))]
    tol = cfg["tolerance"]
    keys = ("mean_rel_iid", "var_rel_iid", "mean_rel_dense", "var_rel_dense")
    worst = {f"max_{key}": max(r[key] for r in rows) for key in keys}
    failing = [r for r in rows if any(r[key] > tol for key in keys)]
    report = {"n_cases": len(rows), "tolerance": tol, "temperature": cfg["temperature"], **worst,
              "passed": not failing, "failing_cases": failing}
    return rows, report


# ---------------------------------------------------------------- KL temperature

KL_COLUMNS = ("B", "sigma_eps_sq", "sigma_eta_sq", "T_closed", "T_numeric", "kl_at_opt", "agreement", "status")


def run_kl_grid(cfg):
    rows = []
    for B in cfg["B"]:
        for se in cfg["sigma_eps_sq"]:
            for sh in cfg["sigma_eta_sq"]:
                try:
                    t_closed = linreg.optimal_kl_temperature(se, sh, B)
                    t_num = linreg.numeric_kl_temperature(se, sh, B)
                    kl = linreg.kl_residual_mismatch(se, sh, B)
                except SingularCovarianceError:
                    rows.append((B, se, sh, float("nan"), float("nan"), float("nan"), False, "singular"))
                    continue
                agree = abs(t_closed - t_num) <= cfg["tolerance"] * max(1.0, t_closed)
                rows.append((B, se, sh, t_closed, t_num, kl, agree, "ok"))
    ok = [r for r in rows if r[7] == "ok"]
    monotone = {}
    for se in cfg["sigma_eps_sq"]:
        for sh in cfg["sigma_eta_sq"]:
            series = [r[5] for r in sorted(ok, key=lambda r: r[0]) if r[1] == se and r[2] == sh and r[0] >= 2]
            monotone[f"{se}/{sh}"] = bool(all(b > a for a, b in zip(series, series[1:])))
    report = {
        "n_points": len(rows),
        "n_singular": len(rows) - len(ok),
        "max_abs_T_diff": max((abs(r[3] - r[4]) for r in ok), default=0.0),
        "all_agree": all(r[6] for r in ok),
        "kl_increasing_in_B": monotone,
        "tolerance": cfg["tolerance"],
    }
    return rows, report


# ---------------------------------------------------------------- shared builders

def build_model(model_cfg, size, n_classes=2):
    shape = (1, size, size)
    if model_cfg["architecture"] == "gconv":
        return gconv_classifier(shape, n_classes, model_cfg["channels"], model_cfg["group"],
                                model_cfg["kernel_size"], model_cfg["stride"], model_cfg["padding"],
                                model_cfg["bias"])
    if model_cfg["architecture"] == "conv":
        return conv_classifier(shape, n_classes, model_cfg["channels"], model_cfg["kernel_size"],
                               model_cfg["stride"], model_cfg["padding"], model_cfg["bias"])
    raise ConfigError(f"unknown architecture {model_cfg['architecture']!r}")


def build_teacher(model_cfg, data_cfg):
    """Invariant stride-1 G-net sharing the model's group, kernel and padding."""
    tcfg = dict(model_cfg, architecture="gconv", stride=1, channels=[data_cfg["teacher_channels"]],
                bias=data_cfg["teacher_bias"])
    return build_model(tcfg, data_cfg["size"])


def make_images(data_cfg, n, seed, teacher=None, teacher_params=None):
    return make_dataset(n, size=data_cfg["size"], labels=data_cfg["labels"], noise=data_cfg["noise"],
                        label_noise=data_cfg["label_noise"], teacher=teacher,
                        teacher_params=teacher_params, seed=seed, contrast=tuple(data_cfg["contrast"]))


# ---------------------------------------------------------------- temperature sweep

SWEEP_COLUMNS = ("replicate", "T", "mode", "test_nll", "test_accuracy", "ess", "chain_seed", "diverged")


def temperature_grid(sweep_cfg):
    if sweep_cfg["temperatures"]:
        grid = sorted({float(t) for t in sweep_cfg["temperatures"]})
    else:
        g = sweep_cfg["geometric"]
        grid = [float(t) for t in np.geomspace(g["low"], g["high"], g["points"])]
    if not grid or min(grid) <= 0:
        raise ConfigError("temperature grid must be nonempty and positive")
    return grid


def _replicate(cfg, rep, seed):
    """Data, model, bank, initial point and chain seed of one replicate.

    Everything random derives from ``derive_seed(seed, rep)`` so the same
    replicate is shared by every temperature and mode (common random
    numbers).
    """
    rseed = aug.derive_seed(seed, rep)
    data_cfg, prior_var = cfg["data"], cfg["prior"]["sigma_prior_sq"]
    teacher = teacher_params = None
    if data_cfg["labels"] == "teacher":
        teacher = build_teacher(cfg["model"], data_cfg)
        rng = np.random.default_rng(aug.derive_seed(rseed, 0))
        teacher_params = rng.normal(0.0, math.sqrt(prior_var), teacher.n_params)
    n = data_cfg["n_train"]
    data = make_images(data_cfg, n + data_cfg["n_test"], aug.derive_seed(rseed, 1), teacher, teacher_params)
    train, test = data.split(n)
    model = build_model(cfg["model"], data_cfg["size"])
    bank = aug.make_bank(aug.spec_from_config(cfg["augmentation"]["spec"]), cfg["augmentation"]["B"],
                         aug.derive_seed(rseed, 2))
    if cfg["sampler"]["init"] == "prior":
        init = np.random.default_rng(aug.derive_seed(rseed, 3)).normal(0.0, math.sqrt(prior_var), model.n_params)
    else:
        init = init_params(model, aug.derive_seed(rseed, 3))
    return {"rep": rep, "train": train, "test": test, "model": model, "bank": bank, "init": init,
            "chain_seed": aug.derive_seed(rseed, 4)}


def sampler_config(scfg, T, mode, seed):
    return SgMcmcConfig(
        alpha0=scfg["alpha0"], cycle_len=scfg["cycle_len"], burn_in=scfg["burn_in"], epochs=scfg["epochs"],
        batch_size=scfg["batch_size"], temperature=T, mode=mode, precondition=scfg["precondition"],
        seed=seed, schedule=scfg["schedule"], couple_step_to_temperature=scfg["couple_step_to_temperature"],
    ).validate()


def sweep_point(ctx, T, mode, cfg):
    """One chain at ``(T, mode)``; returns a row of :data:`SWEEP_COLUMNS`."""
    scfg = sampler_config(cfg["sampler"], T, mode, ctx["chain_seed"])
    train, test, model = ctx["train"], ctx["test"], ctx["model"]
    chain = run_chain(model, train.X, train.y, PriorSpec(cfg["prior"]["sigma_prior_sq"]), scfg,
                      bank=ctx["bank"], init=ctx["init"])
    nll = acc = float("nan")
    if not chain.diverged and chain.samples:
        probs = bma_predict(chain, model, test.X)
        p_true = probs[np.arange(len(test)), test.y]
        nll = float(-np.mean(np.log(np.maximum(p_true, 1e-300))))
        acc = float(np.mean(np.argmax(probs, axis=1) == test.y))
    ess = effective_sample_size(ctx["bank"].B, T)
    return (ctx["rep"], T, mode, nll, acc, ess, ctx["chain_seed"], chain.diverged)


def summarize_sweep(rows, grid, B):
    """Mean test NLL / accuracy per (mode, T) and the argmin temperature."""
    summary_rows, argmin = [], {}
    for mode in sorted({r[2] for r in rows}):
        means = []
        for T in grid:
            sel = [r for r in rows if r[2] == mode and r[1] == T]
            nll = np.array([r[3] for r in sel])
            acc = np.array([r[4] for r in sel])
            finite = np.isfinite(nll)
            m_nll = float(nll[finite].mean()) if finite.any() else float("nan")
            m_acc = float(acc[finite].mean()) if finite.any() else float("nan")
            means.append(m_nll)
            summary_rows.append((mode, T, m_nll, m_acc, B / T, int((~finite).sum()), bool(np.isclose(T, B))))
        means = np.array(means)
        idx = int(np.nanargmin(means)) if np.isfinite(means).any() else -1
        argmin[mode] = {"T": grid[idx] if idx >= 0 else None, "index": idx}
    b_index = int(np.argmin(np.abs(np.log(np.array(grid) / B))))
    report = {"grid": grid, "B": B, "B_grid_index": b_index, "B_in_grid": bool(np.isclose(grid[b_index], B)),
              "argmin": argmin}
    return summary_rows, report


SWEEP_SUMMARY_COLUMNS = ("mode", "T", "mean_test_nll", "mean_test_accuracy", "ess", "n_diverged", "is_B")


def run_sweep(cfg, seed, workers=1):
    grid = temperature_grid(cfg["sweep"])
    modes = cfg["sampler"]["modes"]
    for mode in modes:
        sampler_config(cfg["sampler"], 1.0, mode, 0)
    contexts = [_replicate(cfg, r, seed) for r in range(cfg["sweep"]["replicates"])]
    tasks = [(ctx, T, mode) for ctx in contexts for mode in modes for T in grid]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda t: sweep_point(*t, cfg), tasks))
    else:
        rows = [sweep_point(*t, cfg) for t in tasks]
    summary_rows, report = summarize_sweep(rows, grid, cfg["augmentation"]["B"])
    return rows, summary_rows, report


# ---------------------------------------------------------------- residual clustering

RESIDUAL_COLUMNS = ("global_index", "group", "aug_index", "residual")


def run_residuals(cfg, seed):
    """Residuals of an untrained network on augmented and on fresh data.

    The augmented series groups the ``B`` augmentations of each source;
    the unaugmented series groups ``B`` independent images, so its
    clustering statistics should vanish.
    """
    data_cfg = cfg["data"]
    model = build_model(cfg["model"], data_cfg["size"])
    params = init_params(model, aug.derive_seed(seed, 0))
    B, n_groups = cfg["augmentation"]["B"], cfg["residuals"]["n_groups"]
    predictor = lambda X: forward(model, params, X)  # noqa: E731
    teacher = teacher_params = None
    if data_cfg["labels"] == "teacher":
        teacher = build_teacher(cfg["model"], data_cfg)
        teacher_params = init_params(teacher, aug.derive_seed(seed, 3))

    src = make_images(data_cfg, n_groups, aug.derive_seed(seed, 1), teacher, teacher_params)
    bank = aug.make_bank(aug.spec_from_config(cfg["augmentation"]["spec"]), B, aug.derive_seed(seed, 4))
    Xt, yt, groups, _ = aug.expand_dataset(src.X, src.y, bank)
    res_aug = residual_series(predictor, Xt, yt, groups)

    fresh = make_images(data_cfg, n_groups * B, aug.derive_seed(seed, 2), teacher, teacher_params)
    res_iid = residual_series(predictor, fresh.X, fresh.y, np.arange(n_groups * B) // B)
    report = {"augmented": correlation_report(res_aug), "unaugmented": correlation_report(res_iid)}
    return res_aug, res_iid, report


# ---------------------------------------------------------------- equivariance

def _element_name(g):
    return f"r{g.rotation}" + ("f" if g.flip else "")


def run_equivariance(cfg, seed):
    """Equivariance deviations per (group, stride, padding, layer, element)
    and augmentation total variation of the resulting classifiers."""
    ecfg = cfg["equivariance"]
    size = ecfg["size"]
    rng = np.random.default_rng(aug.derive_seed(seed, 0))
    inputs = rng.standard_normal((ecfg["n_inputs"], 1, size, size))
    deviations, tv = [], []
    for group in ecfg["groups"]:
        for stride in ecfg["strides"]:
            for padding in ecfg["paddings"]:
                spec = gconv_classifier((1, size, size), 2, ecfg["channels"], group, ecfg["kernel_size"],
                                        stride, padding)
                params = init_params(spec, aug.derive_seed(seed, 1))
                probes = [i + 1 for i, layer in enumerate(spec.layers) if isinstance(layer, (GConvLift, GConvGG))]
                probes.append(len(spec.layers))
                for upto in probes:
                    for g in group_elements(group):
                        dev = max(equivariance_deviation(spec, params, x, g, upto) for x in inputs)
                        deviations.append({"group": group, "stride": stride, "padding": padding,
                                           "layer": upto, "element": _element_name(g), "deviation": dev})
                for k, aug_cfg in enumerate(ecfg["augmentations"]):
                    bank = aug.make_bank(aug.spec_from_config(aug_cfg), ecfg["B"], aug.derive_seed(seed, 2 + k))
                    value = float(np.mean([total_variation_invariance(spec, params, x, bank, item=i)
                                           for i, x in enumerate(inputs)]))
                    tv.append({"group": group, "stride": stride, "padding": padding,
                               "augmentation": aug_cfg, "mean_tv": value})
    summary = {}
    for d in deviations:
        key = f"{d['group']}/stride{d['stride']}/{d['padding']}"
        summary[key] = max(summary.get(key, 0.0), d["deviation"])
    return {"deviations": deviations, "total_variation": tv, "max_deviation": summary,
            "tolerance": ecfg["tolerance"]}
