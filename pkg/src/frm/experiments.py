"""The three experiment families plus the invariant check, as report builders."""
import math
import warnings

import numpy as np

from .data import LinearFgmSpec, MlpFgmSpec, gen_linear_fgm, gen_mlp_fgm
from .errors import CgWarning, ContractError
from .models import MlpModel, RbfLinearModel, build_rbf_grid, initial_params
from .mountain_car import (
    collect_transitions, energy_policy, ground_truth_values, normalize_states, sample_visited_states,
)
from .objectives import (
    ErmProblem, FrmRegressionProblem, LabeledBatch, ObjectiveConfig, fit_erm_affine,
    fit_weighted_affine, frm_linear_weights, input_gram, td_features, td_weights,
)
from .optim import TrainConfig, grid_search, train, train_weighted_lsq
from .report import ExperimentReport, SUMMARY_TAIL, comparison_rows, paired, stat_row

# ------------------------------------------------------------------ linreg


def fit_frm_linear(inputs, targets, damping=0.0):
    """Exact minimizer of the linear FRM objective with H = input Gram + damping I.

    A singular Gram matrix is retried with damping 1e-10 trace(H)/P; the
    second return value reports whether that happened.
    """
    H = input_gram(inputs)
    H = H + damping * np.eye(len(H))
    try:
        w = frm_linear_weights(inputs, H)
        retried = False
    except ContractError:
        H = H + 1e-10 * max(np.trace(H), 1.0) / len(H) * np.eye(len(H))
        w = frm_linear_weights(inputs, H)
        retried = True
    slope, offset = fit_weighted_affine(inputs, targets, 1.0 / w)
    return (slope, offset), retried


def _test_mse(pred, data, target):
    ref = data.clean if target == "clean" else data.targets
    return float(np.mean(np.sum((pred - ref) ** 2, axis=1)))


def run_linreg(cfg):
    rows, retries = [], 0
    for dim in cfg["linreg.dims"]:
        for alpha in cfg["linreg.alphas"]:
            for seed in cfg.seeds:
                spec = LinearFgmSpec(
                    dim=dim, n_train=cfg["linreg.n_train"], n_test=cfg["linreg.n_test"],
                    slope=[cfg["linreg.slope"]] * dim, offset=cfg["linreg.offset"],
                    noise_alpha=float(alpha), noise_scale=cfg["linreg.noise_scale"],
                    seed=(seed, dim),
                )
                train_set, test_set = gen_linear_fgm(spec)
                for method in cfg.methods:
                    if method == "erm":
                        slope, offset = fit_erm_affine(LabeledBatch(train_set.inputs, train_set.targets))
                    else:
                        (slope, offset), retried = fit_frm_linear(
                            train_set.inputs, train_set.targets, cfg["linreg.damping"])
                        retries += retried
                    pred = (test_set.inputs @ slope + offset)[:, None]
                    mse = _test_mse(pred, test_set, cfg["linreg.test_target"])
                    rows.append((seed, float(alpha), dim, method, mse))
    report = ExperimentReport("linreg", rows, [], ("alpha", "dim") + SUMMARY_TAIL, cfg,
                              {"damped_retries": retries})
    report.summary = summarize_linreg(report)
    return report


def summarize_linreg(report):
    from .report import as_dicts

    out = []
    groups = paired(as_dicts(report), ("alpha", "dim"), "test_mse")
    for (alpha, dim), per_seed in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        out += comparison_rows({"alpha": alpha, "dim": dim}, per_seed, report.config.methods, "test_mse")
    return out


# ------------------------------------------------------------ mountain car


def rmse(pred, truth):
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def _value_oracle(model, n, seed, gamma):
    states = sample_visited_states(n, seed)
    gt = ground_truth_values(states, energy_policy, gamma)
    feats = model.features(normalize_states(states[:, 0], states[:, 1]))
    return feats, gt.values, int(gt.truncated.sum())


def run_mountain_car(cfg, progress=None):
    gamma = cfg["mc.gamma"]
    rows, flags = [], {"diverged_runs": 0, "failed_grids": 0, "truncated_eval_rollouts": 0}
    selected = {}
    for kind in cfg["mc.features"]:
        model = RbfLinearModel(build_rbf_grid(kind), include_bias=cfg["mc.include_bias"])
        eval_F, eval_V, t1 = _value_oracle(model, cfg["mc.n_eval"], cfg["mc.eval_seed"], gamma)
        val_F, val_V, t2 = _value_oracle(model, cfg["mc.n_eval"], cfg["mc.validation_seed"], gamma)
        flags["truncated_eval_rollouts"] += t1 + t2
        for seed in cfg.seeds:
            ts = collect_transitions(energy_policy, cfg["mc.n_transitions"], seed)
            psi = td_features(model, ts.states, ts.next_states, ts.terminal, gamma)
            for method in cfg.methods:
                if method == "erm":
                    weights = None
                else:
                    w, _ = td_weights(psi, cfg.damping("mc.damping"), seed=seed)
                    inv = 1.0 / w
                    weights = inv / inv.mean()

                def run(step, weights=weights):
                    tc = TrainConfig(
                        steps=cfg["mc.steps"], step_size=step, batch_size=cfg["mc.batch_size"],
                        momentum=cfg["mc.momentum"], seed=seed, eval_every=cfg["mc.eval_every"],
                    )
                    return train_weighted_lsq(psi, ts.reward, weights, np.zeros(model.n_params), tc,
                                              evaluate=lambda th: rmse(eval_F @ th, eval_V))

                try:
                    res = grid_search(run, cfg["mc.step_grid"], lambda th: rmse(val_F @ th, val_V))
                except ContractError:
                    flags["failed_grids"] += 1
                    continue
                flags["diverged_runs"] += sum(t.diverged for t in res.traces.values())
                selected[(kind, seed, method)] = res.best_step
                for rec in res.best_trace.records:
                    rows.append((seed, kind, method, rec.step, rec.eval_metric))
                if progress:
                    progress(f"{kind} seed={seed} {method} step={res.best_step:g} "
                             f"rmse={res.best_trace.final_metric:.4f}")
    report = ExperimentReport("mountain-car", rows, [], ("features",) + SUMMARY_TAIL, cfg, flags)
    report.summary = summarize_mountain_car(report, selected)
    return report


def final_rmse(rows):
    """{(features, seed, method): rmse at the last recorded step}."""
    last = {}
    for seed, kind, method, step, value in rows:
        key = (kind, seed, method)
        if key not in last or step > last[key][0]:
            last[key] = (step, value)
    return {k: v[1] for k, v in last.items()}


def summarize_mountain_car(report, selected=None):
    out = []
    finals = final_rmse(report.rows)
    kinds = [k for k in report.config["mc.features"] if any(key[0] == k for key in finals)]
    for kind in kinds:
        per_seed = {}
        for (k, seed, method), v in finals.items():
            if k == kind:
                per_seed.setdefault(seed, {})[method] = v
        cond = {"features": kind}
        out += comparison_rows(cond, per_seed, report.config.methods, "final_rmse")
        if selected:
            for m in report.config.methods:
                steps = [s for (k, _, mm), s in selected.items() if k == kind and mm == m]
                if steps:
                    out.append(stat_row(cond, f"selected_step:{m}", steps))
    return out


# -------------------------------------------------------------- synth-mlp

REGIME_GROUPS = {"hidden": ("hidden_weights",), "bias": ("output_bias",), "none": ()}


def mlp_theta_star(model, cfg, seed):
    rng = np.random.default_rng([cfg["mlp.theta_seed"], seed])
    return cfg["mlp.theta_scale"] * rng.standard_normal(model.n_params)


def run_synth_mlp(cfg, progress=None):
    widths = tuple(cfg["mlp.widths"])
    model = MlpModel(widths)
    rows, flags = [], {"diverged_runs": 0, "cg_warnings": 0}
    ocfg = ObjectiveConfig(
        weight_mode=cfg["mlp.weight_mode"], refresh_every=cfg["mlp.refresh_every"],
        damping=cfg.damping("mlp.damping"), include_logdet=cfg["mlp.include_logdet"],
    )
    for regime in cfg["mlp.regimes"]:
        scales = {g: cfg["mlp.noise_scale"] for g in REGIME_GROUPS[regime]}
        for seed in cfg.seeds:
            spec = MlpFgmSpec(widths, mlp_theta_star(model, cfg, seed), scales,
                              n_train=cfg["mlp.n_train"], n_test=cfg["mlp.n_test"], seed=seed)
            train_set, test_set = gen_mlp_fgm(spec)
            batch = LabeledBatch(train_set.inputs, train_set.targets)
            tc = TrainConfig(steps=cfg["mlp.steps"], step_size=cfg["mlp.step_size"],
                             batch_size=cfg["mlp.batch_size"], momentum=cfg["mlp.momentum"], seed=seed)
            init = initial_params(model, seed)
            for method in cfg.methods:
                problem = ErmProblem("mse", model, batch) if method == "erm" else FrmRegressionProblem(model, batch, ocfg)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", CgWarning)
                    trace = train(problem, init, len(batch), tc)
                flags["cg_warnings"] += trace.cg_warning_count
                if trace.diverged:
                    flags["diverged_runs"] += 1
                    continue
                mse = _test_mse(model.predict(trace.final_params, test_set.inputs), test_set,
                                cfg["mlp.test_target"])
                if not math.isfinite(mse):
                    flags["diverged_runs"] += 1
                    continue
                rows.append((seed, regime, method, mse))
                if progress:
                    progress(f"{regime} seed={seed} {method} test_mse={mse:.5f}")
    report = ExperimentReport("synth-mlp", rows, [], ("regime",) + SUMMARY_TAIL, cfg, flags)
    report.summary = summarize_synth_mlp(report)
    return report


def summarize_synth_mlp(report):
    from .report import as_dicts

    out = []
    groups = paired(as_dicts(report), ("regime",), "test_mse")
    for regime in report.config["mlp.regimes"]:
        if (regime,) in groups:
            out += comparison_rows({"regime": regime}, groups[(regime,)], report.config.methods, "test_mse")
    return out


def run_experiment(cfg, progress=None):
    if cfg.experiment == "linreg":
        return run_linreg(cfg)
    if cfg.experiment == "mountain-car":
        return run_mountain_car(cfg, progress)
    if cfg.experiment == "synth-mlp":
        return run_synth_mlp(cfg, progress)
    raise ContractError(f"{cfg.experiment!r} is not a report-producing experiment")
