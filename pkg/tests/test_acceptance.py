"""End-to-end acceptance criteria, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line, repeated in the terminal summary.
"""
import time

import numpy as np
import pytest

from frm.config import load_config
from frm.experiments import final_rmse, run_linreg, run_mountain_car, run_synth_mlp
from frm.objectives import LabeledBatch, frm_linear_objective, frm_linear_weights, input_gram


def timed(fn, *args):
    t = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t


def summary_value(report, quantity, **cond):
    (row,) = [s for s in report.summary if s["quantity"] == quantity and all(s[k] == v for k, v in cond.items())]
    return row["mean"]


def linreg(alpha, dim):
    cfg = load_config(experiment="linreg", overrides=[f"linreg.alphas=[{alpha}]", f"linreg.dims=[{dim}]"])
    assert len(cfg.seeds) == 100
    return timed(run_linreg, cfg)


def test_criterion_1_bias_noise_favors_erm(verdict):
    rep, secs = linreg(0.0, 1)
    r = summary_value(rep, "ratio:erm/frm")
    ok = 0.80 <= r <= 1.00 and secs < 60
    assert verdict(1, ok, f"linreg alpha=0 d=1 mean ratio erm/frm {r:.4f} (target [0.80, 1.00]), {secs:.1f}s")


def test_criterion_2_slope_noise_favors_frm(verdict):
    rep, secs = linreg(1.0, 1)
    r = summary_value(rep, "ratio:erm/frm")
    ok = r >= 1.2 and secs < 60
    assert verdict(2, ok, f"linreg alpha=1 d=1 mean ratio erm/frm {r:.4f} (target >= 1.2), {secs:.1f}s")


def test_criterion_3_ten_dims(verdict):
    rep, secs = linreg(1.0, 10)
    r = summary_value(rep, "ratio:erm/frm")
    ok = r >= 2.0 and secs < 120
    assert verdict(3, ok, f"linreg alpha=1 d=10 mean ratio erm/frm {r:.4f} (target >= 2.0), {secs:.1f}s")


def mountain_car(kind):
    cfg = load_config(experiment="mountain-car", overrides=[f"mc.features=['{kind}']"])
    assert len(cfg.seeds) == 20
    rep, secs = timed(run_mountain_car, cfg)
    finals = final_rmse(rep.rows)
    erm = np.mean([v for (k, _, m), v in finals.items() if m == "erm"])
    frm = np.mean([v for (k, _, m), v in finals.items() if m == "frm"])
    return erm, frm, secs, rep.flags


@pytest.mark.slow
def test_criterion_4_mountain_car_focused(verdict):
    erm, frm, secs, flags = mountain_car("focused")
    ok = frm <= 0.85 * erm and secs < 1800
    assert verdict(4, ok, f"focused grid final RMSE frm {frm:.4f} vs erm {erm:.4f}, "
                          f"frm/erm {frm / erm:.3f} (target <= 0.85), {secs:.0f}s, flags {flags}")


@pytest.mark.slow
def test_criterion_5_mountain_car_uniform(verdict):
    erm, frm, secs, flags = mountain_car("uniform")
    ok = abs(frm - erm) <= 0.10 * erm and secs < 1800
    assert verdict(5, ok, f"uniform grid final RMSE frm {frm:.4f} vs erm {erm:.4f}, "
                          f"frm/erm {frm / erm:.3f} (target within 10%), {secs:.0f}s, flags {flags}")


@pytest.mark.slow
def test_criterion_6_synth_mlp(verdict):
    cfg = load_config(experiment="synth-mlp")
    assert len(cfg.seeds) == 30
    rep, secs = timed(run_synth_mlp, cfg)
    win = summary_value(rep, "frm_win_rate", regime="hidden")
    erm = summary_value(rep, "test_mse:erm", regime="bias")
    frm = summary_value(rep, "test_mse:frm", regime="bias")
    gap = abs(frm - erm) / erm
    ok = win >= 0.70 and gap <= 0.05 and secs < 600
    assert verdict(6, ok, f"hidden-noise FRM win rate {win:.2f} (target >= 0.70); bias-only mean test MSE "
                          f"erm {erm:.5f} frm {frm:.5f}, gap {gap:.1%} (target <= 5%); {secs:.0f}s")


def test_criterion_7_check_suite(check_run, verdict):
    results, secs = check_run
    failed = [r.name for r in results if not r.passed]
    ok = not failed and secs < 120
    assert verdict(7, ok, f"{len(results) - len(failed)}/{len(results)} invariant checks passed "
                          f"{'(failed: ' + ', '.join(failed) + ') ' if failed else ''}in {secs:.1f}s")


def test_criterion_8_golden_case(verdict):
    t = time.perf_counter()
    b = LabeledBatch(np.array([1.0, 2.0, 3.0]), np.array([2.0, 3.0, 5.0]))
    H = input_gram(b.inputs)
    w = frm_linear_weights(b.inputs, H)
    v = frm_linear_objective(b, 1.0, 1.0, H)
    secs = time.perf_counter() - t
    # hand 2x2 inverse: H = [[14/3, 2], [2, 1]], det 2/3, H^-1 = [[3/2, -3], [-3, 7]]
    Hinv = np.array([[1.5, -3.0], [-3.0, 7.0]])
    hand = [np.array([x, 1.0]) @ Hinv @ np.array([x, 1.0]) for x in (1.0, 2.0, 3.0)]
    ok = (np.max(np.abs(w - [2.5, 1.0, 2.5])) < 1e-12 and np.max(np.abs(w - hand)) < 1e-12
          and abs(v - 0.4) < 1e-12 and secs < 1.0)
    assert verdict(8, ok, f"weights {w.tolist()}, objective {v!r}, {secs * 1e3:.2f}ms")
