import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frm.errors import ContractError
from frm.models import AffineModel
from frm.objectives import ErmProblem, LabeledBatch, design_matrix
from frm.optim import (
    BatchStream, TrainConfig, TrainTrace, eval_steps, grid_search, train, train_weighted_lsq,
    weighted_lsq_objective,
)


def quad(theta, idx):
    return float(0.5 * (theta[0] - 3.0) ** 2), np.array([theta[0] - 3.0])


def test_config_contract():
    for bad in (dict(steps=0), dict(steps=1, batch_size=0), dict(steps=1, momentum=1.0), dict(steps=1, step_size=0)):
        with pytest.raises(ContractError):
            TrainConfig(**bad)


def test_quadratic_exact_step():
    tr = train(quad, [10.0], 1, TrainConfig(steps=2, step_size=1.0, momentum=0.0))
    assert tr.final_params[0] == 3.0
    tr = train(quad, [10.0], 1, TrainConfig(steps=1, step_size=1.0, momentum=0.0))
    assert tr.final_params[0] == 3.0


def test_zero_gradient_unchanged():
    init = np.array([1.5, -2.0])
    tr = train(lambda p, i: (0.0, np.zeros(2)), init, 10, TrainConfig(steps=50))
    np.testing.assert_array_equal(tr.final_params, init)
    assert tr.status == "ok" and tr.steps_done == 50


def test_erm_affine_normal_equations():
    b = LabeledBatch(np.array([1.0, 2.0, 3.0]), np.array([2.0, 3.0, 5.0]))
    A = design_matrix(b.inputs)
    ref = np.linalg.solve(A.T @ A, A.T @ b.targets[:, 0])
    tr = train(ErmProblem("mse", AffineModel(1), b), np.zeros(2), 3,
               TrainConfig(steps=3000, step_size=0.05, momentum=0.9))
    assert np.max(np.abs(tr.final_params - ref)) < 1e-6


def test_divergence_is_reported():
    tr = train(lambda p, i: (float(p[0] ** 2), np.array([2 * p[0]])), [1.0], 1,
               TrainConfig(steps=5000, step_size=10.0, momentum=0.0))
    assert tr.diverged and np.all(np.isfinite(tr.final_params)) and tr.steps_done < 5000


def test_eval_schedule_and_records():
    cfg = TrainConfig(steps=25, eval_every=10)
    assert eval_steps(cfg) == [10, 20, 25]
    tr = train(quad, [0.0], 4, cfg, evaluate=lambda p: abs(p[0] - 3))
    assert [r.step for r in tr.records] == [10, 20, 25]
    assert tr.final_metric == pytest.approx(abs(tr.final_params[0] - 3))


def test_batch_stream_full_and_epochs():
    s = BatchStream(5, 256, 0)
    np.testing.assert_array_equal(s.epoch(), [np.arange(5)])
    s = BatchStream(10, 3, 7)
    e = s.epoch()
    assert e.shape == (3, 3) and len(set(e.ravel())) == 9
    e2 = BatchStream(10, 3, 7).epoch()
    np.testing.assert_array_equal(e, e2)


@given(st.integers(0, 2 ** 31), st.integers(1, 40), st.integers(1, 50))
def test_training_reproducible(seed, n, batch):
    rng = np.random.default_rng(seed)
    F, r = rng.normal(size=(n, 3)), rng.normal(size=n)
    obj = weighted_lsq_objective(F, r)
    cfg = TrainConfig(steps=30, step_size=1e-2, batch_size=batch, seed=seed, eval_every=7)
    a, b = train(obj, np.zeros(3), n, cfg), train(obj, np.zeros(3), n, cfg)
    assert a.records == b.records
    np.testing.assert_array_equal(a.final_params, b.final_params)


@given(st.integers(0, 2 ** 31))
def test_compiled_lsq_matches_generic(seed):
    rng = np.random.default_rng(seed)
    F, r, w = rng.normal(size=(50, 4)), rng.normal(size=50), rng.uniform(0.5, 2, 50)
    cfg = TrainConfig(steps=40, step_size=1e-2, batch_size=16, seed=seed, eval_every=15)
    a = train(weighted_lsq_objective(F, r, w), np.zeros(4), 50, cfg)
    b = train_weighted_lsq(F, r, w, np.zeros(4), cfg)
    np.testing.assert_allclose(a.final_params, b.final_params, rtol=1e-10, atol=1e-12)
    assert [x.step for x in a.records] == [x.step for x in b.records]
    np.testing.assert_allclose([x.train_objective for x in a.records], [x.train_objective for x in b.records],
                               rtol=1e-10)


def test_compiled_lsq_divergence():
    F = np.ones((4, 1))
    tr = train_weighted_lsq(F, np.ones(4), None, np.zeros(1), TrainConfig(steps=3000, step_size=5.0, momentum=0.0))
    assert tr.diverged and np.all(np.isfinite(tr.final_params))


def _trace(value, status="ok"):
    return TrainTrace([], np.array([value]), 0, status, 1)


def test_grid_single_candidate():
    assert grid_search(lambda s: _trace(s), [1e-3], lambda p: 1.0).best_step == 1e-3


def test_grid_skips_divergent():
    res = grid_search(lambda s: _trace(s, "diverged" if s > 0.05 else "ok"), [0.1, 0.01], lambda p: 0.0)
    assert res.best_step == 0.01 and math.isnan(res.scores[0.1])


def test_grid_ties_go_to_smaller():
    assert grid_search(lambda s: _trace(s), [0.1, 0.01, 0.03], lambda p: 2.0).best_step == 0.01


def test_grid_all_diverged():
    with pytest.raises(ContractError, match="diverged"):
        grid_search(lambda s: _trace(s, "diverged"), [0.1, 1.0], lambda p: 0.0)


def test_grid_selects_lowest_heldout_mse():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(200, 1))
    y = 2 * X[:, 0] + 0.3 + 0.1 * rng.normal(size=200)
    Xv = rng.uniform(-1, 1, size=(200, 1))
    yv = 2 * Xv[:, 0] + 0.3 + 0.1 * rng.normal(size=200)
    A, Av = design_matrix(X), design_matrix(Xv)
    mse = lambda p: float(np.mean((Av @ p - yv) ** 2))  # noqa: E731

    def run(step):
        return train(weighted_lsq_objective(A, y), np.zeros(2), 200,
                     TrainConfig(steps=100, step_size=step, batch_size=32, momentum=0.0))

    res = grid_search(run, [1e-3, 1e-2, 1e-1], mse)
    held = {s: mse(run(s).final_params) for s in (1e-3, 1e-2, 1e-1)}
    assert res.best_step == min(held, key=held.get)
