import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frm.errors import ContractError, RefusalError
from frm.metric import TdSamples, build_metric, default_damping, dense_metric, metric_from_features
from frm.models import AffineModel, MlpModel, RbfLinearModel, build_rbf_grid
from frm.objectives import td_features

X3 = np.array([[1.0], [2.0], [3.0]])


def test_affine_mse_metric_hand_value():
    op = build_metric(AffineModel(1), np.zeros(2), "mse", X3, damping=0.0)
    np.testing.assert_allclose(dense_metric(op), [[28 / 3, 4], [4, 2]], atol=1e-12)


def test_zero_vector():
    op = build_metric(MlpModel((1, 3, 1)), np.ones(10), "mse", X3, damping=0.1)
    assert not np.any(op.apply(np.zeros(10)))


def test_orthonormal_jacobian_gives_diagonal():
    # affine model at x = 0 has Jacobian (0, 1): H = diag(0, 2)
    op = build_metric(AffineModel(1), np.zeros(2), "mse", np.zeros((4, 1)), damping=0.0)
    np.testing.assert_allclose(dense_metric(op), np.diag([0.0, 2.0]))


def test_random_mlp_dense():
    rng = np.random.default_rng(0)
    m = MlpModel((2, 6, 1))
    assert m.n_params == 25
    m = MlpModel((3, 5, 1))
    assert m.n_params == 26
    m = MlpModel((2, 7, 1))
    assert m.n_params == 29
    op = build_metric(m, rng.normal(size=29), "mse", rng.normal(size=(12, 2)), damping=1e-3)
    M = dense_metric(op)
    assert np.max(np.abs(M - M.T)) < 1e-8
    assert np.linalg.eigvalsh(M).min() >= op.damping - 1e-8


def test_dense_cap():
    op = metric_from_features(np.ones((3, 600)))
    with pytest.raises(RefusalError):
        dense_metric(op)


def test_empty_samples_rejected():
    with pytest.raises(ContractError):
        build_metric(AffineModel(1), np.zeros(2), "mse", np.zeros((0, 1)))
    with pytest.raises(ContractError):
        build_metric(AffineModel(1), np.zeros(2), "mse", X3, damping=-1.0)


def test_hvp_and_jacobian_modes_agree():
    rng = np.random.default_rng(1)
    m = MlpModel((2, 4, 1))
    p, X = rng.normal(size=m.n_params), rng.normal(size=(9, 2))
    for loss in ("mse", "bce"):
        a = dense_metric(build_metric(m, p, loss, X, damping=0.0, mode="hvp"))
        b = dense_metric(build_metric(m, p, loss, X, damping=0.0, mode="jacobian"))
        assert np.max(np.abs(a - b)) < 1e-12


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 10.0))
def test_symmetric_psd_scale(seed, c):
    rng = np.random.default_rng(seed)
    m = MlpModel((2, 3, 1))
    p, X = rng.normal(size=m.n_params), rng.normal(size=(7, 2))
    op = build_metric(m, p, "bce", X, damping=1e-3)
    u, v = rng.normal(size=(2, m.n_params))
    assert abs(u @ op.apply(v) - v @ op.apply(u)) <= 1e-8 * np.linalg.norm(u) * np.linalg.norm(v)
    assert v @ op.apply(v) >= op.damping * (v @ v) - 1e-10
    scaled = build_metric(m, p, "bce", X, damping=0.0, scale=c)
    np.testing.assert_allclose(scaled.apply_undamped(v), c * op.apply_undamped(v), rtol=1e-10, atol=1e-14)


def test_td_gamma_zero_reduces_to_mse_on_features():
    rng = np.random.default_rng(2)
    rbf = RbfLinearModel(build_rbf_grid("uniform"))
    S = rng.random((15, 2))
    td = build_metric(rbf, np.zeros(226), "td", TdSamples(S, rng.random((15, 2)), np.zeros(15, bool), 0.0),
                      damping=0.0)
    mse = build_metric(rbf, np.zeros(226), "mse", S, damping=0.0)
    v = rng.normal(size=226)
    np.testing.assert_allclose(td.apply(v), mse.apply(v), rtol=1e-12, atol=1e-14)


def test_td_metric_matches_feature_metric():
    rng = np.random.default_rng(3)
    rbf = RbfLinearModel(build_rbf_grid("focused"))
    S, S2, term = rng.random((20, 2)), rng.random((20, 2)), rng.random(20) < 0.3
    td = build_metric(rbf, np.zeros(226), "td", TdSamples(S, S2, term, 0.9), damping=0.0)
    ref = metric_from_features(td_features(rbf, S, S2, term, 0.9), damping=0.0)
    assert np.max(np.abs(dense_metric(td) - dense_metric(ref))) < 1e-10


def test_default_damping_relative_to_trace():
    Psi = np.random.default_rng(4).normal(size=(50, 8))
    op = metric_from_features(Psi, damping=0.0)
    d = default_damping(op.matvec, 8)
    exact = 1e-4 * np.trace(dense_metric(op)) / 8
    assert d == pytest.approx(exact, rel=0.5)
    assert metric_from_features(Psi).damping == pytest.approx(d)
