import math
import warnings

import numpy as np
import pytest
import scipy.special
from hypothesis import given
from hypothesis import strategies as st

from frm.errors import CgWarning, ContractError
from frm.linalg import CgConfig, cg_solve, gaussian_logcdf, logdet_small, weight_matrix
from frm.metric import MetricOperator, build_metric, dense_metric
from frm.models import AffineModel, MlpModel

X3 = np.array([[1.0], [2.0], [3.0]])


def _identity(P, eps):
    return MetricOperator(lambda v: np.asarray(v, dtype=float), eps, P, "mse")


def test_identity_solve():
    b = np.array([1.0, -2.0, 3.0])
    res = cg_solve(_identity(3, 0.5), b)
    np.testing.assert_allclose(res.solution, b / 1.5)
    assert res.converged


def test_zero_rhs():
    res = cg_solve(_identity(3, 0.1), np.zeros(3))
    assert not np.any(res.solution) and res.iterations <= 1


def test_affine_solve_matches_dense():
    op = build_metric(AffineModel(1), np.zeros(2), "mse", X3, damping=0.0)
    z = cg_solve(op, np.array([1.0, 0.0])).solution
    np.testing.assert_allclose(z, np.linalg.solve(dense_metric(op), [1.0, 0.0]), atol=1e-8)


def test_nonconvergence_is_flagged():
    rng = np.random.default_rng(0)
    op = build_metric(MlpModel((2, 8, 1)), rng.normal(size=33), "mse", rng.normal(size=(40, 2)), damping=1e-6)
    with pytest.warns(CgWarning):
        res = cg_solve(op, rng.normal(size=33), CgConfig(max_iters=2))
    assert not res.converged and res.residual > 1e-8


@given(st.integers(0, 2 ** 32 - 1))
def test_cg_agrees_with_dense(seed):
    rng = np.random.default_rng(seed)
    m = MlpModel((2, 3, 1))
    op = build_metric(m, rng.normal(size=m.n_params), "mse", rng.normal(size=(8, 2)), damping=1e-2)
    b = rng.normal(size=(m.n_params, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error", CgWarning)
        res = cg_solve(op, b)
    M = dense_metric(op)
    assert np.linalg.norm(M @ res.solution - b) <= 1e-8 * np.linalg.norm(b) * 1.0001


def test_affine_weights_hand_values():
    op = build_metric(AffineModel(1), np.zeros(2), "mse", X3, damping=0.0, scale=0.5)
    assert weight_matrix(AffineModel(1), np.zeros(2), [1.0], op)[0, 0] == pytest.approx(2.5, abs=1e-10)
    assert weight_matrix(AffineModel(1), np.zeros(2), [2.0], op)[0, 0] == pytest.approx(1.0, abs=1e-10)


def test_zero_jacobian_gives_zero_matrix():
    class Constant(AffineModel):
        def apply(self, params, x):
            return 0.0 * params[:1] + 1.0

    m = Constant(1)
    op = MetricOperator(lambda v: np.asarray(v), 1.0, 2, "mse")
    assert weight_matrix(m, np.zeros(2), [1.0], op)[0, 0] == 0.0


def test_weight_scaling():
    a = build_metric(AffineModel(1), np.zeros(2), "mse", X3, damping=0.0)
    b = build_metric(AffineModel(1), np.zeros(2), "mse", X3, damping=0.0, scale=4.0)
    wa = weight_matrix(AffineModel(1), np.zeros(2), [1.5], a, CgConfig(residual_tol=1e-14))
    wb = weight_matrix(AffineModel(1), np.zeros(2), [1.5], b, CgConfig(residual_tol=1e-14))
    assert abs(wb[0, 0] - wa[0, 0] / 4) < 1e-10


def test_logdet_examples():
    assert logdet_small(np.eye(2)) == 0.0
    assert logdet_small([[2.5]]) == pytest.approx(math.log(2.5))
    assert logdet_small([[2.0, 1.0], [1.0, 2.0]]) == pytest.approx(math.log(3.0))
    with pytest.raises(ContractError, match="smallest eigenvalue"):
        logdet_small([[1.0, 2.0], [2.0, 1.0]])


def test_logcdf_examples():
    assert gaussian_logcdf(0.0) == pytest.approx(math.log(0.5), abs=1e-15)
    assert abs(gaussian_logcdf(10.0)) < 1e-20
    assert gaussian_logcdf(-10.0) == pytest.approx(-53.231285148, abs=1e-8)


def test_logcdf_matches_scipy_everywhere():
    z = np.linspace(-40, 10, 5001)
    ref = scipy.special.log_ndtr(z)
    assert np.max(np.abs(gaussian_logcdf(z) - ref) / np.maximum(np.abs(ref), 1e-300)) < 1e-12


@given(st.floats(-5, 5))
def test_logcdf_complement(z):
    assert abs(math.exp(gaussian_logcdf(z)) + math.exp(gaussian_logcdf(-z)) - 1.0) <= 1e-12


def test_logcdf_monotone_grid():
    v = gaussian_logcdf(np.arange(-40.0, 10.0005, 1e-3))
    assert np.all(np.diff(v) >= 0)
