import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from frm._jax import jnp
from frm.diff import (
    central_difference_jacobian, check_gradient, dense_hessian, hvp, output_jacobian, scalar_gradient,
)
from frm.errors import NumericalFailure
from frm.models import AffineModel, MlpModel

finite = st.floats(-3, 3, allow_nan=False)


def test_quadratic_gradient():
    np.testing.assert_allclose(scalar_gradient(lambda t: t @ t, [1.0, 2.0]), [2.0, 4.0])


def test_constant_gradient_is_zero():
    assert not np.any(scalar_gradient(lambda t: jnp.asarray(3.0) + 0 * t.sum(), np.ones(4)))


def test_non_finite_gradient_names_index():
    with pytest.raises(NumericalFailure) as info:
        scalar_gradient(lambda t: jnp.sum(jnp.sqrt(t)), [1.0, 0.0, 4.0])
    assert info.value.index == 1


def test_mlp_output_gradient_matches_fd():
    model = MlpModel((2, 4, 1))
    rng = np.random.default_rng(0)
    p, x = rng.normal(size=model.n_params), rng.normal(size=2)
    rep = check_gradient(lambda q: model.apply(q, jnp.asarray(x))[0], p, 1e-5)
    assert rep.passed, rep


def test_affine_jacobian_row():
    np.testing.assert_array_equal(output_jacobian(AffineModel(1), [5.0, -2.0], [3.0]), [[3.0, 1.0]])


def test_mlp_jacobian_matches_fd():
    model = MlpModel((2, 4, 2))
    rng = np.random.default_rng(1)
    p, x = rng.normal(size=model.n_params), rng.normal(size=2)
    J = output_jacobian(model, p, x)
    assert J.shape == (2, model.n_params)
    assert np.max(np.abs(J - central_difference_jacobian(model, p, jnp.asarray(x)))) < 1e-6


def test_hvp_examples():
    e = np.eye(5)[0]
    np.testing.assert_allclose(hvp(lambda t: t @ t, np.ones(5), e), 2 * e)
    assert not np.any(hvp(lambda t: jnp.sum(jnp.sin(t)), np.ones(5), np.zeros(5)))


def _mlp_loss():
    model = MlpModel((2, 3, 1))
    rng = np.random.default_rng(2)
    X, Y = jnp.asarray(rng.normal(size=(6, 2))), jnp.asarray(rng.normal(size=(6, 1)))
    return model, lambda p: jnp.mean((model.apply_batch(p, X) - Y) ** 2)


def test_hvp_matches_dense_hessian():
    model, fn = _mlp_loss()
    rng = np.random.default_rng(3)
    p = rng.normal(size=model.n_params)
    H = dense_hessian(fn, p)
    for v in rng.normal(size=(4, model.n_params)):
        assert np.max(np.abs(hvp(fn, p, v) - H @ v)) < 1e-6


@given(arrays(np.float64, 13, elements=finite), arrays(np.float64, 13, elements=finite),
       arrays(np.float64, 13, elements=finite), finite, finite)
def test_hvp_linear_and_symmetric(p, u, v, a, b):
    _, fn = _mlp_loss()
    Hu, Hv = hvp(fn, p, u), hvp(fn, p, v)
    lin = hvp(fn, p, a * u + b * v)
    scale = max(np.linalg.norm(a * Hu) + np.linalg.norm(b * Hv), 1e-12)
    assert np.linalg.norm(lin - (a * Hu + b * Hv)) <= 1e-10 * scale + 1e-13
    assert abs(u @ Hv - v @ Hu) <= 1e-10 * max(abs(u @ Hv), 1.0)


def test_check_gradient_quadratic_and_negative_control():
    rep = check_gradient(lambda t: t @ t, np.array([0.3, -1.2, 2.0]), 1e-4)
    assert rep.passed and rep.max_rel_error < 1e-8
    bad = check_gradient(lambda t: t @ t, np.array([0.3, -1.2, 2.0]), 1e-4, gradient=lambda t: 2.02 * t)
    assert not bad.passed


def test_check_gradient_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        check_gradient(lambda t: t @ t, np.ones(2), 0.0)
