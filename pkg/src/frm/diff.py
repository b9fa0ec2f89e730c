"""Exact derivatives for the model/loss families in this package.

Gradients and Jacobians come from reverse mode, Hessian-vector products from
forward-over-reverse. Finite differences live here too, but only as the
oracle that ``check_gradient`` compares against.
"""
from dataclasses import dataclass

import numpy as np

from ._jax import jax, jnp
from .errors import NumericalFailure

FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    passed: bool


def _as_params(at):
    arr = jnp.asarray(at, dtype=jnp.float64)
    if arr.ndim != 1:
        raise ValueError(f"parameter vector must be 1-D, got shape {arr.shape}")
    return arr


def _ensure_finite(values, what):
    values = np.asarray(values)
    bad = np.flatnonzero(~np.isfinite(values.ravel()))
    if bad.size:
        idx = int(bad[0])
        raise NumericalFailure(f"non-finite {what} at parameter index {idx}", index=idx)
    return values


def scalar_gradient(fn, at):
    """Gradient of a scalar, jax-traceable ``fn`` at ``at``."""
    at = _as_params(at)
    value, grad = jax.value_and_grad(fn)(at)
    if not np.isfinite(float(value)):
        raise NumericalFailure("non-finite function value during gradient evaluation")
    return _ensure_finite(grad, "gradient").astype(np.float64)


def output_jacobian(model, params, x):
    """Jacobian of the model output at ``x`` w.r.t. the parameters, shape (d_out, P)."""
    params = _as_params(params)
    model.check_params(params)
    x = jnp.asarray(x, dtype=jnp.float64)
    jac = jax.jacrev(lambda p: model.apply(p, x))(params)
    return _ensure_finite(jac, "Jacobian entry").reshape(model.d_out, model.n_params)


def hvp(fn, at, v):
    """Hessian of ``fn`` at ``at`` applied to ``v``, without forming the Hessian."""
    at = _as_params(at)
    v = jnp.asarray(v, dtype=jnp.float64)
    if v.shape != at.shape:
        raise ValueError(f"direction shape {v.shape} does not match parameters {at.shape}")
    _ensure_finite(v, "direction entry")
    _, out = jax.jvp(jax.grad(fn), (at,), (v,))
    return _ensure_finite(out, "Hessian-vector product entry").astype(np.float64)


def dense_hessian(fn, at):
    """Dense Hessian built row by row, differentiating each gradient coordinate.

    Reference for ``hvp``; quadratic memory, meant for P in the tens.
    """
    at = _as_params(at)
    grad_fn = jax.grad(fn)
    rows = []
    for j in range(at.shape[0]):
        rows.append(jax.grad(lambda p, j=j: grad_fn(p)[j])(at))
    return _ensure_finite(jnp.stack(rows), "Hessian entry").astype(np.float64)


def fd_step(at):
    return FD_REL_STEP * np.maximum(1.0, np.abs(at))


def central_difference_gradient(fn, at):
    """Central finite differences with step 1e-5 * max(1, |theta_j|)."""
    at = np.asarray(at, dtype=np.float64)
    steps = fd_step(at)
    grad = np.empty_like(at)
    for j in range(at.size):
        e = np.zeros_like(at)
        e[j] = steps[j]
        grad[j] = (float(fn(at + e)) - float(fn(at - e))) / (2.0 * steps[j])
    return grad


def central_difference_jacobian(model, params, x):
    params = np.asarray(params, dtype=np.float64)
    steps = fd_step(params)
    cols = []
    for j in range(params.size):
        e = np.zeros_like(params)
        e[j] = steps[j]
        hi = np.asarray(model.apply(params + e, x))
        lo = np.asarray(model.apply(params - e, x))
        cols.append((hi - lo) / (2.0 * steps[j]))
    return np.stack(cols, axis=-1).reshape(model.d_out, params.size)


def relative_errors(actual, reference):
    actual = np.asarray(actual, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    abs_err = np.abs(actual - reference)
    # floor keeps near-zero components from dominating the relative error
    scale = max(1.0, float(np.max(np.abs(reference), initial=0.0)))
    denom = np.maximum(np.maximum(np.abs(actual), np.abs(reference)), 1e-4 * scale)
    return abs_err / denom, abs_err


def check_gradient(fn, at, tol, gradient=None):
    """Compare an analytic gradient against central finite differences.

    ``gradient`` overrides the gradient under test; by default it is
    ``scalar_gradient(fn, at)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    at = np.asarray(at, dtype=np.float64)
    if gradient is None:
        analytic = scalar_gradient(fn, at)
    elif callable(gradient):
        analytic = np.asarray(gradient(at), dtype=np.float64)
    else:
        analytic = np.asarray(gradient, dtype=np.float64)
    numeric = central_difference_gradient(fn, at)
    rel, abs_err = relative_errors(analytic, numeric)
    max_rel = float(np.max(rel, initial=0.0))
    if not np.all(np.isfinite(rel)):
        max_rel = float("inf")
    return GradCheckReport(
        max_rel_error=max_rel,
        max_abs_error=float(np.max(abs_err, initial=0.0)),
        passed=bool(max_rel < tol),
    )
