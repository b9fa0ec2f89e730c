"""Functional metric: Hessian in the perturbation of E_x[L(f_{theta+d}(x), f_theta(x))].

At d = 0 the distance and its gradient vanish, so the Gauss-Newton form is
the exact Hessian for the squared, cross-entropy and TD losses used here.
The operator is matrix-free; ``dense_metric`` exists for tests.
"""
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable

import numpy as np

from ._jax import jax, jnp
from .errors import ContractError, RefusalError

LOSSES = ("mse", "bce", "td")
DENSE_CAP = 512
RELATIVE_DAMPING = 1e-4
HUTCHINSON_PROBES = 20
# sample Jacobians up to this many entries are cached and applied as J^T (w J v)
JACOBIAN_CACHE_ENTRIES = 4_000_000


@dataclass(frozen=True)
class TdSamples:
    """States and successors defining the TD metric (normalized model inputs)."""

    states: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray
    gamma: float

    def __post_init__(self):
        if len(self.states) != len(self.next_states) or len(self.states) != len(self.terminal):
            raise ContractError("TD sample arrays must have equal length")

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class MetricOperator:
    """(H + damping I) as a matrix-free operator on parameter vectors.

    ``matvec`` applies the undamped H to a vector (P,) or to the columns of
    a matrix (P, k).
    """

    matvec: Callable = field(repr=False)
    damping: float
    n_params: int
    loss: str
    samples: object = field(repr=False, default=None)
    scale: float = 1.0
    # form_grad(theta, Y, c): gradient in theta of sum_k c_k y_k^T H(theta) y_k
    form_grad: Callable = field(repr=False, default=None)

    def apply(self, v):
        v = np.asarray(v, dtype=np.float64)
        return self.matvec(v) + self.damping * v

    def apply_undamped(self, v):
        return self.matvec(np.asarray(v, dtype=np.float64))

    def with_damping(self, damping):
        return replace(self, damping=float(damping))


def hutchinson_trace(matvec, n_params, probes=HUTCHINSON_PROBES, seed=0):
    rng = np.random.default_rng(seed)
    V = rng.choice([-1.0, 1.0], size=(n_params, probes))
    return float(np.einsum("ij,ij->", V, matvec(V)) / probes)


def default_damping(matvec, n_params, seed=0):
    """1e-4 * trace(H) / P with a Hutchinson trace estimate."""
    return RELATIVE_DAMPING * max(hutchinson_trace(matvec, n_params, seed=seed), 0.0) / n_params


def _outputs(model, loss, theta, data):
    if loss == "td":
        S, S2, boot = data
        return model.apply_batch(theta, S) - boot[:, None] * model.apply_batch(theta, S2)
    return model.apply_batch(theta, data)


def _output_weights(model, loss, theta, data):
    if loss == "bce":
        s = jax.nn.sigmoid(_outputs(model, loss, theta, data))
        return s * (1.0 - s)
    return jnp.ones(())


def _gn_single(model, loss, theta, data, factor, v):
    f = lambda p: _outputs(model, loss, p, data)  # noqa: E731
    out, jv = jax.jvp(f, (theta,), (v,))
    w = _output_weights(model, loss, theta, data)
    _, pullback = jax.vjp(f, theta)
    return factor * pullback(w * jv)[0]


@partial(jax.jit, static_argnums=(0, 1))
def _gn_vector(model, loss, theta, data, factor, v):
    return _gn_single(model, loss, theta, data, factor, v)


@partial(jax.jit, static_argnums=(0, 1))
def _gn_matrix(model, loss, theta, data, factor, V):
    return jax.vmap(lambda v: _gn_single(model, loss, theta, data, factor, v), in_axes=1, out_axes=1)(V)


def _quadratic_form_value(model, loss, data, factor, theta, Y, coeffs):
    """sum_k coeffs_k y_k^T H(theta) y_k, differentiable in theta."""
    f = lambda p: _outputs(model, loss, p, data)  # noqa: E731
    w = _output_weights(model, loss, theta, data)

    def one(y):
        jy = jax.jvp(f, (theta,), (y,))[1]
        return jnp.sum(w * jy * jy)

    return factor * jnp.dot(coeffs, jax.vmap(one, in_axes=1)(Y))


_quadratic_form_grad = jax.jit(jax.grad(_quadratic_form_value, argnums=4), static_argnums=(0, 1))


@partial(jax.jit, static_argnums=(0, 1))
def _sample_jacobian(model, loss, theta, data):
    J = jax.jacrev(lambda p: _outputs(model, loss, p, data))(theta)
    return J, jnp.broadcast_to(_output_weights(model, loss, theta, data), J.shape[:2])


def build_metric(model, params, loss, samples, damping=None, scale=1.0, seed=0, mode="auto"):
    """Metric operator for ``model`` at ``params``.

    ``samples`` is an input matrix (n, d_in) for mse/bce and ``TdSamples`` for
    td. ``scale`` multiplies the loss; 0.5 gives the convention in which the
    squared-loss metric is E[J^T J] rather than 2 E[J^T J]. ``damping=None``
    selects the relative default. ``mode`` picks how H v is evaluated:
    "hvp" runs a Jacobian-vector then vector-Jacobian product per call,
    "jacobian" stores the sample Jacobian once and applies J^T (w J v), and
    "auto" caches when the Jacobian is small.
    """
    if mode not in ("auto", "hvp", "jacobian"):
        raise ContractError(f"unknown metric mode {mode!r}")
    if loss not in LOSSES:
        raise ContractError(f"unknown loss tag {loss!r}")
    if scale <= 0:
        raise ContractError("loss scale must be positive")
    if damping is not None and damping < 0:
        raise ContractError("damping must be nonnegative")
    theta = jnp.asarray(params, dtype=jnp.float64)
    model.check_params(theta)

    if loss == "td":
        if not isinstance(samples, TdSamples):
            raise ContractError("td metric needs TdSamples")
        n = len(samples)
        if n == 0:
            raise ContractError("empty sample set")
        data = (
            jnp.asarray(samples.states, dtype=jnp.float64).reshape(n, model.d_in),
            jnp.asarray(samples.next_states, dtype=jnp.float64).reshape(n, model.d_in),
            samples.gamma * (1.0 - jnp.asarray(samples.terminal, dtype=jnp.float64)),
        )
        factor = 2.0 * scale / n
    else:
        X = np.asarray(samples, dtype=np.float64)
        if X.size == 0:
            raise ContractError("empty sample set")
        data = jnp.asarray(X.reshape(-1, model.d_in))
        n = data.shape[0]
        if loss == "bce" and model.d_out != 1:
            raise ContractError("bce metric needs a single logit output")
        factor = (2.0 if loss == "mse" else 1.0) * scale / n

    if mode == "auto":
        mode = "jacobian" if n * model.d_out * model.n_params <= JACOBIAN_CACHE_ENTRIES else "hvp"
    if mode == "jacobian":
        J, w = (np.asarray(a) for a in _sample_jacobian(model, loss, theta, data))
        J = J.reshape(-1, model.n_params)
        w = factor * w.reshape(-1)

        def matvec(v):
            v = np.asarray(v, dtype=np.float64)
            Jv = J @ v
            return J.T @ (w[:, None] * Jv if Jv.ndim == 2 else w * Jv)
    else:
        def matvec(v):
            v = jnp.asarray(v, dtype=jnp.float64)
            fn = _gn_vector if v.ndim == 1 else _gn_matrix
            return np.asarray(fn(model, loss, theta, data, factor, v))

    def form_grad(at, Y, coeffs):
        return np.asarray(_quadratic_form_grad(
            model, loss, data, factor, jnp.asarray(at), jnp.asarray(Y), jnp.asarray(coeffs)))

    if damping is None:
        damping = default_damping(matvec, model.n_params, seed=seed)
    return MetricOperator(matvec, float(damping), model.n_params, loss, samples, float(scale), form_grad)


def metric_from_features(features, damping=None, scale=1.0, loss="mse", seed=0):
    """Squared-loss metric of the linear model theta . psi over feature rows.

    H = (2 * scale / n) Psi^T Psi, applied without forming it.
    """
    Psi = np.asarray(features, dtype=np.float64)
    if Psi.ndim != 2 or Psi.shape[0] == 0:
        raise ContractError("features must be a nonempty (n, P) matrix")
    factor = 2.0 * scale / Psi.shape[0]

    def matvec(v):
        return factor * (Psi.T @ (Psi @ v))

    if damping is None:
        damping = default_damping(matvec, Psi.shape[1], seed=seed)
    return MetricOperator(matvec, float(damping), Psi.shape[1], loss, Psi, float(scale))


def dense_metric(op, cap=DENSE_CAP):
    """Materialize H + damping I column by column (test oracle)."""
    if op.n_params > cap:
        raise RefusalError(f"refusing to materialize a {op.n_params}x{op.n_params} metric (cap {cap})")
    return op.apply(np.eye(op.n_params))
