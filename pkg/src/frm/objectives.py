"""Training objectives: ERM baselines and functional risk minimization.

The FRM regression objective under a first-order Taylor model is

    sum_i r_i^T W_i^{-1} r_i + sum_i log|W_i|,    W_i = J_i (H + eps I)^{-1} J_i^T

with r_i = y_i - f(x_i) and H the functional metric. For affine models H
and J_i do not depend on the parameters and the objective reduces to a
weighted least-squares problem.
"""
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from ._jax import jax, jnp
from .errors import ContractError
from .linalg import CgConfig, cg_solve, gaussian_logcdf, logdet_small, weight_matrices
from .metric import build_metric, metric_from_features

WEIGHT_MODES = ("detached", "implicit")


@dataclass(frozen=True)
class ObjectiveConfig:
    weight_mode: str = "detached"
    refresh_every: int = 1
    damping: float | None = None  # None: relative default at each metric build
    include_logdet: bool = True
    metric_scale: float = 1.0
    cg: CgConfig = field(default_factory=CgConfig)

    def __post_init__(self):
        if self.weight_mode not in WEIGHT_MODES:
            raise ContractError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.refresh_every < 1:
            raise ContractError("refresh_every must be >= 1")
        if self.damping is not None and self.damping < 0:
            raise ContractError("damping must be nonnegative")


@dataclass(frozen=True)
class LabeledBatch:
    inputs: np.ndarray  # (n, d_in)
    targets: np.ndarray  # (n, d_out), or (n,) labels in {0, 1}

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.shape[0] < 1 or x.shape[0] != y.shape[0]:
            raise ContractError(f"batch needs n >= 1 matching rows, got {x.shape} and {y.shape}")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx):
        return LabeledBatch(self.inputs[idx], self.targets[idx])


@dataclass(frozen=True)
class TdBatch:
    """Difference features psi_i = phi(s_i) - gamma phi(s'_i) and rewards."""

    features: np.ndarray  # (n, P)
    rewards: np.ndarray  # (n,)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.rewards.shape[0]:
            raise ContractError("TD features and rewards must have matching rows")
        if self.features.shape[0] < 1:
            raise ContractError("empty TD batch")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx):
        return TdBatch(self.features[idx], self.rewards[idx])


def td_features(model, states, next_states, terminal, gamma):
    """psi = phi(s) - gamma phi(s'), with phi(s) alone for terminal transitions."""
    F = model.features(states)
    F2 = model.features(next_states)
    boot = gamma * (1.0 - np.asarray(terminal, dtype=np.float64))
    return F - boot[:, None] * F2


def _check_batch(model, batch, loss):
    if loss == "td":
        if not isinstance(batch, TdBatch):
            raise ContractError("td objectives need a TdBatch")
        if model is not None and batch.features.shape[1] != model.n_params:
            raise ContractError("TD feature width does not match the parameter count")
        return
    if batch.inputs.shape[1] != model.d_in:
        raise ContractError(f"inputs have {batch.inputs.shape[1]} columns, model expects {model.d_in}")
    if loss == "bce":
        if model.d_out != 1 or batch.targets.shape[1] != 1:
            raise ContractError("binary cross-entropy needs one logit and one label per point")
        if not np.all(np.isin(batch.targets, (0.0, 1.0))):
            raise ContractError("labels must be 0 or 1")
    elif batch.targets.shape[1] != model.d_out:
        raise ContractError(f"targets have {batch.targets.shape[1]} columns, model outputs {model.d_out}")


def erm_value(loss, model, params, batch):
    """jax-traceable mean task loss over ``batch``."""
    if loss == "td":
        res = jnp.asarray(batch.features) @ params - jnp.asarray(batch.rewards)
        return jnp.mean(res ** 2)
    out = model.apply_batch(params, jnp.asarray(batch.inputs))
    y = jnp.asarray(batch.targets)
    if loss == "mse":
        return jnp.mean(jnp.sum((y - out) ** 2, axis=1))
    if loss == "bce":
        # -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
        return jnp.mean(jax.nn.softplus(out) - y * out)
    raise ContractError(f"unknown loss tag {loss!r}")


def erm_objective(loss, model, params, batch):
    _check_batch(model, batch, loss)
    if model is not None:
        model.check_params(params)
    return float(erm_value(loss, model, jnp.asarray(params, dtype=jnp.float64), batch))


# ---------------------------------------------------------------- linear FRM

def design_matrix(inputs):
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([X, np.ones((X.shape[0], 1))])


def input_gram(inputs):
    """E[[x, 1]^T [x, 1]] over the given inputs."""
    A = design_matrix(inputs)
    return A.T @ A / A.shape[0]


def frm_linear_weights(inputs, H):
    """w_i = [x_i, 1] H^{-1} [x_i, 1]^T."""
    A = design_matrix(inputs)
    H = np.asarray(H, dtype=np.float64)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise ContractError("metric is not positive definite; add damping")
    B = np.linalg.solve(L, A.T)
    return np.einsum("ij,ij->j", B, B)


def frm_linear_objective(batch, slope, offset, H):
    """sum_i (slope . x_i + offset - y_i)^2 / w_i for a parameter-free metric H."""
    w = frm_linear_weights(batch.inputs, H)
    res = batch.inputs @ np.atleast_1d(slope) + offset - batch.targets[:, 0]
    return float(np.sum(res ** 2 / w))


def fit_weighted_affine(inputs, targets, weights=None):
    """Minimizer of sum_i weights_i (slope . x_i + offset - y_i)^2, as (slope, offset)."""
    A = design_matrix(inputs)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if weights is not None:
        s = np.sqrt(np.asarray(weights, dtype=np.float64))
        A, y = A * s[:, None], y * s
    theta, *_ = np.linalg.lstsq(A, y, rcond=None)
    return theta[:-1], float(theta[-1])


def fit_erm_affine(batch):
    return fit_weighted_affine(batch.inputs, batch.targets)


def fit_frm_affine(batch, H=None):
    """Exact minimizer of ``frm_linear_objective``; H defaults to the batch input Gram."""
    if H is None:
        H = input_gram(batch.inputs)
    return fit_weighted_affine(batch.inputs, batch.targets, 1.0 / frm_linear_weights(batch.inputs, H))


# ------------------------------------------------------- general Taylor FRM

@dataclass(frozen=True)
class RegressionTerms:
    value: float
    quadratic: float
    logdet: float
    weights: np.ndarray  # (n, d_out, d_out)
    residuals: np.ndarray  # (n, d_out)
    cg_converged: bool


def _residuals(model, params, batch):
    return batch.targets - model.predict(params, batch.inputs)


def frm_regression_terms(model, params, batch, op, cfg=ObjectiveConfig()):
    _check_batch(model, batch, "mse")
    ws = weight_matrices(model, params, batch.inputs, op, cfg.cg)
    r = _residuals(model, params, batch)
    quad = 0.0
    logdet = 0.0
    for W, ri in zip(ws.weights, r):
        quad += float(ri @ np.linalg.solve(W, ri))
        logdet += logdet_small(W)
    value = quad + (logdet if cfg.include_logdet else 0.0)
    return RegressionTerms(value, quad, logdet, ws.weights, r, ws.cg.converged)


def frm_regression_objective(model, params, batch, op, cfg=ObjectiveConfig()):
    return frm_regression_terms(model, params, batch, op, cfg).value


def _trace_jacobian_product(model, theta, X, Y):
    """sum_i tr(J_i(theta) Y_i) with Y_i of shape (P, d_out)."""

    def one(x, Yi):
        f = lambda p: model.apply(p, x)  # noqa: E731
        cols = jax.vmap(lambda y: jax.jvp(f, (theta,), (y,))[1], in_axes=1, out_axes=1)(Yi)
        return jnp.trace(cols)

    return jnp.sum(jax.vmap(one)(X, Y))


_trace_jacobian_grad = jax.jit(jax.grad(_trace_jacobian_product, argnums=1), static_argnums=0)


def weight_sensitivity(model, params, X, solves, coeffs, op):
    """Gradient in theta of sum_i tr(A_i W_i(theta)), W_i = J_i (H + eps I)^{-1} J_i^T.

    Uses dW = dJ Z + Z^T dJ^T - Z^T dH Z with Z_i = (H + eps I)^{-1} J_i^T
    held at its solved value, so no derivative passes through the solver.
    The damping is treated as a constant.
    """
    if op.form_grad is None:
        raise ContractError("metric operator does not carry a differentiable form")
    A = np.asarray(coeffs, dtype=np.float64)
    Z = np.asarray(solves, dtype=np.float64)
    first = _trace_jacobian_grad(
        model, jnp.asarray(params), jnp.asarray(X), jnp.asarray(np.einsum("npd,nde->npe", Z, A))
    )
    # tr(A Z^T H Z) = sum_k lam_k (Z v_k)^T H (Z v_k) with A = V diag(lam) V^T
    lam, V = np.linalg.eigh(A)
    Y = np.einsum("npd,ndk->pnk", Z, V).reshape(Z.shape[1], -1)
    second = op.form_grad(params, Y, lam.reshape(-1))
    return 2.0 * np.asarray(first) - second


def frm_regression_gradient(model, params, batch, op, cfg=ObjectiveConfig(), weights=None):
    """Gradient of ``frm_regression_objective``.

    detached: W_i are constants (``weights`` if given, else solved against
    ``op``) and only the residual term is differentiated. implicit: the
    dependence of W_i on theta through J_i and H is included.
    """
    _check_batch(model, batch, "mse")
    params = np.asarray(params, dtype=np.float64)
    r = _residuals(model, params, batch)
    if cfg.weight_mode == "detached" and weights is not None:
        from .linalg import _batched_jacobians

        J = _batched_jacobians(model, params, batch.inputs)
        W = np.asarray(weights, dtype=np.float64).reshape(len(batch), model.d_out, model.d_out)
        ws = None
    else:
        ws = weight_matrices(model, params, batch.inputs, op, cfg.cg)
        J, W = ws.jacobians, ws.weights
    u = np.linalg.solve(W, r[..., None])[..., 0]
    grad = -2.0 * np.einsum("ndp,nd->p", J, u)
    if cfg.weight_mode == "implicit":
        A = -np.einsum("nd,ne->nde", u, u)
        if cfg.include_logdet:
            A = A + np.linalg.inv(W)
        grad = grad + weight_sensitivity(model, params, batch.inputs, ws.solves, A, op)
    return grad


# ---------------------------------------------------------- classification

@dataclass(frozen=True)
class Margins:
    margins: np.ndarray
    weights: np.ndarray  # g_i^T (H + eps I)^{-1} g_i
    zero_gradient: int
    solves: np.ndarray
    jacobians: np.ndarray


def classification_margins(model, params, batch, op, cfg=ObjectiveConfig()):
    """Signed Mahalanobis margins s_i f(x_i) / sqrt(g_i^T (H + eps I)^{-1} g_i)."""
    _check_batch(model, batch, "bce")
    ws = weight_matrices(model, params, batch.inputs, op, cfg.cg)
    w = ws.weights[:, 0, 0]
    logits = model.predict(params, batch.inputs)[:, 0]
    signs = np.where(batch.targets[:, 0] == 1.0, 1.0, -1.0)
    zero = w <= 0.0
    m = np.where(zero, 0.0, signs * logits / np.sqrt(np.where(zero, 1.0, w)))
    return Margins(m, w, int(zero.sum()), ws.solves, ws.jacobians)


def frm_binary_classification_objective(model, params, batch, op, cfg=ObjectiveConfig()):
    """-sum_i log Phi(m_i): negative log-probability that a metric-Gaussian
    perturbation of the parameters leaves each point correctly classified."""
    m = classification_margins(model, params, batch, op, cfg)
    return float(-np.sum(gaussian_logcdf(m.margins)))


_dlogcdf = jax.jit(jax.vmap(jax.grad(gaussian_logcdf)))


def frm_binary_classification_gradient(model, params, batch, op, cfg=ObjectiveConfig()):
    mg = classification_margins(model, params, batch, op, cfg)
    signs = np.where(batch.targets[:, 0] == 1.0, 1.0, -1.0)
    kappa = np.asarray(_dlogcdf(jnp.asarray(mg.margins)))
    ok = mg.weights > 0.0
    w = np.where(ok, mg.weights, 1.0)
    g = mg.jacobians[:, 0, :]
    grad = -np.einsum("n,np->p", np.where(ok, kappa * signs / np.sqrt(w), 0.0), g)
    if cfg.weight_mode == "implicit":
        a = np.where(ok, 0.5 * kappa * mg.margins / w, 0.0)
        grad = grad + weight_sensitivity(model, params, batch.inputs, mg.solves, a[:, None, None], op)
    return grad


# ---------------------------------------------------------------- TD FRM

def td_weights(features, damping=None, seed=0):
    """psi_i^T (H + eps I)^{-1} psi_i with H = (1/n) sum psi psi^T.

    ``damping=None`` uses 1e-4 trace(H)/P (Hutchinson estimate). H is formed
    explicitly: it is P x P and parameter-free, so a Cholesky factor is
    cheaper than one iterative solve per transition.
    """
    Psi = np.asarray(features, dtype=np.float64)
    n, P = Psi.shape
    if damping is None:
        damping = metric_from_features(Psi, scale=0.5, seed=seed).damping
    H = Psi.T @ Psi / n + damping * np.eye(P)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise ContractError("TD metric is singular; add damping")
    B = np.linalg.solve(L, Psi.T)
    return np.einsum("ij,ij->j", B, B), float(damping)


def frm_td_value(theta, batch, weights):
    res = batch.features @ theta - batch.rewards
    return float(np.sum(res ** 2 / weights))


def frm_td_objective(theta, transitions, grid, gamma, damping=None, include_bias=True):
    """sum_i (theta . psi_i - r_i)^2 / (psi_i^T (H + eps I)^{-1} psi_i).

    ``transitions`` needs normalized ``states``/``next_states`` plus
    ``terminal`` and ``reward`` arrays (see ``mountain_car.TransitionSet``).
    """
    from .models import RbfLinearModel

    model = RbfLinearModel(grid, include_bias=include_bias)
    model.check_params(np.asarray(theta))
    if len(transitions) < 1:
        raise ContractError("no transitions")
    psi = td_features(model, transitions.states, transitions.next_states, transitions.terminal, gamma)
    batch = TdBatch(psi, np.asarray(transitions.reward, dtype=np.float64))
    w, _ = td_weights(psi, damping)
    return frm_td_value(np.asarray(theta, dtype=np.float64), batch, w)


# ------------------------------------------------------------ diagnostics

def minimal_adaptation_norm(model, params, point, op, cfg=CgConfig()):
    """min |d|^2 over (H + eps I) subject to g . d = r, i.e. r^2 / g^T (H + eps I)^{-1} g.

    Returns inf when the linearized model cannot move at x (g = 0) yet r != 0.
    """
    if model.d_out != 1:
        raise ContractError("minimal adaptation is defined for scalar outputs")
    x, y = point
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    r = float(np.asarray(y).reshape(-1)[0] - model.predict(params, x[None])[0, 0])
    from .diff import output_jacobian

    g = output_jacobian(model, params, x)[0]
    if r == 0.0:
        return 0.0
    if not np.any(g):
        return float("inf")
    z = cg_solve(op, g, cfg).solution
    return r * r / float(g @ z)


def gumbel_softmax_check(logits, n_samples, seed):
    """Empirical class frequencies of argmax(logits + Gumbel noise)."""
    if n_samples < 1:
        raise ContractError("n_samples must be >= 1")
    logits = np.asarray(logits, dtype=np.float64)
    rng = np.random.default_rng(seed)
    g = rng.gumbel(size=(int(n_samples), logits.size))
    winners = np.argmax(logits + g, axis=1)
    return np.bincount(winners, minlength=logits.size) / float(n_samples)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


# ---------------------------------------------------------------- training

def _detached_value(model, params, X, Y, Winv):
    r = Y - model.apply_batch(params, X)
    return jnp.mean(jnp.einsum("nd,nde,ne->n", r, Winv, r))


_detached_value_grad = jax.jit(jax.value_and_grad(_detached_value, argnums=1), static_argnums=0)


class FrmRegressionProblem:
    """Minibatch objective/gradient pair for the optimizer.

    The metric is built over ``metric_inputs`` (default: all training
    inputs). In detached mode the per-point weights for the whole training set
    are recomputed every ``refresh_every`` calls and held fixed in between.
    The minibatch loss is rescaled by the harmonic mean of the weights so the
    average per-point weight is one; this changes neither the argmin nor the
    reported full objective.
    """

    def __init__(self, model, batch, cfg=ObjectiveConfig(), metric_inputs=None, normalize=True):
        _check_batch(model, batch, "mse")
        self.model = model
        self.batch = batch
        self.cfg = cfg
        self.metric_inputs = batch.inputs if metric_inputs is None else np.asarray(metric_inputs)
        self.normalize = normalize
        self.calls = 0
        self.cg_warnings = 0
        self._W = None
        self._scale = 1.0

    def metric(self, params):
        return build_metric(
            self.model, params, "mse", self.metric_inputs,
            damping=self.cfg.damping, scale=self.cfg.metric_scale,
        )

    def value(self, params):
        return frm_regression_objective(self.model, params, self.batch, self.metric(params), self.cfg)

    def gradient(self, params):
        return frm_regression_gradient(self.model, params, self.batch, self.metric(params), self.cfg)

    def _normalizer(self, W):
        if not self.normalize:
            return 1.0
        d = W.shape[-1]
        return d / float(np.mean(np.trace(np.linalg.inv(W), axis1=1, axis2=2)))

    def refresh(self, params):
        ws = weight_matrices(self.model, params, self.batch.inputs, self.metric(params), self.cfg.cg)
        self.cg_warnings += int(not ws.cg.converged)
        self._W = ws.weights
        self._Winv = np.linalg.inv(ws.weights)
        self._scale = self._normalizer(ws.weights)

    def __call__(self, params, idx):
        params = np.asarray(params, dtype=np.float64)
        sub = self.batch.subset(idx)
        cfg = self.cfg
        if cfg.weight_mode == "detached":
            if self._W is None or self.calls % cfg.refresh_every == 0:
                self.refresh(params)
            v, g = _detached_value_grad(
                self.model, jnp.asarray(params), jnp.asarray(sub.inputs),
                jnp.asarray(sub.targets), jnp.asarray(self._Winv[idx]),
            )
            value, grad = float(v), np.asarray(g)
        else:
            op = self.metric(params)
            ws = weight_matrices(self.model, params, self.batch.inputs, op, cfg.cg)
            self.cg_warnings += int(not ws.cg.converged)
            self._scale = self._normalizer(ws.weights)
            terms = frm_regression_terms(self.model, params, sub, op, cfg)
            value = terms.value / len(sub)
            grad = frm_regression_gradient(self.model, params, sub, op, cfg) / len(sub)
        self.calls += 1
        return self._scale * value, self._scale * grad


class ErmProblem:
    """Minibatch mean task loss with its exact gradient."""

    def __init__(self, loss, model, batch):
        _check_batch(model, batch, loss)
        self.loss, self.model, self.batch = loss, model, batch
        names = ("features", "rewards") if loss == "td" else ("inputs", "targets")
        self._arrays = tuple(np.asarray(getattr(batch, k)) for k in names)

        def value(p, a, b):
            return erm_value(loss, model, p, SimpleNamespace(**dict(zip(names, (a, b)))))

        self._vg = jax.jit(jax.value_and_grad(value))

    def __call__(self, params, idx):
        a, b = (arr[idx] for arr in self._arrays)
        v, g = self._vg(jnp.asarray(params), a, b)
        return float(v), np.asarray(g)
