"""Parametric function classes with a flat parameter vector."""
from dataclasses import dataclass
from functools import partial

import numpy as np

from ._jax import jax, jnp
from .errors import ContractError

GRID_SIDE = 15


class Model:
    """Common surface: ``apply`` is jax-traceable, ``eval`` returns numpy."""

    d_in: int
    d_out: int
    n_params: int

    def apply(self, params, x):
        raise NotImplementedError

    def check_params(self, params):
        shape = np.shape(params)
        if shape != (self.n_params,):
            raise ContractError(
                f"{type(self).__name__} expects {self.n_params} parameters, got shape {shape}"
            )

    def check_input(self, x):
        if np.shape(x) != (self.d_in,):
            raise ContractError(
                f"{type(self).__name__} expects input of shape ({self.d_in},), got {np.shape(x)}"
            )

    def eval(self, params, x):
        self.check_params(params)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 0 and self.d_in == 1:
            x = x.reshape(1)
        self.check_input(x)
        return np.asarray(self.apply(jnp.asarray(params), jnp.asarray(x)), dtype=np.float64)

    def apply_batch(self, params, X):
        return jax.vmap(lambda x: self.apply(params, x))(X)

    def predict(self, params, X):
        """Outputs for every row of ``X``, shape (n, d_out)."""
        self.check_params(params)
        X = np.asarray(X, dtype=np.float64).reshape(-1, self.d_in)
        return np.asarray(_predict_kernel(self, jnp.asarray(params), jnp.asarray(X)))


@partial(jax.jit, static_argnums=0)
def _predict_kernel(model, params, X):
    return model.apply_batch(params, X)


class AffineModel(Model):
    """f(x) = slope . x + offset; parameters flatten as (slope..., offset)."""

    def __init__(self, d_in):
        if d_in < 1:
            raise ContractError("d_in must be >= 1")
        self.d_in = int(d_in)
        self.d_out = 1
        self.n_params = self.d_in + 1

    def flatten(self, slope, offset):
        slope = np.atleast_1d(np.asarray(slope, dtype=np.float64))
        if slope.shape != (self.d_in,):
            raise ContractError(f"slope must have shape ({self.d_in},)")
        return np.concatenate([slope, [float(offset)]])

    def unflatten(self, params):
        self.check_params(params)
        params = np.asarray(params, dtype=np.float64)
        return params[:-1].copy(), float(params[-1])

    def apply(self, params, x):
        return jnp.reshape(jnp.dot(params[:-1], x) + params[-1], (1,))

    def predict(self, params, X):
        self.check_params(params)
        X = np.asarray(X, dtype=np.float64).reshape(-1, self.d_in)
        return (X @ params[:-1] + params[-1])[:, None]

    def __eq__(self, other):
        return isinstance(other, AffineModel) and other.d_in == self.d_in

    def __hash__(self):
        return hash(("affine", self.d_in))

    def __repr__(self):
        return f"AffineModel(d_in={self.d_in})"


class MlpModel(Model):
    """Fully connected tanh network with a linear output layer.

    Parameters are stored layer by layer: the weight matrix of shape
    (w_in, w_out) in row-major order, then the bias of that layer.
    """

    def __init__(self, widths, activation="tanh"):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ContractError(f"invalid layer widths {widths}")
        if activation != "tanh":
            raise ContractError("only the tanh activation is supported")
        self.widths = widths
        self.activation = activation
        self.d_in = widths[0]
        self.d_out = widths[-1]
        self.shapes = [(a, b) for a, b in zip(widths[:-1], widths[1:])]
        self.n_params = sum(a * b + b for a, b in self.shapes)

    def unflatten(self, params):
        self.check_params(params)
        layers, k = [], 0
        for a, b in self.shapes:
            W = params[k:k + a * b].reshape(a, b)
            k += a * b
            layers.append((W, params[k:k + b]))
            k += b
        return layers

    def flatten(self, layers):
        if len(layers) != len(self.shapes):
            raise ContractError("layer count does not match the architecture")
        parts = []
        for (W, b), (a, o) in zip(layers, self.shapes):
            W = np.asarray(W, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if W.shape != (a, o) or b.shape != (o,):
                raise ContractError("layer shapes do not match the architecture")
            parts += [W.ravel(), b]
        return np.concatenate(parts)

    def group_slices(self):
        """Slices of the flat vector by parameter group."""
        groups = {"hidden_weights": [], "hidden_biases": [], "output_weights": [], "output_bias": []}
        k = 0
        last = len(self.shapes) - 1
        for i, (a, b) in enumerate(self.shapes):
            w_key, b_key = ("output_weights", "output_bias") if i == last else ("hidden_weights", "hidden_biases")
            groups[w_key].append(slice(k, k + a * b))
            k += a * b
            groups[b_key].append(slice(k, k + b))
            k += b
        return groups

    def apply(self, params, x):
        h = x
        k = 0
        last = len(self.shapes) - 1
        for i, (a, b) in enumerate(self.shapes):
            W = params[k:k + a * b].reshape(a, b)
            k += a * b
            h = h @ W + params[k:k + b]
            k += b
            if i != last:
                h = jnp.tanh(h)
        return h

    def __eq__(self, other):
        return isinstance(other, MlpModel) and other.widths == self.widths

    def __hash__(self):
        return hash(("mlp", self.widths))

    def __repr__(self):
        return f"MlpModel(widths={list(self.widths)})"


@dataclass(frozen=True, eq=False)
class RbfGrid:
    centers: np.ndarray  # (K, 2), normalized state space
    bandwidths: np.ndarray  # (K,)
    kind: str

    @property
    def size(self):
        return self.centers.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, RbfGrid)
            and self.kind == other.kind
            and np.array_equal(self.centers, other.centers)
            and np.array_equal(self.bandwidths, other.bandwidths)
        )

    __hash__ = None


def uniform_axis(n=GRID_SIDE):
    return np.linspace(0.0, 1.0, n)


def focused_axis(n=GRID_SIDE):
    """Axis coordinates warped quadratically toward 0.5."""
    u = np.linspace(-1.0, 1.0, n)
    return 0.5 + 0.5 * np.sign(u) * u ** 2


def _nearest_neighbor_spacing(centers):
    d2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return np.sqrt(d2.min(axis=1))


def build_rbf_grid(kind):
    """15 x 15 grid over [0, 1]^2, position index outer, velocity inner."""
    if kind == "uniform":
        axis = uniform_axis()
    elif kind == "focused":
        axis = focused_axis()
    else:
        raise ContractError(f"unknown grid kind {kind!r}")
    centers = np.array([(p, v) for p in axis for v in axis], dtype=np.float64)
    if kind == "uniform":
        bandwidths = np.full(len(centers), 1.0 / (GRID_SIDE - 1))
    else:
        bandwidths = _nearest_neighbor_spacing(centers)
    return RbfGrid(centers=centers, bandwidths=bandwidths, kind=kind)


def rbf_features(grid, state):
    """Gaussian RBF activations for one or many normalized states.

    States outside [0, 1]^2 are clamped first. Accepts shape (2,) or (n, 2).
    """
    s = np.clip(np.asarray(state, dtype=np.float64), 0.0, 1.0)
    single = s.ndim == 1
    s = s.reshape(-1, 2)
    d2 = ((s[:, None, :] - grid.centers[None, :, :]) ** 2).sum(-1)
    feats = np.exp(-d2 / (2.0 * grid.bandwidths ** 2))
    return feats[0] if single else feats


class RbfLinearModel(Model):
    """Linear value function over RBF features of the normalized state."""

    def __init__(self, grid, include_bias=True):
        self.grid = grid
        self.include_bias = bool(include_bias)
        self.d_in = 2
        self.d_out = 1
        self.n_params = grid.size + int(self.include_bias)
        self._centers = jnp.asarray(grid.centers)
        self._bw2 = jnp.asarray(2.0 * grid.bandwidths ** 2)

    def features(self, states):
        """Design matrix (n, P) for normalized states."""
        f = np.atleast_2d(rbf_features(self.grid, states))
        if self.include_bias:
            f = np.hstack([f, np.ones((f.shape[0], 1))])
        return f

    def apply(self, params, x):
        s = jnp.clip(x, 0.0, 1.0)
        phi = jnp.exp(-jnp.sum((s - self._centers) ** 2, axis=1) / self._bw2)
        if self.include_bias:
            phi = jnp.concatenate([phi, jnp.ones(1)])
        return jnp.reshape(jnp.dot(params, phi), (1,))

    def predict(self, params, X):
        self.check_params(params)
        return (self.features(np.asarray(X).reshape(-1, 2)) @ params)[:, None]

    def __repr__(self):
        return f"RbfLinearModel(kind={self.grid.kind!r}, P={self.n_params})"


def initial_params(model, seed):
    """Deterministic initial parameters.

    Affine and RBF-linear models start at zero. MLP weights and biases are
    drawn uniformly in +-1/sqrt(fan_in) of their layer.
    """
    if isinstance(model, MlpModel):
        rng = np.random.default_rng(seed)
        parts = []
        for a, b in model.shapes:
            bound = 1.0 / np.sqrt(a)
            parts.append(rng.uniform(-bound, bound, size=a * b))
            parts.append(rng.uniform(-bound, bound, size=b))
        return np.concatenate(parts)
    return np.zeros(model.n_params)
