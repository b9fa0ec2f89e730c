"""Synthetic data where every point is produced by its own parameter draw."""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .models import MlpModel


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, d_in)
    targets: np.ndarray  # (n, d_out)
    clean: np.ndarray  # (n, d_out) f_{theta*}(x), noise-free

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class LinearFgmSpec:
    """Affine data with per-point slope and offset draws.

    beta_i = beta* + sqrt(1 - alpha) sigma eps_i and
    lambda_i = lambda* + sqrt(alpha) sigma eta_i, x ~ U[-1, 1]^d.
    """

    dim: int
    n_train: int
    n_test: int
    slope: tuple
    offset: float
    noise_alpha: float
    noise_scale: float
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.n_train < 1 or self.n_test < 1:
            raise ContractError("dim, n_train and n_test must be >= 1")
        if not 0.0 <= self.noise_alpha <= 1.0:
            raise ContractError("noise_alpha must lie in [0, 1]")
        if self.noise_scale < 0:
            raise ContractError("noise_scale must be nonnegative")
        slope = tuple(float(s) for s in np.atleast_1d(self.slope))
        if len(slope) != self.dim:
            raise ContractError(f"slope has {len(slope)} entries, dim is {self.dim}")
        object.__setattr__(self, "slope", slope)


def _streams(seed, k):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def _linear_split(spec, rng, n):
    x = rng.uniform(-1.0, 1.0, size=(n, spec.dim))
    return sample_linear_targets(spec, x, rng)


def sample_linear_targets(spec, x, rng):
    """Labels at given inputs, each from its own (slope, offset) draw."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, spec.dim)
    n = x.shape[0]
    slope = np.asarray(spec.slope)
    eps = rng.standard_normal(n)
    eta = rng.standard_normal((n, spec.dim))
    beta = spec.offset + np.sqrt(1.0 - spec.noise_alpha) * spec.noise_scale * eps
    lam = slope + np.sqrt(spec.noise_alpha) * spec.noise_scale * eta
    y = np.einsum("nd,nd->n", lam, x) + beta
    clean = x @ slope + spec.offset
    return Dataset(x, y[:, None], clean[:, None])


def gen_linear_fgm(spec):
    """(train, test) datasets from independent child streams of ``spec.seed``."""
    train_rng, test_rng = _streams(spec.seed, 2)
    return _linear_split(spec, train_rng, spec.n_train), _linear_split(spec, test_rng, spec.n_test)


GROUPS = ("hidden_weights", "hidden_biases", "output_weights", "output_bias")


@dataclass(frozen=True)
class MlpFgmSpec:
    """MLP data with per-point parameter perturbations scaled by group."""

    widths: tuple
    theta_star: np.ndarray
    scales: dict = field(default_factory=dict)  # group name -> std; missing groups are 0
    n_train: int = 64
    n_test: int = 2000
    input_range: float = 1.0
    seed: int = 0

    def __post_init__(self):
        model = MlpModel(self.widths)
        model.check_params(np.asarray(self.theta_star))
        unknown = set(self.scales) - set(GROUPS)
        if unknown:
            raise ContractError(f"unknown parameter groups {sorted(unknown)}")
        if any(s < 0 for s in self.scales.values()):
            raise ContractError("perturbation scales must be nonnegative")
        if self.n_train < 1 or self.n_test < 1:
            raise ContractError("n_train and n_test must be >= 1")

    @property
    def model(self):
        return MlpModel(self.widths)

    def scale_vector(self):
        model = self.model
        out = np.zeros(model.n_params)
        for name, slices in model.group_slices().items():
            for sl in slices:
                out[sl] = self.scales.get(name, 0.0)
        return out


def _mlp_split(spec, rng, n):
    model = spec.model
    theta = np.asarray(spec.theta_star, dtype=np.float64)
    x = rng.uniform(-spec.input_range, spec.input_range, size=(n, model.d_in))
    thetas = theta + spec.scale_vector() * rng.standard_normal((n, model.n_params))
    y = np.stack([_mlp_numpy(model, t, xi) for t, xi in zip(thetas, x)])
    clean = np.stack([_mlp_numpy(model, theta, xi) for xi in x])
    return Dataset(x, y, clean)


def _mlp_numpy(model, params, x):
    h = x
    k, last = 0, len(model.shapes) - 1
    for i, (a, b) in enumerate(model.shapes):
        h = h @ params[k:k + a * b].reshape(a, b) + params[k + a * b:k + a * b + b]
        k += a * b + b
        if i != last:
            h = np.tanh(h)
    return h


def gen_mlp_fgm(spec):
    train_rng, test_rng = _streams(spec.seed, 2)
    return _mlp_split(spec, train_rng, spec.n_train), _mlp_split(spec, test_rng, spec.n_test)


def write_dataset_csv(dataset, path):
    d_in, d_out = dataset.inputs.shape[1], dataset.targets.shape[1]
    header = [f"x{j}" for j in range(d_in)] + [f"y{j}" for j in range(d_out)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(dataset.inputs, dataset.targets):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])
