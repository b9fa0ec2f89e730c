"""Solvers against the damped metric, small log-determinants and log Phi."""
import math
import warnings
from dataclasses import dataclass
from functools import partial

import numpy as np

from ._jax import jax, jnp
from .errors import CgWarning, ContractError, NumericalFailure

MAX_WEIGHT_DIM = 16
ASYMPTOTIC_BELOW = -8.0
UPPER_TAIL_ABOVE = 0.0
_ASYMPTOTIC_TERMS = 20


@dataclass(frozen=True)
class CgConfig:
    max_iters: int = 200
    residual_tol: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ContractError("max_iters must be >= 1")
        if not self.residual_tol > 0:
            raise ContractError("residual_tol must be positive")


@dataclass(frozen=True)
class CgResult:
    solution: np.ndarray
    converged: bool
    iterations: int
    residual: float  # worst relative residual over right-hand sides


def cg_solve(op, rhs, cfg=CgConfig()):
    """Conjugate gradient for op.apply(z) = rhs.

    ``rhs`` may be a vector or a matrix whose columns are solved
    independently. Stops when every column has ||r|| <= tol * ||rhs||; if the
    iteration budget runs out, the best iterate per column is returned with
    ``converged=False`` and a ``CgWarning``.
    """
    b = np.asarray(rhs, dtype=np.float64)
    vector = b.ndim == 1
    B = b[:, None] if vector else b
    if B.shape[0] != op.n_params:
        raise ContractError(f"rhs has {B.shape[0]} rows, operator acts on {op.n_params}")
    if not np.all(np.isfinite(B)):
        raise NumericalFailure("non-finite right-hand side")

    bnorm = np.linalg.norm(B, axis=0)
    target = cfg.residual_tol * bnorm
    X = np.zeros_like(B)
    R = B.copy()
    P = R.copy()
    rr = np.einsum("ij,ij->j", R, R)
    best_X = X.copy()
    best_res = np.sqrt(rr)
    done = best_res <= target
    it = 0
    while not np.all(done) and it < cfg.max_iters:
        it += 1
        AP = op.apply(P)
        pAp = np.einsum("ij,ij->j", P, AP)
        active = ~done & (pAp > 0)
        alpha = np.where(active, rr / np.where(pAp > 0, pAp, 1.0), 0.0)
        X = X + alpha * P
        R = R - alpha * AP
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(R))):
            raise NumericalFailure(f"non-finite conjugate gradient iterate at iteration {it}")
        rr_new = np.einsum("ij,ij->j", R, R)
        res = np.sqrt(rr_new)
        improved = res < best_res
        best_X[:, improved] = X[:, improved]
        best_res = np.where(improved, res, best_res)
        # a column with pAp <= 0 cannot make progress; freeze it
        done = done | (res <= target) | ~(pAp > 0)
        beta = np.where(done, 0.0, rr_new / np.where(rr > 0, rr, 1.0))
        P = R + beta * P
        rr = rr_new

    rel = np.where(bnorm > 0, best_res / np.where(bnorm > 0, bnorm, 1.0), 0.0)
    converged = bool(np.all(best_res <= target))
    if not converged:
        warnings.warn(
            f"CG stopped after {it} iterations with relative residual {rel.max():.3e}",
            CgWarning,
            stacklevel=2,
        )
    sol = best_X[:, 0] if vector else best_X
    return CgResult(sol, converged, it, float(rel.max(initial=0.0)))


@partial(jax.jit, static_argnums=0)
def _jacobian_kernel(model, params, X):
    return jax.vmap(jax.jacrev(lambda p, x: model.apply(p, x)), in_axes=(None, 0))(params, X)


def _batched_jacobians(model, params, X):
    params = jnp.asarray(params, dtype=jnp.float64)
    X = jnp.asarray(np.asarray(X, dtype=np.float64).reshape(-1, model.d_in))
    jac = _jacobian_kernel(model, params, X)
    jac = np.asarray(jac).reshape(X.shape[0], model.d_out, model.n_params)
    if not np.all(np.isfinite(jac)):
        raise NumericalFailure("non-finite Jacobian entry")
    return jac


@dataclass(frozen=True)
class WeightSolve:
    weights: np.ndarray  # (n, d_out, d_out)
    solves: np.ndarray  # (n, P, d_out): (H + eps I)^{-1} J_i^T
    jacobians: np.ndarray  # (n, d_out, P)
    cg: CgResult


def weight_matrices(model, params, X, op, cfg=CgConfig()):
    """W_i = J_i (H + eps I)^{-1} J_i^T for every row of ``X`` in one block solve."""
    if model.d_out > MAX_WEIGHT_DIM:
        raise ContractError(f"d_out={model.d_out} exceeds {MAX_WEIGHT_DIM}")
    J = _batched_jacobians(model, params, X)
    n, d, P = J.shape
    rhs = J.transpose(2, 0, 1).reshape(P, n * d)
    res = cg_solve(op, rhs, cfg)
    Z = res.solution.reshape(P, n, d).transpose(1, 0, 2)
    W = np.einsum("ndp,npe->nde", J, Z)
    W = 0.5 * (W + W.transpose(0, 2, 1))
    return WeightSolve(W, Z, J, res)


def weight_matrix(model, params, x, op, cfg=CgConfig()):
    """Output-space covariance J (H + eps I)^{-1} J^T at a single input."""
    return weight_matrices(model, params, np.asarray(x, dtype=np.float64)[None], op, cfg).weights[0]


def logdet_small(W):
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if W.shape[0] != W.shape[1] or W.shape[0] > MAX_WEIGHT_DIM:
        raise ContractError(f"expected a square matrix of size <= {MAX_WEIGHT_DIM}, got {W.shape}")
    try:
        L = np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(0.5 * (W + W.T))[0])
        raise ContractError(f"matrix is not positive definite (smallest eigenvalue {smallest:.3e})")
    return float(2.0 * np.sum(np.log(np.diag(L))))


def _asymptotic_coefficients(n_terms=_ASYMPTOTIC_TERMS):
    # (-1)^k (2k-1)!!, k = 1..n
    coeffs, c = [], 1.0
    for k in range(1, n_terms + 1):
        c *= 2 * k - 1
        coeffs.append((-1) ** k * c)
    return coeffs


_ASYM = _asymptotic_coefficients()


def gaussian_logcdf(z):
    """log Phi(z), stable far into the lower tail.

    Three regimes: the asymptotic series of the Mills ratio below -8,
    log(erfc/2) in the middle, and log1p(-Q) in the upper tail. Works on
    floats, numpy arrays and jax tracers.
    """
    is_jax = isinstance(z, jax.Array) or isinstance(z, jax.core.Tracer)
    zj = jnp.asarray(z, dtype=jnp.float64)

    low = zj < ASYMPTOTIC_BELOW
    high = zj > UPPER_TAIL_ABOVE
    # each branch sees a safe argument so unused branches stay finite
    z_low = jnp.where(low, zj, ASYMPTOTIC_BELOW - 1.0)
    z_mid = jnp.clip(zj, ASYMPTOTIC_BELOW, UPPER_TAIL_ABOVE)
    z_high = jnp.where(high, zj, UPPER_TAIL_ABOVE + 1.0)

    inv2 = 1.0 / (z_low * z_low)
    series = jnp.ones_like(z_low)
    power = jnp.ones_like(z_low)
    for c in _ASYM:
        power = power * inv2
        series = series + c * power
    log_low = (
        -0.5 * z_low * z_low - jnp.log(-z_low) - 0.5 * math.log(2.0 * math.pi) + jnp.log(series)
    )
    log_mid = jnp.log(0.5 * jax.scipy.special.erfc(-z_mid / math.sqrt(2.0)))
    log_high = jnp.log1p(-0.5 * jax.scipy.special.erfc(z_high / math.sqrt(2.0)))

    out = jnp.where(low, log_low, jnp.where(high, log_high, log_mid))
    if is_jax:
        return out
    if np.ndim(z) == 0:
        return float(out)
    return np.asarray(out)
