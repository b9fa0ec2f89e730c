"""Mini-batch momentum SGD, step-size grid search and training traces."""
import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import CgWarning, ContractError

DEFAULT_STEP_GRID = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    step_size: float = 1e-2
    batch_size: int = 256
    momentum: float = 0.9
    seed: int = 0
    eval_every: int = 0  # 0: evaluate only at the end

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")
        if not self.step_size > 0:
            raise ContractError("step_size must be positive")
        if self.eval_every < 0:
            raise ContractError("eval_every must be >= 0")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    train_objective: float  # mean minibatch objective since the previous record
    eval_metric: float


@dataclass
class TrainTrace:
    records: list
    final_params: np.ndarray
    cg_warning_count: int = 0
    status: str = "ok"  # or "diverged"
    steps_done: int = 0

    @property
    def diverged(self):
        return self.status == "diverged"

    @property
    def final_metric(self):
        return self.records[-1].eval_metric if self.records else math.nan


def eval_steps(cfg):
    """Steps after which the evaluation hook runs (always including the last)."""
    if cfg.eval_every == 0:
        return [cfg.steps]
    marks = list(range(cfg.eval_every, cfg.steps + 1, cfg.eval_every))
    if not marks or marks[-1] != cfg.steps:
        marks.append(cfg.steps)
    return marks


class BatchStream:
    """Deterministic mini-batch indices.

    When the data fits in one batch every step is full-batch. Otherwise each
    epoch is a fresh permutation from ``default_rng(seed)`` cut into
    ``n // batch_size`` batches; the remainder of an epoch is dropped.
    """

    def __init__(self, n, batch_size, seed):
        if n < 1:
            raise ContractError("training data is empty")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.full = batch_size >= n
        self.rng = np.random.default_rng(seed)
        self.per_epoch = n // self.batch_size
        self._perm = None
        self._k = 0

    def epoch(self):
        """Next epoch as an (n_batches, batch_size) index array."""
        if self.full:
            return np.arange(self.n)[None, :]
        perm = self.rng.permutation(self.n)
        return perm[: self.per_epoch * self.batch_size].reshape(self.per_epoch, self.batch_size)

    def __iter__(self):
        while True:
            yield from self.epoch()


def train(objective, init, n, cfg, evaluate=None):
    """Heavy-ball momentum SGD: v <- mu v - eta g, theta <- theta + v.

    ``objective(params, idx)`` returns (value, gradient) on the rows ``idx``.
    ``evaluate(params)`` supplies the trace metric; without it the metric is
    the minibatch objective. A non-finite value or gradient stops training
    with status "diverged"; the last finite parameters are returned.
    """
    theta = np.array(init, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ContractError("initial parameters must be finite")
    vel = np.zeros_like(theta)
    marks = set(eval_steps(cfg))
    records, acc, count = [], 0.0, 0
    status, t = "ok", 0
    stream = iter(BatchStream(n, cfg.batch_size, cfg.seed))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CgWarning)
        for t in range(1, cfg.steps + 1):
            idx = next(stream)
            value, grad = objective(theta, idx)
            grad = np.asarray(grad, dtype=np.float64)
            if not (np.isfinite(value) and np.all(np.isfinite(grad))):
                status, t = "diverged", t - 1
                break
            vel = cfg.momentum * vel - cfg.step_size * grad
            new = theta + vel
            if not np.all(np.isfinite(new)):
                status, t = "diverged", t - 1
                break
            theta = new
            acc += float(value)
            count += 1
            if t in marks:
                metric = float(evaluate(theta)) if evaluate else acc / count
                records.append(TraceRecord(t, acc / count, metric))
                acc, count = 0.0, 0
    n_cg = sum(issubclass(w.category, CgWarning) for w in caught)
    return TrainTrace(records, theta, n_cg, status, t)


# nnan/ninf are left out so the finiteness checks survive compilation
@numba.njit(cache=True, fastmath={"reassoc", "contract", "arcp", "nsz"})
def _lsq_batches(F, r, w, batches, theta, vel, lr, mom, values):
    """Momentum SGD on mean_b w_b (F_b . theta - r_b)^2 over the rows of ``batches``.

    Returns the number of completed steps (short if a value went non-finite).
    """
    nb, B = batches.shape
    P = F.shape[1]
    g = np.empty(P)
    for k in range(nb):
        g[:] = 0.0
        loss = 0.0
        for b in range(B):
            i = batches[k, b]
            res = -r[i]
            for j in range(P):
                res += F[i, j] * theta[j]
            loss += w[i] * res * res
            c = w[i] * res
            for j in range(P):
                g[j] += c * F[i, j]
        loss /= B
        if not np.isfinite(loss):
            return k
        scale = 2.0 / B
        ok = True
        for j in range(P):
            vel[j] = mom * vel[j] - lr * scale * g[j]
            theta[j] += vel[j]
            if not np.isfinite(theta[j]):
                ok = False
        values[k] = loss
        if not ok:
            return k
    return nb


def weighted_lsq_objective(features, targets, weights=None):
    """(params, idx) -> (value, gradient) of mean_i w_i (psi_i . theta - r_i)^2."""
    F = np.asarray(features, dtype=np.float64)
    r = np.asarray(targets, dtype=np.float64)
    w = np.ones(len(r)) if weights is None else np.asarray(weights, dtype=np.float64)

    def objective(theta, idx):
        res = F[idx] @ theta - r[idx]
        wr = w[idx] * res
        return float(np.mean(wr * res)), 2.0 * (F[idx].T @ wr) / len(idx)

    return objective


def train_weighted_lsq(features, targets, weights, init, cfg, evaluate=None):
    """Compiled equivalent of ``train(weighted_lsq_objective(...), ...)``.

    Uses the same batch stream; results agree with the generic loop up to
    floating-point summation order.
    """
    F = np.ascontiguousarray(features, dtype=np.float64)
    r = np.ascontiguousarray(targets, dtype=np.float64)
    n = len(r)
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    theta = np.array(init, dtype=np.float64)
    if theta.shape != (F.shape[1],) or not np.all(np.isfinite(theta)):
        raise ContractError("initial parameters must be finite and match the feature width")
    vel = np.zeros_like(theta)
    stream = BatchStream(n, cfg.batch_size, cfg.seed)
    records, t, acc, count = [], 0, 0.0, 0
    queue = np.empty((0, stream.batch_size), dtype=np.int64)
    for mark in eval_steps(cfg):
        while len(queue) < mark - t:
            queue = np.concatenate([queue, stream.epoch()])
        todo = np.ascontiguousarray(queue[: mark - t])
        queue = queue[mark - t:]
        values = np.empty(len(todo))
        prev = theta.copy(), vel.copy()
        done = _lsq_batches(F, r, w, todo, theta, vel, cfg.step_size, cfg.momentum, values)
        if done < len(todo):
            # replay up to the failing step so the returned parameters are finite
            theta, vel = prev
            if done:
                _lsq_batches(F, r, w, todo[:done], theta, vel, cfg.step_size, cfg.momentum, values)
            return TrainTrace(records, theta, 0, "diverged", t + done)
        t = mark
        acc += float(values.sum())
        count += len(values)
        metric = float(evaluate(theta)) if evaluate else acc / count
        records.append(TraceRecord(t, acc / count, metric))
        acc, count = 0.0, 0
    return TrainTrace(records, theta, 0, "ok", t)


@dataclass
class GridResult:
    best_step: float
    best_trace: TrainTrace
    scores: dict = field(default_factory=dict)  # step size -> validation metric (nan if diverged)
    traces: dict = field(default_factory=dict)


def grid_search(run, grid, validate):
    """Train once per step size and keep the one with the lowest validation metric.

    ``run(step_size)`` returns a TrainTrace; ``validate(params)`` scores it.
    Ties go to the smaller step size. Diverged runs are never selected.
    """
    grid = sorted(float(s) for s in grid)
    if not grid:
        raise ContractError("step-size grid is empty")
    best, scores, traces = None, {}, {}
    for step in grid:
        trace = run(step)
        traces[step] = trace
        score = math.nan if trace.diverged else float(validate(trace.final_params))
        if not math.isfinite(score):
            score = math.nan
        scores[step] = score
        if not math.isnan(score) and (best is None or score < scores[best]):
            best = step
    if best is None:
        raise ContractError(f"every run in the step-size grid {grid} diverged")
    return GridResult(best, traces[best], scores, traces)
