"""Mountain car: dynamics, the energy-pumping policy, offline data and true values."""
import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

POS_MIN, POS_MAX = -1.2, 0.6
VEL_MAX = 0.07
GOAL = 0.5
FORCE = 0.001
GRAVITY = 0.0025
STEP_CAP = 1000
START_LOW, START_HIGH = -0.6, -0.4
CSV_COLUMNS = ("pos", "vel", "action", "reward", "pos'", "vel'", "terminal")


@dataclass(frozen=True)
class McState:
    position: float
    velocity: float

    def __post_init__(self):
        if not (POS_MIN <= self.position <= POS_MAX and -VEL_MAX <= self.velocity <= VEL_MAX):
            raise ContractError(f"state ({self.position}, {self.velocity}) is out of bounds")


def step(s, a):
    """One transition; returns (next state, reward, terminal)."""
    if a not in (-1, 0, 1):
        raise ContractError(f"action must be -1, 0 or +1, got {a!r}")
    p, v = _step(s.position, s.velocity, a)
    return McState(p, v), -1.0, p >= GOAL


def _step(p, v, a):
    v = min(max(v + FORCE * a - GRAVITY * math.cos(3.0 * p), -VEL_MAX), VEL_MAX)
    p = min(max(p + v, POS_MIN), POS_MAX)
    if p <= POS_MIN:
        v = 0.0
    return p, v


def energy_policy(s):
    """Push along the current velocity; +1 when at rest."""
    v = s.velocity if isinstance(s, McState) else s[1]
    return -1 if v < 0 else 1


def _policy_action(policy, p, v):
    if policy is energy_policy:
        return -1 if v < 0 else 1
    return policy(McState(p, v))


@dataclass(frozen=True)
class TransitionSet:
    pos: np.ndarray
    vel: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_pos: np.ndarray
    next_vel: np.ndarray
    terminal: np.ndarray
    truncated_episodes: int = 0

    def __len__(self):
        return len(self.pos)

    @property
    def states(self):
        return normalize_states(self.pos, self.vel)

    @property
    def next_states(self):
        return normalize_states(self.next_pos, self.next_vel)


def normalize_states(pos, vel):
    """Map position and velocity affinely onto [0, 1]; shape (n, 2)."""
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    return np.stack([(pos - POS_MIN) / (POS_MAX - POS_MIN), (vel + VEL_MAX) / (2 * VEL_MAX)], axis=-1)


def collect_transitions(policy, n, seed, start=(START_LOW, START_HIGH), cap=STEP_CAP):
    """Concatenate episodes (start position uniform on ``start``, velocity 0)
    until ``n`` transitions are collected; episodes end at the goal or after
    ``cap`` steps."""
    if n < 1:
        raise ContractError("n must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    truncated = 0
    while len(rows) < n:
        p, v = float(rng.uniform(*start)), 0.0
        for t in range(cap):
            a = _policy_action(policy, p, v)
            p2, v2 = _step(p, v, a)
            term = p2 >= GOAL
            rows.append((p, v, a, -1.0, p2, v2, term))
            p, v = p2, v2
            if term or len(rows) >= n:
                break
        else:
            truncated += 1
    arr = np.array(rows, dtype=np.float64)
    return TransitionSet(
        arr[:, 0], arr[:, 1], arr[:, 2].astype(np.int64), arr[:, 3],
        arr[:, 4], arr[:, 5], arr[:, 6].astype(bool), truncated,
    )


@dataclass(frozen=True)
class GroundTruth:
    values: np.ndarray
    truncated: np.ndarray  # True where a rollout hit the step cap
    steps_to_goal: np.ndarray


def ground_truth_values(states, policy, gamma, n_rollouts=1, seed=0, cap=STEP_CAP):
    """Discounted return of ``policy`` from each (position, velocity).

    The dynamics are deterministic, so every rollout from a state is
    identical; ``n_rollouts`` and ``seed`` are accepted for interface
    symmetry and repeated rollouts are averaged.
    """
    if n_rollouts < 1:
        raise ContractError("n_rollouts must be >= 1")
    S = np.atleast_2d(np.asarray(states, dtype=np.float64))
    values = np.empty(len(S))
    trunc = np.zeros(len(S), dtype=bool)
    steps = np.zeros(len(S), dtype=np.int64)
    for k, (p0, v0) in enumerate(S):
        total = 0.0
        for _ in range(n_rollouts):
            p, v, ret, disc, t = p0, v0, 0.0, 1.0, 0
            while p < GOAL and t < cap:
                p, v = _step(p, v, _policy_action(policy, p, v))
                ret -= disc
                disc *= gamma
                t += 1
            total += ret
        values[k] = total / n_rollouts
        trunc[k] = p < GOAL
        steps[k] = t
    return GroundTruth(values, trunc, steps)


def sample_visited_states(n, seed, pool=20_000):
    """``n`` distinct states drawn uniformly from an on-policy transition pool."""
    ts = collect_transitions(energy_policy, max(pool, n), seed)
    idx = np.random.default_rng(seed).choice(len(ts), size=n, replace=False)
    return np.stack([ts.pos[idx], ts.vel[idx]], axis=1)


def write_transitions_csv(ts, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(ts)):
            w.writerow([
                repr(float(ts.pos[i])), repr(float(ts.vel[i])), int(ts.action[i]), repr(float(ts.reward[i])),
                repr(float(ts.next_pos[i])), repr(float(ts.next_vel[i])), int(ts.terminal[i]),
            ])


def read_transitions_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ContractError(f"unexpected transition header {header}")
        rows = [[float(x) for x in row] for row in reader]
    arr = np.array(rows, dtype=np.float64).reshape(-1, len(CSV_COLUMNS))
    return TransitionSet(
        arr[:, 0], arr[:, 1], arr[:, 2].astype(np.int64), arr[:, 3],
        arr[:, 4], arr[:, 5], arr[:, 6].astype(bool),
    )
