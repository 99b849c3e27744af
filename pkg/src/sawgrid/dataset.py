"""Offline trajectory datasets and the goal/subgoal samplers built on them.

All trajectories are stored concatenated in one flat array so samplers can be
fully vectorised: a *position* ``p`` addresses ``states[p]``, and every
non-terminal position has ``actions[p]`` and successor ``states[p + 1]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import N_ACTIONS, GridWorld
from .errors import ConfigError, DatasetError

MODES = ("navigate", "stitch")
FORMAT = "sawgrid-dataset"


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


class Dataset:
    """Immutable collection of trajectories plus flat index structures."""

    def __init__(self, trajectories, meta: dict | None = None):
        trajectories = list(trajectories)
        if not trajectories:
            raise DatasetError("dataset has no trajectories")
        for tr in trajectories:
            if len(tr.states) != len(tr.actions) + 1:
                raise DatasetError("trajectory needs exactly one more state than actions")
        if sum(len(tr) for tr in trajectories) == 0:
            raise DatasetError("dataset has no transitions")
        self.trajectories = trajectories
        self.meta = dict(meta or {})

        lengths = np.array([len(tr) for tr in trajectories], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(lengths + 1)[:-1]])
        self.states = np.concatenate([tr.states for tr in trajectories]).astype(np.int64)
        self.actions = np.concatenate(
            [np.append(tr.actions, -1) for tr in trajectories]
        ).astype(np.int64)
        self.traj_start = starts
        self.traj_end = starts + lengths
        self.traj_of = np.repeat(np.arange(len(trajectories)), lengths + 1)
        # positions of every non-terminal step, i.e. the (trajectory, t) pairs
        self.flat_index = np.concatenate(
            [np.arange(s, e) for s, e in zip(starts, self.traj_end)]
        ).astype(np.int64)
        self.end_of = self.traj_end[self.traj_of]
        for arr in (self.states, self.actions, self.flat_index, self.end_of):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_transitions(self) -> int:
        return len(self.flat_index)

    def timestep(self, pos) -> np.ndarray:
        return np.asarray(pos) - self.traj_start[self.traj_of[pos]]

    def transitions(self) -> np.ndarray:
        """``(n, 3)`` array of ``(s, a, s_next)`` for every step."""
        p = self.flat_index
        return np.stack([self.states[p], self.actions[p], self.states[p + 1]], axis=1)

    def state_counts(self, n_states: int) -> np.ndarray:
        return np.bincount(self.states, minlength=n_states)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset) or len(self) != len(other):
            return False
        return all(
            np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
            for a, b in zip(self.trajectories, other.trajectories)
        )

    __hash__ = None


def generate_dataset(
    env: GridWorld,
    mode: str = "navigate",
    n_traj: int = 1000,
    max_len: int = 1000,
    epsilon: float = 0.2,
    seed: int = 0,
    k: int = 25,
    stitch_len: int | None = None,
) -> Dataset:
    """Roll out an epsilon-noisy BFS-greedy behaviour policy.

    Each trajectory starts at a uniform free cell and heads for a uniform
    (different) free cell, stopping on arrival or after ``max_len`` steps.
    ``stitch`` mode caps the length at ``stitch_len`` (default ``4 * k``).
    """
    if mode not in MODES:
        raise ConfigError(f"unknown dataset mode {mode!r}")
    if n_traj <= 0:
        raise DatasetError("n_traj must be positive")
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError("epsilon must lie in [0, 1]")
    if not env.connected:
        raise ConfigError("maze must be connected")
    if env.n_states < 2:
        raise ConfigError("maze needs at least two free cells")
    if mode == "stitch":
        max_len = min(max_len, stitch_len if stitch_len is not None else 4 * k)
    if max_len < 1:
        raise ConfigError("max_len must be at least 1")

    rng = np.random.default_rng(seed)
    n = env.n_states
    greedy = np.stack([env.greedy_actions(g) for g in range(n)])  # [g, s]
    trajectories = []
    for _ in range(n_traj):
        s = int(rng.integers(n))
        target = int(rng.integers(n - 1))
        target += target >= s
        trajectories.append(behavior_rollout(env, s, target, epsilon, max_len, rng, greedy))
    meta = dict(maze=env.name, maze_hash=env.maze_hash, mode=mode, epsilon=float(epsilon),
                seed=int(seed), n_traj=int(n_traj), max_len=int(max_len))
    return Dataset(trajectories, meta)


def behavior_rollout(env: GridWorld, start: int, target: int, epsilon: float, max_len: int,
                     rng, greedy=None) -> Trajectory:
    """One epsilon-greedy trajectory; greedy ties go to the lowest action index."""
    toward = env.greedy_actions(target) if greedy is None else greedy[target]
    nxt = env.next_state
    s = int(start)
    states, actions = [s], []
    while s != target and len(actions) < max_len:
        if rng.random() < epsilon:
            a = int(rng.integers(N_ACTIONS))
        else:
            a = int(toward[s])
        s = int(nxt[s, a])
        actions.append(a)
        states.append(s)
    return Trajectory(np.array(states, dtype=np.int64), np.array(actions, dtype=np.int64))


def coverage_dataset(env: GridWorld) -> Dataset:
    """One single-step trajectory for every (state, action) pair."""
    trajectories = [
        Trajectory(np.array([s, env.next_state[s, a]]), np.array([a]))
        for s in range(env.n_states)
        for a in range(N_ACTIONS)
    ]
    meta = dict(maze=env.name, maze_hash=env.maze_hash, mode="coverage", epsilon=1.0,
                seed=0, n_traj=len(trajectories), max_len=1)
    return Dataset(trajectories, meta)


# -- samplers ------------------------------------------------------------------


@dataclass(frozen=True)
class ValueBatch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    g: np.ndarray
    pos: np.ndarray
    g_pos: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class PolicyBatch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    w: np.ndarray
    g: np.ndarray
    pos: np.ndarray
    w_pos: np.ndarray | None = None
    g_pos: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.s)


def check_mixture(mix) -> np.ndarray:
    mix = np.asarray(mix, dtype=float)
    if mix.shape != (3,):
        raise ConfigError("goal mixture needs exactly three weights")
    if (mix < 0).any() or not np.isfinite(mix).all():
        raise ConfigError(f"goal mixture weights must be non-negative, got {mix.tolist()}")
    if abs(mix.sum() - 1.0) > 1e-9:
        raise ConfigError(f"goal mixture weights must sum to 1, got {mix.sum()}")
    return mix


def _goals(d: Dataset, pos, mix, rng, future) -> np.ndarray:
    """Mixture over current state, in-trajectory future state, random dataset state."""
    branch = rng.choice(3, size=len(pos), p=mix)
    gpos = pos.copy()
    fut = branch == 1
    gpos[fut] = future(pos[fut])
    rnd = branch == 2
    gpos[rnd] = rng.integers(len(d.states), size=int(rnd.sum()))
    return gpos


def sample_value_batch(d: Dataset, gamma: float, mix=(0.2, 0.5, 0.3), batch: int = 1024,
                       rng=None) -> ValueBatch:
    """Transitions with goals from the value mixture; future offsets are Geom(1 - gamma)."""
    mix = check_mixture(mix)
    rng = np.random.default_rng(rng)
    pos = d.flat_index[rng.integers(d.n_transitions, size=batch)]

    def future(p):
        offset = rng.geometric(1.0 - gamma, size=len(p))
        return np.minimum(p + offset, d.end_of[p])

    gpos = _goals(d, pos, mix, rng, future)
    return ValueBatch(d.states[pos], d.actions[pos], d.states[pos + 1], d.states[gpos], pos, gpos)


def sample_policy_batch(d: Dataset, k: int, batch: int = 1024, rng=None,
                        include_current_goal: bool = True, mix=(0.0, 1.0, 0.0)) -> PolicyBatch:
    """Transitions with k-step clamped subgoals and policy goals.

    With the default mixture the goal is a uniform in-trajectory future state
    ``s_u``, ``u`` in ``[t, T]`` (or ``[t + 1, T]`` without the current state).
    """
    if k < 1:
        raise ConfigError("subgoal steps k must be at least 1")
    mix = check_mixture(mix)
    rng = np.random.default_rng(rng)
    pos = d.flat_index[rng.integers(d.n_transitions, size=batch)]
    end = d.end_of[pos]
    wpos = np.minimum(pos + k, end)

    def future(p):
        lo = p if include_current_goal else p + 1
        hi = d.end_of[p]
        return lo + np.floor(rng.random(len(p)) * (hi - lo + 1)).astype(np.int64)

    gpos = _goals(d, pos, mix, rng, future)
    return PolicyBatch(d.states[pos], d.actions[pos], d.states[pos + 1], d.states[wpos],
                       d.states[gpos], pos, wpos, gpos)


# -- serialisation -------------------------------------------------------------


def save_dataset(d: Dataset, env: GridWorld, path) -> None:
    header = {"format": FORMAT, "version": 1, **d.meta, "maze_hash": env.maze_hash}
    lines = [json.dumps(header, sort_keys=True)]
    for tr in d.trajectories:
        rec = {"states": env.free_cells[tr.states].tolist(), "actions": tr.actions.tolist()}
        lines.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path, env: GridWorld) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file {path} not found")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise DatasetError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT:
        raise DatasetError(f"{path} is not a {FORMAT} file")
    if header.get("maze_hash") != env.maze_hash:
        raise DatasetError(f"{path} was generated for a different maze")
    trajectories = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        states = np.array([env.state_from_flat(f) for f in rec["states"]], dtype=np.int64)
        actions = np.array(rec["actions"], dtype=np.int64)
        if len(actions) and ((actions < 0) | (actions >= N_ACTIONS)).any():
            raise DatasetError("action out of range")
        trajectories.append(Trajectory(states, actions))
    meta = {k: v for k, v in header.items() if k not in ("format", "version")}
    return Dataset(trajectories, meta)
