"""Online rollout evaluation over fixed start/goal task sets."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .env import UNREACHABLE, GridWorld
from .errors import ConfigError


@dataclass
class TaskSet:
    pairs: list  # (start state, goal state)
    max_steps: int
    episodes_per_pair: int = 1

    def validate(self, env: GridWorld) -> None:
        if not self.pairs:
            raise ConfigError("task set is empty")
        if self.max_steps < 1 or self.episodes_per_pair < 1:
            raise ConfigError("max_steps and episodes_per_pair must be positive")
        for s, g in self.pairs:
            if s == g:
                raise ConfigError(f"task start equals goal ({s})")
            if env.shortest_path_distance(s, g) == UNREACHABLE:
                raise ConfigError(f"task goal {g} unreachable from {s}")


@dataclass
class EvalResult:
    success_rate: list  # percent per pair
    mean_length: list
    seed: int
    aggregate: float = field(init=False)

    def __post_init__(self):
        self.aggregate = float(np.mean(self.success_rate))


def rollout(env: GridWorld, act, s0: int, g: int, max_steps: int, rng=None):
    """Run ``act(s, g, rng)`` from ``s0``; returns ``(success, length)``."""
    s = int(s0)
    for t in range(max_steps + 1):
        if s == g:
            return True, t
        if t == max_steps:
            break
        s = int(env.next_state[s, act(s, g, rng)])
    return False, max_steps


def evaluate(env: GridWorld, act, tasks: TaskSet, seed: int = 0) -> EvalResult:
    tasks.validate(env)
    rates, lengths = [], []
    for i, (s0, g) in enumerate(tasks.pairs):
        rng = np.random.default_rng([seed, i])
        wins, lens = 0, []
        for _ in range(tasks.episodes_per_pair):
            ok, n = rollout(env, act, s0, g, tasks.max_steps, rng)
            wins += ok
            lens.append(n)
        rates.append(100.0 * wins / tasks.episodes_per_pair)
        lengths.append(float(np.mean(lens)))
    return EvalResult(rates, lengths, seed)


def oracle_actor(env: GridWorld):
    greedy = {}

    def act(s, g, rng):
        if g not in greedy:
            greedy[g] = env.greedy_actions(g)
        return int(greedy[g][s])
    return act


def random_actor(n_actions: int = 5):
    def act(s, g, rng):
        return int(rng.integers(n_actions))
    return act


# -- task sets -------------------------------------------------------------------


def bundled_tasks(env: GridWorld, max_steps: int | None = None,
                  episodes_per_pair: int = 1) -> TaskSet:
    """The five start/goal pairs shipped for a bundled maze.

    The default horizon is four times the maze diameter.
    """
    text = resources.files("sawgrid").joinpath("mazes").joinpath("tasks.json").read_text()
    bundled = json.loads(text)
    if env.name not in bundled:
        raise ConfigError(f"no bundled tasks for maze {env.name!r}")
    return _build(env, bundled[env.name], max_steps, episodes_per_pair)


def load_tasks(path, env: GridWorld, max_steps=None, episodes_per_pair=1) -> TaskSet:
    """Task file: JSON list of ``[[r0, c0], [rg, cg]]`` cell pairs."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"task file {path} not found")
    return _build(env, json.loads(path.read_text()), max_steps, episodes_per_pair)


def _build(env, cell_pairs, max_steps, episodes_per_pair) -> TaskSet:
    pairs = [(env.state(tuple(a)), env.state(tuple(b))) for a, b in cell_pairs]
    if max_steps is None:
        max_steps = 4 * env.diameter
    tasks = TaskSet(pairs, int(max_steps), int(episodes_per_pair))
    tasks.validate(env)
    return tasks


# -- output ------------------------------------------------------------------------

EVAL_COLUMNS = ("algo", "maze", "pair", "seed", "success_rate", "mean_length")


def fmt(x) -> str:
    return f"{x:.17g}" if isinstance(x, float) else str(x)


def eval_rows(result: EvalResult, algo: str, maze: str) -> list[dict]:
    rows = []
    for i, (rate, length) in enumerate(zip(result.success_rate, result.mean_length)):
        rows.append(dict(algo=algo, maze=maze, pair=i, seed=result.seed,
                         success_rate=float(rate), mean_length=float(length)))
    rows.append(dict(algo=algo, maze=maze, pair="all", seed=result.seed,
                     success_rate=result.aggregate,
                     mean_length=float(np.mean(result.mean_length))))
    return rows


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def rows_to_jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
