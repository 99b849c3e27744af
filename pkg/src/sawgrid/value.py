"""Goal-conditioned implicit value learning over a tabular V(s, g)."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import Hyperparams
from .dataset import ValueBatch
from .env import GridWorld
from .errors import DatasetError


def reward(s, g):
    """Sparse goal reward: 0 on the goal, -1 elsewhere."""
    return np.where(np.asarray(s) == np.asarray(g), 0.0, -1.0)


def expectile_weight(x, tau):
    return np.abs(tau - (np.asarray(x) < 0))


def expectile_loss(x, tau):
    x = np.asarray(x, dtype=float)
    return expectile_weight(x, tau) * x**2


class ValueTable:
    """Online table ``v`` and target copy ``v_target``, both ``[state, goal]``.

    The diagonal ``v[g, g]`` is pinned to zero: goals are absorbing.
    """

    def __init__(self, n_states: int, init: float = 0.0):
        self.v = np.full((n_states, n_states), float(init))
        np.fill_diagonal(self.v, 0.0)
        self.v_target = self.v.copy()
        self.n_updates = 0

    @property
    def n_states(self) -> int:
        return self.v.shape[0]

    def sync_target(self) -> None:
        self.v_target[...] = self.v

    def copy(self) -> "ValueTable":
        out = ValueTable(self.n_states)
        out.v[...] = self.v
        out.v_target[...] = self.v_target
        out.n_updates = self.n_updates
        return out


def q_bar(vt: ValueTable, env: GridWorld, s, a, g, gamma: float):
    """Action-free Q estimate ``r(s, g) + gamma * v_target(s', g)``; zero at the goal."""
    s_next = env.next_state[s, a] if np.ndim(s) else env.step(s, a)
    q = reward(s, g) + gamma * vt.v_target[s_next, g]
    return np.where(np.asarray(s) == np.asarray(g), 0.0, q)


def td_residual(v, v_target, s, s_next, g, gamma):
    target = reward(s, g) + gamma * v_target[s_next, g]
    live = s != g
    return np.where(live, target - v[s, g], 0.0), live


def gcivl_loss_and_grad(v, v_target, batch: ValueBatch, tau: float, gamma: float):
    """Batch-mean expectile TD loss and its gradient with respect to ``v``.

    Items with ``s == g`` contribute nothing (absorbing goal).
    """
    delta, live = td_residual(v, v_target, batch.s, batch.s_next, batch.g, gamma)
    w = expectile_weight(delta, tau) * live
    n = len(batch)
    loss = float(np.sum(w * delta**2) / n)
    grad = np.zeros_like(v)
    np.add.at(grad, (batch.s, batch.g), -2.0 * w * delta / n)
    return loss, grad


def gcivl_update(vt: ValueTable, batch: ValueBatch, hp: Hyperparams) -> float:
    """One gradient step on the expectile loss; returns the pre-update loss."""
    loss, grad = gcivl_loss_and_grad(vt.v, vt.v_target, batch, hp.tau, hp.gamma)
    vt.v -= hp.lr_v * grad
    np.fill_diagonal(vt.v, 0.0)
    vt.n_updates += 1
    if hp.target_soft > 0:
        vt.v_target += hp.target_soft * (vt.v - vt.v_target)
    elif vt.n_updates % hp.target_period == 0:
        vt.sync_target()
    return loss


def sweep_batches(d, n_states: int, rng, n_blocks: int = 5):
    """Every (transition, goal) pair once, split into random blocks of start states."""
    tr = d.transitions()
    blocks = np.array_split(rng.permutation(n_states), n_blocks)
    goals = np.arange(n_states)
    for block in blocks:
        rows = tr[np.isin(tr[:, 0], block)]
        if not len(rows):
            continue
        s = np.repeat(rows[:, 0], n_states)
        yield ValueBatch(s, np.repeat(rows[:, 1], n_states), np.repeat(rows[:, 2], n_states),
                         np.tile(goals, len(rows)), np.zeros(len(s), dtype=np.int64))


def gcivl_sweep(vt: ValueTable, d, hp: Hyperparams, rng, n_blocks: int = 5,
                rate: float = 1.9) -> float:
    """One sweep-equivalent of expectile TD with the target synced after every block.

    The step is scaled so each entry moves by at most ``rate`` times the mean
    of its residuals; ``rate < 2`` keeps the block iteration stable.
    Returns the mean pre-update loss over blocks.
    """
    m_max = np.bincount(d.states[d.flat_index], minlength=vt.n_states).max()
    losses = []
    for batch in sweep_batches(d, vt.n_states, rng, n_blocks):
        loss, grad = gcivl_loss_and_grad(vt.v, vt.v_target, batch, hp.tau, hp.gamma)
        lr = rate * len(batch) / (2.0 * max(hp.tau, 1 - hp.tau) * m_max)
        vt.v -= lr * grad
        np.fill_diagonal(vt.v, 0.0)
        vt.n_updates += 1
        vt.sync_target()
        losses.append(loss)
    return float(np.mean(losses))


def optimal_value_closed_form(distances: np.ndarray, gamma: float) -> np.ndarray:
    d = distances.astype(float)
    out = -(1.0 - gamma**d) / (1.0 - gamma)
    return np.where(distances < 0, -1.0 / (1.0 - gamma), out)


# -- serialisation -------------------------------------------------------------


def save_value(vt: ValueTable, env: GridWorld, gamma: float, path) -> None:
    path = Path(path)
    header = {"kind": "value", "maze_hash": env.maze_hash, "n_states": vt.n_states,
              "gamma": gamma, "n_updates": vt.n_updates}
    with open(path, "wb") as fh:
        np.savez(fh, header=json.dumps(header, sort_keys=True), v=vt.v, v_target=vt.v_target)


def load_value(path, env: GridWorld) -> tuple[ValueTable, dict]:
    with np.load(path) as f:
        header = json.loads(str(f["header"]))
        if header.get("kind") != "value" or header["maze_hash"] != env.maze_hash:
            raise DatasetError(f"{path} is not a value table for maze {env.name}")
        vt = ValueTable(header["n_states"])
        vt.v[...] = f["v"]
        vt.v_target[...] = f["v_target"]
        vt.n_updates = header["n_updates"]
    return vt, header
