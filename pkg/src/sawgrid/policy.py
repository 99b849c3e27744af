"""Tabular softmax policies and the policy-extraction objectives.

Every objective is written as a batch-mean *loss* (descent direction) with an
analytic gradient returned as a :class:`RowGrad`: one gradient row per batch
item, addressed by ``(state, conditioning)`` indices into the logit table.
Ascent objectives such as AWR are negated.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import Hyperparams
from .dataset import Dataset, PolicyBatch, sample_policy_batch
from .env import N_ACTIONS, GridWorld
from .errors import DatasetError
from .value import ValueTable, q_bar

ROLES = ("flat", "sub", "high")


class PolicyTable:
    """Logits ``[state, conditioning cell, action-or-subgoal]``.

    ``flat`` is pi(a | s, g), ``sub`` is pi_sub(a | s, w) and ``high`` is
    pi_h(w | s, g) whose last axis ranges over all free cells.
    """

    def __init__(self, n_states: int, role: str = "flat", logits=None):
        if role not in ROLES:
            raise ValueError(f"unknown policy role {role!r}")
        self.role = role
        n_out = n_states if role == "high" else N_ACTIONS
        if logits is None:
            logits = np.zeros((n_states, n_states, n_out))
        self.logits = np.asarray(logits, dtype=float)
        if self.logits.shape != (n_states, n_states, n_out):
            raise ValueError(f"logits shape {self.logits.shape} does not match role {role}")

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    def copy(self) -> "PolicyTable":
        return PolicyTable(self.n_states, self.role, self.logits.copy())

    def probs(self, s, c) -> np.ndarray:
        return softmax(self.logits[s, c])

    def log_probs(self, s, c) -> np.ndarray:
        return log_softmax(self.logits[s, c])

    def argmax(self, s, c):
        return np.argmax(self.logits[s, c], axis=-1)

    def sample(self, s, c, rng):
        p = self.probs(s, c)
        u = rng.random(p.shape[:-1] + (1,))
        idx = (np.cumsum(p, axis=-1) < u).sum(axis=-1)
        return np.minimum(idx, p.shape[-1] - 1)


def log_softmax(x):
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(x):
    return np.exp(log_softmax(x))


def log_prob(p: PolicyTable, s, c, i):
    return np.take_along_axis(p.log_probs(s, c), np.asarray(i)[..., None], axis=-1)[..., 0]


def kl_categorical(p, q):
    """``KL(p || q)`` along the last axis with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return np.sum(terms, axis=-1)


def kl_from_logits(logits_p, logits_q):
    """KL between two softmax distributions, and its gradient in ``logits_p``."""
    lp = log_softmax(logits_p)
    lq = log_softmax(logits_q)
    p = np.exp(lp)
    kl = np.sum(p * (lp - lq), axis=-1)
    grad = p * (lp - lq - kl[..., None])
    return kl, grad


@dataclass
class RowGrad:
    """Sparse gradient: ``rows[i]`` belongs at ``logits[s[i], c[i]]``."""

    s: np.ndarray
    c: np.ndarray
    rows: np.ndarray

    def dense(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        np.add.at(out, (self.s, self.c), self.rows)
        return out

    def __add__(self, other: "RowGrad") -> "RowGrad":
        return RowGrad(np.concatenate([self.s, other.s]), np.concatenate([self.c, other.c]),
                       np.concatenate([self.rows, other.rows]))


def apply_grad(p: PolicyTable, grad: RowGrad, lr: float) -> None:
    np.add.at(p.logits, (grad.s, grad.c), -lr * grad.rows)


# -- advantages ------------------------------------------------------------------


def action_advantage(vt: ValueTable, env: GridWorld, s, a, g, gamma: float):
    """``A(s, a, g) = Qbar(s, a, g) - V(s, g)``."""
    return q_bar(vt, env, s, a, g, gamma) - vt.v[s, g]


def subgoal_advantage(vt: ValueTable, s, w, g):
    """Simplified multi-step advantage ``V(w, g) - V(s, g)``."""
    return vt.v[w, g] - vt.v[s, g]


def exp_weight(x, temperature, w_max):
    with np.errstate(over="ignore"):
        return np.minimum(np.exp(temperature * np.asarray(x, dtype=float)), w_max)


# -- objectives --------------------------------------------------------------------


def weighted_nll(logits, s, c, target, weights):
    """``-mean(weights * log pi(target | s, c))`` and its row gradient."""
    n = len(s)
    lp = log_softmax(logits[s, c])
    picked = lp[np.arange(n), target]
    loss = float(-np.sum(weights * picked) / n)
    rows = np.exp(lp)
    rows[np.arange(n), target] -= 1.0
    rows *= (weights / n)[:, None]
    return loss, RowGrad(s, c, rows)


def gcbc_loss_and_grad(logits, batch):
    return weighted_nll(logits, batch.s, batch.g, batch.a, np.ones(len(batch.s)))


def awr_weights(vt, env, batch, hp: Hyperparams, goals=None):
    g = batch.g if goals is None else goals
    adv = action_advantage(vt, env, batch.s, batch.a, g, hp.gamma)
    return exp_weight(adv, hp.alpha, hp.w_max), adv


def awr_loss_and_grad(logits, vt, env, batch, hp: Hyperparams):
    weights, _ = awr_weights(vt, env, batch, hp)
    return weighted_nll(logits, batch.s, batch.g, batch.a, weights)


def hiql_losses_and_grads(high_logits, low_logits, vt, env, batch, hp: Hyperparams):
    """High level treats ``s_{t+k}`` as its action; low level is AWR toward ``s_{t+k}``."""
    adv_h = subgoal_advantage(vt, batch.s, batch.w, batch.g)
    w_h = exp_weight(adv_h, hp.beta_high, hp.w_max)
    loss_h, grad_h = weighted_nll(high_logits, batch.s, batch.g, batch.w, w_h)
    adv_l = action_advantage(vt, env, batch.s, batch.a, batch.w, hp.gamma)
    w_l = exp_weight(adv_l, hp.beta_low, hp.w_max)
    loss_l, grad_l = weighted_nll(low_logits, batch.s, batch.w, batch.a, w_l)
    return (loss_h, grad_h), (loss_l, grad_l)


def gcwae_loss_and_grad(logits, vt, env, batch, imagined, hp: Hyperparams):
    """AWR on the flat policy with advantages measured toward imagined subgoals."""
    weights, _ = awr_weights(vt, env, batch, hp, goals=imagined)
    return weighted_nll(logits, batch.s, batch.g, batch.a, weights)


def weighted_kl(logits, target_logits, s, g, w, weights):
    """``mean(weights * KL(pi(.|s, g) || pi_sub(.|s, w)))`` with stop-gradient on the target."""
    n = len(s)
    kl, g_rows = kl_from_logits(logits[s, g], target_logits[s, w])
    loss = float(np.sum(weights * kl) / n)
    return loss, RowGrad(s, g, g_rows * (weights / n)[:, None])


def ris_loss_and_grad(logits, sub_logits, vt, env, batch, imagined, hp: Hyperparams):
    loss_a, grad_a = awr_loss_and_grad(logits, vt, env, batch, hp)
    coef = np.full(len(batch.s), hp.beta_ris)
    loss_k, grad_k = weighted_kl(logits, sub_logits, batch.s, batch.g, imagined, coef)
    return loss_a + loss_k, grad_a + grad_k


def saw_loss_and_grad(logits, sub_logits, vt, env, batch, hp: Hyperparams):
    """Negated SAW objective: one-step AWR plus advantage-weighted KL to the subpolicy."""
    loss = 0.0
    grad = RowGrad(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros((0, logits.shape[-1])))
    if hp.saw_awr_term:
        loss_a, grad_a = awr_loss_and_grad(logits, vt, env, batch, hp)
        loss, grad = loss + loss_a, grad + grad_a
    if hp.saw_kl_term:
        wts = exp_weight(subgoal_advantage(vt, batch.s, batch.w, batch.g), hp.beta, hp.w_max)
        loss_k, grad_k = weighted_kl(logits, sub_logits, batch.s, batch.g, batch.w, wts)
        loss, grad = loss + loss_k, grad + grad_k
    return loss, grad


# -- update steps ------------------------------------------------------------------


def gcbc_update(p: PolicyTable, batch, lr: float) -> float:
    loss, grad = gcbc_loss_and_grad(p.logits, batch)
    apply_grad(p, grad, lr)
    return loss


def awr_update(p: PolicyTable, vt: ValueTable, env, batch, hp: Hyperparams) -> float:
    loss, grad = awr_loss_and_grad(p.logits, vt, env, batch, hp)
    apply_grad(p, grad, hp.lr_pi)
    return loss


def hiql_update(p_high: PolicyTable, p_low: PolicyTable, vt, env, batch, hp: Hyperparams):
    (loss_h, grad_h), (loss_l, grad_l) = hiql_losses_and_grads(
        p_high.logits, p_low.logits, vt, env, batch, hp)
    apply_grad(p_high, grad_h, hp.lr_pi)
    apply_grad(p_low, grad_l, hp.lr_pi)
    return loss_h, loss_l


def imagine_subgoals(p_high: PolicyTable, s, g, rng=None, sample: bool = True):
    """Subgoals from the (frozen) high-level policy; no gradient flows back."""
    if sample:
        return p_high.sample(s, g, np.random.default_rng(rng))
    return p_high.argmax(s, g)


def gcwae_update(p_flat: PolicyTable, p_high: PolicyTable, vt, env, batch, hp: Hyperparams,
                 rng=None, imagined=None) -> float:
    if imagined is None:
        imagined = imagine_subgoals(p_high, batch.s, batch.g, rng)
    loss, grad = gcwae_loss_and_grad(p_flat.logits, vt, env, batch, imagined, hp)
    apply_grad(p_flat, grad, hp.lr_pi)
    return loss


def ris_update(p_flat: PolicyTable, p_high: PolicyTable, p_sub: PolicyTable, vt, env, batch,
               hp: Hyperparams, rng=None, imagined=None) -> float:
    if imagined is None:
        imagined = imagine_subgoals(p_high, batch.s, batch.g, rng)
    loss, grad = ris_loss_and_grad(p_flat.logits, p_sub.logits, vt, env, batch, imagined, hp)
    apply_grad(p_flat, grad, hp.lr_pi)
    return loss


def saw_update(p_flat: PolicyTable, p_sub: PolicyTable, vt, env, batch, hp: Hyperparams) -> float:
    loss, grad = saw_loss_and_grad(p_flat.logits, p_sub.logits, vt, env, batch, hp)
    apply_grad(p_flat, grad, hp.lr_pi)
    return loss


def as_subgoal_batch(batch: PolicyBatch) -> PolicyBatch:
    """Reinterpret the k-step subgoal as the goal (for subpolicy training)."""
    return PolicyBatch(batch.s, batch.a, batch.s_next, batch.w, batch.w, batch.pos,
                       batch.w_pos, batch.w_pos)


def subpolicy_train(p_sub: PolicyTable, vt: ValueTable, env, d: Dataset, hp: Hyperparams,
                    rng=None, steps: int | None = None, callback=None) -> PolicyTable:
    """AWR on ``(s, a, w)`` with ``w`` the k-step clamped future; the result is frozen."""
    rng = np.random.default_rng(rng)
    steps = hp.subpolicy_steps if steps is None else steps
    for i in range(steps):
        batch = as_subgoal_batch(sample_policy_batch(d, hp.k, hp.batch, rng))
        loss = awr_update(p_sub, vt, env, batch, hp)
        if callback is not None:
            callback(i, loss, batch)
    p_sub.logits.flags.writeable = False
    return p_sub


# -- acting ----------------------------------------------------------------------


def flat_actor(p: PolicyTable, argmax: bool = True):
    def act(s, g, rng):
        return int(p.argmax(s, g)) if argmax else int(p.sample(s, g, rng))
    return act


def hiql_act(p_high: PolicyTable, p_low: PolicyTable, s, g, rng=None, argmax: bool = True) -> int:
    if argmax:
        w = int(p_high.argmax(s, g))
        return int(p_low.argmax(s, w))
    rng = np.random.default_rng(rng)
    w = int(p_high.sample(s, g, rng))
    return int(p_low.sample(s, w, rng))


def hiql_actor(p_high: PolicyTable, p_low: PolicyTable, argmax: bool = True):
    def act(s, g, rng):
        return hiql_act(p_high, p_low, s, g, rng, argmax)
    return act


# -- serialisation -----------------------------------------------------------------


def save_policy(p: PolicyTable, env: GridWorld, path) -> None:
    header = {"kind": "policy", "role": p.role, "maze_hash": env.maze_hash,
              "n_states": p.n_states}
    with open(path, "wb") as fh:
        np.savez(fh, header=json.dumps(header, sort_keys=True), logits=p.logits)


def load_policy(path, env: GridWorld) -> PolicyTable:
    with np.load(path) as f:
        header = json.loads(str(f["header"]))
        if header.get("kind") != "policy" or header["maze_hash"] != env.maze_hash:
            raise DatasetError(f"{path} is not a policy table for maze {env.name}")
        return PolicyTable(header["n_states"], header["role"], f["logits"].copy())
