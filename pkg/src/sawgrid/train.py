"""Phase orchestration: value -> subpolicy -> policy, strictly in order.

Each algorithm runs only the phases it needs. Tables produced by an earlier
phase are made read-only before the next phase starts.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import policy as P
from .config import Hyperparams
from .dataset import Dataset, sample_policy_batch, sample_value_batch
from .env import GridWorld
from .errors import ConfigError, DivergenceError
from .evaluation import TaskSet, evaluate
from .value import ValueTable, gcivl_update

PHASES = {
    "gcbc": ("policy",),
    "gcivl_awr": ("value", "policy"),
    "hiql": ("value", "policy"),
    "gcwae": ("value", "subpolicy", "policy"),
    "ris": ("value", "subpolicy", "policy"),
    "saw": ("value", "subpolicy", "policy"),
}

METRIC_COLUMNS = ("step", "phase", "loss", "mean_action_adv", "mean_subgoal_adv",
                  "eval_success")


@dataclass
class Tables:
    value: ValueTable | None = None
    flat: P.PolicyTable | None = None
    sub: P.PolicyTable | None = None
    high: P.PolicyTable | None = None
    low: P.PolicyTable | None = None


@dataclass
class RunResult:
    tables: Tables
    metrics: list = field(default_factory=list)
    final_eval: object = None
    diagnostics: dict = field(default_factory=dict)


def table_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        if a is not None:
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def freeze(*arrays) -> None:
    for a in arrays:
        if a is not None:
            a.flags.writeable = False


def _finite(x, phase, step):
    if not math.isfinite(x):
        raise DivergenceError(f"non-finite value {x} in {phase} phase at step {step}")
    return x


def actor_for(algo: str, tables: Tables, argmax: bool = True):
    if algo == "hiql":
        return P.hiql_actor(tables.high, tables.low, argmax)
    return P.flat_actor(tables.flat, argmax)


class Trainer:
    """Runs one algorithm on one dataset with one seed."""

    def __init__(self, env: GridWorld, data: Dataset, algo: str, hp: Hyperparams, seed: int = 0,
                 tasks: TaskSet | None = None, log_every: int = 100, eval_every: int = 2000,
                 eval_argmax: bool = True):
        if algo not in PHASES:
            raise ConfigError(f"unknown algo {algo!r}")
        self.env, self.data, self.algo, self.hp = env, data, algo, hp
        self.seed = seed
        self.tasks = tasks
        self.log_every = log_every
        self.eval_every = eval_every
        self.eval_argmax = eval_argmax
        ss = np.random.SeedSequence([seed, 7919])
        streams = ss.spawn(5)
        self.rng_value, self.rng_sub, self.rng_policy, self.rng_diag, self.rng_eval = (
            np.random.default_rng(s) for s in streams)
        self.tables = Tables()
        self.metrics: list[dict] = []

    # -- logging -----------------------------------------------------------------

    def _log(self, step, phase, loss, action_adv, subgoal_adv, eval_success=None):
        row = dict(step=step, phase=phase, loss=_finite(float(loss), phase, step),
                   mean_action_adv=_finite(float(action_adv), phase, step),
                   mean_subgoal_adv=_finite(float(subgoal_adv), phase, step),
                   eval_success=eval_success)
        self.metrics.append(row)

    def _diag_batch(self):
        return sample_policy_batch(self.data, self.hp.k, self.hp.batch, self.rng_diag,
                                   self.hp.include_current_goal, self.hp.policy_goal_mix)

    # -- phases ----------------------------------------------------------------------

    def train_value(self, steps=None, value: ValueTable | None = None) -> ValueTable:
        hp = self.hp
        vt = value or ValueTable(self.env.n_states, hp.value_init)
        steps = hp.value_steps if steps is None else steps
        for i in range(steps):
            batch = sample_value_batch(self.data, hp.gamma, hp.value_goal_mix, hp.batch,
                                       self.rng_value)
            loss = gcivl_update(vt, batch, hp)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite value loss at step {i}")
            if (i + 1) % self.log_every == 0:
                db = self._diag_batch()
                a = P.action_advantage(vt, self.env, db.s, db.a, db.g, hp.gamma).mean()
                w = P.subgoal_advantage(vt, db.s, db.w, db.g).mean()
                self._log(i + 1, "value", loss, a, w)
        vt.sync_target()
        self.tables.value = vt
        return vt

    def train_subpolicy(self) -> None:
        hp, env, vt = self.hp, self.env, self.tables.value
        n = env.n_states
        need_sub = self.algo in ("saw", "ris")
        need_high = self.algo in ("gcwae", "ris")
        sub = P.PolicyTable(n, "sub") if need_sub else None
        high = P.PolicyTable(n, "high") if need_high else None
        steps = max(hp.subpolicy_steps if need_sub else 0, hp.high_steps if need_high else 0)
        for i in range(steps):
            batch = sample_policy_batch(self.data, hp.k, hp.batch, self.rng_sub,
                                        hp.include_current_goal, hp.policy_goal_mix)
            loss = 0.0
            if need_sub and i < hp.subpolicy_steps:
                loss += P.awr_update(sub, vt, env, P.as_subgoal_batch(batch), hp)
            if need_high and i < hp.high_steps:
                adv_h = P.subgoal_advantage(vt, batch.s, batch.w, batch.g)
                w_h = P.exp_weight(adv_h, hp.beta_high, hp.w_max)
                loss_h, grad_h = P.weighted_nll(high.logits, batch.s, batch.g, batch.w, w_h)
                P.apply_grad(high, grad_h, hp.lr_pi)
                loss += loss_h
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite subpolicy loss at step {i}")
            if (i + 1) % self.log_every == 0:
                a = P.action_advantage(vt, env, batch.s, batch.a, batch.w, hp.gamma).mean()
                w = P.subgoal_advantage(vt, batch.s, batch.w, batch.g).mean()
                self._log(i + 1, "subpolicy", loss, a, w)
        freeze(sub.logits if sub else None, high.logits if high else None)
        self.tables.sub, self.tables.high = sub, high

    def train_policy(self) -> None:
        hp, env, vt, algo = self.hp, self.env, self.tables.value, self.algo
        n = env.n_states
        t = self.tables
        if algo == "hiql":
            t.high, t.low = P.PolicyTable(n, "high"), P.PolicyTable(n, "sub")
        else:
            t.flat = P.PolicyTable(n, "flat")
        frozen = [x for x in (vt.v if vt else None, vt.v_target if vt else None,
                              t.sub.logits if t.sub else None,
                              t.high.logits if (t.high and algo != "hiql") else None)
                  if x is not None]
        before = table_digest(*frozen)
        freeze(*frozen)
        rng = self.rng_policy
        for i in range(hp.policy_steps):
            batch = sample_policy_batch(self.data, hp.k, hp.batch, rng,
                                        hp.include_current_goal, hp.policy_goal_mix)
            adv_goal = batch.g
            if algo == "gcbc":
                loss = P.gcbc_update(t.flat, batch, hp.lr_pi)
            elif algo == "gcivl_awr":
                loss = P.awr_update(t.flat, vt, env, batch, hp)
            elif algo == "hiql":
                lh, ll = P.hiql_update(t.high, t.low, vt, env, batch, hp)
                loss = lh + ll
                adv_goal = batch.w
            elif algo == "gcwae":
                imagined = P.imagine_subgoals(t.high, batch.s, batch.g, rng)
                loss = P.gcwae_update(t.flat, t.high, vt, env, batch, hp, imagined=imagined)
                adv_goal = imagined
            elif algo == "ris":
                imagined = P.imagine_subgoals(t.high, batch.s, batch.g, rng)
                loss = P.ris_update(t.flat, t.high, t.sub, vt, env, batch, hp, imagined=imagined)
            else:
                loss = P.saw_update(t.flat, t.sub, vt, env, batch, hp)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite policy loss at step {i}")
            step = i + 1
            ev = None
            if self.tasks is not None and step % self.eval_every == 0:
                ev = self.evaluate().aggregate
            if step % self.log_every == 0 or ev is not None:
                if vt is not None:
                    a = P.action_advantage(vt, env, batch.s, batch.a, adv_goal, hp.gamma).mean()
                    w = P.subgoal_advantage(vt, batch.s, batch.w, batch.g).mean()
                else:
                    a = w = 0.0
                self._log(step, "policy", loss, a, w, ev)
        if table_digest(*frozen) != before:
            raise RuntimeError("policy phase mutated a frozen table")

    def evaluate(self):
        act = actor_for(self.algo, self.tables, self.eval_argmax)
        return evaluate(self.env, act, self.tasks, seed=self.seed)

    def run(self, value: ValueTable | None = None) -> RunResult:
        phases = PHASES[self.algo]
        if "value" in phases:
            if value is not None:
                self.tables.value = value
            else:
                self.train_value()
        if "subpolicy" in phases:
            self.train_subpolicy()
        self.train_policy()
        result = RunResult(self.tables, self.metrics)
        if self.tasks is not None:
            result.final_eval = self.evaluate()
        return result


# -- diagnostics -----------------------------------------------------------------------


def advantage_diagnostic(env: GridWorld, data: Dataset, vt: ValueTable, high: P.PolicyTable,
                         hp: Hyperparams, n_batches: int = 20, rng=None) -> dict:
    """Mean dataset-action advantage toward real k-step subgoals, imagined
    subgoals from ``high``, and uniform in-trajectory future goals."""
    rng = np.random.default_rng(rng)
    real, imag, future = [], [], []
    for _ in range(n_batches):
        b = sample_policy_batch(data, hp.k, hp.batch, rng, hp.include_current_goal)
        real.append(P.action_advantage(vt, env, b.s, b.a, b.w, hp.gamma).mean())
        future.append(P.action_advantage(vt, env, b.s, b.a, b.g, hp.gamma).mean())
        if high is not None:
            w_img = P.imagine_subgoals(high, b.s, b.g, rng)
            imag.append(P.action_advantage(vt, env, b.s, b.a, w_img, hp.gamma).mean())
    out = dict(real_subgoal=float(np.mean(real)), uniform_future=float(np.mean(future)))
    if imag:
        out["imagined_subgoal"] = float(np.mean(imag))
    return out
