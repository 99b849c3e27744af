"""Brute-force verifiers for the closed forms used by the learners.

Nothing here shares code paths with the training updates: values come from
BFS distances and explicit Bellman iteration, expectiles from bisection, and
the posterior certificate from randomised search.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset
from .env import N_ACTIONS, UNREACHABLE, GridWorld


@dataclass
class OracleReport:
    name: str
    max_abs_error: float
    max_rel_error: float
    tolerance: float
    pass_: bool
    detail: dict | None = None

    @property
    def passed(self) -> bool:
        return self.pass_

    def to_json(self) -> str:
        d = asdict(self)
        d["pass"] = d.pop("pass_")
        return json.dumps(d, sort_keys=True, default=float)


# -- values --------------------------------------------------------------------


def optimal_value(env: GridWorld, gamma: float, tol: float = 1e-10, check: bool = True):
    """``V*(s, g) = -(1 - gamma^d) / (1 - gamma)`` from BFS distances.

    With ``check`` the closed form is cross-checked against max-backup value
    iteration and an ``AssertionError`` is raised if they disagree by more
    than ``1e-8``. Returns ``(table, unreachable_mask)``.
    """
    dist = env.distances
    unreachable = dist == UNREACHABLE
    d = np.where(unreachable, 0, dist).astype(float)
    closed = -(1.0 - gamma**d) / (1.0 - gamma)
    closed[unreachable] = -1.0 / (1.0 - gamma)
    if check:
        vi = value_iteration(env, gamma, tol)
        err = np.max(np.abs(vi - closed))
        if err > 1e-8:
            raise AssertionError(f"closed-form V* disagrees with value iteration by {err:g}")
    return closed, unreachable


def value_iteration(env: GridWorld, gamma: float, tol: float = 1e-10, max_iter: int = 100000):
    """Max-backup value iteration for every goal at once."""
    n = env.n_states
    nxt = env.next_state
    live = ~np.eye(n, dtype=bool)
    v = np.zeros((n, n))
    for _ in range(max_iter):
        # backups[s, a, g]
        new = np.max(-1.0 + gamma * v[nxt], axis=1)
        new = np.where(live, new, 0.0)
        delta = np.max(np.abs(new - v))
        v = new
        if delta < tol:
            break
    return v


def weighted_expectile(targets, weights, tau, tol=1e-10, axis=-1):
    """Expectile of weighted samples along ``axis`` by bisection.

    Zero-weight entries are ignored. Solves the first-order condition
    ``sum_i c_i |tau - 1(t_i < m)| (t_i - m) = 0``; after bisection the
    bracket is polished with the exact linear solve for the final side
    assignment.
    """
    t = np.moveaxis(np.asarray(targets, dtype=float), axis, -1)
    c = np.broadcast_to(np.moveaxis(np.asarray(weights, dtype=float), axis, -1), t.shape)
    has = c > 0
    big = np.finfo(float).max
    lo = np.min(np.where(has, t, big), axis=-1)
    hi = np.max(np.where(has, t, -big), axis=-1)

    def foc(m):
        r = t - m[..., None]
        w = np.where(r < 0, 1.0 - tau, tau) * c
        return np.sum(w * r, axis=-1)

    while True:
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        f = foc(mid)
        lo = np.where(f > 0, mid, lo)
        hi = np.where(f > 0, hi, mid)
        if np.all(mid == lo) and np.all(mid == hi):
            break
    m = 0.5 * (lo + hi)
    above = t >= m[..., None]
    w = np.where(above, tau, 1.0 - tau) * c
    exact = np.sum(w * t, axis=-1) / np.sum(w, axis=-1)
    return np.where(np.abs(exact - m) <= tol, exact, m)


def expectile_value_iteration(env: GridWorld, d: Dataset, gamma: float, tau: float,
                              tol: float = 1e-10, max_iter: int = 100000, init: float = 0.0):
    """Fixed point of the empirical expectile Bellman backup.

    For each ``(s, g)`` the new value is the tau-expectile of
    ``r(s, g) + gamma * V(s', g)`` over the dataset transitions leaving ``s``
    (with multiplicity). Returns ``(table, missing_states)``; states with no
    outgoing transition keep ``init``.
    """
    n = env.n_states
    tr = d.transitions()
    pairs, counts = np.unique(tr[:, [0, 2]], axis=0, return_counts=True)
    # pad successors into [s, slot] with multiplicities
    succ = np.zeros((n, N_ACTIONS), dtype=np.int64)
    cnt = np.zeros((n, N_ACTIONS))
    fill = np.zeros(n, dtype=np.int64)
    for (s, sn), c in zip(pairs, counts):
        succ[s, fill[s]] = sn
        cnt[s, fill[s]] = c
        fill[s] += 1
    missing = fill == 0
    for s in np.where(missing)[0]:
        succ[s] = s
    cnt[missing] = 1.0

    goals = np.arange(n)
    rew = np.where(goals[None, :] == np.arange(n)[:, None], 0.0, -1.0)
    live = ~np.eye(n, dtype=bool)
    keep = np.broadcast_to(missing[:, None], (n, n)) | ~live
    v = np.full((n, n), float(init))
    v[~live] = 0.0
    for _ in range(max_iter):
        # targets[s, slot, g]
        targets = rew[:, None, :] + gamma * v[succ]
        new = weighted_expectile(targets, cnt[:, :, None], tau, tol=tol * 1e-2, axis=1)
        new = np.where(keep, v, new)
        delta = np.max(np.abs(new - v))
        v = new
        if delta < tol:
            break
    return v, missing


# -- KL-constrained posterior --------------------------------------------------


def _kl(q, p):
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(q) - np.log(p)), 0.0)
    return np.sum(terms, axis=-1)


def tilted(prior, scores, temperature):
    z = (np.asarray(scores, dtype=float) - np.max(scores)) / temperature
    q = np.asarray(prior, dtype=float) * np.exp(z)
    return q / q.sum()


def optimal_posterior(prior, scores, epsilon):
    """Maximiser of ``E_q[score]`` subject to ``KL(q || prior) <= epsilon``.

    The solution is ``q ∝ prior * exp(score / eta)`` with the temperature
    ``eta`` chosen by bisection so the constraint is tight, or the prior
    restricted to the argmax set when the budget allows reaching it.
    Returns ``(q, eta)`` with ``eta = 0`` for the restricted limit.
    """
    prior = np.asarray(prior, dtype=float)
    scores = np.asarray(scores, dtype=float)
    best = scores == scores.max()
    if best.all() or epsilon <= 0:
        return prior.copy(), np.inf
    limit = np.where(best, prior, 0.0)
    limit /= limit.sum()
    if _kl(limit, prior) <= epsilon:
        return limit, 0.0
    lo, hi = -60.0, 60.0  # log temperature; KL decreases with temperature
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if _kl(tilted(prior, scores, np.exp(mid)), prior) > epsilon:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    # lo side has KL slightly above epsilon: the conservative (larger-score) end
    eta = np.exp(lo)
    return tilted(prior, scores, eta), eta


def _project_to_ball(x, prior, epsilon, iters=80):
    """Shrink each row of ``x`` toward ``prior`` until ``KL <= epsilon``."""
    kl = _kl(x, prior)
    inside = kl <= epsilon
    lo = np.zeros(len(x))
    hi = np.ones(len(x))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        y = mid[:, None] * x + (1 - mid[:, None]) * prior
        ok = _kl(y, prior) <= epsilon
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    lam = np.where(inside, 1.0, lo)
    return lam[:, None] * x + (1 - lam[:, None]) * prior


def verify_optimal_posterior(prior, scores, epsilon, trials=10000, rng=None,
                             tolerance=1e-8) -> OracleReport:
    """Randomised certificate that no feasible q beats the tilted posterior."""
    prior = np.asarray(prior, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if prior.ndim != 1 or prior.shape != scores.shape:
        raise ValueError("prior and scores must be 1-d arrays of equal length")
    if (prior <= 0).any():
        raise ValueError("prior must be strictly positive")
    if len(prior) > 32:
        raise ValueError("at most 32 atoms are supported")
    prior = prior / prior.sum()
    rng = np.random.default_rng(rng)
    q_star, eta = optimal_posterior(prior, scores, epsilon)
    best = float(q_star @ scores)

    n = len(prior)
    half = trials // 2
    wide = rng.dirichlet(np.ones(n), size=half)
    # local perturbations around the candidate optimum
    conc = 10.0 ** rng.uniform(1, 5, size=(trials - half, 1))
    local = rng.gamma(conc * q_star + 1e-12) + 1e-300
    local /= local.sum(axis=1, keepdims=True)
    cand = _project_to_ball(np.vstack([wide, local]), prior, epsilon)
    feasible_kl = _kl(cand, prior)
    vals = cand @ scores
    gain = float(np.max(vals - best))
    return OracleReport(
        name="optimal_posterior",
        max_abs_error=max(gain, 0.0),
        max_rel_error=max(gain, 0.0) / max(abs(best), 1e-300),
        tolerance=tolerance,
        pass_=gain <= tolerance,
        detail=dict(atoms=n, epsilon=float(epsilon), temperature=float(eta),
                    kl_star=float(_kl(q_star, prior)), max_trial_kl=float(feasible_kl.max()),
                    best_score=best, trials=int(trials)),
    )


def verify_tilted_identity(p, advantages, beta, f, tolerance=1e-12) -> OracleReport:
    """Check ``sum_i p_i e^{beta A_i} f_i == Z * E_q[f]`` for the normalised tilt ``q``.

    The relative error is measured against ``sum_i |p_i e^{beta A_i} f_i|`` so
    sign cancellation in ``f`` does not inflate it.
    """
    p = np.asarray(p, dtype=float)
    a = np.asarray(advantages, dtype=float)
    f = np.asarray(f, dtype=float)
    if not (p.shape == a.shape == f.shape[: p.ndim]):
        raise ValueError("p, advantages and f must share their leading shape")
    tilt = p * np.exp(beta * a)
    lhs = np.tensordot(tilt, f, axes=(0, 0))
    z = tilt.sum()
    q = tilt / z
    rhs = z * np.tensordot(q, f, axes=(0, 0))
    scale = np.tensordot(tilt, np.abs(f), axes=(0, 0))
    abs_err = float(np.max(np.abs(lhs - rhs)))
    rel_err = float(np.max(np.abs(lhs - rhs) / np.maximum(scale, 1e-300)))
    return OracleReport(
        name="tilted_identity",
        max_abs_error=abs_err,
        max_rel_error=rel_err,
        tolerance=tolerance,
        pass_=rel_err <= tolerance,
        detail=dict(atoms=len(p), beta=float(beta), z=float(z)),
    )
