"""The battery of oracle checks run by ``sawgrid oracle``."""
from __future__ import annotations

import numpy as np

from .config import ExperimentConfig
from .dataset import coverage_dataset
from .env import load_maze
from .oracle import (OracleReport, expectile_value_iteration, optimal_value, value_iteration,
                     verify_optimal_posterior, verify_tilted_identity)


def value_reports(env, gamma: float, tau: float) -> list[OracleReport]:
    closed, unreachable = optimal_value(env, gamma, check=False)
    vi = value_iteration(env, gamma)
    err = float(np.max(np.abs(vi - closed)))
    reports = [OracleReport("optimal_value", err, err / np.max(np.abs(closed)), 1e-8, err <= 1e-8,
                            dict(maze=env.name, gamma=gamma))]
    ev, missing = expectile_value_iteration(env, coverage_dataset(env), gamma, tau)
    # an expectile never exceeds the max backup, so V_tau <= V* everywhere
    excess = float(np.max(ev - closed))
    gap = float(np.max(np.abs(ev - closed)))
    reports.append(OracleReport(
        "expectile_gap", gap, gap / np.max(np.abs(closed)), 1e-8, excess <= 1e-8,
        dict(maze=env.name, gamma=gamma, tau=tau, max_excess_over_optimal=excess,
             missing_states=int(missing.sum()))))
    return reports


def posterior_reports(rng, n_instances: int = 3, trials: int = 10000) -> list[OracleReport]:
    out = []
    for eps in (0.01, 0.1, 1.0):
        for _ in range(n_instances):
            n = int(rng.integers(2, 33))
            prior = rng.dirichlet(np.ones(n))
            scores = rng.normal(size=n)
            out.append(verify_optimal_posterior(prior, scores, eps, trials, rng))
    return out


def tilted_reports(rng, n_instances: int = 10, beta: float = 3.0) -> list[OracleReport]:
    out = []
    for _ in range(n_instances):
        n = int(rng.integers(2, 33))
        p = rng.dirichlet(np.ones(n))
        out.append(verify_tilted_identity(p, rng.normal(size=n), beta, rng.normal(size=n)))
    return out


def run_checks(cfg: ExperimentConfig, seed: int = 0) -> list[OracleReport]:
    env = load_maze(cfg.maze)
    rng = np.random.default_rng(seed)
    return (value_reports(env, cfg.hp.gamma, cfg.hp.tau) + posterior_reports(rng)
            + tilted_reports(rng, beta=cfg.hp.beta))
