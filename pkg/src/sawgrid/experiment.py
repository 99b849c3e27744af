"""Experiment runner: one directory per (config, seed) holding metrics and tables.

Layout of ``cfg.output``::

    manifest.json           config hash, seeds, input content hashes
    config.cfg              the resolved config
    seed-<n>/metrics.csv
    seed-<n>/eval.csv
    seed-<n>/value.npz, flat.npz, ...   trained tables
    eval.csv                per-seed rows concatenated
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import io
import json
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, Hyperparams, apply_overrides, dump_config
from .dataset import Dataset, generate_dataset, load_dataset
from .env import GridWorld, load_maze
from .errors import ConfigError
from .evaluation import (EVAL_COLUMNS, TaskSet, bundled_tasks, eval_rows, evaluate, fmt,
                         load_tasks, rows_to_csv)
from .policy import load_policy, save_policy
from .train import METRIC_COLUMNS, PHASES, Tables, Trainer, actor_for
from .value import load_value, save_value

TABLE_NAMES = ("flat", "sub", "high", "low")
SWEEP_COLUMNS = ("param", "value", "seed", "step", "eval_success")


def git_blob_hash(data: bytes) -> str:
    """Content hash in the same form git uses for blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def resolve_tasks(cfg: ExperimentConfig, env: GridWorld) -> TaskSet:
    ev = cfg.eval
    if ev.tasks is None:
        return bundled_tasks(env, ev.max_steps, ev.episodes_per_pair)
    return load_tasks(ev.tasks, env, ev.max_steps, ev.episodes_per_pair)


def build_dataset(cfg: ExperimentConfig, env: GridWorld, seed: int) -> Dataset:
    """Load ``dataset.path`` if set, else generate with seed ``dataset.seed + seed``."""
    dc = cfg.dataset
    if dc.path is not None:
        return load_dataset(dc.path, env)
    return generate_dataset(env, dc.mode, dc.n_traj, dc.max_len, dc.epsilon,
                            seed=dc.seed + seed, k=cfg.hp.k, stitch_len=dc.stitch_len)


def dataset_bytes(d: Dataset, env: GridWorld) -> bytes:
    lines = []
    for tr in d.trajectories:
        lines.append(json.dumps({"states": env.free_cells[tr.states].tolist(),
                                 "actions": tr.actions.tolist()}))
    return "\n".join(lines).encode()


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(METRIC_COLUMNS) + "\n")
    for r in rows:
        buf.write(",".join("" if r[c] is None else fmt(r[c]) for c in METRIC_COLUMNS) + "\n")
    return buf.getvalue()


def save_tables(tables: Tables, env: GridWorld, gamma: float, out: Path) -> list[str]:
    written = []
    if tables.value is not None:
        save_value(tables.value, env, gamma, out / "value.npz")
        written.append("value.npz")
    for name in TABLE_NAMES:
        p = getattr(tables, name)
        if p is not None:
            save_policy(p, env, out / f"{name}.npz")
            written.append(f"{name}.npz")
    return written


def load_tables(run_dir, env: GridWorld) -> Tables:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory {run_dir} not found")
    t = Tables()
    if (run_dir / "value.npz").exists():
        t.value, _ = load_value(run_dir / "value.npz", env)
    for name in TABLE_NAMES:
        if (run_dir / f"{name}.npz").exists():
            setattr(t, name, load_policy(run_dir / f"{name}.npz", env))
    return t


def run_seed(cfg: ExperimentConfig, env: GridWorld, tasks: TaskSet, seed: int, out: Path,
             data: Dataset | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    data = build_dataset(cfg, env, seed) if data is None else data
    trainer = Trainer(env, data, cfg.algo, cfg.hp, seed=seed, tasks=tasks,
                      log_every=cfg.log_every, eval_every=cfg.eval.every,
                      eval_argmax=cfg.eval.argmax)
    result = trainer.run()
    (out / "metrics.csv").write_text(metrics_csv(result.metrics))
    rows = eval_rows(result.final_eval, cfg.algo, env.name)
    (out / "eval.csv").write_text(rows_to_csv(rows, EVAL_COLUMNS))
    tables = save_tables(result.tables, env, cfg.hp.gamma, out)
    return dict(seed=seed, dataset_hash=git_blob_hash(dataset_bytes(data, env)),
                aggregate=result.final_eval.aggregate, tables=tables,
                metrics=result.metrics, eval_rows=rows)


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every seed in ``cfg.seeds``; returns the output directory."""
    cfg.validate()
    env = load_maze(cfg.maze)
    tasks = resolve_tasks(cfg, env)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    runs, all_rows = [], []
    for seed in cfg.seeds:
        info = run_seed(cfg, env, tasks, int(seed), out / f"seed-{seed}")
        all_rows.extend(info.pop("eval_rows"))
        info.pop("metrics")
        runs.append(info)
    (out / "eval.csv").write_text(rows_to_csv(all_rows, EVAL_COLUMNS))
    config_text = dump_config(cfg)
    (out / "config.cfg").write_text(config_text)
    manifest = dict(
        version=__version__,
        algo=cfg.algo,
        maze=env.name,
        phases=list(PHASES[cfg.algo]),
        config_hash=cfg.digest(),
        seeds=[int(s) for s in cfg.seeds],
        inputs=dict(maze=git_blob_hash(env.to_text().encode()),
                    config=git_blob_hash(config_text.encode()),
                    datasets={str(r["seed"]): r["dataset_hash"] for r in runs}),
        tasks=[[list(env.cell(s)), list(env.cell(g))] for s, g in tasks.pairs],
        aggregate_success={str(r["seed"]): fmt(r["aggregate"]) for r in runs},
        tables={str(r["seed"]): r["tables"] for r in runs},
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def evaluate_run(cfg: ExperimentConfig, run_dir, seed: int = 0) -> list[dict]:
    """Evaluate saved tables from ``run_dir`` on the configured task set."""
    env = load_maze(cfg.maze)
    tables = load_tables(run_dir, env)
    if cfg.algo == "hiql" and (tables.high is None or tables.low is None):
        raise ConfigError(f"{run_dir} has no hierarchical tables")
    if cfg.algo != "hiql" and tables.flat is None:
        raise ConfigError(f"{run_dir} has no flat policy table")
    res = evaluate(env, actor_for(cfg.algo, tables, cfg.eval.argmax), resolve_tasks(cfg, env),
                   seed=seed)
    return eval_rows(res, cfg.algo, env.name)


def sweep_param(name: str) -> str:
    field = name.split(".", 1)[1] if name.startswith("hp.") else name
    if field not in {f.name for f in dataclasses.fields(Hyperparams)}:
        raise ConfigError(f"unknown sweep parameter {name!r}")
    return field


def run_sweep(cfg: ExperimentConfig, param: str, values) -> str:
    """One run per value per seed; returns a long-format CSV of eval curves.

    Each row is one evaluation point (periodic or final, step = policy steps).
    """
    field = sweep_param(param)
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    base = Path(cfg.output)
    rows = []
    for value in values:
        sub = apply_overrides(copy.deepcopy(cfg), [(f"hp.{field}", str(value))])
        sub.output = str(base / f"{field}={value}")
        run_experiment(sub)
        for seed in sub.seeds:
            text = (Path(sub.output) / f"seed-{seed}" / "metrics.csv").read_text()
            evals = _eval_points(text)
            final = _final_success(Path(sub.output) / f"seed-{seed}" / "eval.csv")
            if not evals or evals[-1][0] != sub.hp.policy_steps:
                evals.append((sub.hp.policy_steps, final))
            for step, succ in evals:
                rows.append(dict(param=field, value=value, seed=seed, step=step,
                                 eval_success=succ))
    text = rows_to_csv(rows, SWEEP_COLUMNS)
    base.mkdir(parents=True, exist_ok=True)
    (base / "sweep.csv").write_text(text)
    return text


def _eval_points(metrics_text: str) -> list:
    lines = metrics_text.strip().splitlines()
    head = lines[0].split(",")
    i_step, i_phase, i_ev = head.index("step"), head.index("phase"), head.index("eval_success")
    pts = []
    for ln in lines[1:]:
        cols = ln.split(",")
        if cols[i_phase] == "policy" and cols[i_ev]:
            pts.append((int(cols[i_step]), float(cols[i_ev])))
    return pts


def _final_success(eval_csv: Path) -> float:
    for ln in eval_csv.read_text().splitlines()[1:]:
        cols = ln.split(",")
        if cols[EVAL_COLUMNS.index("pair")] == "all":
            return float(cols[EVAL_COLUMNS.index("success_rate")])
    raise ConfigError(f"{eval_csv} has no aggregate row")
