"""Command-line driver.

    sawgrid generate-data --config exp.cfg --seed 0 --out data.jsonl
    sawgrid train --config exp.cfg [--seed N] [--out DIR] [--override hp.beta=1]
    sawgrid eval --config exp.cfg --run DIR/seed-0 [--out eval.csv]
    sawgrid oracle --config exp.cfg [--out reports.jsonl]
    sawgrid sweep --config exp.cfg --param beta --values 0,1,3

Exit status: 0 on success, 1 on a configuration or input error, 2 when
training aborts on a non-finite quantity.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, apply_overrides, load_config
from .dataset import save_dataset
from .env import InvalidStateError, MazeFormatError, load_maze
from .errors import ConfigError, DatasetError, DivergenceError
from .evaluation import EVAL_COLUMNS, rows_to_csv
from .experiment import build_dataset, evaluate_run, run_experiment, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _config(args) -> ExperimentConfig:
    overrides = list(args.override or [])
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = apply_overrides(ExperimentConfig(), overrides)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "out", None) and args.command in ("train", "sweep"):
        cfg.output = args.out
    cfg.validate()
    return cfg


def cmd_generate(args) -> None:
    cfg = _config(args)
    env = load_maze(cfg.maze)
    seed = cfg.seeds[0]
    data = build_dataset(cfg, env, seed)
    out = Path(args.out or f"{cfg.maze}-{cfg.dataset.mode}-{cfg.dataset.seed + seed}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, env, out)
    print(f"wrote {len(data)} trajectories ({data.n_transitions} transitions) to {out}")


def cmd_train(args) -> None:
    cfg = _config(args)
    out = run_experiment(cfg)
    print((out / "eval.csv").read_text(), end="")


def cmd_eval(args) -> None:
    cfg = _config(args)
    rows = evaluate_run(cfg, args.run, seed=cfg.seeds[0])
    text = rows_to_csv(rows, EVAL_COLUMNS)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_oracle(args) -> None:
    from .oracle_checks import run_checks

    cfg = _config(args)
    lines = [r.to_json() for r in run_checks(cfg, seed=cfg.seeds[0])]
    text = "".join(ln + "\n" for ln in lines)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_sweep(args) -> None:
    cfg = _config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    print(run_sweep(cfg, args.param, values), end="")


COMMANDS = {"generate-data": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "oracle": cmd_oracle, "sweep": cmd_sweep}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage mistakes are configuration errors, not numerical aborts
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sawgrid", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable")
        if name == "eval":
            p.add_argument("--run", required=True, help="directory holding trained tables")
        if name == "sweep":
            p.add_argument("--param", required=True, help="hyperparameter to sweep")
            p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(over="ignore"):
            COMMANDS[args.command](args)
    except DivergenceError as e:
        print(f"sawgrid: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DatasetError, MazeFormatError, InvalidStateError, FileNotFoundError) as e:
        print(f"sawgrid: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
