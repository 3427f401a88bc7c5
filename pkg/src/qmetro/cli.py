"""Command-line experiment runner.

Subcommands: `train` (optimize an agent and write a run directory), `eval`
(roll out a frozen agent or a baseline strategy over a resource grid),
`bounds` (emit reference bound curves), and `compare` (merge evaluation
CSVs for plotting). All artifacts are UTF-8 CSV with stable headers; the
`QMETRO_LOG` environment variable sets the logging level.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .agents import load_checkpoint
from .bounds import crb_curve
from .config import (
    ConfigError,
    build_budget,
    build_loss_spec,
    build_model,
    build_space,
    build_train_settings,
    config_hash,
    load_config,
    resolve_h,
    save_snapshot,
)
from .engine import (
    ResourceBudget,
    evaluate_policy,
    mlp_policy,
    pgh_policy,
    random_tau_policy,
    sigma_policy,
    static_policy,
    train,
)

EVAL_HEADER = ["resource", "precision_mean", "precision_stderr", "strategy"]

log = logging.getLogger("qmetro")


def _setup_logging() -> None:
    level = os.environ.get("QMETRO_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _parse_grid(text: str) -> np.ndarray:
    """Either a comma list `1,2,4` or a range `start:stop:count`."""
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            return np.linspace(float(start), float(stop), int(count))
        return np.array([float(v) for v in text.split(",") if v])
    except ValueError as exc:
        raise ConfigError(f"cannot parse grid {text!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_snapshot(cfg, out / "config.json")
    settings = build_train_settings(cfg, out_dir=out, seed_override=args.seed)
    log.info(
        "training %s for %d steps (budget %s=%g, seed %d)",
        cfg.model["name"], settings.steps, cfg.budget["kind"],
        cfg.budget["amount"], settings.seed,
    )
    result = train(settings)
    # stamp the final checkpoint with the config hash for eval-time checks
    from .agents import save_checkpoint

    save_checkpoint(out / "agent-final.ckpt", result.agent, config_hash(cfg))
    if result.aborted:
        log.error("training halted on a non-finite loss or gradient")
        return 3
    log.info("wrote %s", out / "metrics.csv")
    return 0


def _baseline_policy_factory(name: str, cfg, model, h: float):
    inv_t2 = cfg.model.get("inv_t2", 0.0)
    if name == "pgh":
        return lambda seed: pgh_policy(seed)
    if name == "sigma":
        return lambda seed: sigma_policy("sigma", inv_t2)
    if name == "sigma_t":
        return lambda seed: sigma_policy("sigma_t", inv_t2)
    if name == "random":
        # uniform tau over the interval reachable by the trained agent
        return lambda seed: random_tau_policy((1.0, h + 1.0), seed)
    raise ConfigError(
        f"unknown baseline agent {name!r}; choose pgh, sigma, sigma_t or random"
    )


def _load_agent_policy(args, cfg, h: float):
    agent, _ = load_checkpoint(args.checkpoint)
    from .agents import checkpoint_config_hash

    stored = checkpoint_config_hash(args.checkpoint)
    if stored and stored != config_hash(cfg) and not args.force:
        log.error(
            "checkpoint %s was trained under a different configuration "
            "(hash %s != %s); pass --force to evaluate anyway",
            args.checkpoint, stored[:12], config_hash(cfg)[:12],
        )
        return None
    if cfg.agent["kind"] == "static":
        return lambda seed: static_policy(agent, h)
    amount = cfg.budget["amount"]
    time_budget = cfg.budget["kind"] == "total_time"
    return lambda seed: mlp_policy(agent, h, amount, amount, time_budget)


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    space = build_space(cfg)
    loss_spec = build_loss_spec(cfg)
    h = resolve_h(cfg)
    grid = _parse_grid(args.grid) if args.grid else np.array(
        [cfg.budget["amount"]]
    )
    if np.any(grid <= 0):
        raise ConfigError("grid values must be positive")

    if args.checkpoint:
        factory = _load_agent_policy(args, cfg, h)
        if factory is None:
            return 2
        strategy = "adaptive"
    else:
        if not args.agent:
            raise ConfigError("eval needs --checkpoint or --agent")
        factory = _baseline_policy_factory(args.agent, cfg, model, h)
        strategy = args.agent

    # one pass at the largest budget; smaller grid points read intermediate
    # steps of the same episodes (measurement budgets) or get their own pass
    seed = cfg.seed if args.seed is None else args.seed
    rows = []
    if cfg.budget["kind"] == "measurements":
        budget = ResourceBudget("measurements", float(np.max(grid)))
        result = evaluate_policy(
            model, factory, space, budget, cfg.particles,
            args.episodes, seed, loss_spec,
        )
        for g in grid:
            idx = int(round(g)) - 1
            rows.append([g, result["mean"][idx], result["stderr"][idx], strategy])
    else:
        for g in grid:
            budget = ResourceBudget(cfg.budget["kind"], float(g))
            result = evaluate_policy(
                model, factory, space, budget, cfg.particles,
                args.episodes, seed, loss_spec,
            )
            rows.append([g, result["mean"][-1], result["stderr"][-1], strategy])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(EVAL_HEADER)
        for row in rows:
            writer.writerow(
                [repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                 row[3]]
            )
    log.info("wrote %s (%d grid points)", out, len(rows))
    return 0


def cmd_bounds(args) -> int:
    grid = _parse_grid(args.grid)
    curve = crb_curve(args.task, args.case, args.regime, grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curve.write_csv(out)
    log.info("wrote %s (%d grid points)", out, grid.size)
    return 0


def cmd_compare(args) -> int:
    """Merge evaluation CSVs into one table keyed by resource value."""
    merged: dict = {}
    strategies: list = []
    for path in args.inputs:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header != EVAL_HEADER:
                raise ConfigError(f"{path}: not an evaluation CSV")
            for resource, mean, stderr, strategy in reader:
                if strategy not in strategies:
                    strategies.append(strategy)
                merged.setdefault(float(resource), {})[strategy] = (mean, stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        columns = ["resource"]
        for s in strategies:
            columns += [f"{s}_mean", f"{s}_stderr"]
        writer.writerow(columns)
        for resource in sorted(merged):
            row = [repr(resource)]
            for s in strategies:
                mean, stderr = merged[resource].get(s, ("", ""))
                row += [mean, stderr]
            writer.writerow(row)
    log.info("wrote %s (%d strategies)", out, len(strategies))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qmetro",
        description="Train, evaluate and bound adaptive quantum-sensing policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="optimize an agent from a config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--workers", type=int, default=1,
                         help="episode parallelism cap (single process)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate an agent or baseline")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--agent", default=None,
                        help="baseline strategy: pgh, sigma, sigma_t, random")
    p_eval.add_argument("--grid", default=None,
                        help="resource grid: '1,2,4' or 'start:stop:count'")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--force", action="store_true",
                        help="evaluate despite a config-hash mismatch")
    p_eval.set_defaults(func=cmd_eval)

    p_bounds = sub.add_parser("bounds", help="emit a reference bound curve")
    p_bounds.add_argument("--task", required=True,
                          choices=["dc", "ac", "dec", "hyperfine"])
    p_bounds.add_argument("--case", required=True)
    p_bounds.add_argument("--regime", required=True,
                          choices=["time", "measurement"])
    p_bounds.add_argument("--grid", required=True)
    p_bounds.add_argument("--out", required=True)
    p_bounds.set_defaults(func=cmd_bounds)

    p_cmp = sub.add_parser("compare", help="merge evaluation CSVs")
    p_cmp.add_argument("inputs", nargs="+")
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
