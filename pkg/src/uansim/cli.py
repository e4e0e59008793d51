"""Experiment driver: train, evaluate, compare and replay subcommands.

Every artifact embeds the config hash and master seed; with equal hashes
two runs produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, config as config_mod, metrics
from .agent import NetPolicy, Trainer, derive_seed, load_checkpoint, save_checkpoint
from .curricula import Curriculum
from .env import REWARD_KINDS, PowerAllocationEnv, run_episode, verify_trace
from .metrics import EpisodeResult

METRIC_COLUMNS = EpisodeResult.CSV_FIELDS
NORMALIZED_METRICS = ("capacity_bits", "delivery_ratio", "utility", "fairness", "reuse")


def _fmt(value) -> str:
    if isinstance(value, float) and math.isnan(value):
        return "N/A"
    return repr(value) if isinstance(value, float) else str(value)


def _write_csv(path: Path, header, rows, cfg: dict | None = None) -> None:
    with open(path, "w", newline="") as f:
        if cfg is not None:
            f.write(f"# config_hash={config_mod.config_hash(cfg)} seed={cfg['seed']}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_manifest(out_dir: Path, cfg: dict, command: str, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg["seed"],
        "config_hash": config_mod.config_hash(cfg),
        "config": cfg,
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _result_row(result: EpisodeResult) -> list:
    return [getattr(result, name) for name in METRIC_COLUMNS]


def _aggregate(results) -> list:
    """Mean over runs; delivery delay averages the finite entries only."""
    row = []
    for name in METRIC_COLUMNS:
        values = [getattr(r, name) for r in results]
        if name == "met_lifetime":
            row.append(float(np.mean([bool(v) for v in values])))
        elif name == "delivery_delay":
            finite = [v for v in values if not math.isnan(v)]
            row.append(float(np.mean(finite)) if finite else math.nan)
        else:
            row.append(float(np.mean([float(v) for v in values])))
    return row


def _load_policy(method: str, seed: int):
    """A baseline name, or a checkpoint path for greedy network execution."""
    if method in baselines.BASELINE_NAMES:
        return baselines.make_baseline(method, seed), None
    params, meta = load_checkpoint(method)
    return NetPolicy(params), meta


def _evaluate_method(method: str, world_config, reward_kind: str, runs: int,
                     seeds) -> list:
    results = []
    for i, run_seed in enumerate(seeds):
        policy, meta = _load_policy(method, seed=derive_seed(run_seed, 99))
        if meta is not None and meta["n_pairs"] != world_config.n_pairs:
            raise SystemExit(
                f"checkpoint trained for {meta['n_pairs']} pairs, "
                f"requested {world_config.n_pairs}"
            )
        env = PowerAllocationEnv(world_config, reward_kind)
        result, _ = run_episode(env, policy, seed=run_seed)
        results.append(result)
    return results


# -- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    overrides = _collect_overrides(args)
    cfg = config_mod.load_config(args.config, overrides)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    world_config = config_mod.build_world_config(cfg)
    trainer_config = config_mod.build_trainer_config(cfg)
    curriculum_config = config_mod.build_curriculum_config(cfg)
    curriculum = Curriculum(curriculum_config, world_config, cfg["reward"],
                            master_seed=cfg["seed"])
    trainer = Trainer(world_config, trainer_config, cfg["reward"],
                      curriculum, seed=cfg["seed"])
    result = trainer.train()

    meta = {
        "n_pairs": world_config.n_pairs,
        "reward_kind": cfg["reward"],
        "seed": cfg["seed"],
        "config_hash": config_mod.config_hash(cfg),
        "curriculum": curriculum_config.kind,
    }
    save_checkpoint(out_dir / "checkpoint.npz", result.best_params, meta)
    with open(out_dir / "episode_trace.jsonl", "w") as f:
        for record in trainer.last_trace:
            f.write(json.dumps(record) + "\n")
    _write_csv(out_dir / "curriculum_trace.csv",
               ("episode", "malfunction_rate", "mean_reward", "mean_utility"),
               curriculum.trace_rows(), cfg)
    _write_csv(out_dir / "training_history.csv",
               ("episode", "malfunction_rate", "epsilon", "episode_reward", "loss"),
               [(e, m, eps, r, "" if loss is None else loss)
                for e, m, eps, r, loss in result.history], cfg)
    best = result.best_mean_reward if math.isfinite(result.best_mean_reward) else None
    _write_manifest(out_dir, cfg, "train", {"best_mean_reward": best})
    print(f"trained {trainer_config.total_episodes} episodes "
          f"(best eval reward {'n/a' if best is None else f'{best:.4f}'}) -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    overrides = _collect_overrides(args)
    cfg = config_mod.load_config(args.config, overrides)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world_config = config_mod.build_world_config(cfg)

    method = args.baseline or args.checkpoint
    if not method:
        raise SystemExit("evaluate needs --checkpoint or --baseline")
    seeds = [derive_seed(cfg["seed"], 3, run) for run in range(args.runs)]
    results = _evaluate_method(method, world_config, cfg["reward"], args.runs, seeds)

    rows = [[i, seeds[i]] + _result_row(r) for i, r in enumerate(results)]
    rows.append(["aggregate", ""] + _aggregate(results))
    _write_csv(out_dir / "evaluation.csv", ("run", "seed", *METRIC_COLUMNS), rows, cfg)
    _write_manifest(out_dir, cfg, "evaluate", {"method": method, "runs": args.runs})
    agg = dict(zip(METRIC_COLUMNS, _aggregate(results)))
    print(f"{method}: utility {agg['utility']:.4f}  fairness {agg['fairness']:.4f}  "
          f"reuse {agg['reuse']:.4f}  delivery {agg['delivery_ratio']:.4f}")
    return 0


def cmd_compare(args) -> int:
    overrides = _collect_overrides(args)
    cfg = config_mod.load_config(args.config, overrides)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    methods = args.methods
    reference = args.reference or methods[0]
    if reference not in methods:
        raise SystemExit(f"reference {reference!r} not among methods")
    pairs_grid = [int(x) for x in args.pairs_grid.split(",")]
    eps_grid = [float(x) for x in args.eps_grid.split(",")]

    raw_rows = []
    aggregates = {}
    for ni, n_pairs in enumerate(pairs_grid):
        for ei, eps in enumerate(eps_grid):
            cell_cfg = config_mod.deep_merge(
                cfg, {"world": {"n_pairs": n_pairs, "malfunction_rate": eps}})
            world_config = config_mod.build_world_config(cell_cfg)
            seeds = [derive_seed(cfg["seed"], 4, ni, ei, run)
                     for run in range(args.runs)]
            for method in methods:
                results = _evaluate_method(method, world_config, cfg["reward"],
                                           args.runs, seeds)
                agg = _aggregate(results)
                aggregates[(n_pairs, eps, method)] = dict(zip(METRIC_COLUMNS, agg))
                raw_rows.append([n_pairs, eps, method] + agg)
    _write_csv(out_dir / "compare_raw.csv",
               ("n_pairs", "malfunction_rate", "method", *METRIC_COLUMNS), raw_rows, cfg)

    norm_rows = []
    for (n_pairs, eps) in [(n, e) for n in pairs_grid for e in eps_grid]:
        for metric in NORMALIZED_METRICS:
            ref = aggregates[(n_pairs, eps, reference)][metric]
            best = max(aggregates[(n_pairs, eps, m)][metric] for m in methods)
            for method in methods:
                value = aggregates[(n_pairs, eps, method)][metric]
                try:
                    norm = metrics.normalize(value, ref, best)
                except ValueError:
                    norm = math.nan
                norm_rows.append([n_pairs, eps, metric, method, value, norm])
    _write_csv(out_dir / "compare_normalized.csv",
               ("n_pairs", "malfunction_rate", "metric", "method", "raw", "normalized"),
               norm_rows, cfg)
    _write_manifest(out_dir, cfg, "compare",
                    {"methods": methods, "reference": reference,
                     "pairs_grid": pairs_grid, "eps_grid": eps_grid})
    print(f"compared {len(methods)} methods over {len(pairs_grid) * len(eps_grid)} "
          f"cells -> {out_dir}")
    return 0


def cmd_replay(args) -> int:
    records = []
    with open(args.trace) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    mismatches = verify_trace(records)
    if args.report:
        with open(args.report, "w") as f:
            json.dump({"trace": str(args.trace), "records": len(records),
                       "mismatches": mismatches}, f, indent=2)
            f.write("\n")
    if mismatches:
        for line in mismatches:
            print(line)
        print(f"replay: {len(mismatches)} mismatch(es) in {len(records)} records")
        return 1
    print(f"replay: clean ({max(0, len(records) - 1)} slots verified)")
    return 0


# -- argument plumbing ----------------------------------------------------------


def _collect_overrides(args) -> dict:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "reward", None):
        overrides["reward"] = args.reward
    world = {}
    if getattr(args, "pairs", None) is not None:
        world["n_pairs"] = args.pairs
    if getattr(args, "malfunction_rate", None) is not None:
        world["malfunction_rate"] = args.malfunction_rate
    if world:
        overrides["world"] = world
    trainer = {}
    if getattr(args, "episodes", None) is not None:
        trainer["total_episodes"] = args.episodes
    if trainer:
        overrides["trainer"] = trainer
    if getattr(args, "strategy", None):
        overrides["curriculum"] = {"kind": args.strategy}
    return overrides


def _add_common(parser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--reward", choices=REWARD_KINDS, help="team reward kind")
    parser.add_argument("--pairs", type=int, help="number of transmitter-receiver pairs")
    parser.add_argument("--malfunction-rate", type=float, dest="malfunction_rate",
                        help="deployment malfunction probability")
    parser.add_argument("--out-dir", default="runs/out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uansim",
        description="Underwater acoustic network power-allocation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a power-allocation model")
    _add_common(p_train)
    p_train.add_argument("--strategy", choices=("pls", "sls", "rls", "none"),
                         help="malfunction-rate schedule")
    p_train.add_argument("--episodes", type=int, help="training episodes")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="roll out a checkpoint or baseline")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint .npz path")
    p_eval.add_argument("--baseline", choices=baselines.BASELINE_NAMES)
    p_eval.add_argument("--runs", type=int, default=20)
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="evaluate methods over an (N, eps) grid")
    _add_common(p_cmp)
    p_cmp.add_argument("--methods", nargs="+", required=True,
                       help="checkpoint paths and/or baseline names")
    p_cmp.add_argument("--reference", help="method normalized to zero")
    p_cmp.add_argument("--pairs-grid", default="3,4,5,6", dest="pairs_grid")
    p_cmp.add_argument("--eps-grid", default="0.01,0.1,0.2", dest="eps_grid")
    p_cmp.add_argument("--runs", type=int, default=20)
    p_cmp.set_defaults(func=cmd_compare)

    p_rep = sub.add_parser("replay", help="verify a logged episode trace")
    p_rep.add_argument("trace", help="line-delimited JSON trace file")
    p_rep.add_argument("--report", help="write a JSON verification report here")
    p_rep.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        parser.exit(2, f"{parser.prog}: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
