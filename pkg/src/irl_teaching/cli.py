"""Command-line entry point: run, lambda-star, verify, export, gen-env."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .car_env import CarMdpConfig, generate_environment, teacher_policy
from .experiment import (
    CONFIG_SCHEMA,
    ExperimentConfig,
    build_environment,
    lambda_star_config,
    load_run_dir,
    metric_series,
    run_experiment,
    write_aggregate_csv,
)
from .learner import LambdaStarError, compute_lambda_star
from .mdp import save_mdp
from .plots import write_teacher_charts
from .rewards import LinearReward
from .verification import verify

log = logging.getLogger("irl_teaching")


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seeds", None):
        cfg.seeds = args.seeds
    if getattr(args, "out", None):
        cfg.output_dir = str(args.out)
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    records = run_experiment(cfg)
    for rec in records:
        status = "ok" if rec.ok else f"FAILED: {rec.error}"
        last = rec.rows[-1] if rec.rows else None
        gap = f"nu_gap_all={last.nu_gap_all:.4f}" if last else ""
        print(f"seed {rec.seed} {rec.teacher:8s} {len(rec.rows):4d} steps {rec.wall_clock:6.1f}s {gap} {status}")
    if cfg.output_dir:
        print(f"wrote {cfg.output_dir}")
    return 0 if all(r.ok for r in records) else 1


def cmd_lambda_star(args) -> int:
    cfg = _load_config(args)
    results = []
    for seed in cfg.seeds:
        env_ss, star_ss, _, _ = np.random.SeedSequence(seed).spawn(4)
        mdp, features, _ = build_environment(cfg, np.random.default_rng(env_ss))
        star_cfg = lambda_star_config(cfg, features.dim, mdp.discount)
        try:
            lam, fit = compute_lambda_star(
                mdp, teacher_policy(mdp), LinearReward(features), star_cfg, np.random.default_rng(star_ss)
            )
        except LambdaStarError as exc:
            print(f"seed {seed}: {exc}", file=sys.stderr)
            return 1
        results.append(
            {
                "seed": seed,
                "lambda_star": lam.tolist(),
                "residual": fit.residual,
                "iterations": fit.iterations,
                "demo_count": fit.demo_count,
                "horizon": fit.horizon,
            }
        )
    text = json.dumps(results, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_verify(args) -> int:
    report = verify(args.verify_level, seed=args.seed)
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"verify {args.verify_level}: all {len(report.checks)} checks passed")
        return 0
    print(f"verify {args.verify_level}: FAILED {', '.join(report.failures)}")
    return 1


def cmd_export(args) -> int:
    runs = load_run_dir(args.run_dir)
    if not runs:
        print(f"no per-seed CSVs under {args.run_dir}", file=sys.stderr)
        return 1
    out = Path(args.out or args.run_dir)
    for teacher, by_seed in runs.items():
        tdir = out / teacher
        tdir.mkdir(parents=True, exist_ok=True)
        rows = [by_seed[s] for s in sorted(by_seed)]
        if args.format == "csv":
            write_aggregate_csv(rows, tdir / "aggregate.csv")
        else:
            n = min(len(r) for r in rows)
            write_teacher_charts(
                teacher,
                [metric_series(r[:n]) for r in rows],
                [row.t for row in rows[0][:n]],
                [row.sel_task for row in rows[0][:n]],
                tdir,
            )
        print(f"{teacher}: {len(rows)} seeds -> {tdir}")
    return 0


def cmd_gen_env(args) -> int:
    cfg = _load_config(args)
    if cfg.environment.mdp_file:
        print("gen-env needs a generator config, not an mdp_file", file=sys.stderr)
        return 2
    env = cfg.environment
    seed = cfg.seeds[0]
    env_ss = np.random.SeedSequence(seed).spawn(4)[0]
    car = generate_environment(
        CarMdpConfig(tuple(env.tasks), env.n_lanes, env.gamma, env.reward_variant, env.rows, env.cols),
        np.random.default_rng(env_ss),
    )
    save_mdp(car.mdp, args.out, extra=car.metadata())
    print(f"wrote {car.mdp.n_states}-state MDP (seed {seed}) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irl-teach", description=__doc__)
    parser.add_argument("--print-schema", action="store_true", help="print the config schema and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("run", help="run a teaching experiment")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--seeds", type=parse_seeds)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("lambda-star", help="fit the target parameter only")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, help="JSON file for the result")
    p.add_argument("--seeds", type=parse_seeds)
    p.set_defaults(func=cmd_lambda_star)

    p = sub.add_parser("verify", help="run the property self-checks")
    p.add_argument("--verify-level", choices=("quick", "full"), default="quick")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export", help="rebuild aggregates or charts from per-seed CSVs")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--format", choices=("csv", "svg"), default="svg")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gen-env", help="write a generated car MDP to JSON")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seeds", type=parse_seeds, help="the first seed picks the layout")
    p.set_defaults(func=cmd_gen_env)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if args.print_schema:
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
