"""Config-driven teaching experiments: per-seed runs, CSV logs and aggregates."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import MetricsRow, MetricsTracker
from .car_env import CarMdpConfig, generate_environment, parse_task, teacher_policy
from .learner import (
    LambdaStarConfig,
    LearningSchedule,
    compute_lambda_star,
    fit_likelihood,
    init_learner,
    sample_demo_budget,
    sample_demos,
)
from .mdp import load_mdp
from .plots import write_teacher_charts
from .rewards import FeatureMap, ParameterBall, make_reward_model
from .teachers import Agnostic, Bbox, Omni, TeachingError, teaching_loop

log = logging.getLogger(__name__)


@dataclass
class EnvironmentSettings:
    tasks: list[int] = field(default_factory=lambda: list(range(8)))
    n_lanes: int = 2
    gamma: float = 0.9
    reward_variant: str = "linear"
    rows: int = 10
    cols: int = 2
    mdp_file: str | None = None  # overrides the car generator when set


@dataclass
class LearnerSettings:
    reward_model: str = "linear"
    schedule: str = "constant"
    eta: float = 0.2
    radius: float = 100.0
    warmup_tasks: list[int] = field(default_factory=list)
    # initial value of every quadratic coefficient; the quadratic gradient vanishes at zero
    quadratic_init: float = 0.1


@dataclass
class TeacherSettings:
    kind: str = "omni"
    B: int = 5
    k: int = 5

    @property
    def name(self) -> str:
        return self.kind


@dataclass
class LambdaStarSettings:
    source: str | list[float] = "fit"  # "fit", "none" or explicit values
    eps_tilde: float = 0.5
    delta: float = 0.1
    opt_tol: float = 1e-6
    opt_max_iters: int = 20_000
    opt_step_size: float = 1.0


@dataclass
class PoolSettings:
    K: int = 10
    horizon: int = 20


@dataclass
class ExperimentConfig:
    environment: EnvironmentSettings = field(default_factory=EnvironmentSettings)
    learner: LearnerSettings = field(default_factory=LearnerSettings)
    teachers: list[TeacherSettings] = field(default_factory=lambda: [TeacherSettings()])
    lambda_star: LambdaStarSettings = field(default_factory=LambdaStarSettings)
    pool: PoolSettings = field(default_factory=PoolSettings)
    T: int = 200
    seeds: list[int] = field(default_factory=lambda: [1])
    output_dir: str | None = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.teachers:
            raise ValueError("at least one teacher is required")
        kinds = [t.kind for t in self.teachers]
        for kind in kinds:
            if kind not in ("omni", "bbox", "agnostic"):
                raise ValueError(f"unknown teacher kind {kind!r}")
        if len(set(kinds)) != len(kinds):
            raise ValueError("teacher kinds must be distinct")
        if "omni" in kinds and self.lambda_star.source == "none":
            raise ValueError("the omniscient teacher needs a target parameter")
        if self.learner.reward_model not in ("linear", "quadratic"):
            raise ValueError(f"unknown reward model {self.learner.reward_model!r}")
        self.environment.tasks = [parse_task(t) for t in self.environment.tasks]
        self.learner.warmup_tasks = [parse_task(t) for t in self.learner.warmup_tasks]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        doc = dict(doc)
        unknown = set(doc) - {f for f in cls.__dataclass_fields__} - {"teacher"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        teachers = doc.pop("teachers", None)
        if teachers is None and "teacher" in doc:
            teachers = [doc.pop("teacher")]
        doc.pop("teacher", None)
        return cls(
            environment=EnvironmentSettings(**doc.pop("environment", {})),
            learner=LearnerSettings(**doc.pop("learner", {})),
            teachers=[TeacherSettings(**t) for t in (teachers or [{}])],
            lambda_star=LambdaStarSettings(**doc.pop("lambda_star", {})),
            pool=PoolSettings(**doc.pop("pool", {})),
            **doc,
        )

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("output_dir")
        doc.pop("seeds")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


CONFIG_SCHEMA = {
    "type": "object",
    "description": "Teaching experiment. Every key is optional; defaults shown.",
    "properties": {
        "environment": {
            "tasks": "list of task ids 0..8 (ints or 'T4' strings), default [0..7]",
            "n_lanes": "lanes per task, default 2",
            "gamma": "discount, default 0.9",
            "reward_variant": "'linear' | 'nonlinear'",
            "rows": "lane length, default 10",
            "cols": "lane width, default 2",
            "mdp_file": "path written by gen-env; replaces the generator when set",
        },
        "learner": {
            "reward_model": "'linear' | 'quadratic'",
            "schedule": "'constant' | 'inverse_sqrt'",
            "eta": "learning rate (constant) or its scale c in c/sqrt(t), default 0.2",
            "radius": "projection radius z, default 100",
            "warmup_tasks": "tasks whose start states seed the prior fit; [] keeps lambda_1 = 0",
            "quadratic_init": "starting value of the quadratic coefficients, default 0.1",
        },
        "teachers": "list of {kind: 'omni'|'bbox'|'agnostic', B: 5, k: 5}; 'teacher' accepts one",
        "lambda_star": {
            "source": "'fit' | 'none' | explicit list of floats",
            "eps_tilde": 0.5,
            "delta": 0.1,
            "opt_tol": 1e-6,
            "opt_max_iters": 20000,
            "opt_step_size": 1.0,
        },
        "pool": {"K": "rollouts per start state, default 10", "horizon": "rollout length, default 20"},
        "T": "teaching steps, default 200",
        "seeds": "non-empty list of ints",
        "output_dir": "directory for CSV/SVG output; null writes nothing",
    },
}


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    teacher: str
    rows: list[MetricsRow]
    final_lam: np.ndarray | None
    wall_clock: float
    error: str | None = None
    lambda_star: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(eq=False)
class Setup:
    """Everything shared by the teachers of one seed."""

    mdp: object
    features: FeatureMap
    state_task: np.ndarray | None
    teacher_policy: np.ndarray
    lambda_star: np.ndarray | None
    lam1: np.ndarray


def lambda_star_config(cfg: ExperimentConfig, d: int, gamma: float) -> LambdaStarConfig:
    s = cfg.lambda_star
    return LambdaStarConfig(
        eps_tilde=s.eps_tilde,
        delta=s.delta,
        d=d,
        gamma=gamma,
        opt_tol=s.opt_tol,
        opt_max_iters=s.opt_max_iters,
        opt_step_size=s.opt_step_size,
    )


def build_environment(cfg: ExperimentConfig, rng: np.random.Generator):
    """``(mdp, features, state_task)`` from the generator or an MDP file."""
    env = cfg.environment
    if env.mdp_file:
        mdp, doc = load_mdp(env.mdp_file)
        if "features" not in doc:
            raise ValueError(f"{env.mdp_file} has no 'features' table")
        phi = np.asarray(doc["features"], dtype=float)
        features = (
            FeatureMap(phi) if phi.ndim == 3 else FeatureMap.from_state_features(phi, mdp.n_actions)
        )
        task = doc.get("lane_metadata", {}).get("state_task")
        return mdp, features, None if task is None else np.asarray(task, dtype=int)
    car = generate_environment(
        CarMdpConfig(
            tasks=tuple(env.tasks),
            n_lanes=env.n_lanes,
            gamma=env.gamma,
            reward_variant=env.reward_variant,
            rows=env.rows,
            cols=env.cols,
        ),
        rng,
    )
    return car.mdp, car.features, car.state_task


def prepare_seed(cfg: ExperimentConfig, seed: int) -> tuple[Setup, list[np.random.SeedSequence]]:
    """Environment, target parameter and warm start for one seed.

    Returns the setup plus one independent seed sequence per teacher.
    """
    env_ss, star_ss, warm_ss, teach_ss = np.random.SeedSequence(seed).spawn(4)
    mdp, features, state_task = build_environment(cfg, np.random.default_rng(env_ss))
    if mdp.env_reward is None:
        raise ValueError("the environment has no reward attached")
    pi_e = teacher_policy(mdp)
    model = make_reward_model(cfg.learner.reward_model, features)
    star_cfg = lambda_star_config(cfg, features.dim, mdp.discount)

    source = cfg.lambda_star.source
    if source == "fit":
        lambda_star, _ = compute_lambda_star(mdp, pi_e, model, star_cfg, np.random.default_rng(star_ss))
    elif source == "none":
        lambda_star = None
    else:
        lambda_star = np.asarray(source, dtype=float)
        if lambda_star.shape != (model.n_params,):
            raise ValueError(f"lambda_star needs {model.n_params} values")

    lam0 = np.zeros(model.n_params)
    if model.kind == "quadratic":
        lam0[features.dim:] = cfg.learner.quadratic_init
    lam1 = lam0
    if cfg.learner.warmup_tasks:
        if state_task is None:
            raise ValueError("warm-up tasks need per-state task labels")
        starts = [s for s in mdp.start_states if state_task[s] in cfg.learner.warmup_tasks]
        if not starts:
            raise ValueError("no start states belong to the warm-up tasks")
        m, H = sample_demo_budget(star_cfg)
        demos = sample_demos(mdp, pi_e, m, H, np.random.default_rng(warm_ss), start_states=starts)
        fit = fit_likelihood(
            mdp, demos, model, lam0, star_cfg.opt_tol, star_cfg.opt_max_iters, star_cfg.opt_step_size
        )
        if not fit.converged:
            log.warning("warm-up fit stopped at residual %.2e", fit.residual)
        lam1 = fit.lam
    setup = Setup(mdp, features, state_task, pi_e, lambda_star, lam1)
    return setup, teach_ss.spawn(len(cfg.teachers))


def _teacher(settings: TeacherSettings, lambda_star):
    if settings.kind == "omni":
        return Omni(lambda_star)
    if settings.kind == "bbox":
        return Bbox(settings.B, settings.k)
    return Agnostic()


def run_teacher(
    cfg: ExperimentConfig, setup: Setup, settings: TeacherSettings, rng: np.random.Generator
) -> tuple[list[MetricsRow], np.ndarray]:
    """Teach for ``cfg.T`` steps; rows hold metrics of the learner each selection faced."""
    mdp = setup.mdp
    model = make_reward_model(cfg.learner.reward_model, setup.features)
    learner = init_learner(
        mdp,
        model,
        setup.lam1,
        LearningSchedule(cfg.learner.schedule, cfg.learner.eta),
        ParameterBall(cfg.learner.radius),
    )
    tracker = MetricsTracker(mdp, setup.teacher_policy, None, setup.state_task, setup.lambda_star)
    rows: list[MetricsRow] = []

    def on_step(info):
        rows.append(
            tracker.row(
                info.t, info.learner, info.selection.start_state, info.selection.objective, info.probed
            )
        )

    try:
        learner, _ = teaching_loop(
            mdp,
            setup.teacher_policy,
            _teacher(settings, setup.lambda_star),
            learner,
            cfg.T,
            rng,
            pool_size=cfg.pool.K,
            horizon=cfg.pool.horizon,
            on_step=on_step,
        )
    except TeachingError as exc:
        exc.rows = rows
        raise
    return rows, learner.lam


def run_experiment(cfg: ExperimentConfig, seeds: Sequence[int] | None = None) -> list[RunRecord]:
    """One record per (seed, teacher); a failing seed is recorded and skipped."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    digest = cfg.config_hash()
    records: list[RunRecord] = []
    for seed in seeds:
        start = time.perf_counter()
        try:
            setup, streams = prepare_seed(cfg, seed)
        except Exception as exc:  # noqa: BLE001 - recorded, other seeds proceed
            log.error("seed %d setup failed: %s", seed, exc)
            for t in cfg.teachers:
                records.append(
                    RunRecord(digest, seed, t.name, [], None, time.perf_counter() - start, repr(exc))
                )
            continue
        for settings, ss in zip(cfg.teachers, streams):
            t0 = time.perf_counter()
            try:
                rows, lam = run_teacher(cfg, setup, settings, np.random.default_rng(ss))
                error = None
            except Exception as exc:  # noqa: BLE001
                log.error("seed %d teacher %s failed: %s", seed, settings.name, exc)
                rows, lam, error = getattr(exc, "rows", []), None, repr(exc)
            records.append(
                RunRecord(
                    digest, seed, settings.name, rows, lam, time.perf_counter() - t0, error,
                    setup.lambda_star,
                )
            )
    if cfg.output_dir:
        write_outputs(records, cfg)
    return records


# -- CSV -------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def task_ids(rows: Sequence[MetricsRow]) -> list[int]:
    return sorted({task for row in rows for task in row.nu_gap_task})


def csv_columns(tasks: Sequence[int]) -> list[str]:
    return (
        ["t", "lambda_dist", "nu_gap_all"]
        + [f"nu_gap_task_{task}" for task in tasks]
        + ["tv_dist", "sel_state", "sel_task", "objective", "probed"]
    )


def write_rows_csv(rows: Sequence[MetricsRow], path: str | Path) -> None:
    tasks = task_ids(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_columns(tasks))
        for r in rows:
            writer.writerow(
                [_fmt(r.t), _fmt(r.lambda_dist), _fmt(r.nu_gap_all)]
                + [_fmt(r.nu_gap_task[task]) for task in tasks]
                + [_fmt(r.tv_dist), _fmt(r.sel_state), _fmt(r.sel_task), _fmt(r.objective), _fmt(r.probed)]
            )


def read_rows_csv(path: str | Path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            gaps = {
                int(key.removeprefix("nu_gap_task_")): float(val)
                for key, val in rec.items()
                if key.startswith("nu_gap_task_")
            }
            rows.append(
                MetricsRow(
                    t=int(rec["t"]),
                    lambda_dist=float(rec["lambda_dist"]) if rec["lambda_dist"] else None,
                    nu_gap_all=float(rec["nu_gap_all"]),
                    nu_gap_task=gaps,
                    tv_dist=float(rec["tv_dist"]),
                    sel_state=int(rec["sel_state"]),
                    sel_task=int(rec["sel_task"]),
                    objective=float(rec["objective"]) if rec["objective"] else float("nan"),
                    probed=rec["probed"] == "1",
                )
            )
    return rows


def metric_series(rows: Sequence[MetricsRow]) -> dict[str, np.ndarray]:
    """Numeric metric columns keyed by CSV name; missing values are NaN."""
    out = {
        "lambda_dist": np.array([np.nan if r.lambda_dist is None else r.lambda_dist for r in rows]),
        "nu_gap_all": np.array([r.nu_gap_all for r in rows]),
    }
    for task in task_ids(rows):
        out[f"nu_gap_task_{task}"] = np.array([r.nu_gap_task[task] for r in rows])
    out["tv_dist"] = np.array([r.tv_dist for r in rows])
    return out


def aggregate(runs: Sequence[Sequence[MetricsRow]]) -> tuple[list[str], list[list[str]]]:
    """Mean and sample standard deviation across seeds per ``t``.

    Only steps present in every run are aggregated; ``sd`` is 0 for one run.
    """
    runs = [r for r in runs if r]
    if not runs:
        raise ValueError("nothing to aggregate")
    n_steps = min(len(r) for r in runs)
    series = [metric_series(r[:n_steps]) for r in runs]
    names = list(series[0])
    header = ["t", "n_seeds"] + [f"{name}_{stat}" for name in names for stat in ("mean", "sd")]
    table = []
    for i in range(n_steps):
        line = [str(runs[0][i].t), str(len(runs))]
        for name in names:
            values = np.array([s[name][i] for s in series])
            if np.isnan(values).all():
                line += ["", ""]
                continue
            sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            line += [repr(float(values.mean())), repr(sd)]
        table.append(line)
    return header, table


def write_aggregate_csv(runs: Sequence[Sequence[MetricsRow]], path: str | Path) -> None:
    header, table = aggregate(runs)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(table)


def write_outputs(records: Sequence[RunRecord], cfg: ExperimentConfig | None = None, out_dir=None) -> Path:
    """Per-seed CSVs, aggregates, SVG charts and a JSON summary under ``out_dir``."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"config": cfg.to_dict() if cfg else None, "runs": []}
    for teacher in dict.fromkeys(r.teacher for r in records):
        mine = [r for r in records if r.teacher == teacher]
        tdir = out / teacher
        tdir.mkdir(exist_ok=True)
        for rec in mine:
            if rec.rows:
                write_rows_csv(rec.rows, tdir / f"seed_{rec.seed}.csv")
            summary["runs"].append(
                {
                    "teacher": teacher,
                    "seed": rec.seed,
                    "config_hash": rec.config_hash,
                    "steps": len(rec.rows),
                    "wall_clock": rec.wall_clock,
                    "error": rec.error,
                    "final_lambda": None if rec.final_lam is None else rec.final_lam.tolist(),
                    "lambda_star": None if rec.lambda_star is None else rec.lambda_star.tolist(),
                }
            )
        complete = [r.rows for r in mine if r.ok and r.rows]
        if complete:
            write_aggregate_csv(complete, tdir / "aggregate.csv")
            n = min(len(r) for r in complete)
            write_teacher_charts(
                teacher,
                [metric_series(r[:n]) for r in complete],
                [row.t for row in complete[0][:n]],
                [row.sel_task for row in complete[0][:n]],
                tdir,
            )
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return out


def load_run_dir(path: str | Path) -> dict[str, dict[int, list[MetricsRow]]]:
    """Per-seed CSVs of a run directory keyed by teacher then seed."""
    out: dict[str, dict[int, list[MetricsRow]]] = {}
    for csv_path in sorted(Path(path).glob("*/seed_*.csv")):
        seed = int(csv_path.stem.removeprefix("seed_"))
        out.setdefault(csv_path.parent.name, {})[seed] = read_rows_csv(csv_path)
    return out


def steps_to_fraction(values: Sequence[float], fraction: float = 0.5) -> int | None:
    """First ``t`` (1-based) with ``values[t-1] <= fraction * values[0]``."""
    values = np.asarray(values, dtype=float)
    hits = np.flatnonzero(values <= fraction * values[0])
    return int(hits[0]) + 1 if hits.size else None
