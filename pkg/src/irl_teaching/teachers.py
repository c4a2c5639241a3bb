"""Demonstration-selecting teachers and the interactive teaching loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .learner import LearnerState, learner_step
from .mdp import Demonstration, TabularMdp, demo_occupancy, rollout, rollouts
from .rewards import feature_expectation_demo, feature_expectations_from_states

log = logging.getLogger(__name__)

CandidatePool = dict[int, list[Demonstration]]


@dataclass(frozen=True, eq=False)
class Omni:
    lambda_star: np.ndarray
    name: str = "omni"


@dataclass(frozen=True)
class Bbox:
    B: int = 5
    k: int = 5
    name: str = "bbox"

    def __post_init__(self):
        if self.B < 1 or self.k < 1:
            raise ValueError("probe interval B and test count k must be >= 1")


@dataclass(frozen=True)
class Agnostic:
    name: str = "agnostic"


TeacherKind = Omni | Bbox | Agnostic


@dataclass(frozen=True, eq=False)
class ProbeEstimate:
    rho: dict[int, np.ndarray]
    k: int
    step: int


@dataclass(frozen=True, eq=False)
class Selection:
    start_state: int
    demo: Demonstration
    objective: float


class TeachingError(RuntimeError):
    def __init__(self, step: int, log_rows: list, cause: Exception):
        super().__init__(f"teaching failed at step {step}: {cause}")
        self.step = step
        self.log = log_rows


def build_candidate_pool(
    mdp: TabularMdp,
    teacher_policy: np.ndarray,
    K: int,
    horizon: int,
    rng: np.random.Generator,
    start_states: Sequence[int] | None = None,
) -> CandidatePool:
    """K teacher rollouts per initial state, deduplicated by step sequence."""
    if K < 1:
        raise ValueError("K must be >= 1")
    states = [int(s) for s in (mdp.start_states if start_states is None else start_states)]
    demos = rollouts(mdp, teacher_policy, np.repeat(states, K), horizon, rng)
    pool: CandidatePool = {}
    for i, s in enumerate(states):
        seen: dict[tuple, Demonstration] = {}
        for demo in demos[i * K:(i + 1) * K]:
            seen.setdefault(demo.steps, demo)
        pool[s] = list(seen.values())
    return pool


def omni_objective(g: np.ndarray, lam: np.ndarray, lam_star: np.ndarray, eta: float) -> float:
    """``eta^2 |g|^2 - 2 eta <lam - lam*, g>`` for ``g = mu^{pi, s} - mu^xi``."""
    return float(eta**2 * g @ g - 2.0 * eta * (lam - lam_star) @ g)


def _check_pool(pool: CandidatePool):
    if not pool or not any(pool.values()):
        raise ValueError("candidate pool is empty")


def omni_select(
    state: LearnerState, pool: CandidatePool, lambda_star: np.ndarray, mdp: TabularMdp
) -> Selection:
    """Candidate minimising the squared distance of the next parameter to ``lambda_star``."""
    _check_pool(pool)
    states = sorted(pool)
    grads = state.model.gradient_table(state.lam)
    mu_pi = feature_expectations_from_states(mdp, state.policy, states, grads)
    best = None
    for i, s in enumerate(states):
        for demo in pool[s]:
            g = mu_pi[i] - feature_expectation_demo(demo, state.model, state.lam, mdp.discount, grads)
            obj = omni_objective(g, state.lam, lambda_star, state.eta)
            if best is None or obj < best.objective:
                best = Selection(s, demo, obj)
    return best


def probe_learner(
    mdp: TabularMdp,
    learner_policy: np.ndarray,
    k: int,
    horizon: int,
    rng: np.random.Generator,
    step: int = 0,
    start_states: Sequence[int] | None = None,
) -> ProbeEstimate:
    """Average occupancy of ``k`` learner test rollouts from every initial state."""
    if k < 1:
        raise ValueError("k must be >= 1")
    states = mdp.start_states if start_states is None else start_states
    S, A = mdp.n_states, mdp.n_actions
    states = [int(s) for s in states]
    demos = rollouts(mdp, learner_policy, np.repeat(states, k), horizon, rng)
    rho = {}
    for i, s in enumerate(states):
        tables = [demo_occupancy(d, mdp.discount, S, A).rho for d in demos[i * k:(i + 1) * k]]
        rho[s] = np.mean(tables, axis=0)
    return ProbeEstimate(rho, k, step)


def bbox_objective(rho_hat: np.ndarray, rho_demo: np.ndarray, env_reward: np.ndarray) -> float:
    return abs(float(((rho_hat - rho_demo) * env_reward).sum()))


def bbox_select(
    estimate: ProbeEstimate, pool: CandidatePool, env_reward: np.ndarray, discount: float
) -> Selection:
    """Candidate with the largest estimated reward discrepancy to the learner."""
    _check_pool(pool)
    missing = set(pool) - set(estimate.rho)
    if missing:
        raise KeyError(f"no probe estimate for start states {sorted(missing)}")
    S, A = env_reward.shape
    best = None
    for s in sorted(pool):
        for demo in pool[s]:
            rho_demo = demo_occupancy(demo, discount, S, A).rho
            obj = bbox_objective(estimate.rho[s], rho_demo, env_reward)
            if best is None or obj > best.objective:
                best = Selection(s, demo, obj)
    return best


def agnostic_select(
    mdp: TabularMdp, teacher_policy: np.ndarray, horizon: int, rng: np.random.Generator
) -> Selection:
    """``s0 ~ P0`` and a fresh teacher rollout from it."""
    s0 = int(rng.choice(mdp.n_states, p=mdp.initial_dist))
    return Selection(s0, rollout(mdp, teacher_policy, s0, horizon, rng), float("nan"))


@dataclass(eq=False)
class StepInfo:
    t: int
    learner: LearnerState  # state the selection was made against
    selection: Selection
    probed: bool
    pool: CandidatePool | None = None
    estimate: ProbeEstimate | None = None


@dataclass
class StepRecord:
    t: int
    start_state: int
    objective: float
    probed: bool
    lam: np.ndarray = field(repr=False)


def teaching_loop(
    mdp: TabularMdp,
    teacher_policy: np.ndarray,
    teacher: TeacherKind,
    learner: LearnerState,
    n_steps: int,
    rng: np.random.Generator,
    *,
    pool_size: int = 10,
    horizon: int = 20,
    env_reward: np.ndarray | None = None,
    on_step: Callable[[StepInfo], None] | None = None,
    update: bool = True,
) -> tuple[LearnerState, list[StepRecord]]:
    """Run ``n_steps`` rounds of select-then-update.

    Bbox re-probes the learner only at ``t % B == 1`` (``t`` counted from 1)
    and reuses the stale estimate in between. With ``update=False`` the
    learner is never updated, which isolates the teacher's selection stream.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    R = mdp.env_reward if env_reward is None else env_reward
    estimate = None
    records: list[StepRecord] = []
    for t in range(1, n_steps + 1):
        try:
            pool = None
            probed = False
            if isinstance(teacher, Omni):
                pool = build_candidate_pool(mdp, teacher_policy, pool_size, horizon, rng)
                sel = omni_select(learner, pool, teacher.lambda_star, mdp)
            elif isinstance(teacher, Bbox):
                if estimate is None or t % teacher.B == 1 % teacher.B:
                    estimate = probe_learner(mdp, learner.policy, teacher.k, horizon, rng, step=t)
                    probed = True
                pool = build_candidate_pool(mdp, teacher_policy, pool_size, horizon, rng)
                sel = bbox_select(estimate, pool, R, mdp.discount)
            elif isinstance(teacher, Agnostic):
                sel = agnostic_select(mdp, teacher_policy, horizon, rng)
            else:
                raise TypeError(f"unknown teacher {teacher!r}")

            if on_step is not None:
                on_step(StepInfo(t, learner, sel, probed, pool, estimate))
            records.append(StepRecord(t, sel.start_state, sel.objective, probed, learner.lam.copy()))
            if update:
                learner = learner_step(learner, sel.demo, mdp)
        except Exception as exc:
            log.error("teaching step %d failed: %s", t, exc)
            raise TeachingError(t, records, exc) from exc
    return learner, records
