"""Self-check suite behind ``verify``: property sweeps on random small MDPs."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import smoothness_trial, policy_tv_bound_check, synthetic_zero_noise_run
from .learner import init_learner, nll_loss_and_gradient
from .mdp import TabularMdp, occupancy_measure, optimal_policy, point_mass, rollout
from .rewards import FeatureMap, LinearReward, QuadraticReward
from .teachers import Bbox, Omni, teaching_loop

log = logging.getLogger(__name__)

GradientFn = Callable[..., tuple[float, np.ndarray]]

LEVELS = {
    # (occupancy pairs, gradient mdps, smoothness pairs, tv pairs, selection steps, contraction steps)
    "quick": (20, 10, 50, 50, 10, 50),
    "full": (100, 50, 200, 200, 50, 100),
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


@dataclass
class VerifyReport:
    level: str
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if c.passed else 'FAIL'}  {c.name:<28s} {c.detail} ({c.seconds:.1f}s)"
            for c in self.checks
        ]


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    gamma: float | None = None,
    sparse: bool = False,
) -> TabularMdp:
    """Dirichlet transitions, random initial distribution and rewards in [-1, 1]."""
    T = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparse:
        T = T * (rng.random(T.shape) < 0.6)
        T[..., 0] += T.sum(axis=2) == 0
        T /= T.sum(axis=2, keepdims=True)
    gamma = float(rng.uniform(0.5, 0.95)) if gamma is None else gamma
    p0 = rng.dirichlet(np.ones(n_states))
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(T, gamma, p0, reward)


def random_features(rng: np.random.Generator, mdp: TabularMdp, dim: int) -> FeatureMap:
    return FeatureMap(rng.uniform(-1.0, 1.0, size=(mdp.n_states, mdp.n_actions, dim)))


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-8)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / scale


def finite_difference(fn: Callable[[np.ndarray], float], lam: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(lam)
    for i in range(lam.size):
        step = np.zeros_like(lam)
        step[i] = h
        grad[i] = (fn(lam + step) - fn(lam - step)) / (2.0 * h)
    return grad


def check_occupancy(rng, n_pairs: int) -> CheckResult:
    worst = 0.0
    for _ in range(n_pairs):
        mdp = random_mdp(rng, int(rng.integers(2, 9)), int(rng.integers(1, 4)))
        occ = occupancy_measure(mdp, random_policy(rng, mdp.n_states, mdp.n_actions))
        worst = max(worst, abs(occ.total - 1.0))
    return CheckResult("occupancy normalization", worst <= 1e-8, f"max |sum rho - 1| = {worst:.1e}")


def check_gradients(
    rng, n_mdps: int, grad_fn: GradientFn = nll_loss_and_gradient, tol: float = 1e-4
) -> CheckResult:
    """Analytic likelihood gradients against central differences, both reward models."""
    worst = 0.0
    for _ in range(n_mdps):
        mdp = random_mdp(rng, int(rng.integers(2, 7)), int(rng.integers(2, 4)))
        features = random_features(rng, mdp, int(rng.integers(1, 4)))
        start = int(rng.integers(mdp.n_states))
        demo = rollout(mdp, random_policy(rng, mdp.n_states, mdp.n_actions), start, 6, rng)
        for model in (LinearReward(features), QuadraticReward(features)):
            lam = rng.normal(size=model.n_params)
            _, analytic = grad_fn(model, mdp, demo, lam, tol=1e-13)
            numeric = finite_difference(
                lambda x: nll_loss_and_gradient(model, mdp, demo, x, tol=1e-13)[0], lam
            )
            worst = max(worst, relative_error(analytic, numeric))
    return CheckResult("likelihood gradient", worst <= tol, f"max relative error = {worst:.1e}")


def check_smoothness(rng, n_pairs: int) -> CheckResult:
    mdp = random_mdp(rng, 5, 3)
    model = LinearReward(random_features(rng, mdp, 3))
    violations = 0
    for _ in range(n_pairs):
        lam = rng.normal(scale=2.0, size=model.n_params)
        lam_prime = lam + rng.normal(scale=rng.choice([0.01, 0.1, 1.0]), size=model.n_params)
        gap, bound = smoothness_trial(mdp, model, lam, lam_prime)
        violations += gap > bound
    return CheckResult(
        "reward-gap smoothness bound", violations == 0, f"{n_pairs - violations}/{n_pairs} trials hold"
    )


def check_tv_bound(rng, n_pairs: int) -> CheckResult:
    violations = 0
    for _ in range(n_pairs):
        mdp = random_mdp(rng, int(rng.integers(2, 7)), int(rng.integers(2, 4)))
        pi = random_policy(rng, mdp.n_states, mdp.n_actions)
        mix = rng.uniform()
        pi_prime = mix * pi + (1 - mix) * random_policy(rng, mdp.n_states, mdp.n_actions)
        violations += not policy_tv_bound_check(mdp, pi, pi_prime)[2]
    return CheckResult(
        "occupancy TV bound", violations == 0, f"{n_pairs - violations}/{n_pairs} trials hold"
    )


def check_contraction(rng, n_steps: int) -> CheckResult:
    """Zero-noise richness: distance shrinks at least geometrically."""
    mdp = random_mdp(rng, 5, 3)
    model = LinearReward(random_features(rng, mdp, 3))
    learner = init_learner(mdp, model, rng.normal(size=3))
    lam_star = rng.normal(size=3)
    beta = 0.25 / learner.eta
    _, dists = synthetic_zero_noise_run(mdp, learner, lam_star, [beta] * n_steps, rng)
    rate = 1.0 - learner.eta * beta
    worst = max(d - rate**t * dists[0] for t, d in enumerate(dists))
    return CheckResult(
        "zero-noise contraction", worst <= 1e-9, f"max excess over (1-beta)^t bound = {worst:.1e}"
    )


def brute_force_omni(mdp, learner, pool, lambda_star):
    """Best candidate and all (objective, state, index) triples, computed from first principles."""
    grads = learner.model.gradient_table(learner.lam)
    S, A = mdp.n_states, mdp.n_actions
    scored = []
    for s in sorted(pool):
        rho = occupancy_measure(mdp, learner.policy, point_mass(S, s)).rho
        mu_pi = sum(rho[x, a] * grads[x, a] for x in range(S) for a in range(A))
        for i, demo in enumerate(pool[s]):
            mu_xi = sum(
                (1 - mdp.discount) * mdp.discount**tau * grads[x, a] for tau, (x, a) in enumerate(demo.steps)
            )
            g = mu_pi - mu_xi
            obj = learner.eta**2 * float(g @ g) - 2 * learner.eta * float((learner.lam - lambda_star) @ g)
            scored.append((obj, s, i))
    return min(scored, key=lambda item: item[0]), scored


def brute_force_bbox(mdp, estimate, pool, reward):
    scored = []
    for s in sorted(pool):
        for i, demo in enumerate(pool[s]):
            total = float((estimate.rho[s] * reward).sum())
            for tau, (x, a) in enumerate(demo.steps):
                total -= (1 - mdp.discount) * mdp.discount**tau * reward[x, a]
            scored.append((abs(total), s, i))
    return max(scored, key=lambda item: item[0]), scored


def _selection_mdp(rng) -> tuple[TabularMdp, FeatureMap]:
    mdp = random_mdp(rng, 6, 3, gamma=0.8, sparse=True)
    p0 = np.zeros(6)
    p0[:3] = rng.dirichlet(np.ones(3))
    mdp = mdp.with_initial(p0)
    return mdp, random_features(rng, mdp, 3)


def check_selection(rng, n_steps: int) -> CheckResult:
    """Omni and Bbox picks equal brute-force argmin/argmax objectives at every step."""
    mdp, features = _selection_mdp(rng)
    pi_e = optimal_policy(mdp, mdp.env_reward)
    # a soft expert keeps several distinct candidates per start state
    pi_e = 0.7 * pi_e + 0.3 / mdp.n_actions
    mismatches = []
    lam_star = rng.normal(size=features.dim)

    for teacher in (Omni(lam_star), Bbox(B=3, k=4)):

        def on_step(info, teacher=teacher):
            if isinstance(teacher, Omni):
                (best, s, i), scored = brute_force_omni(mdp, info.learner, info.pool, lam_star)
            else:
                (best, s, i), scored = brute_force_bbox(mdp, info.estimate, info.pool, mdp.env_reward)
            # equal objectives (within rounding) make either candidate valid
            tied = [(x, j) for obj, x, j in scored if abs(obj - best) <= 1e-9 * max(1.0, abs(best))]
            chosen = (info.selection.start_state, info.pool[info.selection.start_state].index(info.selection.demo))
            if chosen not in tied or abs(info.selection.objective - best) > 1e-9 * max(1.0, abs(best)):
                mismatches.append((teacher.name, info.t))

        learner = init_learner(mdp, LinearReward(features), rng.normal(size=features.dim))
        teaching_loop(mdp, pi_e, teacher, learner, n_steps, rng, pool_size=4, horizon=8, on_step=on_step)
    return CheckResult(
        "teacher selection",
        not mismatches,
        f"{2 * n_steps - len(mismatches)}/{2 * n_steps} steps agree",
    )


def verify(level: str = "quick", seed: int = 0, grad_fn: GradientFn = nll_loss_and_gradient) -> VerifyReport:
    """Run every property sweep; ``grad_fn`` is swappable for negative controls."""
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}")
    n_occ, n_grad, n_smooth, n_tv, n_sel, n_con = LEVELS[level]
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]
    report = VerifyReport(level)
    jobs = [
        ("occupancy normalization", lambda: check_occupancy(streams[0], n_occ)),
        ("likelihood gradient", lambda: check_gradients(streams[1], n_grad, grad_fn)),
        ("reward-gap smoothness bound", lambda: check_smoothness(streams[2], n_smooth)),
        ("occupancy TV bound", lambda: check_tv_bound(streams[3], n_tv)),
        ("zero-noise contraction", lambda: check_contraction(streams[4], n_con)),
        ("teacher selection", lambda: check_selection(streams[5], n_sel)),
    ]
    for name, job in jobs:
        start = time.perf_counter()
        try:
            result = job()
        except Exception as exc:  # noqa: BLE001 - a crash is a failed check
            result = CheckResult(name, False, f"raised {exc!r}")
        result.seconds = time.perf_counter() - start
        log.info("%s: %s", result.name, result.detail)
        report.checks.append(result)
    return report
