"""Convergence bounds, richness decomposition and per-step teaching metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .learner import LearnerState, apply_gradient, soft_policy
from .mdp import TabularMdp, expected_reward, occupancy_from_states, occupancy_measure, tv_distance
from .rewards import feature_expectation_policy


def smoothness_bound(m: float, gamma: float, r_max: float, dist: float) -> float:
    """Upper bound on ``|nu(pi_lam) - nu(pi_lam')|`` for an m-smooth learner reward."""
    if min(m, r_max, dist, gamma) < 0 or gamma >= 1:
        raise ValueError("inputs must be non-negative and gamma < 1")
    return r_max * math.sqrt(8.0 * m / (1.0 - gamma) ** 5 * dist)


def reward_smoothness(reward_a: np.ndarray, reward_b: np.ndarray) -> float:
    """``max_{s,a} |R_lam - R_lam'|``."""
    return float(np.abs(np.asarray(reward_a) - np.asarray(reward_b)).max())


def target_eps_prime(eps: float, gamma: float, m: float, r_max: float) -> float:
    """Parameter accuracy that makes the reward-gap guarantee reach ``eps``."""
    return (1.0 - gamma) ** 5 * eps**2 / (32.0 * m * r_max**2)


def richness_limit(eps_prime: float, beta: float, eta_max: float, radius: float) -> float:
    """Largest admissible deviation norm for the parameter-convergence guarantee."""
    return eps_prime**2 * beta**2 / (4.0 * eta_max * (4.0 * (1.0 - beta) * radius + 1.0))


@dataclass(eq=False)
class RichnessDecomposition:
    beta_t: float
    delta_t: np.ndarray
    delta_norm: float
    clamped: bool = False
    degenerate: bool = False


def richness_decompose(mu_pi, mu_xi, lam, lam_star, eta: float) -> RichnessDecomposition:
    """Split ``mu_xi = mu_pi - beta_t (lam - lam*) + delta_t`` with ``beta_t`` in ``[0, 1/eta]``.

    ``beta_t`` is the clamped least-squares coefficient along ``lam - lam*``;
    ``delta_t`` is the remainder.
    """
    mu_pi, mu_xi = np.asarray(mu_pi, float), np.asarray(mu_xi, float)
    diff = np.asarray(lam, float) - np.asarray(lam_star, float)
    sq = float(diff @ diff)
    if sq == 0.0:
        delta = mu_xi - mu_pi
        return RichnessDecomposition(0.0, delta, float(np.linalg.norm(delta)), degenerate=True)
    raw = float((mu_pi - mu_xi) @ diff) / sq
    beta = min(max(raw, 0.0), 1.0 / eta)
    delta = mu_xi - mu_pi + beta * diff
    return RichnessDecomposition(beta, delta, float(np.linalg.norm(delta)), clamped=beta != raw)


def policy_tv_bound_check(mdp: TabularMdp, pi: np.ndarray, pi_prime: np.ndarray):
    """Occupancy TV distance against ``2/(1-gamma) * max_s TV(pi(.|s), pi'(.|s))``.

    Returns ``(lhs, rhs, holds)``.
    """
    lhs = tv_distance(occupancy_measure(mdp, pi), occupancy_measure(mdp, pi_prime))
    rhs = 2.0 / (1.0 - mdp.discount) * float(np.abs(pi - pi_prime).sum(axis=1).max())
    return lhs, rhs, lhs <= rhs + 1e-9


@dataclass
class MetricsRow:
    t: int
    lambda_dist: float | None
    nu_gap_all: float
    nu_gap_task: dict[int, float] = field(default_factory=dict)
    tv_dist: float = 0.0
    sel_state: int = -1
    sel_task: int = -1
    objective: float = float("nan")
    probed: bool = False


class MetricsTracker:
    """Exact per-step metrics; caches the teacher's per-start occupancies."""

    def __init__(
        self,
        mdp: TabularMdp,
        teacher_policy: np.ndarray,
        env_reward: np.ndarray | None = None,
        state_task: np.ndarray | None = None,
        lambda_star: np.ndarray | None = None,
    ):
        self.mdp = mdp
        self.reward = mdp.env_reward if env_reward is None else env_reward
        self.lambda_star = lambda_star
        self.starts = mdp.start_states
        self.weights = mdp.initial_dist[self.starts]
        self.state_task = state_task
        self.tasks = [] if state_task is None else sorted(set(state_task[self.starts].tolist()))
        self._nu_e, self._rho_e = self._per_start(teacher_policy)

    def _per_start(self, policy):
        rho = occupancy_from_states(self.mdp, policy, self.starts)
        nu = (rho * self.reward).sum(axis=(1, 2)) / (1.0 - self.mdp.discount)
        return nu, np.einsum("k,ksa->sa", self.weights, rho)

    def nu_gaps(self, policy: np.ndarray) -> tuple[float, dict[int, float], float]:
        nu_l, rho_l = self._per_start(policy)
        overall = abs(float(self.weights @ (self._nu_e - nu_l)))
        per_task = {}
        for task in self.tasks:
            mask = self.state_task[self.starts] == task
            w = self.weights[mask] / self.weights[mask].sum()
            per_task[task] = abs(float(w @ (self._nu_e[mask] - nu_l[mask])))
        return overall, per_task, tv_distance(self._rho_e, rho_l)

    def row(self, t: int, learner: LearnerState, sel_state=-1, objective=float("nan"), probed=False) -> MetricsRow:
        overall, per_task, tv = self.nu_gaps(learner.policy)
        dist = None
        if self.lambda_star is not None:
            dist = float(np.linalg.norm(learner.lam - self.lambda_star))
        sel_task = -1
        if self.state_task is not None and sel_state >= 0:
            sel_task = int(self.state_task[sel_state])
        return MetricsRow(t, dist, overall, per_task, tv, int(sel_state), sel_task, float(objective), bool(probed))


def metrics_row(
    mdp: TabularMdp,
    learner: LearnerState,
    teacher_policy: np.ndarray,
    env_reward: np.ndarray | None = None,
    lambda_star: np.ndarray | None = None,
    t: int = 0,
    sel_state: int = -1,
    objective: float = float("nan"),
    probed: bool = False,
    state_task: np.ndarray | None = None,
) -> MetricsRow:
    tracker = MetricsTracker(mdp, teacher_policy, env_reward, state_task, lambda_star)
    return tracker.row(t, learner, sel_state, objective, probed)


def smoothness_trial(mdp, model, lam, lam_prime, r_max=None):
    """One empirical check of the smoothness bound for a linear learner.

    Returns ``(gap, bound)``.
    """
    R = mdp.env_reward
    r_max = float(np.abs(R).max()) if r_max is None else r_max
    nu = [
        expected_reward(occupancy_measure(mdp, soft_policy(mdp, model, x)), R)
        for x in (lam, lam_prime)
    ]
    m = math.sqrt(model.n_params)
    bound = smoothness_bound(m, mdp.discount, r_max, float(np.linalg.norm(lam - lam_prime)))
    return abs(nu[0] - nu[1]), bound


def synthetic_zero_noise_run(mdp, learner: LearnerState, lam_star, betas, rng=None):
    """Teach with exact ``mu_xi = mu_pi - beta_t (lam_t - lam*)`` and record distances.

    ``betas`` gives ``beta_t`` per step (each in ``[0, 1/eta_t]``). Start states
    are drawn from P0 when ``rng`` is given, otherwise cycled.
    """
    dists = [float(np.linalg.norm(learner.lam - lam_star))]
    starts = mdp.start_states
    for i, beta in enumerate(betas):
        s = int(rng.choice(starts)) if rng is not None else int(starts[i % len(starts)])
        mu_pi = feature_expectation_policy(mdp, learner.policy, s, learner.model, learner.lam)
        mu_xi = mu_pi - beta * (learner.lam - lam_star)
        learner = apply_gradient(learner, mu_pi - mu_xi, mdp)
        dists.append(float(np.linalg.norm(learner.lam - lam_star)))
    return learner, dists
