"""Sequential MCE-IRL learner, likelihood gradients and the target parameter fit."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mdp import (
    Demonstration,
    TabularMdp,
    expected_reward,
    mean_demo_occupancy,
    occupancy_measure,
    rollouts,
    soft_value_iteration,
)
from .rewards import (
    LinearReward,
    ParameterBall,
    RewardModel,
    feature_expectation_demo,
    feature_expectation_policy,
    project_to_ball,
)

log = logging.getLogger(__name__)


class LambdaStarError(RuntimeError):
    """The likelihood fit did not reach ``opt_tol``; carries the last iterate."""

    def __init__(self, message: str, lam: np.ndarray, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.lam = lam
        self.residual = residual


@dataclass(frozen=True)
class LearningSchedule:
    kind: str = "constant"
    value: float = 0.2

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_sqrt"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if not self.value > 0:
            raise ValueError("learning rate must be positive")

    def rate(self, t: int) -> float:
        if self.kind == "constant":
            return self.value
        return self.value / math.sqrt(t)


@dataclass(frozen=True, eq=False)
class LearnerState:
    lam: np.ndarray
    policy: np.ndarray
    model: RewardModel
    schedule: LearningSchedule = field(default_factory=LearningSchedule)
    ball: ParameterBall = field(default_factory=ParameterBall)
    step: int = 1

    @property
    def eta(self) -> float:
        return self.schedule.rate(self.step)


def soft_policy(mdp: TabularMdp, model: RewardModel, lam: np.ndarray) -> np.ndarray:
    return soft_value_iteration(mdp, model.reward_table(lam))[0]


def init_learner(
    mdp: TabularMdp,
    model: RewardModel,
    lam: np.ndarray | None = None,
    schedule: LearningSchedule | None = None,
    ball: ParameterBall | None = None,
) -> LearnerState:
    ball = ball or ParameterBall()
    lam = np.zeros(model.n_params) if lam is None else np.asarray(lam, dtype=float)
    lam = project_to_ball(lam, ball)
    return LearnerState(
        lam=lam,
        policy=soft_policy(mdp, model, lam),
        model=model,
        schedule=schedule or LearningSchedule(),
        ball=ball,
    )


def learner_gradient(state: LearnerState, demo: Demonstration, mdp: TabularMdp) -> np.ndarray:
    """``g_t = mu^{pi_t, s_0} - mu^{xi_t}`` evaluated at the current parameter."""
    grads = state.model.gradient_table(state.lam)
    mu_pi = feature_expectation_policy(
        mdp, state.policy, demo.start_state, state.model, state.lam, grads
    )
    mu_xi = feature_expectation_demo(demo, state.model, state.lam, mdp.discount, grads)
    return mu_pi - mu_xi


def apply_gradient(state: LearnerState, g: np.ndarray, mdp: TabularMdp) -> LearnerState:
    """Projected step ``lam <- Proj(lam - eta_t g)`` followed by a fresh soft policy."""
    lam = project_to_ball(state.lam - state.eta * np.asarray(g, dtype=float), state.ball)
    return replace(
        state, lam=lam, policy=soft_policy(mdp, state.model, lam), step=state.step + 1
    )


def learner_step(state: LearnerState, demo: Demonstration, mdp: TabularMdp) -> LearnerState:
    return apply_gradient(state, learner_gradient(state, demo, mdp), mdp)


def value_gradient(mdp: TabularMdp, policy: np.ndarray, grad_table: np.ndarray) -> np.ndarray:
    """Jacobian of the soft value, ``dV(s)/dlam``, shape (S, p).

    Solves ``G = sum_a pi(a|s) [grad R(s, a) + gamma T G]`` directly.
    """
    r_bar = np.einsum("sa,sap->sp", policy, grad_table)
    if mdp.discount == 0.0:
        return r_bar
    system = sp.identity(mdp.n_states, format="csc") - mdp.discount * mdp.policy_transition(policy)
    G = spla.splu(system.tocsc()).solve(r_bar)
    return G.reshape(mdp.n_states, -1)


def nll_loss_and_gradient(
    model: RewardModel, mdp: TabularMdp, demo: Demonstration, lam: np.ndarray, tol: float = 1e-10
) -> tuple[float, np.ndarray]:
    """Discounted negative log-likelihood of ``demo`` and its exact gradient.

    ``loss = -sum_t gamma^t log pi_lam(a_t | s_t)``. The gradient is obtained
    by differentiating ``log pi = Q - V`` through the soft Bellman equations,
    so it matches finite differences for any dynamics and truncation.
    """
    lam = np.asarray(lam, dtype=float)
    policy, _, _ = soft_value_iteration(mdp, model.reward_table(lam), tol=tol)
    s, a = demo.states, demo.actions
    probs = policy[s, a]
    if (probs <= 0).any():
        raise FloatingPointError("demonstrated action has zero probability under the soft policy")
    weights = mdp.discount ** np.arange(len(demo))
    loss = float(-(weights * np.log(probs)).sum())

    grads = model.gradient_table(lam)
    G = value_gradient(mdp, policy, grads)
    grad_Q = grads[s, a] + mdp.discount * np.einsum("kx,xp->kp", mdp.transition[s, a], G)
    grad = (weights[:, None] * (G[s] - grad_Q)).sum(axis=0)
    return loss, grad


def dual_loss_and_gradient(
    model: RewardModel, mdp: TabularMdp, demo: Demonstration, lam: np.ndarray
) -> tuple[float, np.ndarray]:
    """Feature-matching surrogate of the likelihood for one demonstration.

    ``loss = (1 - gamma) V_lam(s_0) - sum_t (1 - gamma) gamma^t R_lam(s_t, a_t)``
    with gradient exactly ``mu^{pi_lam, s_0} - mu^xi``. It equals
    ``(1 - gamma)`` times the negative log-likelihood in expectation over the
    dynamics, and exactly so when the demonstrated transitions are
    deterministic and the trajectory ends in a zero-reward absorbing state.
    """
    lam = np.asarray(lam, dtype=float)
    policy, V, _ = soft_value_iteration(mdp, model.reward_table(lam))
    rho = mean_demo_occupancy([demo], mdp.discount, mdp.n_states, mdp.n_actions).rho
    loss = (1.0 - mdp.discount) * V[demo.start_state] - float((rho * model.reward_table(lam)).sum())
    grads = model.gradient_table(lam)
    mu_pi = feature_expectation_policy(mdp, policy, demo.start_state, model, lam, grads)
    mu_xi = np.einsum("sa,sap->p", rho, grads)
    return float(loss), mu_pi - mu_xi


@dataclass(frozen=True)
class LambdaStarConfig:
    eps_tilde: float = 0.5
    delta: float = 0.1
    d: int = 8
    gamma: float = 0.9
    opt_tol: float = 1e-6
    opt_max_iters: int = 20_000
    opt_step_size: float = 1.0

    def __post_init__(self):
        if not (self.eps_tilde > 0 and 0 < self.delta < 1 and self.d >= 1):
            raise ValueError("need eps_tilde > 0, 0 < delta < 1, d >= 1")
        if not (0 < self.gamma < 1):
            raise ValueError("gamma must lie in (0, 1) for the sample budget")
        if not (self.opt_tol > 0 and self.opt_max_iters >= 1 and self.opt_step_size > 0):
            raise ValueError("optimizer settings must be positive")


def sample_demo_budget(cfg: LambdaStarConfig) -> tuple[int, int]:
    """Demonstration count and truncation length for the target fit.

    ``demo_count = ceil(2d / eps^2 * log(2d / delta))`` and
    ``H = ceil(log_gamma(eps / (2 sqrt d)))``.
    """
    d, eps = cfg.d, cfg.eps_tilde
    ratio = eps / (2.0 * math.sqrt(d))
    if ratio >= 1.0:
        raise ValueError("eps_tilde must be smaller than 2 sqrt(d)")
    demo_count = math.ceil(2.0 * d / eps**2 * math.log(2.0 * d / cfg.delta))
    horizon = math.ceil(math.log(ratio) / math.log(cfg.gamma))
    return max(demo_count, 1), max(horizon, 1)


@dataclass
class FitResult:
    lam: np.ndarray
    residual: float
    iterations: int
    converged: bool
    losses: list[float]
    demo_count: int = 0
    horizon: int = 0


def _batch_objective(model, mdp, start_dist, rho_demo, lam, objective):
    """Averaged batch loss, its gradient and the feature-matching residual."""
    lam = np.asarray(lam, dtype=float)
    R = model.reward_table(lam)
    policy, V, Q = soft_value_iteration(mdp, R)
    grads = model.gradient_table(lam)
    occ = occupancy_measure(mdp, policy, start_dist)
    mu_pi = np.einsum("sa,sap->p", occ.rho, grads)
    mu_demo = np.einsum("sa,sap->p", rho_demo, grads)
    match = mu_pi - mu_demo
    if objective == "dual":
        loss = (1.0 - mdp.discount) * float(start_dist @ V) - float((rho_demo * R).sum())
        return loss, match, float(np.linalg.norm(match))
    # aggregated discounted NLL, scaled by (1 - gamma)
    loss = float((rho_demo * (V[:, None] - Q)).sum())
    G = value_gradient(mdp, policy, grads)
    grad_Q = grads + mdp.discount * mdp.expected_next(G)
    grad = np.einsum("sa,sap->p", rho_demo, G[:, None, :] - grad_Q)
    return loss, grad, float(np.linalg.norm(match))


def fit_likelihood(
    mdp: TabularMdp,
    demos: Sequence[Demonstration],
    model: RewardModel,
    lam0: np.ndarray | None = None,
    tol: float = 1e-6,
    max_iters: int = 20_000,
    step_size: float = 1.0,
    objective: str = "dual",
    max_step: float = 1024.0,
) -> FitResult:
    """Batch maximum-likelihood fit of ``lam`` by gradient descent on the loss.

    The step is halved whenever the loss would increase and doubled after
    every accepted step, up to ``max_step * step_size``. Stops once the
    gradient norm is below ``tol``. ``objective="dual"`` uses the
    feature-matching form whose gradient is ``mu^{pi, P0_hat} - mu^Xi``;
    ``"nll"`` uses the exact discounted negative log-likelihood.
    """
    if objective not in ("dual", "nll"):
        raise ValueError(f"unknown objective {objective!r}")
    if not demos:
        raise ValueError("need at least one demonstration")
    S, A = mdp.n_states, mdp.n_actions
    rho_demo = mean_demo_occupancy(demos, mdp.discount, S, A).rho
    start_dist = np.bincount([d.start_state for d in demos], minlength=S) / len(demos)

    lam = np.zeros(model.n_params) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    loss, grad, residual = _batch_objective(model, mdp, start_dist, rho_demo, lam, objective)
    losses = [loss]
    step = step_size
    for it in range(1, max_iters + 1):
        if np.linalg.norm(grad) < tol:
            return FitResult(lam, residual, it - 1, True, losses)
        while True:
            cand = lam - step * grad
            c_loss, c_grad, c_res = _batch_objective(model, mdp, start_dist, rho_demo, cand, objective)
            if c_loss <= loss or step < 1e-12:
                break
            step *= 0.5
        lam, loss, grad, residual = cand, c_loss, c_grad, c_res
        losses.append(loss)
        # let the step recover after backtracking; flat directions need long steps
        step = min(2.0 * step, max_step * step_size)
    converged = bool(np.linalg.norm(grad) < tol)
    return FitResult(lam, residual, max_iters, converged, losses)


def sample_demos(
    mdp: TabularMdp,
    policy: np.ndarray,
    count: int,
    horizon: int,
    rng: np.random.Generator,
    start_states: Sequence[int] | None = None,
) -> list[Demonstration]:
    """Roll out ``policy`` from ``s ~ P0`` (optionally restricted to ``start_states``)."""
    p0 = mdp.initial_dist.copy()
    if start_states is not None:
        mask = np.zeros_like(p0)
        mask[list(start_states)] = 1.0
        p0 = p0 * mask
        if p0.sum() <= 0:
            raise ValueError("restricted start states carry no initial probability")
    p0 = p0 / p0.sum()
    starts = rng.choice(mdp.n_states, size=count, p=p0)
    return rollouts(mdp, policy, starts, horizon, rng)


def compute_lambda_star(
    mdp: TabularMdp,
    teacher_policy: np.ndarray,
    model: RewardModel,
    cfg: LambdaStarConfig,
    rng: np.random.Generator,
    *,
    demo_count: int | None = None,
    horizon: int | None = None,
    objective: str = "dual",
    strict: bool = True,
) -> tuple[np.ndarray, FitResult]:
    """Target parameter fitted to sampled teacher demonstrations.

    Demonstration count and horizon default to :func:`sample_demo_budget`.
    Raises :class:`LambdaStarError` when ``strict`` and the gradient norm has
    not reached ``cfg.opt_tol`` within ``cfg.opt_max_iters`` iterations.
    """
    if not isinstance(model, LinearReward):
        raise ValueError("the target parameter guarantee needs a linear reward model")
    m, H = sample_demo_budget(cfg)
    m = demo_count or m
    H = horizon or H
    demos = sample_demos(mdp, teacher_policy, m, H, rng)
    fit = fit_likelihood(
        mdp, demos, model, None, cfg.opt_tol, cfg.opt_max_iters, cfg.opt_step_size, objective
    )
    fit.demo_count, fit.horizon = m, H
    log.info("lambda* fit: %d demos, H=%d, residual %.2e after %d iterations",
             m, H, fit.residual, fit.iterations)
    if strict and not fit.converged:
        raise LambdaStarError("lambda* fit did not converge", fit.lam, fit.residual)
    return fit.lam, fit


def evaluate_learnability(
    mdp: TabularMdp,
    model: RewardModel,
    lam: np.ndarray,
    teacher_policy: np.ndarray,
    env_reward: np.ndarray | None = None,
) -> float:
    """``|nu^{pi_lam} - nu^{pi_E}|`` under the environment reward."""
    R = mdp.env_reward if env_reward is None else env_reward
    learner = soft_policy(mdp, model, lam)
    nu_l = expected_reward(occupancy_measure(mdp, learner), R)
    nu_e = expected_reward(occupancy_measure(mdp, teacher_policy), R)
    return abs(nu_l - nu_e)
