"""Finite tabular MDPs: soft/hard value iteration, occupancy measures, rollouts.

Array conventions used throughout the package:

* transition ``T[s, a, s']`` with shape ``(S, A, S)``
* policy ``pi[s, a]`` with shape ``(S, A)``; rows are distributions
* reward tables ``R[s, a]`` with shape ``(S, A)``

Occupancy measures are normalised by ``(1 - gamma)`` so a policy-derived
measure sums to one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

PROB_ATOL = 1e-12
POLICY_ATOL = 1e-9


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray
    discount: float
    initial_dist: np.ndarray
    env_reward: np.ndarray | None = None

    def __post_init__(self):
        T = np.asarray(self.transition, dtype=float)
        p0 = np.asarray(self.initial_dist, dtype=float)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "initial_dist", p0)
        if T.ndim != 3 or T.shape[0] != T.shape[2] or T.shape[0] < 1 or T.shape[1] < 1:
            raise ValueError(f"transition must have shape (S, A, S), got {T.shape}")
        if not np.all(np.isfinite(T)) or (T < 0).any():
            raise ValueError("transition has negative or non-finite entries")
        if np.abs(T.sum(axis=2) - 1.0).max() > PROB_ATOL:
            raise ValueError("transition rows must sum to 1")
        if p0.shape != (T.shape[0],):
            raise ValueError(f"initial_dist must have shape ({T.shape[0]},)")
        if (p0 < 0).any() or abs(p0.sum() - 1.0) > PROB_ATOL:
            raise ValueError("initial_dist must be a probability vector")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if self.env_reward is not None:
            R = np.asarray(self.env_reward, dtype=float)
            if R.shape != T.shape[:2] or not np.all(np.isfinite(R)):
                raise ValueError("env_reward must be a finite (S, A) table")
            object.__setattr__(self, "env_reward", R)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def start_states(self) -> np.ndarray:
        """States with positive initial probability, in index order."""
        return np.flatnonzero(self.initial_dist > 0)

    @cached_property
    def _flat_transition(self) -> sp.csr_matrix:
        # (S*A, S), row s*A + a
        flat = sp.csr_matrix(self.transition.reshape(-1, self.n_states))
        flat.sort_indices()
        return flat

    def sample_next(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Successor states for flat ``s * A + a`` rows by inverse CDF on uniforms ``u``."""
        T = self._flat_transition
        cum = self._transition_cumsum
        lo, hi = T.indptr[rows], T.indptr[rows + 1]
        before = np.where(lo > 0, cum[np.maximum(lo - 1, 0)], 0.0)
        target = before + u * (cum[hi - 1] - before)
        pos = np.clip(np.searchsorted(cum, target, side="right"), lo, hi - 1)
        return T.indices[pos]

    @cached_property
    def _transition_cumsum(self) -> np.ndarray:
        return np.cumsum(self._flat_transition.data)

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """``sum_s' T[s, a, s'] * values[s']`` for values of shape (S,) or (S, k)."""
        out = self._flat_transition @ values
        return out.reshape((self.n_states, self.n_actions) + values.shape[1:])

    def policy_transition(self, policy: np.ndarray) -> sp.csr_matrix:
        """State-to-state kernel ``P_pi[s, s']`` as a sparse matrix."""
        S, A = self.n_states, self.n_actions
        weights = sp.csr_matrix(
            (policy.ravel(), (np.repeat(np.arange(S), A), np.arange(S * A))), shape=(S, S * A)
        )
        return (weights @ self._flat_transition).tocsr()

    def with_initial(self, dist: np.ndarray) -> TabularMdp:
        return replace(self, initial_dist=np.asarray(dist, dtype=float))

    def point_initial(self, state: int) -> TabularMdp:
        return self.with_initial(point_mass(self.n_states, state))


def point_mass(n: int, index: int) -> np.ndarray:
    out = np.zeros(n)
    out[index] = 1.0
    return out


def check_policy(policy: np.ndarray, mdp: TabularMdp | None = None) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.ndim != 2:
        raise ValueError("policy must be an (S, A) table")
    if mdp is not None and policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.shape} does not match the MDP")
    if (policy < -POLICY_ATOL).any() or (policy > 1 + POLICY_ATOL).any():
        raise ValueError("policy entries must lie in [0, 1]")
    if np.abs(policy.sum(axis=1) - 1.0).max() > POLICY_ATOL:
        raise ValueError("policy rows must sum to 1")
    return policy


@dataclass(frozen=True)
class Demonstration:
    """A (possibly truncated) trajectory of ``(state, action)`` pairs."""

    steps: tuple[tuple[int, int], ...]
    truncation_len: int

    def __post_init__(self):
        steps = tuple((int(s), int(a)) for s, a in self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise ValueError("demonstration must be non-empty")
        if self.truncation_len < 1 or len(steps) > self.truncation_len:
            raise ValueError("demonstration longer than its truncation length")

    @property
    def start_state(self) -> int:
        return self.steps[0][0]

    @property
    def states(self) -> np.ndarray:
        return np.fromiter((s for s, _ in self.steps), dtype=int, count=len(self.steps))

    @property
    def actions(self) -> np.ndarray:
        return np.fromiter((a for _, a in self.steps), dtype=int, count=len(self.steps))

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    rho: np.ndarray
    discount: float

    @property
    def total(self) -> float:
        return float(self.rho.sum())


def _logsumexp_rows(Q: np.ndarray) -> np.ndarray:
    # scipy.special.logsumexp is ~4x slower on small tables; this is the hot loop
    top = Q.max(axis=1)
    return top + np.log(np.exp(Q - top[:, None]).sum(axis=1))


def soft_value_iteration(
    mdp: TabularMdp,
    reward: np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 100_000,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Soft Bellman policy for ``reward``.

    Iterates ``Q = R + gamma * T V`` and ``V = logsumexp_a Q`` from ``V = 0``
    until the sup-norm change of ``V`` drops below ``tol``.

    Returns:
        ``(policy, V, Q)`` where ``policy[s, a] = exp(Q[s, a] - V[s])``.
    """
    reward = np.asarray(reward, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if reward.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"reward shape {reward.shape} does not match the MDP")
    if not np.all(np.isfinite(reward)):
        raise ValueError("reward contains NaN or inf")

    gamma = mdp.discount
    V = np.zeros(mdp.n_states)
    residual = math.inf
    for _ in range(max_iters):
        V_new = _logsumexp_rows(reward + gamma * mdp.expected_next(V))
        residual = float(np.abs(V_new - V).max())
        V = V_new
        if residual < tol:
            break
    else:
        raise ConvergenceError("soft value iteration did not converge", residual)

    Q = reward + gamma * mdp.expected_next(V)
    V = _logsumexp_rows(Q)
    policy = np.exp(Q - V[:, None])
    return policy, V, Q


def optimal_policy(
    mdp: TabularMdp,
    reward: np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 100_000,
    tie_tol: float = 1e-9,
) -> np.ndarray:
    """Deterministic greedy policy from hard-max value iteration.

    Among actions whose Q-value is within ``tie_tol`` of the best, the lowest
    action index wins.
    """
    reward = np.asarray(reward, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    gamma = mdp.discount
    V = np.zeros(mdp.n_states)
    residual = math.inf
    for _ in range(max_iters):
        V_new = (reward + gamma * mdp.expected_next(V)).max(axis=1)
        residual = float(np.abs(V_new - V).max())
        V = V_new
        if residual < tol:
            break
    else:
        raise ConvergenceError("value iteration did not converge", residual)

    Q = reward + gamma * mdp.expected_next(V)
    best = Q >= Q.max(axis=1, keepdims=True) - tie_tol
    actions = best.argmax(axis=1)
    policy = np.zeros_like(Q)
    policy[np.arange(mdp.n_states), actions] = 1.0
    return policy


def _iteration_cap(gamma: float, tol: float) -> int:
    if gamma == 0.0:
        return 2
    return max(2, 10 * math.ceil(math.log(tol) / math.log(gamma)))


def state_visitation(
    mdp: TabularMdp, policy: np.ndarray, initial: np.ndarray, tol: float = 1e-10
) -> np.ndarray:
    """Normalised discounted state visitation ``d = (1-g) sum_t g^t P(S_t = s)``.

    ``initial`` may be a single distribution of shape (S,) or a batch (S, k),
    one column per initial distribution. Solved by fixed-point iteration of
    ``d = (1-g) P0 + g P_pi^T d``.
    """
    gamma = mdp.discount
    initial = np.asarray(initial, dtype=float)
    base = (1.0 - gamma) * initial
    if gamma == 0.0:
        return base
    P_T = mdp.policy_transition(policy).T.tocsr()
    d = base.copy()
    increment = base
    # stop once the remaining geometric tail is below tol
    threshold = tol * (1.0 - gamma)
    residual = math.inf
    for _ in range(_iteration_cap(gamma, tol)):
        increment = gamma * (P_T @ increment)
        d += increment
        residual = float(np.abs(increment).sum(axis=0).max())
        if residual <= threshold:
            return d
    raise ConvergenceError("occupancy fixed point did not converge", residual)


def occupancy_measure(
    mdp: TabularMdp,
    policy: np.ndarray,
    initial_dist: np.ndarray | None = None,
    tol: float = 1e-10,
) -> OccupancyMeasure:
    """``rho(s, a) = (1-g) pi(a|s) sum_t g^t P(S_t = s)``; sums to one."""
    if initial_dist is None:
        initial_dist = mdp.initial_dist
    initial_dist = np.asarray(initial_dist, dtype=float)
    if initial_dist.shape != (mdp.n_states,) or abs(initial_dist.sum() - 1.0) > 1e-9:
        raise ValueError("initial_dist must be a probability vector over states")
    d = state_visitation(mdp, policy, initial_dist, tol)
    return OccupancyMeasure(d[:, None] * policy, mdp.discount)


def occupancy_from_states(
    mdp: TabularMdp, policy: np.ndarray, states: Sequence[int], tol: float = 1e-10
) -> np.ndarray:
    """Occupancy tables for point initial distributions, shape (k, S, A)."""
    states = np.asarray(states, dtype=int)
    initial = np.zeros((mdp.n_states, len(states)))
    initial[states, np.arange(len(states))] = 1.0
    d = state_visitation(mdp, policy, initial, tol)
    return d.T[:, :, None] * policy[None, :, :]


def demo_occupancy(
    demo: Demonstration, discount: float, n_states: int, n_actions: int
) -> OccupancyMeasure:
    """``rho_xi(s, a) = (1-g) sum_t g^t 1{s_t = s, a_t = a}`` over the recorded steps."""
    rho = np.zeros((n_states, n_actions))
    weights = (1.0 - discount) * discount ** np.arange(len(demo))
    np.add.at(rho, (demo.states, demo.actions), weights)
    return OccupancyMeasure(rho, discount)


def mean_demo_occupancy(
    demos: Iterable[Demonstration], discount: float, n_states: int, n_actions: int
) -> OccupancyMeasure:
    tables = [demo_occupancy(d, discount, n_states, n_actions).rho for d in demos]
    if not tables:
        raise ValueError("need at least one demonstration")
    return OccupancyMeasure(np.mean(tables, axis=0), discount)


def expected_reward(occ: OccupancyMeasure, reward: np.ndarray) -> float:
    """Total expected reward ``sum rho * R / (1 - gamma)``."""
    reward = np.asarray(reward, dtype=float)
    if reward.shape != occ.rho.shape:
        raise ValueError("reward and occupancy shapes differ")
    return float((occ.rho * reward).sum() / (1.0 - occ.discount))


def tv_distance(p, q) -> float:
    """Sum of absolute differences (no 1/2 factor); twice the usual TV distance."""
    p = p.rho if isinstance(p, OccupancyMeasure) else np.asarray(p, dtype=float)
    q = q.rho if isinstance(q, OccupancyMeasure) else np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return float(np.abs(p - q).sum())


def rollouts(
    mdp: TabularMdp,
    policy: np.ndarray,
    starts: Sequence[int],
    horizon: int,
    rng: np.random.Generator,
) -> list[Demonstration]:
    """Sample ``horizon`` steps of ``policy`` from each state in ``starts``.

    Uniforms are drawn as one ``(horizon, len(starts), 2)`` block (action,
    successor), so the result is a pure function of the generator state.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    starts = np.asarray(starts, dtype=int).reshape(-1)
    A = mdp.n_actions
    pi_cdf = np.cumsum(policy, axis=1)
    u = rng.random((horizon, len(starts), 2))
    states = np.empty((horizon, len(starts)), dtype=int)
    actions = np.empty_like(states)
    s = starts
    for t in range(horizon):
        cdf = pi_cdf[s]
        a = (cdf <= (u[t, :, 0] * cdf[:, -1])[:, None]).sum(axis=1)
        a = np.minimum(a, A - 1)
        states[t], actions[t] = s, a
        s = mdp.sample_next(s * A + a, u[t, :, 1])
    return [
        Demonstration(tuple(zip(states[:, i].tolist(), actions[:, i].tolist())), horizon)
        for i in range(len(starts))
    ]


def rollout(
    mdp: TabularMdp,
    policy: np.ndarray,
    start: int,
    horizon: int,
    rng: np.random.Generator,
) -> Demonstration:
    """Single trajectory; same draws as :func:`rollouts` with one start."""
    return rollouts(mdp, policy, [start], horizon, rng)[0]


# -- serialization ---------------------------------------------------------

def mdp_to_dict(mdp: TabularMdp) -> dict:
    doc = {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.discount,
        "p0": mdp.initial_dist.tolist(),
        "transitions": mdp.transition.tolist(),
    }
    if mdp.env_reward is not None:
        doc["env_reward"] = mdp.env_reward.tolist()
    return doc


def mdp_from_dict(doc: dict) -> TabularMdp:
    T = np.asarray(doc["transitions"], dtype=float)
    if T.shape != (doc["n_states"], doc["n_actions"], doc["n_states"]):
        raise ValueError("transitions do not match n_states / n_actions")
    reward = doc.get("env_reward")
    return TabularMdp(
        transition=T,
        discount=float(doc["gamma"]),
        initial_dist=np.asarray(doc["p0"], dtype=float),
        env_reward=None if reward is None else np.asarray(reward, dtype=float),
    )


def save_mdp(mdp: TabularMdp, path: str | Path, extra: dict | None = None) -> None:
    doc = mdp_to_dict(mdp)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_mdp(path: str | Path) -> tuple[TabularMdp, dict]:
    """Load an MDP document; returns the MDP and the raw document."""
    doc = json.loads(Path(path).read_text())
    return mdp_from_dict(doc), doc
