"""Shared oracles for the tests.

Nothing here calls into the package's solvers: occupancies come from a dense
linear solve and Monte-Carlo estimates from a separate rollout loop, so they
can check the library from an independent route.
"""

import numpy as np
import pytest

from irl_teaching.mdp import TabularMdp


def random_instance(rng, n_states, n_actions, gamma=0.8, reward=True):
    T = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    p0 = rng.dirichlet(np.ones(n_states))
    R = rng.uniform(-1, 1, size=(n_states, n_actions)) if reward else None
    return TabularMdp(T, gamma, p0, R)


def random_stochastic_policy(rng, n_states, n_actions):
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def dense_occupancy(mdp, policy, initial=None):
    """Occupancy by solving ``(I - g P_pi^T) d = (1 - g) p0`` densely."""
    T = np.asarray(mdp.transition)
    p0 = mdp.initial_dist if initial is None else np.asarray(initial, dtype=float)
    P = np.einsum("sa,sax->sx", policy, T)
    S = len(p0)
    d = np.linalg.solve(np.eye(S) - mdp.discount * P.T, (1 - mdp.discount) * p0)
    return d[:, None] * policy


def monte_carlo_occupancy(mdp, policy, n, rng, horizon=None, initial=None):
    """Per-trajectory discounted indicator tables, shape (n, S, A).

    Truncated where ``gamma**horizon < 1e-9``; the mean estimates the occupancy.
    """
    S, A = policy.shape
    g = mdp.discount
    if horizon is None:
        horizon = int(np.ceil(np.log(1e-9) / np.log(g))) if g > 0 else 1
    p0 = mdp.initial_dist if initial is None else initial
    T_cdf = np.cumsum(mdp.transition, axis=2)
    pi_cdf = np.cumsum(policy, axis=1)
    s = np.searchsorted(np.cumsum(p0), rng.random(n) * np.sum(p0), side="right")
    s = np.minimum(s, S - 1)
    out = np.zeros((n, S * A))
    idx = np.arange(n)
    for t in range(horizon):
        a = (pi_cdf[s] < rng.random(n)[:, None] * pi_cdf[s, -1:]).sum(axis=1)
        a = np.minimum(a, A - 1)
        out[idx, s * A + a] += (1 - g) * g**t
        cdf = T_cdf[s, a]
        s = np.minimum((cdf < rng.random(n)[:, None] * cdf[:, -1:]).sum(axis=1), S - 1)
    return out.reshape(n, S, A)


def chain_mdp():
    """Two states, one action: 0 -> 1 -> 1 (absorbing), gamma 0.5, start at 0."""
    T = np.zeros((2, 1, 2))
    T[0, 0, 1] = 1.0
    T[1, 0, 1] = 1.0
    return TabularMdp(T, 0.5, np.array([1.0, 0.0]), np.array([[1.0], [0.0]]))


def single_state_mdp(n_actions=2, gamma=0.0, reward=None):
    T = np.ones((1, n_actions, 1))
    R = None if reward is None else np.asarray(reward, dtype=float).reshape(1, n_actions)
    return TabularMdp(T, gamma, np.array([1.0]), R)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
