"""Parametric learner rewards, feature expectations and the parameter ball."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import (
    Demonstration,
    TabularMdp,
    demo_occupancy,
    occupancy_from_states,
    occupancy_measure,
    point_mass,
)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Feature table ``phi[s, a]`` of shape (S, A, d')."""

    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        if table.ndim != 3:
            raise ValueError("feature table must have shape (S, A, d')")
        if not np.all(np.isfinite(table)):
            raise ValueError("feature table has non-finite entries")
        object.__setattr__(self, "table", table)

    @classmethod
    def from_state_features(cls, phi: np.ndarray, n_actions: int) -> FeatureMap:
        """Replicate per-state features across actions."""
        phi = np.asarray(phi, dtype=float)
        return cls(np.repeat(phi[:, None, :], n_actions, axis=1))

    @property
    def dim(self) -> int:
        return self.table.shape[2]

    def scaled(self, c: float) -> FeatureMap:
        return FeatureMap(c * self.table)


class LinearReward:
    """``R(s, a) = <lam, phi(s, a)>``."""

    kind = "linear"

    def __init__(self, features: FeatureMap):
        self.features = features

    @property
    def n_params(self) -> int:
        return self.features.dim

    def reward_table(self, lam: np.ndarray) -> np.ndarray:
        return self.features.table @ np.asarray(lam, dtype=float)

    def gradient_table(self, lam: np.ndarray) -> np.ndarray:
        # independent of lam
        return self.features.table


class QuadraticReward:
    """``R(s, a) = <lam1, phi> + <lam2, phi>**2`` with ``lam = concat(lam1, lam2)``."""

    kind = "quadratic"

    def __init__(self, features: FeatureMap):
        self.features = features

    @property
    def n_params(self) -> int:
        return 2 * self.features.dim

    def _split(self, lam):
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {lam.shape}")
        d = self.features.dim
        return lam[:d], lam[d:]

    def reward_table(self, lam: np.ndarray) -> np.ndarray:
        lam1, lam2 = self._split(lam)
        phi = self.features.table
        return phi @ lam1 + (phi @ lam2) ** 2

    def gradient_table(self, lam: np.ndarray) -> np.ndarray:
        _, lam2 = self._split(lam)
        phi = self.features.table
        inner = phi @ lam2
        return np.concatenate([phi, 2.0 * inner[..., None] * phi], axis=-1)


RewardModel = LinearReward | QuadraticReward


def make_reward_model(kind: str, features: FeatureMap) -> RewardModel:
    if kind == "linear":
        return LinearReward(features)
    if kind == "quadratic":
        return QuadraticReward(features)
    raise ValueError(f"unknown reward model {kind!r}")


def reward_value(model: RewardModel, lam: np.ndarray, s: int, a: int) -> float:
    return float(model.reward_table(lam)[s, a])


def reward_gradient(model: RewardModel, lam: np.ndarray, s: int, a: int) -> np.ndarray:
    return model.gradient_table(lam)[s, a].copy()


@dataclass(frozen=True)
class ParameterBall:
    radius: float = 100.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")


def project_to_ball(lam: np.ndarray, ball: ParameterBall) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    norm = np.linalg.norm(lam)
    if norm <= ball.radius:
        return lam.copy()
    return lam * (ball.radius / norm)


def feature_expectation_policy(
    mdp: TabularMdp,
    policy: np.ndarray,
    start_state: int,
    model: RewardModel,
    lam: np.ndarray,
    grad_table: np.ndarray | None = None,
) -> np.ndarray:
    """``sum_{s,a} rho^{pi, s0}(s, a) grad R(s, a)`` with ``s0`` the only initial state."""
    if grad_table is None:
        grad_table = model.gradient_table(lam)
    occ = occupancy_measure(mdp, policy, point_mass(mdp.n_states, start_state))
    return np.einsum("sa,sap->p", occ.rho, grad_table)


def feature_expectations_from_states(
    mdp: TabularMdp, policy: np.ndarray, states, grad_table: np.ndarray
) -> np.ndarray:
    """Batched :func:`feature_expectation_policy`; shape (len(states), n_params)."""
    rho = occupancy_from_states(mdp, policy, states)
    return np.einsum("ksa,sap->kp", rho, grad_table)


def feature_expectation_demo(
    demo: Demonstration,
    model: RewardModel,
    lam: np.ndarray,
    discount: float,
    grad_table: np.ndarray | None = None,
) -> np.ndarray:
    """``sum_{s,a} rho^xi(s, a) grad R(s, a)``."""
    if grad_table is None:
        grad_table = model.gradient_table(lam)
    S, A = grad_table.shape[:2]
    rho = demo_occupancy(demo, discount, S, A).rho
    return np.einsum("sa,sap->p", rho, grad_table)
