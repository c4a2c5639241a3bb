import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import dense_occupancy, random_instance, random_stochastic_policy
from irl_teaching.analysis import (
    MetricsTracker,
    smoothness_trial,
    metrics_row,
    policy_tv_bound_check,
    reward_smoothness,
    richness_decompose,
    smoothness_bound,
    synthetic_zero_noise_run,
)
from irl_teaching.car_env import CarMdpConfig, generate_environment, teacher_policy
from irl_teaching.learner import LearningSchedule, init_learner, soft_policy
from irl_teaching.rewards import FeatureMap, LinearReward
from irl_teaching.teachers import Omni, teaching_loop

vec = arrays(float, 3, elements=st.floats(-10, 10, allow_nan=False))


def test_smoothness_bound_zero_distance():
    assert smoothness_bound(3.0, 0.9, 5.0, 0.0) == 0.0


def test_smoothness_bound_reference_value():
    getcontext().prec = 40
    m = Decimal(8).sqrt()
    expected = Decimal(10) * (Decimal(8) * m / Decimal("0.5") ** 5 * Decimal("0.01")).sqrt()
    value = smoothness_bound(math.sqrt(8), 0.5, 10.0, 0.01)
    assert value == pytest.approx(float(expected), rel=1e-12)
    assert value == pytest.approx(26.91, abs=0.01)


@given(m=st.floats(0, 100), d1=st.floats(0, 10), d2=st.floats(0, 10))
def test_smoothness_bound_monotone(m, d1, d2):
    lo, hi = sorted((d1, d2))
    assert smoothness_bound(m, 0.7, 2.0, lo) <= smoothness_bound(m, 0.7, 2.0, hi)
    assert smoothness_bound(m, 0.7, 2.0, d1) <= smoothness_bound(m + 1, 0.7, 2.0, d1)


def test_smoothness_bound_rejects_bad_inputs():
    with pytest.raises(ValueError):
        smoothness_bound(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        smoothness_bound(-1.0, 0.5, 1.0, 1.0)


def test_smoothness_bound_holds(rng):
    mdp = random_instance(rng, 5, 3, gamma=0.9)
    model = LinearReward(FeatureMap(rng.uniform(-1, 1, size=(5, 3, 4))))
    for _ in range(50):
        lam = rng.normal(scale=3, size=4)
        step = rng.normal(size=4)
        lam_prime = lam + step / np.linalg.norm(step) * rng.uniform(0, 1)
        gap, bound = smoothness_trial(mdp, model, lam, lam_prime)
        assert gap <= bound


def test_linear_reward_is_root_d_smooth(rng):
    # binary 8-feature vectors have norm at most sqrt(8)
    phi = (rng.random((20, 3, 8)) < 0.5).astype(float)
    model = LinearReward(FeatureMap(phi))
    for _ in range(100):
        lam, lam_prime = rng.normal(size=8), rng.normal(size=8)
        lhs = reward_smoothness(model.reward_table(lam), model.reward_table(lam_prime))
        assert lhs <= math.sqrt(8) * np.linalg.norm(lam - lam_prime) + 1e-12


# -- richness decomposition ---------------------------------------------------------

def test_decompose_synthetic_optimum():
    mu_pi, lam, lam_star, eta = np.array([1.0, 2.0]), np.array([0.5, -1.0]), np.array([0.0, 1.0]), 0.5
    dec = richness_decompose(mu_pi, mu_pi - (lam - lam_star) / eta, lam, lam_star, eta)
    assert dec.beta_t == pytest.approx(1 / eta)
    assert dec.delta_norm == pytest.approx(0.0, abs=1e-12)


def test_decompose_equal_expectations():
    mu = np.array([0.3, -0.2])
    dec = richness_decompose(mu, mu, np.ones(2), np.zeros(2), 1.0)
    assert dec.beta_t == 0.0 and dec.delta_norm == 0.0


def test_decompose_degenerate():
    dec = richness_decompose(np.ones(2), np.zeros(2), np.ones(2), np.ones(2), 1.0)
    assert dec.degenerate and dec.beta_t == 0.0
    np.testing.assert_array_equal(dec.delta_t, -np.ones(2))


@settings(max_examples=200)
@given(mu_pi=vec, mu_xi=vec, lam=vec, lam_star=vec, eta=st.floats(0.01, 10))
def test_decompose_reconstruction(mu_pi, mu_xi, lam, lam_star, eta):
    dec = richness_decompose(mu_pi, mu_xi, lam, lam_star, eta)
    assert 0.0 <= dec.beta_t <= 1 / eta
    if not dec.clamped and not dec.degenerate:
        rebuilt = mu_pi - dec.beta_t * (lam - lam_star) + dec.delta_t
        np.testing.assert_allclose(rebuilt, mu_xi, atol=1e-12 * (1 + np.abs(mu_xi).max()))


def test_delta_norm_over_omni_run(rng):
    mdp = random_instance(rng, 5, 3, gamma=0.8)
    model = LinearReward(FeatureMap(rng.normal(size=(5, 3, 3))))
    lam_star = rng.normal(size=3)
    pi_e = soft_policy(mdp, model, lam_star)
    norms = []

    def on_step(info):
        learner, demo = info.learner, info.selection.demo
        grads = model.gradient_table(learner.lam)
        s = demo.start_state
        mu_pi = np.einsum("sa,sap->p", dense_occupancy(mdp, learner.policy, np.eye(5)[s]), grads)
        mu_xi = sum(0.2 * 0.8**t * grads[x, a] for t, (x, a) in enumerate(demo.steps))
        norms.append(richness_decompose(mu_pi, mu_xi, learner.lam, lam_star, learner.eta).delta_norm)

    learner = init_learner(mdp, model, np.zeros(3))
    teaching_loop(mdp, pi_e, Omni(lam_star), learner, 15, rng, pool_size=5, horizon=15, on_step=on_step)
    assert len(norms) == 15 and all(np.isfinite(norms))


# -- zero-noise contraction ----------------------------------------------------------

@pytest.mark.parametrize("eta", [0.2, 1.0])
def test_zero_noise_contraction(rng, eta):
    mdp = random_instance(rng, 5, 3)
    learner = init_learner(mdp, LinearReward(FeatureMap(rng.normal(size=(5, 3, 3)))), rng.normal(size=3), LearningSchedule("constant", eta))
    lam_star = rng.normal(size=3)
    betas = rng.uniform(0.1, 1.0, size=60) / eta
    _, dists = synthetic_zero_noise_run(mdp, learner, lam_star, betas, rng)
    bound = dists[0]
    for t, beta in enumerate(betas, start=1):
        bound *= 1 - eta * beta
        assert dists[t] <= bound + 1e-9
    assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))


# -- TV bound ----------------------------------------------------------------------------

def test_tv_bound_equal_policies(rng):
    mdp = random_instance(rng, 5, 3)
    pi = random_stochastic_policy(rng, 5, 3)
    lhs, rhs, holds = policy_tv_bound_check(mdp, pi, pi)
    assert lhs == 0.0 and rhs == 0.0 and holds


def test_tv_bound_random_pairs(rng):
    for _ in range(200):
        mdp = random_instance(rng, 5, 3, gamma=float(rng.uniform(0, 0.95)))
        lhs, rhs, holds = policy_tv_bound_check(mdp, random_stochastic_policy(rng, 5, 3), random_stochastic_policy(rng, 5, 3))
        assert holds


def test_tv_bound_gamma_zero(rng):
    mdp = random_instance(rng, 4, 2, gamma=0.0)
    pi, pi2 = random_stochastic_policy(rng, 4, 2), random_stochastic_policy(rng, 4, 2)
    lhs, rhs, holds = policy_tv_bound_check(mdp, pi, pi2)
    assert rhs == pytest.approx(2 * np.abs(pi - pi2).sum(axis=1).max())
    assert holds and lhs <= rhs


# -- metrics ------------------------------------------------------------------------------

def _car():
    return generate_environment(CarMdpConfig(tasks=(0, 2), n_lanes=2), np.random.default_rng(4))


def test_metrics_zero_when_learner_matches_teacher():
    car = _car()
    pi_e = teacher_policy(car.mdp)
    model = LinearReward(car.features)
    learner = init_learner(car.mdp, model, np.zeros(8))
    learner = type(learner)(learner.lam, pi_e, model)
    row = metrics_row(car.mdp, learner, pi_e, lambda_star=learner.lam, state_task=car.state_task)
    assert row.nu_gap_all == 0.0 and row.tv_dist == 0.0 and row.lambda_dist == 0.0
    assert row.nu_gap_task == {0: 0.0, 2: 0.0}


def test_metrics_recomposition(rng):
    car = _car()
    mdp, R = car.mdp, car.mdp.env_reward
    pi_e = teacher_policy(mdp)
    model = LinearReward(car.features)
    lam = rng.normal(size=8)
    learner = init_learner(mdp, model, lam)
    row = metrics_row(mdp, learner, pi_e, lambda_star=np.zeros(8), state_task=car.state_task, sel_state=20)
    rho_e, rho_l = dense_occupancy(mdp, pi_e), dense_occupancy(mdp, learner.policy)
    assert row.nu_gap_all == pytest.approx(abs((rho_e * R).sum() - (rho_l * R).sum()) / 0.1, abs=1e-8)
    assert row.tv_dist == pytest.approx(np.abs(rho_e - rho_l).sum(), abs=1e-8)
    assert row.lambda_dist == pytest.approx(np.linalg.norm(lam))
    assert row.sel_task == 0 and row.sel_state == 20
    # per task: restrict the start distribution to that task's lanes
    for task in (0, 2):
        starts = [s for s in mdp.start_states if car.state_task[s] == task]
        p0 = np.zeros(mdp.n_states)
        p0[starts] = 1 / len(starts)
        gap = abs((dense_occupancy(mdp, pi_e, p0) * R).sum() - (dense_occupancy(mdp, learner.policy, p0) * R).sum()) / 0.1
        assert row.nu_gap_task[task] == pytest.approx(gap, abs=1e-8)


def test_metrics_without_target():
    car = _car()
    learner = init_learner(car.mdp, LinearReward(car.features))
    row = MetricsTracker(car.mdp, teacher_policy(car.mdp)).row(3, learner)
    assert row.lambda_dist is None and row.sel_task == -1 and row.t == 3
