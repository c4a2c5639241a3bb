"""Machine teaching for sequential maximum-causal-entropy IRL learners on tabular MDPs."""

from .analysis import (
    MetricsRow,
    MetricsTracker,
    RichnessDecomposition,
    policy_tv_bound_check,
    richness_decompose,
    smoothness_bound,
)
from .car_env import CarEnvironment, CarMdpConfig, generate_environment, teacher_policy
from .experiment import ExperimentConfig, RunRecord, run_experiment
from .learner import (
    LambdaStarConfig,
    LambdaStarError,
    LearnerState,
    LearningSchedule,
    compute_lambda_star,
    dual_loss_and_gradient,
    evaluate_learnability,
    fit_likelihood,
    init_learner,
    learner_step,
    nll_loss_and_gradient,
    sample_demo_budget,
)
from .mdp import (
    ConvergenceError,
    Demonstration,
    OccupancyMeasure,
    TabularMdp,
    demo_occupancy,
    expected_reward,
    load_mdp,
    occupancy_measure,
    optimal_policy,
    rollout,
    rollouts,
    save_mdp,
    soft_value_iteration,
    tv_distance,
)
from .rewards import (
    FeatureMap,
    LinearReward,
    ParameterBall,
    QuadraticReward,
    feature_expectation_demo,
    feature_expectation_policy,
    make_reward_model,
    project_to_ball,
)
from .teachers import (
    Agnostic,
    Bbox,
    Omni,
    agnostic_select,
    bbox_select,
    build_candidate_pool,
    omni_select,
    probe_learner,
    teaching_loop,
)
from .verification import verify

__all__ = [name for name in dir() if not name.startswith("_")]
