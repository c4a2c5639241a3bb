"""Car-driving lane gridworld with nine task types T0..T8.

Every lane is a ``rows x cols`` grid (10 x 2 by default). The agent starts in
the bottom-left cell and always moves one row forward; ``left``/``right``
change column, and pushing against the lane edge puts the agent in a
uniformly random column. Leaving the top row enters a shared absorbing
terminal state with zero features.

Hazard rates other than T0/T1 are not pinned down by the driving setup they
come from; the values in :data:`TASKS` are this package's defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import TabularMdp, optimal_policy
from .rewards import FeatureMap

FEATURES = ("stone", "grass", "car", "ped", "HOV", "police", "car-in-f", "ped-in-f")
CELL_TYPES = FEATURES[:6]
ACTIONS = ("left", "straight", "right")
LEFT, STRAIGHT, RIGHT = range(3)

LINEAR_WEIGHTS = np.array([-1.0, -0.5, -5.0, -10.0, -1.0, 0.0, -2.0, -5.0])
HOV_PREFERRED_WEIGHTS = np.array([-1.0, -0.5, -5.0, -10.0, 1.0, 0.0, -2.0, -5.0])
HOV_POLICE_PENALTY = -5.0

_IDX = {name: i for i, name in enumerate(FEATURES)}


@dataclass(frozen=True)
class Hazard:
    cell_type: str
    prob: float
    columns: str = "right"  # "left", "right" or "all"

    def __post_init__(self):
        if self.cell_type not in CELL_TYPES:
            raise ValueError(f"unknown cell type {self.cell_type!r}")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("hazard probability must lie in [0, 1]")
        if self.columns not in ("left", "right", "all"):
            raise ValueError(f"bad column selector {self.columns!r}")


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    hazards: tuple[Hazard, ...]

    @property
    def name(self) -> str:
        return f"T{self.task_id}"


TASKS = {
    0: TaskSpec(0, (Hazard("car", 0.01, "all"),)),
    1: TaskSpec(1, (Hazard("car", 0.25),)),
    2: TaskSpec(2, (Hazard("stone", 0.5),)),
    3: TaskSpec(3, (Hazard("car", 0.15), Hazard("stone", 0.3))),
    4: TaskSpec(4, (Hazard("grass", 0.5),)),
    5: TaskSpec(5, (Hazard("grass", 0.3), Hazard("car", 0.15))),
    6: TaskSpec(6, (Hazard("grass", 0.3), Hazard("ped", 0.15))),
    7: TaskSpec(7, (Hazard("HOV", 1.0),)),
    8: TaskSpec(8, (Hazard("HOV", 1.0), Hazard("police", 0.3, "all"))),
}


def parse_task(task) -> int:
    if isinstance(task, str):
        task = task.upper().removeprefix("T")
    task = int(task)
    if task not in TASKS:
        raise ValueError(f"unknown task T{task}")
    return task


@dataclass(frozen=True)
class CarMdpConfig:
    tasks: tuple[int, ...] = tuple(range(8))
    n_lanes: int = 5
    gamma: float = 0.9
    reward_variant: str = "linear"
    rows: int = 10
    cols: int = 2
    task_specs: dict = field(default_factory=lambda: dict(TASKS))

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(parse_task(t) for t in self.tasks))
        if not self.tasks:
            raise ValueError("task list must be non-empty")
        if self.n_lanes < 1 or self.rows < 1 or self.cols < 1:
            raise ValueError("n_lanes, rows and cols must be positive")
        if self.reward_variant not in ("linear", "nonlinear"):
            raise ValueError(f"unknown reward variant {self.reward_variant!r}")


@dataclass(frozen=True, eq=False)
class LaneGrid:
    task_id: int
    lane_index: int
    cells: np.ndarray  # (rows, cols, 6) bool, indexed by CELL_TYPES

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]


@dataclass(frozen=True, eq=False)
class CarEnvironment:
    mdp: TabularMdp
    features: FeatureMap
    state_features: np.ndarray  # (S, 8)
    state_task: np.ndarray  # task id per state, -1 for the terminal
    state_lane: np.ndarray  # lane index per state, -1 for the terminal
    lanes: list[LaneGrid]
    config: CarMdpConfig

    @property
    def terminal(self) -> int:
        return self.mdp.n_states - 1

    def task_start_states(self, task: int) -> np.ndarray:
        starts = self.mdp.start_states
        return starts[self.state_task[starts] == task]

    def metadata(self) -> dict:
        return {
            "features": self.state_features.tolist(),
            "feature_names": list(FEATURES),
            "lane_metadata": {
                "state_task": self.state_task.tolist(),
                "state_lane": self.state_lane.tolist(),
                "rows": self.config.rows,
                "cols": self.config.cols,
            },
        }


def generate_lane(spec: TaskSpec, lane_index: int, rows: int, cols: int, rng) -> LaneGrid:
    cells = np.zeros((rows, cols, len(CELL_TYPES)), dtype=bool)
    col_sets = {"left": [0], "right": [cols - 1], "all": list(range(cols))}
    for hazard in spec.hazards:
        k = CELL_TYPES.index(hazard.cell_type)
        for c in col_sets[hazard.columns]:
            cells[:, c, k] |= rng.random(rows) < hazard.prob
    # the start cell is kept clear
    cells[0, 0, :] = False
    return LaneGrid(spec.task_id, lane_index, cells)


def state_features(grid: LaneGrid, row: int, col: int) -> np.ndarray:
    """Cell-type indicators plus car/pedestrian look-ahead for one cell."""
    phi = np.zeros(len(FEATURES))
    phi[:6] = grid.cells[row, col]
    if row + 1 < grid.rows:
        phi[_IDX["car-in-f"]] = grid.cells[row + 1, col, CELL_TYPES.index("car")]
        phi[_IDX["ped-in-f"]] = grid.cells[row + 1, col, CELL_TYPES.index("ped")]
    return phi


def linear_teacher_reward(features: np.ndarray) -> float:
    return float(np.dot(LINEAR_WEIGHTS, features))


def nonlinear_teacher_reward(features: np.ndarray) -> float:
    """HOV is rewarded (+1) but penalised by -5 when police is also present."""
    features = np.asarray(features, dtype=float)
    value = float(np.dot(HOV_PREFERRED_WEIGHTS, features))
    return value + HOV_POLICE_PENALTY * features[_IDX["HOV"]] * features[_IDX["police"]]


def teacher_reward_table(phi: np.ndarray, variant: str) -> np.ndarray:
    fn = linear_teacher_reward if variant == "linear" else nonlinear_teacher_reward
    return np.array([fn(row) for row in phi])


def _next_columns(col: int, action: int, cols: int) -> dict[int, float]:
    target = col + (action - 1)
    if 0 <= target < cols:
        return {target: 1.0}
    return {c: 1.0 / cols for c in range(cols)}


def generate_environment(cfg: CarMdpConfig, rng: np.random.Generator) -> CarEnvironment:
    rows, cols = cfg.rows, cfg.cols
    lanes = [
        generate_lane(cfg.task_specs[task], i * cfg.n_lanes + j, rows, cols, rng)
        for i, task in enumerate(cfg.tasks)
        for j in range(cfg.n_lanes)
    ]
    cells_per_lane = rows * cols
    S = len(lanes) * cells_per_lane + 1
    terminal = S - 1
    A = len(ACTIONS)

    T = np.zeros((S, A, S))
    phi = np.zeros((S, len(FEATURES)))
    state_task = np.full(S, -1)
    state_lane = np.full(S, -1)
    p0 = np.zeros(S)
    for lane in lanes:
        base = lane.lane_index * cells_per_lane
        p0[base] = 1.0
        for r in range(rows):
            for c in range(cols):
                s = base + r * cols + c
                phi[s] = state_features(lane, r, c)
                state_task[s] = lane.task_id
                state_lane[s] = lane.lane_index
                for a in range(A):
                    if r == rows - 1:
                        T[s, a, terminal] = 1.0
                        continue
                    for c2, p in _next_columns(c, a, cols).items():
                        T[s, a, base + (r + 1) * cols + c2] += p
    T[terminal, :, terminal] = 1.0
    p0 /= p0.sum()

    reward = teacher_reward_table(phi, cfg.reward_variant)
    mdp = TabularMdp(T, cfg.gamma, p0, np.repeat(reward[:, None], A, axis=1))
    return CarEnvironment(
        mdp=mdp,
        features=FeatureMap.from_state_features(phi, A),
        state_features=phi,
        state_task=state_task,
        state_lane=state_lane,
        lanes=lanes,
        config=cfg,
    )


def teacher_policy(mdp: TabularMdp) -> np.ndarray:
    """Deterministic optimal policy for the attached environment reward."""
    if mdp.env_reward is None:
        raise ValueError("MDP has no environment reward attached")
    return optimal_policy(mdp, mdp.env_reward)
