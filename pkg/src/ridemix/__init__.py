"""Grid-map ridesharing dispatch with Random, Greedy, IDQN and QMIX policies."""

from ridemix.grid_world import (
    Car,
    ConfigError,
    EpisodeResult,
    GridMap,
    InvalidActionError,
    Passenger,
    Scenario,
    build_map,
    manhattan,
    sample_scenario,
    simulate_episode,
    traverse_time,
)
from ridemix.obs_encoding import (
    action_mask,
    encode_observation,
    epsilon_greedy,
    joint_action_from_q,
    observation_size,
)
from ridemix.policies import (
    GreedyPolicy,
    IdqnModel,
    LearnedPolicy,
    QmixModel,
    RandomPolicy,
    greedy_policy,
    random_policy,
)
from ridemix.training import EpsilonSchedule, ReplayBuffer, TrainConfig, Transition, train

__version__ = "0.1.0"
