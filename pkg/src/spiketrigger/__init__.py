"""Spiking-network triggers for event-based stereo odometry, with a toy closed-loop testbed."""

from .harness import ExperimentConfig, compare, load_config, run_episode
from .metrics import EnergyModel, ape, energy, mtr, ttr
from .policy import DualPolicy, QAgent, TrainerConfig, TriggerLog, run_decision_loop
from .rewards import RewardConfig, reward_init, reward_map, reward_track
from .snn import SeanConfig, SeanNetwork

__version__ = "0.1.0"

__all__ = [
    "DualPolicy", "EnergyModel", "ExperimentConfig", "QAgent", "RewardConfig", "SeanConfig", "SeanNetwork",
    "TrainerConfig", "TriggerLog", "ape", "compare", "energy", "load_config", "mtr", "reward_init", "reward_map",
    "reward_track", "run_decision_loop", "run_episode", "ttr",
]
