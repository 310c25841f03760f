"""
Imitation learning of the expert NMPC
"""

from .dagger import DaggerResult, EpisodeMetrics, RolloutRecord, dagger_train, evaluation_return
from .dataset import ExpertDataset
from .policy import PolicyNet, policy_forward, policy_input
from .trainer import LossCurve, TrainConfig, l2_loss, train_supervised

__all__ = [
    "DaggerResult",
    "EpisodeMetrics",
    "ExpertDataset",
    "LossCurve",
    "PolicyNet",
    "RolloutRecord",
    "TrainConfig",
    "dagger_train",
    "evaluation_return",
    "l2_loss",
    "policy_forward",
    "policy_input",
    "train_supervised",
]
