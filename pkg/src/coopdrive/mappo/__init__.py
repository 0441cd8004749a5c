"""Multi-agent PPO with a centralised critic and decentralised actors."""
from .config import TrainConfig
from .gae import RolloutBuffer, Trajectory, ValueNorm, compute_gae, normalize_advantages
from .losses import actor_loss, critic_loss, ratio, surrogate_terms, value_loss_terms
from .networks import Actor, ActorCritic, Critic, load_policy, save_policy
from .rollout import EpisodeResult, run_episodes
from .train import CURVE_FIELDS, TrainingAborted, TrainResult, collect_rollout, make_policy, ppo_update, train

__all__ = [
    "CURVE_FIELDS", "Actor", "ActorCritic", "Critic", "EpisodeResult", "RolloutBuffer", "TrainConfig",
    "TrainResult", "Trajectory", "TrainingAborted", "ValueNorm", "actor_loss", "collect_rollout", "compute_gae",
    "critic_loss", "load_policy", "make_policy", "normalize_advantages", "ppo_update", "ratio", "run_episodes",
    "save_policy", "surrogate_terms", "train", "value_loss_terms",
]
