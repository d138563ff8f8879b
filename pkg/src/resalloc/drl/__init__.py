"""Deep reinforcement learning allocator: environment, network, PPO trainer."""

from .checkpoint import CheckpointMismatch, load_checkpoint, model_fingerprint, save_checkpoint
from .env import ActionSpace, AllocationEnv, DRLPolicy, InfeasibleAction, encode_state, obs_size
from .net import PolicyNet, masked_softmax
from .ppo import NonFiniteLoss, PPOConfig, TrainResult, ppo_train

__all__ = [
    "ActionSpace", "AllocationEnv", "CheckpointMismatch", "DRLPolicy", "InfeasibleAction",
    "NonFiniteLoss", "PPOConfig", "PolicyNet", "TrainResult", "encode_state", "load_checkpoint",
    "masked_softmax", "model_fingerprint", "obs_size", "ppo_train", "save_checkpoint",
]
