"""Deep Q-learning from scratch in numpy, with clipped bootstrap targets."""

from valbound.dqn.fa_bounds import FaBounds, fa_bounds, fa_bounds_from_values
from valbound.dqn.mlp import MlpParams, init_mlp, load_checkpoint, mlp_forward, mlp_gradients, save_checkpoint
from valbound.dqn.replay import ReplayBuffer
from valbound.dqn.train import DQN_METHODS, LOG_COLUMNS, DqnConfig, TrainLog, dqn_train, epsilon_at, evaluate

__all__ = [
    "DQN_METHODS",
    "DqnConfig",
    "FaBounds",
    "LOG_COLUMNS",
    "MlpParams",
    "ReplayBuffer",
    "TrainLog",
    "dqn_train",
    "epsilon_at",
    "evaluate",
    "fa_bounds",
    "fa_bounds_from_values",
    "init_mlp",
    "load_checkpoint",
    "mlp_forward",
    "mlp_gradients",
    "save_checkpoint",
]
