from .buffer import Batch, ReplayBuffer, Transition, buffer_push, buffer_sample
from .config import ArchConfig, ConfigError, TrainConfig
from .ddpg import DDPGAgent
from .loop import METRIC_COLUMNS, MetricsLog, MetricsRow, Trainer, train_loop
from .optim import AdamWState, adamw_init, adamw_step, polyak_update
from .sac import SACAgent

__all__ = [
    "ArchConfig", "AdamWState", "Batch", "ConfigError", "DDPGAgent", "METRIC_COLUMNS",
    "MetricsLog", "MetricsRow", "ReplayBuffer", "SACAgent", "TrainConfig", "Trainer",
    "Transition", "adamw_init", "adamw_step", "buffer_push", "buffer_sample",
    "polyak_update", "train_loop",
]
