"""Training configuration with defaults from the SAC+SimBa hyperparameter table."""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import nets, obsnorm


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ArchConfig:
    variant: str = "simba"
    num_blocks: int = 2
    hidden_dim: int = 512


def _critic_default():
    return ArchConfig("simba", 2, 512)


def _actor_default():
    return ArchConfig("simba", 1, 128)


@dataclass
class TrainConfig:
    algo: str = "sac"
    critic: ArchConfig = field(default_factory=_critic_default)
    actor: ArchConfig = field(default_factory=_actor_default)
    critic_lr: float = 1e-4
    actor_lr: float = 1e-4
    tau: float = 5e-3
    init_temperature: float = 1e-2
    temperature_lr: float = 1e-4
    # H* = -target_entropy_scale * |A|
    target_entropy_scale: float = 0.5
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-2
    gamma: float = 0.99
    replay_ratio: int = 2
    clipped_double_q: bool = False
    reset_interval: int | None = None
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    exploration_noise: float = 0.1
    normalizer: str = "rsnorm"
    normalizer_initial_n: int = 5000
    oracle_stats_path: str | None = None
    dtype: str = "float64"
    plasticity_tau: float = 0.01
    dormant_eps: float = 1e-3
    probe_batch: int = 256

    def validate(self) -> "TrainConfig":
        if self.algo not in ("sac", "ddpg"):
            raise ConfigError("algo", f"must be sac or ddpg, got {self.algo!r}")
        for name in ("critic", "actor"):
            arch = getattr(self, name)
            if nets._ALIASES.get(arch.variant, arch.variant) not in nets.VARIANTS:
                raise ConfigError(f"{name}.variant", f"unknown variant {arch.variant!r}")
            if arch.hidden_dim < 1:
                raise ConfigError(f"{name}.hidden_dim", "must be positive")
            if arch.num_blocks < 0 or (arch.variant.startswith("mlp") and arch.num_blocks < 1):
                raise ConfigError(f"{name}.num_blocks", "out of range")
        for name in ("critic_lr", "actor_lr", "temperature_lr", "init_temperature"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be > 0")
        if not 0 < self.tau <= 1:
            raise ConfigError("tau", "must satisfy 0 < tau <= 1")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma", "must satisfy 0 <= gamma < 1")
        if not isinstance(self.replay_ratio, int) or self.replay_ratio < 1:
            raise ConfigError("replay_ratio", f"must be a positive integer, got {self.replay_ratio}")
        if self.reset_interval is not None and self.reset_interval < 1:
            raise ConfigError("reset_interval", "must be a positive number of gradient steps")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be positive")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity", "must be positive")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps", "must be non-negative")
        if self.normalizer not in obsnorm.KINDS:
            raise ConfigError("normalizer", f"unknown kind {self.normalizer!r}")
        if self.normalizer == "oracle" and not self.oracle_stats_path:
            raise ConfigError("oracle_stats_path", "required for the oracle normalizer")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype", "must be float64 or float32")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("beta1", "betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be non-negative")
        if self.exploration_noise < 0:
            raise ConfigError("exploration_noise", "must be non-negative")
        return self
