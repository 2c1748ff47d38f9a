"""Collection/update loop with replay-ratio control and periodic resets."""

from __future__ import annotations

import math
import time
from dataclasses import astuple, dataclass, fields

import numpy as np

from .. import analysis
from .. import autodiff as ad
from ..obsnorm import ObservationNormalizer
from ..seeding import seed_fn, stream_rng
from .buffer import Batch, ReplayBuffer, Transition
from .config import TrainConfig
from .ddpg import DDPGAgent
from .sac import SACAgent

METRIC_COLUMNS = (
    "env_step", "grad_step", "episode_return", "critic_loss", "actor_loss", "alpha",
    "dormant_ratio", "stable_rank", "feature_norm", "wall_time_s",
)


@dataclass
class MetricsRow:
    env_step: int
    grad_step: int
    episode_return: float
    critic_loss: float | None = None
    actor_loss: float | None = None
    alpha: float | None = None
    dormant_ratio: float | None = None
    stable_rank: int | None = None
    feature_norm: float | None = None
    wall_time_s: float | None = None

    def values(self) -> tuple:
        return astuple(self)


assert tuple(f.name for f in fields(MetricsRow)) == METRIC_COLUMNS


class MetricsLog(list):
    def returns(self) -> list[float]:
        return [r.episode_return for r in self]

    def final_mean_return(self, n: int = 10) -> float:
        tail = self.returns()[-n:]
        return float(np.mean(tail)) if tail else math.nan


def make_agent(cfg: TrainConfig, obs_dim: int, action_dim: int, action_bound: float, seed: int):
    cls = SACAgent if cfg.algo == "sac" else DDPGAgent
    return cls(obs_dim, action_dim, action_bound, cfg, seed_fn(seed))


class Trainer:
    """Stateful training run; :meth:`run` may be called repeatedly to continue."""

    def __init__(self, env, cfg: TrainConfig, seed: int, *, record_wall_time: bool = False):
        cfg.validate()
        self.env = env
        self.cfg = cfg
        self.seed = seed
        self.record_wall_time = record_wall_time
        spec = env.spec
        self.spec = spec
        self.dtype = np.dtype(cfg.dtype).type
        with ad.precision(self.dtype):
            self.agent = make_agent(cfg, spec.obs_dim, spec.action_dim, spec.action_bound, seed)
        self.normalizer = ObservationNormalizer(cfg.normalizer, spec.obs_dim,
                                                n_initial=cfg.normalizer_initial_n,
                                                oracle_path=cfg.oracle_stats_path)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, spec.obs_dim, spec.action_dim)
        self.explore_rng = stream_rng(seed, "exploration")
        self.sample_rng = stream_rng(seed, "sampling")
        self.update_rng = stream_rng(seed, "update")
        self.probe_rng = stream_rng(seed, "probe")
        self.env_steps = 0
        self.grad_steps = 0
        self.log = MetricsLog()
        self.last_probe: tuple[int, np.ndarray, np.ndarray] | None = None
        self._obs = None
        self._obs_store = None
        self._episode_steps = 0
        self._episode_return = 0.0
        self._losses: list[dict] = []
        self._t0 = time.perf_counter()

    def _begin_episode(self):
        obs = self.env.reset()
        self.normalizer.observe(obs)
        self._obs = obs
        self._obs_store = self.normalizer.to_buffer(obs)
        self._episode_steps = 0
        self._episode_return = 0.0
        self._losses = []

    def _normalized_batch(self, batch: Batch) -> Batch:
        n = self.normalizer
        return Batch(n.for_training(batch.obs),
                     batch.act, batch.rew,
                     n.for_training(batch.next_obs, update_batch_stats=False),
                     batch.done)

    def gradient_step(self) -> dict:
        batch = self._normalized_batch(self.buffer.sample(self.cfg.batch_size, self.sample_rng))
        stats = self.agent.update(batch, self.update_rng)
        self.grad_steps += 1
        if self.cfg.reset_interval and self.grad_steps % self.cfg.reset_interval == 0:
            self.reset_networks()
        return stats

    def reset_networks(self) -> None:
        """Reinitialize networks, targets, temperature and optimizers; keep data and stats."""
        self.agent.initialize(self.agent.generation + 1)

    def env_step(self) -> None:
        if self._obs is None:
            self._begin_episode()
        spec = self.spec
        if self.env_steps < self.cfg.warmup_steps:
            action = self.explore_rng.uniform(-spec.action_bound, spec.action_bound,
                                              spec.action_dim)
        else:
            action = self.agent.act(self.normalizer.for_acting(self._obs), self.explore_rng)
        obs2, reward, done = self.env.step(action)
        self.normalizer.observe(obs2)
        obs2_store = self.normalizer.to_buffer(obs2)
        self.buffer.push(Transition(self._obs_store, np.asarray(action, dtype=float),
                                    float(reward), obs2_store, bool(done)))
        self.env_steps += 1
        self._episode_steps += 1
        self._episode_return += float(reward)
        self._obs, self._obs_store = obs2, obs2_store

        if self.env_steps > self.cfg.warmup_steps:
            for _ in range(self.cfg.replay_ratio):
                self._losses.append(self.gradient_step())

        if done or self._episode_steps >= spec.episode_length:
            self.log.append(self._episode_row())
            self._obs = None

    def probe(self) -> tuple[np.ndarray, np.ndarray]:
        n = min(self.cfg.probe_batch, len(self.buffer))
        batch = self.buffer.gather(self.buffer.sample_indices(n, self.probe_rng))
        obs = self.normalizer.for_training(batch.obs, update_batch_stats=False)
        return self.agent.probe(obs, batch.act)

    def _episode_row(self) -> MetricsRow:
        def avg(key):
            vals = [d[key] for d in self._losses if d.get(key) is not None]
            return float(np.mean(vals)) if vals else None

        features, acts = self.probe()
        self.last_probe = (self.env_steps, features, acts)
        report = analysis.plasticity_report(features, acts, self.cfg.plasticity_tau,
                                            self.cfg.dormant_eps)
        alpha = self.agent.alpha
        return MetricsRow(
            self.env_steps, self.grad_steps, self._episode_return,
            avg("critic_loss"), avg("actor_loss"),
            None if alpha is None else float(alpha),
            report.dormant_ratio, report.stable_rank, report.feature_norm,
            time.perf_counter() - self._t0 if self.record_wall_time else None,
        )

    def run(self, total_env_steps: int, *, on_row=None, stop_when=None,
            checkpoint_every: int | None = None, on_checkpoint=None) -> MetricsLog:
        """Advance by ``total_env_steps`` environment steps.

        ``stop_when(log)`` is checked after each finished episode; returning
        True ends the run early.
        """
        with ad.precision(self.dtype):
            for _ in range(total_env_steps):
                n_rows = len(self.log)
                self.env_step()
                if len(self.log) > n_rows:
                    if on_row is not None:
                        on_row(self.log[-1])
                    if stop_when is not None and stop_when(self.log):
                        break
                if checkpoint_every and on_checkpoint and self.env_steps % checkpoint_every == 0:
                    on_checkpoint(self)
        return self.log

    def evaluate(self, env, episodes: int = 1) -> list[float]:
        """Deterministic-policy returns; normalizer statistics are frozen meanwhile."""
        was = self.normalizer.frozen
        self.normalizer.frozen = True
        out = []
        try:
            with ad.precision(self.dtype):
                for _ in range(episodes):
                    obs = env.reset()
                    total = 0.0
                    for _ in range(env.spec.episode_length):
                        a = self.agent.act(self.normalizer.for_acting(obs), deterministic=True)
                        obs, r, done = env.step(a)
                        total += r
                        if done:
                            break
                    out.append(total)
        finally:
            self.normalizer.frozen = was
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.agent.state_arrays())
        out.update(self.normalizer.state_arrays())
        out["meta/env_steps"] = np.array([float(self.env_steps)])
        out["meta/grad_steps"] = np.array([float(self.grad_steps)])
        if self.last_probe is not None:
            step, feats, acts = self.last_probe
            out["probe/env_step"] = np.array([float(step)])
            out["probe/features"] = feats
            out["probe/activations"] = acts
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Restore networks, optimizers, normalizer and counters.

        The replay buffer is not part of a checkpoint; a restored trainer
        refills it from new interaction.
        """
        self.agent.load_state_arrays(arrays)
        self.normalizer.load_state_arrays(arrays)
        self.env_steps = int(arrays["meta/env_steps"][0])
        self.grad_steps = int(arrays["meta/grad_steps"][0])


def train_loop(env, cfg: TrainConfig, seed: int, total_env_steps: int, **kwargs) -> MetricsLog:
    return Trainer(env, cfg, seed).run(total_env_steps, **kwargs)
