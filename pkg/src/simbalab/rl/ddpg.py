"""DDPG with target actor and critic, Gaussian exploration noise at collection."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import nets
from ..autodiff import Tensor
from .buffer import Batch
from .config import TrainConfig
from .optim import adamw_init, adamw_step, polyak_update
from .sac import _cast, _get, _get_opt, _put, _put_opt, critic_q


def policy_action(spec: nets.NetworkSpec, w, obs, action_scale: float) -> Tensor:
    return nets.deterministic_head(nets.forward(spec, w, obs).out, action_scale)


def ddpg_target(batch: Batch, actor_spec, target_actor_w, critic_spec, target_critic_w,
                gamma: float, action_scale: float) -> np.ndarray:
    a_next = policy_action(actor_spec, target_actor_w, batch.next_obs, action_scale)
    q_next = critic_q(critic_spec, target_critic_w, batch.next_obs, a_next).data
    return batch.rew + gamma * (1.0 - batch.done) * q_next


def ddpg_critic_loss(critic_spec, critic_w, batch: Batch, target) -> Tensor:
    q = critic_q(critic_spec, critic_w, batch.obs, batch.act)
    return ad.mean(ad.square(ad.sub(q, Tensor(target))))


def ddpg_actor_loss(actor_spec, actor_w, critic_spec, critic_w, obs, action_scale: float) -> Tensor:
    """-mean Q(o, pi(o))."""
    a = policy_action(actor_spec, actor_w, obs, action_scale)
    return ad.scalar_mul(ad.mean(critic_q(critic_spec, critic_w, obs, a)), -1.0)


class DDPGAgent:
    algo = "ddpg"

    def __init__(self, obs_dim: int, action_dim: int, action_bound: float, cfg: TrainConfig,
                 seed_for):
        self.cfg = cfg
        self.action_dim = action_dim
        self.action_bound = float(action_bound)
        self.dtype = np.dtype(cfg.dtype).type
        self.seed_for = seed_for
        self.actor_spec = nets.NetworkSpec(cfg.actor.variant, obs_dim, cfg.actor.hidden_dim,
                                           cfg.actor.num_blocks, action_dim,
                                           "deterministic-policy")
        self.critic_spec = nets.NetworkSpec(cfg.critic.variant, obs_dim + action_dim,
                                            cfg.critic.hidden_dim, cfg.critic.num_blocks, 1,
                                            "q-value")
        self.initialize(0)

    def initialize(self, generation: int) -> None:
        self.generation = generation
        self.actor = _cast(nets.init_params(
            self.actor_spec, self.seed_for("init/actor", generation)).tensors, self.dtype)
        self.critic = _cast(nets.init_params(
            self.critic_spec, self.seed_for("init/critic0", generation)).tensors, self.dtype)
        self.target_actor = {k: v.copy() for k, v in self.actor.items()}
        self.target_critic = {k: v.copy() for k, v in self.critic.items()}
        self.actor_opt = adamw_init(self.actor)
        self.critic_opt = adamw_init(self.critic)

    @property
    def alpha(self):
        return None

    def _w(self, tensors):
        return {k: Tensor(v) for k, v in tensors.items()}

    def act(self, obs_n, rng: np.random.Generator | None = None,
            deterministic: bool = False) -> np.ndarray:
        obs = np.asarray(obs_n, dtype=self.dtype)[None, :]
        a = policy_action(self.actor_spec, self._w(self.actor), obs, self.action_bound).data[0]
        a = a.astype(np.float64)
        if deterministic or rng is None:
            return a
        noise = self.cfg.exploration_noise * self.action_bound * rng.standard_normal(a.shape)
        return np.clip(a + noise, -self.action_bound, self.action_bound)

    def update(self, batch: Batch, rng: np.random.Generator) -> dict[str, float]:
        cfg = self.cfg
        y = ddpg_target(batch, self.actor_spec, self._w(self.target_actor), self.critic_spec,
                        self._w(self.target_critic), cfg.gamma, self.action_bound)
        tape = ad.Tape()
        w = {k: tape.variable(v) for k, v in self.critic.items()}
        c_loss = ddpg_critic_loss(self.critic_spec, w, batch, y)
        grads = ad.backward(tape, c_loss)
        self.critic, self.critic_opt = adamw_step(
            self.critic, {k: grads[t] for k, t in w.items()}, self.critic_opt, cfg.critic_lr,
            cfg.beta1, cfg.beta2, cfg.weight_decay, inplace=True)

        tape = ad.Tape()
        w = {k: tape.variable(v) for k, v in self.actor.items()}
        a_loss = ddpg_actor_loss(self.actor_spec, w, self.critic_spec, self._w(self.critic),
                                 batch.obs, self.action_bound)
        grads = ad.backward(tape, a_loss)
        self.actor, self.actor_opt = adamw_step(
            self.actor, {k: grads[t] for k, t in w.items()}, self.actor_opt, cfg.actor_lr,
            cfg.beta1, cfg.beta2, cfg.weight_decay, inplace=True)

        self.target_critic = polyak_update(self.target_critic, self.critic, cfg.tau, inplace=True)
        self.target_actor = polyak_update(self.target_actor, self.actor, cfg.tau, inplace=True)
        return {"critic_loss": c_loss.item(), "actor_loss": a_loss.item(), "alpha": None}

    def probe(self, obs, act):
        x = np.concatenate([obs, act], axis=1)
        out = nets.forward(self.critic_spec, self._w(self.critic), x)
        acts = np.concatenate([a.data for a in out.activations], axis=1) if out.activations \
            else np.zeros((x.shape[0], 0))
        return out.features.data.astype(np.float64), acts.astype(np.float64)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        _put(out, "actor", self.actor)
        _put(out, "critic0", self.critic)
        _put(out, "target_actor", self.target_actor)
        _put(out, "target0", self.target_critic)
        _put_opt(out, "opt/actor", self.actor_opt)
        _put_opt(out, "opt/critic0", self.critic_opt)
        out["meta/generation"] = np.array([float(self.generation)])
        return out

    def load_state_arrays(self, arrays) -> None:
        self.actor = _get(arrays, "actor", self.actor, self.dtype)
        self.critic = _get(arrays, "critic0", self.critic, self.dtype)
        self.target_actor = _get(arrays, "target_actor", self.target_actor, self.dtype)
        self.target_critic = _get(arrays, "target0", self.target_critic, self.dtype)
        self.actor_opt = _get_opt(arrays, "opt/actor", self.actor_opt, self.dtype)
        self.critic_opt = _get_opt(arrays, "opt/critic0", self.critic_opt, self.dtype)
        self.generation = int(arrays["meta/generation"][0])
