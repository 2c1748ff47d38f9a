"""Soft actor-critic with a tanh-Gaussian actor and optional clipped double-Q.

Each gradient step runs critic, actor, temperature, then Polyak updates.
Observations reaching this module are already normalized.
"""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from .. import nets
from ..autodiff import Tensor
from .buffer import Batch
from .config import TrainConfig
from .optim import AdamWState, adamw_init, adamw_step, polyak_update


def critic_q(spec: nets.NetworkSpec, w, obs, act) -> Tensor:
    """Q(obs, act) with the action concatenated to the observation."""
    x = ad.concat([ad.as_tensor(obs), ad.as_tensor(act)], axis=1)
    return nets.q_head(nets.forward(spec, w, x).out)


def policy_sample(spec: nets.NetworkSpec, w, obs, noise, action_scale: float):
    out = nets.forward(spec, w, obs).out
    mean, log_std = nets.gaussian_head(out, spec.output_dim)
    return nets.squashed_gaussian(mean, log_std, noise, action_scale)


def td_target(batch: Batch, actor_spec, actor_w, critic_spec, target_ws, alpha: float,
              gamma: float, noise, action_scale: float) -> np.ndarray:
    """r + gamma * (1 - done) * (min_i Q_target_i(o', a') - alpha * log pi(a'|o'))."""
    a_next, logp_next = policy_sample(actor_spec, actor_w, batch.next_obs, noise, action_scale)
    qs = [critic_q(critic_spec, w, batch.next_obs, a_next).data for w in target_ws]
    q_next = qs[0] if len(qs) == 1 else np.minimum(qs[0], qs[1])
    soft = q_next - alpha * logp_next.data
    return batch.rew + gamma * (1.0 - batch.done) * soft


def critic_loss(critic_spec, critic_ws, batch: Batch, target) -> Tensor:
    """Sum over critics of mean squared TD error."""
    y = Tensor(target)
    total = None
    for w in critic_ws:
        q = critic_q(critic_spec, w, batch.obs, batch.act)
        loss = ad.mean(ad.square(ad.sub(q, y)))
        total = loss if total is None else ad.add(total, loss)
    return total


def actor_loss(actor_spec, actor_w, critic_spec, critic_ws, obs, noise, alpha: float,
               action_scale: float) -> tuple[Tensor, Tensor]:
    """mean(alpha * log pi(a|o) - Q(o, a)) with reparameterized a; returns (loss, log_prob)."""
    a, logp = policy_sample(actor_spec, actor_w, obs, noise, action_scale)
    qs = [critic_q(critic_spec, w, obs, a) for w in critic_ws]
    q = qs[0] if len(qs) == 1 else ad.minimum(qs[0], qs[1])
    return ad.mean(ad.sub(ad.scalar_mul(logp, alpha), q)), logp


def temperature_loss(log_alpha: Tensor, log_prob, target_entropy: float) -> Tensor:
    """-log_alpha * mean(log pi + H*)."""
    c = float(np.mean(np.asarray(log_prob))) + target_entropy
    return ad.scalar_mul(log_alpha, -c)


def _cast(tensors: dict[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=dtype) for k, v in tensors.items()}


class SACAgent:
    """Actor, critic(s), target critic(s), temperature and their optimizers."""

    algo = "sac"

    def __init__(self, obs_dim: int, action_dim: int, action_bound: float, cfg: TrainConfig,
                 seed_for):
        self.cfg = cfg
        self.action_dim = action_dim
        self.action_bound = float(action_bound)
        self.dtype = np.dtype(cfg.dtype).type
        self.seed_for = seed_for
        self.actor_spec = nets.NetworkSpec(cfg.actor.variant, obs_dim, cfg.actor.hidden_dim,
                                           cfg.actor.num_blocks, action_dim, "gaussian-policy")
        self.critic_spec = nets.NetworkSpec(cfg.critic.variant, obs_dim + action_dim,
                                            cfg.critic.hidden_dim, cfg.critic.num_blocks, 1,
                                            "q-value")
        self.n_critics = 2 if cfg.clipped_double_q else 1
        self.target_entropy = -cfg.target_entropy_scale * action_dim
        self.initialize(0)

    def initialize(self, generation: int) -> None:
        """Fresh parameters and optimizer state; ``generation`` counts resets."""
        self.generation = generation
        self.actor = _cast(nets.init_params(
            self.actor_spec, self.seed_for("init/actor", generation)).tensors, self.dtype)
        self.critics = [
            _cast(nets.init_params(self.critic_spec,
                                   self.seed_for(f"init/critic{i}", generation)).tensors,
                  self.dtype)
            for i in range(self.n_critics)
        ]
        self.targets = [{k: v.copy() for k, v in c.items()} for c in self.critics]
        self.log_alpha = {"log_alpha": np.asarray(math.log(self.cfg.init_temperature),
                                                  dtype=self.dtype)}
        self.actor_opt = adamw_init(self.actor)
        self.critic_opts = [adamw_init(c) for c in self.critics]
        self.alpha_opt = adamw_init(self.log_alpha)

    @property
    def alpha(self) -> float:
        return float(math.exp(float(self.log_alpha["log_alpha"])))

    def _w(self, tensors):
        return {k: Tensor(v) for k, v in tensors.items()}

    def act(self, obs_n: np.ndarray, rng: np.random.Generator | None = None,
            deterministic: bool = False) -> np.ndarray:
        obs = np.asarray(obs_n, dtype=self.dtype)[None, :]
        out = nets.forward(self.actor_spec, self._w(self.actor), obs).out
        mean, log_std = nets.gaussian_head(out, self.action_dim)
        if deterministic or rng is None:
            return (np.tanh(mean.data) * self.action_bound)[0].astype(np.float64)
        noise = rng.standard_normal((1, self.action_dim))
        u = mean.data + np.exp(log_std.data) * noise
        return (np.tanh(u) * self.action_bound)[0].astype(np.float64)

    def critic_update(self, batch: Batch, noise_next) -> float:
        cfg = self.cfg
        y = td_target(batch, self.actor_spec, self._w(self.actor), self.critic_spec,
                      [self._w(t) for t in self.targets], self.alpha, cfg.gamma, noise_next,
                      self.action_bound)
        tape = ad.Tape()
        ws = [{k: tape.variable(v) for k, v in c.items()} for c in self.critics]
        loss = critic_loss(self.critic_spec, ws, batch, y)
        grads = ad.backward(tape, loss)
        for i, w in enumerate(ws):
            g = {k: grads[t] for k, t in w.items()}
            self.critics[i], self.critic_opts[i] = adamw_step(
                self.critics[i], g, self.critic_opts[i], cfg.critic_lr, cfg.beta1, cfg.beta2,
                cfg.weight_decay, inplace=True)
        return loss.item()

    def actor_update(self, batch: Batch, noise) -> tuple[float, np.ndarray]:
        cfg = self.cfg
        tape = ad.Tape()
        w = {k: tape.variable(v) for k, v in self.actor.items()}
        loss, logp = actor_loss(self.actor_spec, w, self.critic_spec,
                                [self._w(c) for c in self.critics], batch.obs, noise,
                                self.alpha, self.action_bound)
        grads = ad.backward(tape, loss)
        g = {k: grads[t] for k, t in w.items()}
        self.actor, self.actor_opt = adamw_step(self.actor, g, self.actor_opt, cfg.actor_lr,
                                                cfg.beta1, cfg.beta2, cfg.weight_decay, inplace=True)
        return loss.item(), logp.data

    def temperature_update(self, log_prob) -> float:
        cfg = self.cfg
        tape = ad.Tape()
        la = tape.variable(self.log_alpha["log_alpha"])
        loss = temperature_loss(la, log_prob, self.target_entropy)
        g = {"log_alpha": ad.backward(tape, loss)[la]}
        # No weight decay on the temperature: decay would pull alpha toward 1.
        self.log_alpha, self.alpha_opt = adamw_step(self.log_alpha, g, self.alpha_opt,
                                                    cfg.temperature_lr, cfg.beta1, cfg.beta2,
                                                    0.0, inplace=True)
        return self.alpha

    def update(self, batch: Batch, rng: np.random.Generator) -> dict[str, float]:
        shape = (len(batch), self.action_dim)
        noise_next = rng.standard_normal(shape)
        noise = rng.standard_normal(shape)
        c_loss = self.critic_update(batch, noise_next)
        a_loss, logp = self.actor_update(batch, noise)
        alpha = self.temperature_update(logp)
        self.targets = [polyak_update(t, c, self.cfg.tau, inplace=True)
                        for t, c in zip(self.targets, self.critics)]
        return {"critic_loss": c_loss, "actor_loss": a_loss, "alpha": alpha}

    def probe(self, obs, act) -> tuple[np.ndarray, np.ndarray]:
        """Critic-0 pre-head features and concatenated post-ReLU activations."""
        x = np.concatenate([obs, act], axis=1)
        out = nets.forward(self.critic_spec, self._w(self.critics[0]), x)
        acts = np.concatenate([a.data for a in out.activations], axis=1) if out.activations \
            else np.zeros((x.shape[0], 0))
        return out.features.data.astype(np.float64), acts.astype(np.float64)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        _put(out, "actor", self.actor)
        _put_opt(out, "opt/actor", self.actor_opt)
        for i in range(self.n_critics):
            _put(out, f"critic{i}", self.critics[i])
            _put(out, f"target{i}", self.targets[i])
            _put_opt(out, f"opt/critic{i}", self.critic_opts[i])
        _put(out, "temperature", self.log_alpha)
        _put_opt(out, "opt/temperature", self.alpha_opt)
        out["meta/generation"] = np.array([float(self.generation)])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.actor = _get(arrays, "actor", self.actor, self.dtype)
        self.actor_opt = _get_opt(arrays, "opt/actor", self.actor_opt, self.dtype)
        for i in range(self.n_critics):
            self.critics[i] = _get(arrays, f"critic{i}", self.critics[i], self.dtype)
            self.targets[i] = _get(arrays, f"target{i}", self.targets[i], self.dtype)
            self.critic_opts[i] = _get_opt(arrays, f"opt/critic{i}", self.critic_opts[i],
                                           self.dtype)
        self.log_alpha = _get(arrays, "temperature", self.log_alpha, self.dtype)
        self.alpha_opt = _get_opt(arrays, "opt/temperature", self.alpha_opt, self.dtype)
        self.generation = int(arrays["meta/generation"][0])


def _put(out, prefix, tensors):
    for k, v in tensors.items():
        out[f"{prefix}/{k}"] = np.array(v, dtype=np.float64)


def _put_opt(out, prefix, state: AdamWState):
    _put(out, f"{prefix}/m", state.m)
    _put(out, f"{prefix}/v", state.v)
    out[f"{prefix}/step"] = np.array([float(state.step)])


def _get(arrays, prefix, like, dtype):
    return {k: np.array(arrays[f"{prefix}/{k}"], dtype=dtype).reshape(np.shape(like[k]))
            for k in like}


def _get_opt(arrays, prefix, like: AdamWState, dtype) -> AdamWState:
    return AdamWState(_get(arrays, f"{prefix}/m", like.m, dtype),
                      _get(arrays, f"{prefix}/v", like.v, dtype),
                      int(arrays[f"{prefix}/step"][0]))
