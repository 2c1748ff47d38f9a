"""Pendulum swing-up and a distractor-dimension observation wrapper.

The pendulum matches the classic-control definition: g=10, m=1, l=1,
dt=0.05, torque in [-2, 2], speed clipped to [-8, 8], and cost
theta^2 + 0.1 * theta_dot^2 + 0.001 * u^2 with theta measured from upright.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

G = 10.0
MASS = 1.0
LENGTH = 1.0
DT = 0.05
MAX_SPEED = 8.0
MAX_TORQUE = 2.0
EPISODE_LENGTH = 200


def angle_normalize(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class PendulumState:
    theta: float
    theta_dot: float


def pendulum_obs(state: PendulumState) -> np.ndarray:
    return np.array([math.cos(state.theta), math.sin(state.theta), state.theta_dot])


def pendulum_reset(seed) -> tuple[PendulumState, np.ndarray]:
    """Draw theta ~ U(-pi, pi], theta_dot ~ U[-1, 1]; ``seed`` may be a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = angle_normalize(float(rng.uniform(-math.pi, math.pi)))
    theta_dot = float(rng.uniform(-1.0, 1.0))
    state = PendulumState(theta, theta_dot)
    return state, pendulum_obs(state)


def pendulum_step(state: PendulumState, u: float) -> tuple[PendulumState, np.ndarray, float, bool]:
    u = float(np.clip(u, -MAX_TORQUE, MAX_TORQUE))
    th = angle_normalize(state.theta)
    thdot = state.theta_dot
    reward = -(th * th + 0.1 * thdot * thdot + 0.001 * u * u)
    thdot = thdot + (3.0 * G / (2.0 * LENGTH) * math.sin(th)
                     + 3.0 / (MASS * LENGTH * LENGTH) * u) * DT
    thdot = min(max(thdot, -MAX_SPEED), MAX_SPEED)
    new = PendulumState(angle_normalize(th + thdot * DT), thdot)
    return new, pendulum_obs(new), reward, False


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    action_dim: int
    action_bound: float
    episode_length: int


class Pendulum:
    """Stateful wrapper around :func:`pendulum_reset` / :func:`pendulum_step`."""

    spec = EnvSpec(obs_dim=3, action_dim=1, action_bound=MAX_TORQUE,
                   episode_length=EPISODE_LENGTH)

    def __init__(self, seed=None):
        self.rng = np.random.default_rng(seed)
        self.state: PendulumState | None = None

    def reset(self) -> np.ndarray:
        self.state, obs = pendulum_reset(self.rng)
        return obs

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise RuntimeError("step() before reset()")
        u = float(np.asarray(action, dtype=float).reshape(-1)[0])
        self.state, obs, reward, done = pendulum_step(self.state, u)
        return obs, reward, done


@dataclass(frozen=True)
class WrapperSpec:
    distractor_dims: int = 0
    distractor_scales: tuple[float, ...] = ()
    true_dim_scales: tuple[float, ...] | None = None

    @classmethod
    def log_uniform(cls, distractor_dims: int, seed, low: float = 1e-2, high: float = 1e2,
                    true_dim_scales=None) -> "WrapperSpec":
        """Scales drawn log-uniform in [low, high] from ``seed``."""
        rng = np.random.default_rng(seed)
        scales = np.exp(rng.uniform(math.log(low), math.log(high), size=distractor_dims))
        tds = None if true_dim_scales is None else tuple(float(s) for s in true_dim_scales)
        return cls(distractor_dims, tuple(float(s) for s in scales), tds)

    def __post_init__(self):
        if self.distractor_dims < 0:
            raise ValueError("distractor_dims must be non-negative")
        if len(self.distractor_scales) != self.distractor_dims:
            raise ValueError("need one scale per distractor dimension")
        if any(s <= 0 for s in self.distractor_scales):
            raise ValueError("distractor scales must be positive")


def wrap_observation(spec: WrapperSpec, obs, rng: np.random.Generator) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if spec.true_dim_scales is not None:
        obs = obs * np.asarray(spec.true_dim_scales)
    if spec.distractor_dims == 0:
        return obs.copy()
    noise = np.asarray(spec.distractor_scales) * rng.standard_normal(spec.distractor_dims)
    return np.concatenate([obs, noise])


class DistractorWrapper:
    """Appends scaled Gaussian noise dimensions to every observation."""

    def __init__(self, env, spec: WrapperSpec, seed=None):
        self.env = env
        self.wrapper_spec = spec
        self.rng = np.random.default_rng(seed)
        inner = env.spec
        self.spec = EnvSpec(inner.obs_dim + spec.distractor_dims, inner.action_dim,
                            inner.action_bound, inner.episode_length)

    def reset(self) -> np.ndarray:
        return wrap_observation(self.wrapper_spec, self.env.reset(), self.rng)

    def step(self, action):
        obs, reward, done = self.env.step(action)
        return wrap_observation(self.wrapper_spec, obs, self.rng), reward, done


def make_env(name: str = "pendulum", distractors: int = 0, seed: int = 0,
             wrapper_seed: int | None = None):
    """Build an environment; distractor scales come from ``wrapper_seed``."""
    if name != "pendulum":
        raise ValueError(f"unknown environment {name!r}")
    ss = np.random.SeedSequence(seed)
    env_seed, noise_seed = ss.spawn(2)
    env = Pendulum(env_seed)
    if distractors == 0:
        return env
    spec = WrapperSpec.log_uniform(distractors, seed if wrapper_seed is None else wrapper_seed)
    return DistractorWrapper(env, spec, noise_seed)
