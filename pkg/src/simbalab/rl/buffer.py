"""Uniform ring-buffer replay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    o: np.ndarray
    a: np.ndarray
    r: float
    o_next: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.rew.shape[0]


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity <= 0:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, action_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, t: Transition) -> None:
        i = self._next
        self.obs[i] = t.o
        self.act[i] = t.a
        self.rew[i] = t.r
        self.next_obs[i] = t.o_next
        self.done[i] = float(t.done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return rng.integers(0, self._size, size=n)

    def gather(self, idx) -> Batch:
        return Batch(self.obs[idx], self.act[idx], self.rew[idx],
                     self.next_obs[idx], self.done[idx])

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform with replacement."""
        return self.gather(self.sample_indices(n, rng))

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        start = self._next if self._size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self._size)]
        return [Transition(self.obs[i].copy(), self.act[i].copy(), float(self.rew[i]),
                           self.next_obs[i].copy(), bool(self.done[i])) for i in order]


def buffer_push(buffer: ReplayBuffer, t: Transition) -> None:
    buffer.push(t)


def buffer_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(n, rng)
