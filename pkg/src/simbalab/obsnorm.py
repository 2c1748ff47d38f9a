"""Running statistics normalization and the alternative observation normalizers.

``RunningStats`` follows the recursion

    delta = o - mu
    mu    <- mu + delta / t
    var   <- (t - 1) / t * (var + delta**2 / t)

which yields the population (biased) variance of the samples seen so far.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nets

KINDS = (
    "rsnorm", "env-wrapper-rsnorm", "fixed-initial-n", "oracle",
    "layernorm-obs", "batchnorm-obs", "none",
)
DEFAULT_EPS = 1e-8


class OracleStatsError(ValueError):
    pass


@dataclass(frozen=True)
class RunningStats:
    mu: np.ndarray
    sigma2: np.ndarray
    t: int = 0
    eps: float = DEFAULT_EPS

    @classmethod
    def zeros(cls, dim: int, eps: float = DEFAULT_EPS) -> "RunningStats":
        return cls(np.zeros(dim), np.zeros(dim), 0, eps)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def rs_update(stats: RunningStats, o) -> RunningStats:
    o = np.asarray(o, dtype=np.float64)
    if o.shape != stats.mu.shape:
        raise ValueError(f"rs_update: observation shape {o.shape} != {stats.mu.shape}")
    t = stats.t + 1
    delta = o - stats.mu
    mu = stats.mu + delta / t
    sigma2 = (t - 1) / t * (stats.sigma2 + delta * delta / t)
    return replace(stats, mu=mu, sigma2=sigma2, t=t)


def rs_apply(stats: RunningStats, o) -> np.ndarray:
    """(o - mu) / sqrt(sigma2 + eps); works on a single vector or a batch."""
    o = np.asarray(o, dtype=np.float64)
    return (o - stats.mu) / np.sqrt(stats.sigma2 + stats.eps)


class FrozenStats:
    """Read-only view used during evaluation; ``update`` is a no-op."""

    __slots__ = ("_stats",)

    def __init__(self, stats: RunningStats):
        self._stats = stats

    @property
    def stats(self) -> RunningStats:
        return self._stats

    @property
    def t(self) -> int:
        return self._stats.t

    def update(self, o) -> "FrozenStats":
        return self

    def apply(self, o) -> np.ndarray:
        return rs_apply(self._stats, o)


def freeze_for_eval(stats: RunningStats) -> FrozenStats:
    return FrozenStats(stats)


def load_oracle_stats(path, dim: int, eps: float = DEFAULT_EPS) -> RunningStats:
    """Read a ``dim,mean,var`` CSV into fixed statistics."""
    path = Path(path)
    if not path.exists():
        raise OracleStatsError(f"oracle statistics file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["dim", "mean", "var"]:
            raise OracleStatsError(f"{path}: header must be dim,mean,var, got {reader.fieldnames}")
        rows = sorted(reader, key=lambda r: int(r["dim"]))
    if len(rows) != dim or [int(r["dim"]) for r in rows] != list(range(dim)):
        raise OracleStatsError(f"{path}: expected dims 0..{dim - 1}, got {len(rows)} records")
    mu = np.array([float(r["mean"]) for r in rows])
    var = np.array([float(r["var"]) for r in rows])
    if np.any(var < 0):
        raise OracleStatsError(f"{path}: negative variance")
    return RunningStats(mu, var, 0, eps)


def save_oracle_stats(path, stats: RunningStats) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "mean", "var"])
        for i, (m, v) in enumerate(zip(stats.mu, stats.sigma2)):
            w.writerow([i, repr(float(m)), repr(float(v))])


class ObservationNormalizer:
    """One normalizer per agent, shared by actor and critic inputs.

    The collection loop calls :meth:`observe` once per environment step and
    stores whatever :meth:`to_buffer` returns. Networks see
    :meth:`for_acting` / :meth:`for_training` outputs.

    kind semantics:

    * ``rsnorm``: buffer holds raw observations, current statistics are
      applied both when acting and when training.
    * ``env-wrapper-rsnorm``: observations are normalized once at collection
      time and stored normalized; training uses them as stored.
    * ``fixed-initial-n``: like rsnorm, but statistics stop updating after
      ``n_initial`` environment steps.
    * ``oracle``: statistics come from a file and never change.
    * ``layernorm-obs``: per-observation layer normalization without affine.
    * ``batchnorm-obs``: training minibatch statistics during updates, an
      exponential average of them when acting.
    * ``none``: identity.
    """

    def __init__(self, kind: str, dim: int, *, n_initial: int = 5000,
                 oracle_path=None, eps: float = DEFAULT_EPS, bn_momentum: float = 0.01):
        if kind not in KINDS:
            raise ValueError(f"unknown normalizer {kind!r}; expected one of {KINDS}")
        self.kind = kind
        self.dim = dim
        self.n_initial = n_initial
        self.bn_momentum = bn_momentum
        self.frozen = False
        if kind == "oracle":
            if oracle_path is None:
                raise OracleStatsError("oracle normalizer requires a statistics file")
            self.stats = load_oracle_stats(oracle_path, dim, eps)
        else:
            self.stats = RunningStats.zeros(dim, eps)
        self.bn_mu = np.zeros(dim)
        self.bn_var = np.ones(dim)

    @property
    def stores_normalized(self) -> bool:
        return self.kind == "env-wrapper-rsnorm"

    def observe(self, o) -> None:
        """Update statistics with one environment observation."""
        if self.frozen:
            return
        if self.kind in ("rsnorm", "env-wrapper-rsnorm"):
            self.stats = rs_update(self.stats, o)
        elif self.kind == "fixed-initial-n" and self.stats.t < self.n_initial:
            self.stats = rs_update(self.stats, o)

    def to_buffer(self, o) -> np.ndarray:
        o = np.asarray(o, dtype=np.float64)
        if self.stores_normalized:
            return rs_apply(self.stats, o)
        return o.copy()

    def for_acting(self, o) -> np.ndarray:
        o = np.asarray(o, dtype=np.float64)
        if self.kind in ("rsnorm", "env-wrapper-rsnorm", "fixed-initial-n", "oracle"):
            return rs_apply(self.stats, o)
        if self.kind == "layernorm-obs":
            return _plain_layer_norm(o)
        if self.kind == "batchnorm-obs":
            return (o - self.bn_mu) / np.sqrt(self.bn_var + nets.LN_EPS)
        return o

    def for_training(self, stored, *, update_batch_stats: bool = True) -> np.ndarray:
        """Normalize a minibatch drawn from the buffer."""
        stored = np.asarray(stored, dtype=np.float64)
        if self.kind == "env-wrapper-rsnorm":
            return stored
        if self.kind == "batchnorm-obs":
            mu = stored.mean(axis=0)
            var = stored.var(axis=0)
            if update_batch_stats and not self.frozen:
                m = self.bn_momentum
                self.bn_mu = (1 - m) * self.bn_mu + m * mu
                self.bn_var = (1 - m) * self.bn_var + m * var
            return (stored - mu) / np.sqrt(var + nets.LN_EPS)
        return self.for_acting(stored)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "norm/mu": self.stats.mu, "norm/sigma2": self.stats.sigma2,
            "norm/t": np.array([float(self.stats.t)]),
            "norm/bn_mu": self.bn_mu, "norm/bn_var": self.bn_var,
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.stats = RunningStats(arrays["norm/mu"].copy(), arrays["norm/sigma2"].copy(),
                                  int(arrays["norm/t"][0]), self.stats.eps)
        self.bn_mu = arrays["norm/bn_mu"].copy()
        self.bn_var = arrays["norm/bn_var"].copy()


def _plain_layer_norm(o: np.ndarray) -> np.ndarray:
    mu = o.mean(axis=-1, keepdims=True)
    var = o.var(axis=-1, keepdims=True)
    return (o - mu) / np.sqrt(var + nets.LN_EPS)


def normalize_for(kind: str, o, *, stats: RunningStats | None = None, batch=None) -> np.ndarray:
    """Stateless form: normalize ``o`` under ``kind`` given the context it needs.

    ``stats`` is required for the running-statistics kinds; ``batch`` (the
    training minibatch) for ``batchnorm-obs``, defaulting to ``o`` itself.
    """
    o = np.asarray(o, dtype=np.float64)
    if kind not in KINDS:
        raise ValueError(f"unknown normalizer {kind!r}")
    if kind == "none":
        return o
    if kind == "layernorm-obs":
        return _plain_layer_norm(o)
    if kind == "batchnorm-obs":
        b = o if batch is None else np.asarray(batch, dtype=np.float64)
        return (o - b.mean(axis=0)) / np.sqrt(b.var(axis=0) + nets.LN_EPS)
    if stats is None:
        raise ValueError(f"{kind} needs running statistics")
    return rs_apply(stats, o)
