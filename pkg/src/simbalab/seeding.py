"""Derivation of every random stream from one root seed.

The seed of stream ``name`` at ``index`` is the first 32-bit word of
``numpy.random.SeedSequence([root, crc32(name), index])``. Streams used by
training: ``env``, ``wrapper``, ``init/actor``, ``init/critic<i>`` (index =
reset generation), ``sampling``, ``exploration``, ``probe``.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_seed(root: int, name: str, index: int = 0) -> int:
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode()), int(index)])
    return int(ss.generate_state(1)[0])


def stream_rng(root: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root, name, index))


def seed_fn(root: int):
    """Closure ``(name, index) -> seed`` bound to ``root``."""
    return lambda name, index=0: stream_seed(root, name, index)
