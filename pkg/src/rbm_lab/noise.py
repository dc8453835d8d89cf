"""Reproducible Gaussian driver streams.

Every stream is a Philox counter-based generator keyed by the pair
``(seed, stream_id)``, so distinct stream ids give independent sequences and
no stream depends on how many numbers another stream consumed.  A stream is
consumed as a sequence of standard normal 3-vectors; an Euler step uses one
row scaled by ``sqrt(dt)``, a walk-on-spheres jump uses one row for its
direction (and, through ``|z|^2``, its exit time).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_MASK64 = (1 << 64) - 1

#: multiplier of the replica -> stream_id splitting map (golden-ratio constant)
STREAM_SPLIT_CONSTANT = 0x9E3779B97F4A7C15

BLOCK_ROWS = 1 << 15
_FIRST_BLOCK_ROWS = 1 << 9


@dataclass(frozen=True)
class NoiseStream:
    seed: int
    stream_id: int = 0
    dt: float = 1e-4

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValidationError("seed and stream_id must be unsigned 64-bit integers")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive (got {self.dt})")

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.dt)

    def generator(self) -> np.random.Generator:
        key = (self.seed << 64) | self.stream_id
        return np.random.Generator(np.random.Philox(key=key))

    def reader(self, block_rows: int | None = None) -> "NoiseReader":
        return NoiseReader(self, block_rows)

    def normals(self, n: int) -> np.ndarray:
        """First ``n`` standard normal rows of the stream."""
        return self.generator().standard_normal((n, 3))

    def increments(self, n: int) -> np.ndarray:
        """First ``n`` Brownian increments (rows scaled by ``sqrt(dt)``)."""
        return self.sqrt_dt * self.normals(n)

    def with_dt(self, dt: float) -> "NoiseStream":
        return NoiseStream(self.seed, self.stream_id, dt)


class NoiseReader:
    """Sequential block reader over a stream.

    Blocks concatenate to the same sequence whatever their sizes, so the
    block schedule never changes results.  Without a fixed ``block_rows``
    blocks start small and double up to ``BLOCK_ROWS`` (short runs stay cheap).
    """

    def __init__(self, stream: NoiseStream, block_rows: int | None = None):
        self.stream = stream
        self._fixed = block_rows is not None
        self.block_rows = int(block_rows) if self._fixed else _FIRST_BLOCK_ROWS
        self._gen = stream.generator()
        self.rows_drawn = 0

    def next_block(self) -> np.ndarray:
        n = self.block_rows
        if not self._fixed:
            self.block_rows = min(2 * n, BLOCK_ROWS)
        self.rows_drawn += n
        return self._gen.standard_normal((n, 3))


def split_stream_id(replica: int, salt: int = 0) -> int:
    """Fixed map from a replica index to a 64-bit stream id.

    ``salt`` separates experiment families that share a master seed.
    """
    if replica < 0:
        raise ValidationError("replica index must be non-negative")
    return ((replica + 1) * STREAM_SPLIT_CONSTANT + salt) & _MASK64


def replica_stream(seed: int, replica: int, dt: float, salt: int = 0) -> NoiseStream:
    return NoiseStream(seed, split_stream_id(replica, salt), dt)
