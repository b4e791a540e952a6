"""
Numeric core: dense float64 matrices and labelled deterministic random streams.

Every randomized step in the simulator draws from an ``RngStream``. A stream is
identified by the experiment's master seed plus a structured label (purpose,
client index, round index), so the same label always replays the same numbers
and no generator state is shared between clients or rounds.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import numpy.typing as npt

from fediot.errors import ConfigurationError

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

_SEED_MASK = (1 << 64) - 1


def as_matrix(values, cols: Optional[int] = None) -> Matrix:
    """
    Coerce ``values`` into a C-contiguous 2-D float64 array.

    Args:
        values: Anything ``numpy.asarray`` accepts
        cols: Expected column count (checked when given)

    Returns:
        Matrix view or copy of the input

    Raises:
        ConfigurationError: If the input is not two-dimensional or has the wrong width
    """
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ConfigurationError(f"Expected a 2-D matrix, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise ConfigurationError(f"Expected {cols} columns, got {m.shape[1]}")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit conformance check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigurationError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"Cannot multiply {a.shape} by {b.shape}")
    return a @ b


def col_mean_std(m: Matrix) -> Tuple[Vector, Vector]:
    """
    Per-column mean and population standard deviation (divide by n).

    Raises:
        ConfigurationError: If the matrix has no rows
    """
    if m.ndim != 2 or m.shape[0] < 1:
        raise ConfigurationError("col_mean_std needs a matrix with at least one row")
    return m.mean(axis=0), m.std(axis=0, ddof=0)


def _purpose_code(purpose: str) -> int:
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class RngStream:
    """
    A reproducible source of randomness keyed by (master_seed, label).

    ``client`` and ``round`` are ``None`` when the purpose is not client- or
    round-specific. Streams are values: deriving or drawing never mutates them.
    """
    master_seed: int
    purpose: str = "root"
    client: Optional[int] = None
    round: Optional[int] = None

    def derive(self, purpose: str, client: Optional[int] = None,
               round: Optional[int] = None) -> RngStream:
        """Return the stream with the same master seed and a new label."""
        return replace(self, purpose=purpose, client=client, round=round)

    def seed_sequence(self) -> np.random.SeedSequence:
        spawn_key = (
            _purpose_code(self.purpose),
            0 if self.client is None else self.client + 1,
            0 if self.round is None else self.round + 1,
        )
        return np.random.SeedSequence(entropy=self.master_seed & _SEED_MASK, spawn_key=spawn_key)

    def generator(self) -> np.random.Generator:
        """A fresh PCG64 generator positioned at the start of this stream."""
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))


def rng_draw(stream: RngStream, n: int) -> Vector:
    """Draw ``n`` uniform values in [0, 1) from the start of ``stream``."""
    if n < 0:
        raise ConfigurationError(f"Cannot draw a negative count ({n})")
    return stream.generator().random(n)


def rng_shuffle(stream: RngStream, n: int) -> npt.NDArray[np.int64]:
    """Uniform permutation of ``0..n-1`` determined by ``stream``."""
    if n < 0:
        raise ConfigurationError(f"Cannot permute a negative count ({n})")
    return stream.generator().permutation(n).astype(np.int64)
