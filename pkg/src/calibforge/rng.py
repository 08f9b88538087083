"""
Counter-based Random Streams
============================

Every random draw in calibforge goes through an :class:`RngStream`. A stream is keyed by
a ``(seed, stream_id)`` pair and backed by NumPy's Philox bit generator, whose 128-bit key
holds exactly those two 64-bit words. Streams with the same key produce the same draws on
every platform, and streams with different ids are independent, so work can be split per
example or per batch without sharing a mutable generator.

Stream ids are derived from human-readable labels::

    >>> from calibforge.rng import RngStream
    >>> rng = RngStream(seed=7).child("train-mask", 3, 12)   # epoch 3, example 12
    >>> rng.uniform((2, 4)).shape
    (2, 4)
"""

import hashlib
from typing import Tuple, Union

import numpy as np

_MASK64 = (1 << 64) - 1

Shape = Union[int, Tuple[int, ...]]


def derive_stream(*labels: object) -> int:
    """
    Map a tuple of labels to a 64-bit stream id.

    The mapping is a BLAKE2b digest of the labels joined with ``|``, so it is stable across
    processes and Python versions (unlike ``hash()``).

    Args:
        *labels: Strings and integers identifying the stream

    Returns:
        Unsigned 64-bit stream id
    """
    text = "|".join(str(label) for label in labels)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """
    Reproducible random stream keyed by ``(seed, stream_id)``.

    Attributes:
        seed (int): 64-bit seed
        stream (int): 64-bit stream id

    Args:
        seed: Any integer; reduced modulo 2**64
        stream: Stream id; reduced modulo 2**64 (default: 0)
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels: object) -> "RngStream":
        """Return an independent stream for ``labels`` under the same seed."""
        return RngStream(self.seed, derive_stream(self.stream, *labels))

    @property
    def counter(self) -> int:
        """Philox block counter (advances as draws are made)."""
        state = self._gen.bit_generator.state["state"]["counter"]
        return int(sum(int(word) << (64 * i) for i, word in enumerate(state)))

    def uniform(self, shape: Shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Draw float64 values uniformly from ``[low, high)``."""
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape: Shape, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        """Draw float64 values from ``N(loc, scale**2)``."""
        return self._gen.normal(loc, scale, size=shape)

    def integers(self, low: int, high: int, shape: Shape) -> np.ndarray:
        """Draw int64 values uniformly from ``[low, high)``."""
        return self._gen.integers(low, high, size=shape, dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Return a random permutation of ``range(n)``."""
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream:#018x})"


__all__ = ["RngStream", "derive_stream"]
