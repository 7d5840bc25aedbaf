"""Deterministic random streams with named, independently-derivable sub-streams.

Every source of randomness in cilab is a `Rng`: a counter-based Philox
generator keyed by a 64-bit (seed, stream_id) pair.  The pair fully
determines the output sequence, and distinct stream ids give statistically
independent streams, so any component can derive its own private stream
(`rng.derive("vae-init", class_id)`) and consume it without coordinating
with anyone else.  This is what makes per-class training order-invariant
and multi-worker runs schedule-independent.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .exceptions import DomainError

_MASK64 = (1 << 64) - 1


def _hash_stream_id(parent_stream_id: int, purpose: str, ids: tuple) -> int:
    """Stable 64-bit hash of (parent stream, purpose tag, integer ids)."""
    text = "%d|%s|%s" % (parent_stream_id, purpose, ",".join(str(i) for i in ids))
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Philox-backed generator keyed by (seed, stream_id).

    Instances are never shared between workers; derive a child stream
    instead.  Derivation hashes the parent's stream id with a purpose tag
    and optional integer ids, so the same (seed, path-of-tags) always
    reaches the same stream no matter when or where it is derived.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, purpose: str, *ids: int) -> "Rng":
        """Independent child stream named by a purpose tag and integer ids."""
        return Rng(self.seed, _hash_stream_id(self.stream_id, purpose, ids))

    def standard_normal(self, shape) -> np.ndarray:
        if np.prod(shape) < 1:
            raise DomainError("need at least one draw")
        return self._gen.standard_normal(shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream_id={self.stream_id})"


def rng_standard_normal(rng: Rng, n: int) -> np.ndarray:
    """n draws from N(0, 1), deterministic given the rng's (seed, stream, counter)."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return rng.standard_normal(n)
