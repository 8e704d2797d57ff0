"""Deterministic RNG stream derivation.

Every source of randomness in the package is a named substream of a single
master seed. A stream is identified by (master_seed, path) where path is a
tuple of strings and integers, e.g. ("certify", 17, "estimation"). The
mixing function is documented and platform-independent:

- each string part is hashed to a 64-bit integer via SHA-256 (first 8 bytes,
  little-endian) of the UTF-8 bytes prefixed with "s:",
- each integer part is used as-is (offset into nonnegative range),
- the entropy sequence [master_seed, part_1, part_2, ...] is fed to
  numpy's SeedSequence, whose hashing gives well-separated child states.

Identical (master_seed, path) always yields a bit-identical generator state,
independent of creation order, scheduling, or platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = ["StreamId"]


def _mix_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream path integers must be nonnegative, got {part}")
        return int(part)
    if isinstance(part, str):
        digest = hashlib.sha256(b"s:" + part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"stream path parts must be str or int, got {type(part).__name__}")


@dataclass(frozen=True)
class StreamId:
    """Provenance record for one RNG stream: a master seed plus a derivation path."""

    master_seed: int
    path: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")
        object.__setattr__(self, "path", tuple(self.path))
        for part in self.path:
            _mix_part(part)  # validate types early

    def child(self, *parts) -> "StreamId":
        """Derive a named substream, e.g. stream.child("certify", 17)."""
        return StreamId(self.master_seed, self.path + tuple(parts))

    def generator(self) -> np.random.Generator:
        """Fresh PCG64 generator for this stream; same stream, same bits."""
        entropy = [self.master_seed] + [_mix_part(p) for p in self.path]
        return np.random.default_rng(np.random.SeedSequence(entropy))

    def as_json(self) -> dict:
        return {"master_seed": self.master_seed, "path": list(self.path)}

    @staticmethod
    def from_json(obj: dict) -> "StreamId":
        return StreamId(int(obj["master_seed"]), tuple(obj["path"]))
