"""Named, reproducible random streams derived from a single master seed."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

STREAM_NAMES = ("noise", "membership", "lone", "cancel", "strategy", "diffusion")


@dataclass
class RngStreams:
    """One generator per stream name, all spawned from ``master_seed``.

    The child key of each stream is a CRC of its name, so adding a stream
    never shifts the others and the mapping is stable across versions.
    """

    master_seed: int
    _cache: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in STREAM_NAMES:
            raise KeyError(f"unknown stream {name!r}; expected one of {STREAM_NAMES}")
        if name not in self._cache:
            ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(zlib.crc32(name.encode()),))
            self._cache[name] = np.random.Generator(np.random.PCG64(ss))
        return self._cache[name]

    def child(self, index: int) -> "RngStreams":
        """Independent stream family for sub-experiment ``index``."""
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(0x7FFFFFFF, int(index)))
        return RngStreams(int(ss.generate_state(1, np.uint64)[0]))
