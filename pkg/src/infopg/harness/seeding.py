"""Named random streams derived from one master seed.

Each stream is keyed by a name, so adding a stream or an agent never shifts
the draws of any other stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        rng = self._cache.get(name)
        if rng is None:
            rng = self._cache[name] = stream(self.seed, name)
        return rng

    def init(self, agent: int) -> np.random.Generator:
        return self.get(f"init/agent{agent}")

    def sample(self, agent: int) -> np.random.Generator:
        return self.get(f"sample/agent{agent}")
