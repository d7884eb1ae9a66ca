"""
Counter-based named random substreams.

One root seed is expanded into independent Philox streams addressed by a
name and integer indices, e.g. ``streams.generator('client', k, r)``. The
same address always yields the same stream, independent of the order in
which streams are requested or of how many threads consume them.
"""
import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode('utf-8'))


class RngStreams:

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError(f'Seed must be non-negative, got {seed}.')
        self.seed = int(seed)

    def seed_sequence(self, name: str, *indices: int) -> np.random.SeedSequence:
        spawn_key = (_name_key(name), *(int(i) for i in indices))
        return np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)

    def generator(self, name: str, *indices: int) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(self.seed_sequence(name, *indices)))

    def child_seed(self, name: str, *indices: int) -> int:
        """Derives a plain integer seed, for APIs that take one."""
        state = self.seed_sequence(name, *indices).generate_state(1, np.uint32)
        return int(state[0])

    def __repr__(self):
        return f'RngStreams(seed={self.seed})'
