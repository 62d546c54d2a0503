"""Named random streams.

Each subsystem draws from its own stream derived from the run seed and a
stream name, so adding a subsystem never perturbs another one's draws.
"""
import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def seed_sequence(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_key(name),))


def stream(seed: int, name: str) -> np.random.Generator:
    """A PCG64 generator for the named stream of `seed`."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, name)))


def shard_streams(seed: int, name: str, n_shards: int) -> list[np.random.Generator]:
    children = seed_sequence(seed, name).spawn(n_shards)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]
