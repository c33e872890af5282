"""Named random sub-streams derived from one run seed.

The stream key is the first 8 bytes (little-endian) of
``sha256(f"{seed}:{name}")``; adding a new consumer never shifts the
draws seen by existing ones.
"""

import hashlib

import numpy as np

STREAMS = ("init", "env", "explore", "sample", "eval")


def stream_key(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stream_key(seed, name)))
