"""
@file rng.py
@brief Deterministic, splittable random streams
@details Streams are Philox (counter-based, 64-bit) generators keyed by a
SeedSequence built from the run seed and a path of names, so each component
("init", "fusion", 0, "joints") draws from its own reproducible stream
independent of how many numbers other components consumed.
"""

import zlib

import numpy as np


def _path_key(part) -> int:
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *path) -> np.random.Generator:
    """
    @brief Build the generator for ``seed`` split along ``path``
    @param seed non-negative run seed
    @param path hashable names identifying the consumer
    @return numpy Generator backed by Philox
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_path_key(p) for p in path))
    return np.random.Generator(np.random.Philox(sequence))


def gaussian(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Gaussian(0, std) draws as float64."""
    return rng.normal(0.0, std, size=shape).astype(np.float64)
