"""Seed derivation: one global seed fans out to named, independent streams."""

import zlib

import numpy as np


def component_seed(seed: int, *names) -> np.random.SeedSequence:
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def component_rng(seed: int, *names) -> np.random.Generator:
    """Generator for the stream ``names`` under ``seed``.

    The same ``(seed, *names)`` always gives the same stream; different names
    give statistically independent streams.
    """
    return np.random.default_rng(component_seed(seed, *names))
