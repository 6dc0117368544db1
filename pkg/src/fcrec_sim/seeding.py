"""
Odvozování nezávislých RNG proudů z jednoho kořenového seedu.

Každý mechanismus (split, init, sampling, negatives, memory, noise) má vlastní
pojmenovaný proud, takže vypnutí jednoho mechanismu neposune náhodnost ostatních.
"""

import zlib

import numpy as np

STREAMS = ("split", "init", "sampling", "negatives", "memory", "noise")


def stream_key(stream: str) -> int:
    """Stabilní (mezi procesy) hash názvu proudu."""
    return zlib.crc32(stream.encode("utf-8"))


def derive_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    """
    Vytvoř generátor pro daný proud a klíče (user, block, round, ...).

    Args:
        seed: Kořenový seed experimentu
        stream: Název proudu (viz STREAMS)
        *keys: Nezáporné celočíselné klíče

    Returns:
        numpy Generator deterministický v (seed, stream, keys)
    """
    entropy = [int(seed), stream_key(stream), *(int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
