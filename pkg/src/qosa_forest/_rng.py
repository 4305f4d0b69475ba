"""Seed derivation.

Every random draw in the package comes from a child stream identified by
``(master seed, tag, ...)``.  Children are derived with
:class:`numpy.random.SeedSequence` so that results never depend on the order
in which streams are consumed.
"""

import zlib

import numpy as np


def _key(tags):
    out = []
    for tag in tags:
        if isinstance(tag, str):
            out.append(zlib.crc32(tag.encode("utf-8")))
        else:
            out.append(int(tag))
    return tuple(out)


def seed_sequence(seed, *tags):
    return np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=_key(tags))


def child_seed(seed, *tags):
    """Return a 63-bit integer seed derived from ``seed`` and ``tags``."""
    word = seed_sequence(seed, *tags).generate_state(1, np.uint64)[0]
    return int(word >> np.uint64(1))


def child_rng(seed, *tags):
    return np.random.default_rng(seed_sequence(seed, *tags))


def tree_seeds(seed, n_trees):
    """32-bit seeds for the per-tree generators of a forest.

    Word ``l`` depends only on ``seed`` and ``l``, so growing a forest with
    more trees keeps the first ones unchanged.
    """
    return seed_sequence(seed, "trees").generate_state(n_trees, np.uint32)
