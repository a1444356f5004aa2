"""Named random streams derived from one root seed."""

import zlib

import numpy as np


def stream_seed(root, name, *ids):
    """A SeedSequence keyed by (root, name, ids); stable across runs and platforms."""
    key = (zlib.crc32(name.encode()),) + tuple(int(i) for i in ids)
    return np.random.SeedSequence(entropy=int(root), spawn_key=key)


def rng_stream(root, name, *ids):
    return np.random.default_rng(stream_seed(root, name, *ids))


def int_seed(root, name, *ids):
    """A 63-bit integer seed for APIs that take ints."""
    return int(stream_seed(root, name, *ids).generate_state(2, np.uint64)[0] >> np.uint64(1))
