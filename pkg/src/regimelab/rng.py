"""Reproducible random streams.

A single master seed fans out into independent subsystem streams
(chain-clock, brownian, bridge, ...) through a counter-based Philox
generator keyed by a stable hash of (seed, label, indices).  Streams with
different labels or indices are independent by construction, which makes
the chain/noise independence of the model structural rather than
accidental: the Poisson clock driving the switching chain and the Brownian
increments driving the diffusion never share a key.
"""

import hashlib

import numpy as np


def stream_key(seed, label, *indices):
    """128-bit Philox key derived from (seed, label, indices).

    Args:
        seed: master seed, any integer.
        label: subsystem name, e.g. "chain-clock" or "brownian".
        indices: optional integers (block index, path index, ...).

    Returns:
        Array of two uint64 words.
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    h.update(b"|")
    h.update(str(label).encode())
    for ix in indices:
        h.update(b"|")
        h.update(str(int(ix)).encode())
    return np.frombuffer(h.digest()[:16], dtype=np.uint64).copy()


def stream(seed, label, *indices):
    """Independent Generator for the given (seed, label, indices) key."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, label, *indices)))
