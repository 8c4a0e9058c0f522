"""Counter-based SplitMix64 substreams.

Every simulated subject owns an independent stream keyed by
``(base_seed, scenario_id, replicate_index, subject_index)``.  Draw ``n`` of
a stream with key ``k`` is the ``n``-th SplitMix64 output started from state
``k``, so any draw can be computed directly without touching the others.
That is what lets :func:`vecurve.hazard_sim.simulate_trial` advance all
subjects at once while staying bit-identical to the scalar path and
independent of execution order.

Uniforms are ``((z >> 11) + 0.5) * 2**-53`` and lie strictly inside (0, 1).
"""

import hashlib

import numpy as np

__all__ = ["CounterStream", "derive_key", "label_to_int", "uniforms"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _finalize(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def label_to_int(label):
    """Map a scenario label (int or str) to a 64-bit integer."""
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_key(*parts):
    """Mix integer parts into a 64-bit stream key.

    The last part may be an integer array, in which case an array of keys is
    returned (one per element).
    """
    with np.errstate(over="ignore"):
        key = np.uint64(0)
        for part in parts:
            if isinstance(part, np.ndarray):
                part = part.astype(np.uint64)
            else:
                part = np.uint64(label_to_int(part))
            key = _finalize((key ^ part) + _GAMMA)
    return key


def uniforms(keys, counter):
    """Draw number ``counter`` of each stream in ``keys``.

    ``counter`` may be a scalar or an array broadcastable against ``keys``.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _finalize(keys + (counter + np.uint64(1)) * _GAMMA)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


class CounterStream:
    """Sequential view of one substream, usable wherever ``rng.random()`` is."""

    def __init__(self, key, position=0):
        self.key = np.uint64(key)
        self.position = int(position)

    def random(self, size=None):
        if size is None:
            u = float(uniforms(self.key, self.position))
            self.position += 1
            return u
        n = int(np.prod(size))
        u = uniforms(np.full(n, self.key), np.arange(self.position, self.position + n))
        self.position += n
        return u.reshape(size)
