"""Seeded, splittable random streams.

Philox is counter based, so every stream is reproducible from ``(seed, path)``
regardless of how many numbers other streams consumed.
"""
import numpy as np


def make_rng(seed, *path):
    """Generator for ``seed`` and an optional stream path, e.g. ``make_rng(0, 1)``."""
    ss = np.random.SeedSequence(int(seed))
    for i in path:
        ss = ss.spawn(int(i) + 1)[int(i)]
    return np.random.Generator(np.random.Philox(ss))


def split(rng, n):
    """``n`` independent child generators of ``rng``."""
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(n)]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__uint64__": [int(v) for v in obj]}
    return obj


def _arrays(obj):
    if isinstance(obj, dict):
        if set(obj) == {"__uint64__"}:
            return np.array(obj["__uint64__"], dtype=np.uint64)
        return {k: _arrays(v) for k, v in obj.items()}
    return obj


def get_state(rng):
    """Bit-generator state as JSON-serializable builtins."""
    return _plain(rng.bit_generator.state)


def set_state(rng, state):
    rng.bit_generator.state = _arrays(state)
    return rng
