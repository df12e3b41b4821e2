"""Tokenization and stable hashing shared by every stage."""

import hashlib
import re

import numpy as np

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def tokenize(text):
    """Lowercase and split on any non-alphanumeric character.

    ``"COVID-19"`` becomes ``["covid", "19"]``.
    """
    return _TOKEN.findall(text.lower())


def hash64(s, seed=0):
    """Stable 64-bit hash of a string (process- and platform-independent)."""
    h = hashlib.blake2b(s.encode("utf-8"), digest_size=8, salt=seed.to_bytes(16, "little"))
    return int.from_bytes(h.digest(), "little")


def splitmix64(state):
    """One step of the splitmix64 generator on a Python int.

    Returns ``(next_state, output)``.
    """
    state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return state, z ^ (z >> 31)


def mix64(x):
    """Vectorized splitmix64 finalizer over a uint64 array (a bijection)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        x = x ^ (x >> np.uint64(31))
    return x
