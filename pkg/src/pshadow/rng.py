"""Counter-based random streams.

Every random draw in the pipeline comes from a Philox generator whose key is
derived from ``(seed, purpose)`` and whose initial counter encodes the task
coordinates, e.g. ``(node, t_start, delta)``.  Results therefore do not depend
on evaluation order or on how work is split across threads.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

PURPOSES = {
    "network": 1,
    "pop": 2,
    "attr": 3,
    "rand": 4,
    "split": 5,
    "synth": 6,
}

_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=64)
def _key(seed: int, purpose: str) -> tuple[int, int]:
    try:
        tag = PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown rng purpose {purpose!r}") from None
    state = np.random.SeedSequence([seed & _MASK64, tag]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def stream(seed: int, purpose: str, *coords: int) -> np.random.Generator:
    """Return an independent generator for ``coords`` under ``(seed, purpose)``.

    At most three coordinates are supported; each must be a non-negative
    integer below 2**64.  The lowest counter word is left free for the draws
    themselves.
    """
    if len(coords) > 3:
        raise ValueError("at most three stream coordinates")
    words = [0, 0, 0, 0]
    for pos, c in enumerate(coords, start=1):
        c = int(c)
        if c < 0 or c > _MASK64:
            raise ValueError(f"stream coordinate out of range: {c}")
        words[pos] = c
    bitgen = np.random.Philox(key=np.array(_key(seed, purpose), dtype=np.uint64),
                              counter=np.array(words, dtype=np.uint64))
    return np.random.Generator(bitgen)
