"""Deterministic 64-bit PRNG used for every random decision in the toolkit.

The generator is a plain splitmix64: a 64-bit counter advanced by the golden
gamma, pushed through an avalanching finalizer.  It is tiny, has no external
state, and is trivially portable, so split assignments and synthetic datasets
can be reproduced bit-for-bit from (seed, run_index) by any implementation
of the same mixing function.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(value: int) -> int:
    """splitmix64 finalizer: avalanche a 64-bit value."""
    z = value & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive(seed: int, *keys: int) -> int:
    """Derive an independent substream seed from a base seed and integer keys.

    Each key is avalanched and folded in, so (seed, 1, 0) and (seed, 0, 1)
    land in unrelated streams.
    """
    state = mix64(seed)
    for key in keys:
        state = mix64(state ^ mix64(key & _MASK) ^ _GAMMA)
    return state


class SplitMix64:
    """Sequential splitmix64 stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return mix64(self._state)

    def below(self, bound: int) -> int:
        """Uniform-ish integer in [0, bound). Plain modulo; the bias for the
        bounds used here (dataset sizes << 2^64) is immaterial and keeping the
        mapping single-step makes it easy to reimplement."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return self.next_u64() % bound

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
