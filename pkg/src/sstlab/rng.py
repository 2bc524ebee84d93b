"""Portable deterministic PRNG used for all sequence/benchmark generation.

Seed derivation uses splitmix64; streams are xorshift128+. Both are fully
specified here so golden walks are reproducible across implementations:

* splitmix64: state advances by 0x9E3779B97F4A7C15; output is the mixed
  state (xor-shift by 30/27/31 with multipliers 0xBF58476D1CE4E5B9 and
  0x94D049BB133111EB).
* xorshift128+: two 64-bit words seeded from consecutive splitmix64
  outputs; next() is the usual 23/17/26 shift sequence, returning
  (s0 + s1) mod 2^64.
* uniform() takes the top 53 bits of next() divided by 2^53.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    z = z ^ (z >> 31)
    return state, z


def derive_seed(*parts: int) -> int:
    """Fold integer parts into a single 64-bit seed, order-sensitive."""
    state = 0x5356_4C41_4253_5351  # arbitrary fixed tag
    for p in parts:
        state = (state ^ (p & MASK64)) & MASK64
        state, _ = splitmix64_next(state)
    _, out = splitmix64_next(state)
    return out


class XorShift128Plus:
    """Small deterministic stream generator (not for cryptography)."""

    def __init__(self, seed: int):
        state = seed & MASK64
        state, s0 = splitmix64_next(state)
        state, s1 = splitmix64_next(state)
        # the all-zero state is invalid for xorshift
        self._s0 = s0 or 0x1
        self._s1 = s1 or 0x2

    def next_u64(self) -> int:
        s1, s0 = self._s0, self._s1
        self._s0 = s0
        s1 ^= (s1 << 23) & MASK64
        s1 ^= s1 >> 17
        s1 ^= s0 ^ (s0 >> 26)
        self._s1 = s1
        return (self._s0 + self._s1) & MASK64

    def uniform(self) -> float:
        """Float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def randrange(self, n: int) -> int:
        """Integer in [0, n) by rejection, bias-free."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        limit = MASK64 - (MASK64 % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def shuffle(self, items: list) -> None:
        """Fisher-Yates, in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]
