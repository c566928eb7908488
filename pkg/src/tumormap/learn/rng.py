"""Portable 64-bit generator for the random forest.

xorshift64* (Vigna 2016) seeded through splitmix64.  Pure integer arithmetic,
so a given seed yields the same stream on every platform.
"""

MASK64 = (1 << 64) - 1
NAME = "xorshift64*/splitmix64"


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShift64Star:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = splitmix64(seed & MASK64) or 0x9E3779B97F4A7C15

    def next(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def below(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift."""
        return (self.next() * n) >> 64

    def uniform(self) -> float:
        return (self.next() >> 11) * (1.0 / (1 << 53))


def derive_seed(seed: int, index: int) -> int:
    """Independent per-item seed, so trees can be grown in any order."""
    return splitmix64((seed & MASK64) ^ splitmix64(index))
