"""Multi-index bookkeeping: orders, factorials, binomials, partial order."""

from __future__ import annotations

import itertools
import math
from functools import lru_cache


class MultiIndex(tuple):
    """A vector of nonnegative integer exponents.

    Immutable (a tuple subclass), so usable as a dict key and safe to share
    between threads.
    """

    def __new__(cls, entries):
        entries = tuple(int(e) for e in entries)
        if any(e < 0 for e in entries):
            raise ValueError(f"multi-index entries must be >= 0, got {entries}")
        return super().__new__(cls, entries)

    @property
    def order(self) -> int:
        """|alpha| = sum of entries."""
        return sum(self)

    def factorial(self) -> int:
        """alpha! = product of entrywise factorials (exact integer)."""
        out = 1
        for e in self:
            out *= math.factorial(e)
        return out

    def __add__(self, other) -> "MultiIndex":
        return MultiIndex(a + b for a, b in zip(self, other, strict=True))

    def __sub__(self, other) -> "MultiIndex":
        return MultiIndex(a - b for a, b in zip(self, other, strict=True))

    def __le__(self, other) -> bool:
        """Componentwise partial order beta <= alpha."""
        return all(a <= b for a, b in zip(self, other, strict=True))

    def __lt__(self, other) -> bool:
        return self <= other and tuple(self) != tuple(other)

    def binomial(self, sub: "MultiIndex") -> int:
        """(alpha choose sub) = prod of entrywise binomials; 0 if sub !<= alpha."""
        if not sub <= self:
            return 0
        out = 1
        for a, b in zip(self, sub, strict=True):
            out *= math.comb(a, b)
        return out

    @staticmethod
    def zero(dim: int) -> "MultiIndex":
        return MultiIndex((0,) * dim)

    @staticmethod
    def unit(dim: int, axis: int) -> "MultiIndex":
        return MultiIndex(tuple(1 if i == axis else 0 for i in range(dim)))


def iter_multiindices(dim: int, max_order: int):
    """All multi-indices in Z_+^dim with |alpha| <= max_order, order ascending
    then lexicographic."""
    for total in range(max_order + 1):
        for alpha in compositions(total, dim):
            yield MultiIndex(alpha)


@lru_cache(maxsize=None)
def _compositions_cached(total: int, parts: int):
    if parts == 1:
        return ((total,),)
    out = []
    for first in range(total + 1):
        for rest in _compositions_cached(total - first, parts - 1):
            out.append((first,) + rest)
    return tuple(out)


def compositions(total: int, parts: int):
    """All ordered tuples of `parts` nonnegative integers summing to `total`."""
    return _compositions_cached(total, parts)


def sub_multiindices(alpha: MultiIndex):
    """All beta with beta <= alpha componentwise (used by binomial sums)."""
    ranges = [range(a + 1) for a in alpha]
    for combo in itertools.product(*ranges):
        yield MultiIndex(combo)
