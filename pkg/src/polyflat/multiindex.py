"""Multi-index arithmetic for high-order derivative bookkeeping.

A multi-index is a vector of non-negative integer exponents, one per space
dimension.  Everything downstream (operator coefficient matrices, difference
stencils, energy densities) is indexed by the set of multi-indices of a fixed
order m, enumerated once and for all in graded lexicographic order so that
matrices and serialized operators are reproducible byte-for-byte.
"""

from __future__ import annotations

import math
from functools import lru_cache


class MultiIndex(tuple):
    """Immutable exponent vector, e.g. MultiIndex((2, 0, 1)) for d²/dx² d/dz."""

    __slots__ = ()

    def __new__(cls, exponents):
        exps = tuple(int(e) for e in exponents)
        if any(e < 0 for e in exps):
            raise ValueError(f"multi-index entries must be non-negative, got {exps}")
        return super().__new__(cls, exps)

    @property
    def dim(self) -> int:
        return len(self)

    @property
    def order(self) -> int:
        """Total order |alpha| = sum of the exponents."""
        return sum(self)

    def factorial(self) -> int:
        """alpha! = product of the componentwise factorials."""
        out = 1
        for e in self:
            out *= math.factorial(e)
        return out

    def bounded_by(self, other: "MultiIndex") -> bool:
        """Componentwise partial order: self_i <= other_i for every i."""
        if len(self) != len(other):
            raise ValueError("multi-indices of different dimension")
        return all(s <= o for s, o in zip(self, other))

    def __add__(self, other):
        return MultiIndex(s + o for s, o in zip(self, other))

    def __sub__(self, other):
        return MultiIndex(s - o for s, o in zip(self, other))

    def __str__(self) -> str:
        return "(" + ",".join(str(e) for e in self) + ")"

    def __repr__(self) -> str:
        return f"MultiIndex{tuple(self)}"

    @classmethod
    def parse(cls, text: str) -> "MultiIndex":
        """Inverse of str(): accepts the "(2,0,1)" wire form."""
        body = text.strip()
        if not (body.startswith("(") and body.endswith(")")):
            raise ValueError(f"malformed multi-index literal: {text!r}")
        return cls(int(p) for p in body[1:-1].split(","))


def unit_index(N: int, axis: int) -> MultiIndex:
    """The standard basis multi-index e_axis in dimension N (0-based axis)."""
    if not 0 <= axis < N:
        raise ValueError(f"axis {axis} out of range for dimension {N}")
    return MultiIndex(1 if i == axis else 0 for i in range(N))


@lru_cache(maxsize=None)
def enumerate_indices(N: int, m: int) -> tuple[MultiIndex, ...]:
    """All multi-indices of dimension N and order exactly m, graded-lex ordered.

    The first component decreases fastest: for N=2, m=2 the order is
    (2,0), (1,1), (0,2).  The list length is C(m+N-1, N-1).
    """
    if N < 1:
        raise ValueError("dimension must be >= 1")
    if m < 0:
        raise ValueError("order must be >= 0")

    def gen(n: int, total: int):
        if n == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in gen(n - 1, total - first):
                yield (first,) + rest

    return tuple(MultiIndex(t) for t in gen(N, m))


def leibniz_coeff(alpha: MultiIndex, beta: MultiIndex) -> int:
    """Product-rule coefficient alpha! / (beta! (alpha-beta)!) for beta <= alpha."""
    if not MultiIndex(beta).bounded_by(MultiIndex(alpha)):
        raise ValueError(f"beta={MultiIndex(beta)} not dominated by alpha={MultiIndex(alpha)}")
    out = 1
    for a, b in zip(alpha, beta):
        out *= math.comb(a, b)
    return out


def factorial_weight(alpha: MultiIndex, m: int) -> int:
    """Multinomial weight m!/alpha! for |alpha| = m (always an integer)."""
    alpha = MultiIndex(alpha)
    if alpha.order != m:
        raise ValueError(f"|alpha|={alpha.order} does not match m={m}")
    return math.factorial(m) // alpha.factorial()
