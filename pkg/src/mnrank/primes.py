"""Prime tables and the prime-counting function."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, BoundError

MAX_LIMIT = 2**31
DENSE_PI_LIMIT = 10**6
SEGMENTED_ABOVE = 10**7
SEGMENT_SIZE = 1 << 22


def _simple_sieve(limit: int) -> np.ndarray:
    """All primes < limit with a plain sieve of Eratosthenes."""
    if limit <= 2:
        return np.empty(0, dtype=np.int64)
    is_prime = np.ones(limit, dtype=bool)
    is_prime[:2] = False
    for p in range(2, math.isqrt(limit - 1) + 1):
        if is_prime[p]:
            is_prime[p * p :: p] = False
    return np.flatnonzero(is_prime).astype(np.int64)


def _segmented_sieve(limit: int, segment: int = SEGMENT_SIZE) -> np.ndarray:
    base = _simple_sieve(math.isqrt(limit - 1) + 1)
    chunks = [base]
    low = int(base[-1]) + 1 if len(base) else 2
    while low < limit:
        high = min(low + segment, limit)
        mark = np.ones(high - low, dtype=bool)
        for p in base:
            p = int(p)
            if p * p >= high:
                break
            start = max(p * p, -(-low // p) * p)
            mark[start - low :: p] = False
        chunks.append(np.flatnonzero(mark).astype(np.int64) + low)
        low = high
    return np.concatenate(chunks)


@dataclass(frozen=True)
class PrimeTable:
    """Primes below ``limit`` (exclusive) with O(1) or O(log n) prime counting."""

    limit: int
    primes: np.ndarray
    _pi_dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.primes.setflags(write=False)
        if self._pi_dense is not None:
            self._pi_dense.setflags(write=False)

    def __len__(self):
        return len(self.primes)

    def pi(self, x: int) -> int:
        return prime_pi(self, x)

    def index(self, p: int) -> int:
        """Position of prime ``p`` in :attr:`primes`."""
        i = int(np.searchsorted(self.primes, p))
        if i == len(self.primes) or self.primes[i] != p:
            raise ArgumentError(f"{p} is not a prime below {self.limit}")
        return i

    def is_prime(self, n: int) -> bool:
        if not 0 <= n < self.limit:
            raise BoundError(f"{n} outside [0, {self.limit})")
        i = int(np.searchsorted(self.primes, n))
        return i < len(self.primes) and self.primes[i] == n


def sieve_primes(limit: int) -> PrimeTable:
    if not isinstance(limit, (int, np.integer)) or not 2 <= limit <= MAX_LIMIT:
        raise BoundError(f"sieve limit must be in [2, 2**31], got {limit!r}")
    limit = int(limit)
    if limit > SEGMENTED_ABOVE:
        primes = _segmented_sieve(limit)
    else:
        primes = _simple_sieve(limit)
    dense = None
    if limit <= DENSE_PI_LIMIT:
        flags = np.zeros(limit, dtype=np.int64)
        flags[primes] = 1
        dense = np.cumsum(flags)
    return PrimeTable(limit, primes, dense)


def prime_pi(table: PrimeTable, x: int) -> int:
    """Number of primes <= x."""
    if not 0 <= x < table.limit:
        raise BoundError(f"x={x} outside [0, {table.limit})")
    if table._pi_dense is not None:
        return int(table._pi_dense[x])
    return int(np.searchsorted(table.primes, x, side="right"))


def positional_encoding(table: PrimeTable, p: int, B: int) -> float:
    """Location of prime ``p`` among the primes up to ``B``, scaled into [-1, 1]."""
    if not p <= B < table.limit:
        raise BoundError(f"need p <= B < {table.limit}, got p={p}, B={B}")
    if not table.is_prime(p):
        raise ArgumentError(f"{p} is not prime")
    return -1.0 + 2.0 * prime_pi(table, p) / prime_pi(table, B)


def positional_encodings(table: PrimeTable, B: int) -> np.ndarray:
    """Encodings of every prime <= B, in ascending order."""
    n = prime_pi(table, B)
    return -1.0 + 2.0 * np.arange(1, n + 1, dtype=np.float64) / n
