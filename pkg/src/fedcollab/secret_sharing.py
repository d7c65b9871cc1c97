"""Additive secret sharing over the ring of integers modulo 2**64.

Reals are carried into the ring with a two's-complement fixed-point
encoding. A secret ``s`` is split into ``k`` shares: ``k - 1`` uniform ring
elements plus one correction share so that all ``k`` sum to ``s`` (mod
2**64). Any ``k - 1`` of them are jointly uniform and say nothing about
``s``.

Ring elements are plain Python ints in ``[0, 2**64)`` for scalars and
``numpy.uint64`` arrays for vectors, whose arithmetic already wraps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import InputError, RangeError

RING_BITS = 64
RING_MODULUS = 1 << RING_BITS
RING_MASK = RING_MODULUS - 1
RING_ELEMENT_BYTES = RING_BITS // 8

RingElement = int
RngLike = Union[np.random.Generator, Sequence[np.random.Generator]]


@dataclass(frozen=True)
class FixedPointCodec:
    fractional_bits: int = 16

    def __post_init__(self):
        if not 0 <= self.fractional_bits < RING_BITS - 1:
            raise InputError(f"fractional_bits must be in [0, {RING_BITS - 1}), got {self.fractional_bits}")

    @property
    def scale(self) -> int:
        return 1 << self.fractional_bits

    @property
    def max_magnitude(self) -> float:
        """Encodable reals satisfy ``|x| < max_magnitude``."""
        return math.ldexp(1.0, RING_BITS - 1 - self.fractional_bits)

    @property
    def resolution(self) -> float:
        return math.ldexp(1.0, -self.fractional_bits)


@dataclass(frozen=True)
class ShareSet:
    shares: tuple[RingElement, ...]

    def __len__(self) -> int:
        return len(self.shares)

    def __iter__(self):
        return iter(self.shares)


def to_signed(v: RingElement) -> int:
    v &= RING_MASK
    return v - RING_MODULUS if v >> (RING_BITS - 1) else v


def encode_fixed(x: float, codec: FixedPointCodec = FixedPointCodec()) -> RingElement:
    if not math.isfinite(x) or abs(x) >= codec.max_magnitude:
        raise RangeError(f"{x!r} cannot be encoded with {codec.fractional_bits} fractional bits")
    v = round(math.ldexp(x, codec.fractional_bits))
    if not -(1 << (RING_BITS - 1)) <= v < 1 << (RING_BITS - 1):
        raise RangeError(f"{x!r} rounds outside the signed ring range")
    return v & RING_MASK


def decode_fixed(v: RingElement, codec: FixedPointCodec = FixedPointCodec()) -> float:
    return to_signed(v) / codec.scale


def encode_array(x: np.ndarray, codec: FixedPointCodec = FixedPointCodec()) -> np.ndarray:
    """Vector form of :func:`encode_fixed`, returning ``uint64`` ring elements."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or (x.size and np.max(np.abs(x)) >= codec.max_magnitude):
        raise RangeError(f"array values exceed the {codec.fractional_bits}-fractional-bit range")
    return np.rint(np.ldexp(x, codec.fractional_bits)).astype(np.int64).view(np.uint64)


def decode_array(v: np.ndarray, codec: FixedPointCodec = FixedPointCodec()) -> np.ndarray:
    return np.asarray(v, dtype=np.uint64).view(np.int64) / codec.scale


def random_ring_elements(rng: np.random.Generator, size=None):
    out = rng.integers(0, RING_MODULUS, size=size, dtype=np.uint64)
    return int(out) if size is None else out


def share(secret: RingElement, k: int, rng: np.random.Generator) -> ShareSet:
    if k < 1:
        raise InputError(f"need at least one share, got k={k}")
    randoms = [int(v) for v in random_ring_elements(rng, k - 1)]
    last = (secret - sum(randoms)) & RING_MASK
    return ShareSet(tuple(randoms) + (last,))


def reconstruct(shares: ShareSet | Sequence[RingElement]) -> RingElement:
    shares = tuple(shares)
    if not shares:
        raise InputError("cannot reconstruct from an empty share set")
    return sum(shares) & RING_MASK


def share_array(secret: np.ndarray, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Elementwise :func:`share` of a ``uint64`` vector into ``k`` share vectors."""
    if k < 1:
        raise InputError(f"need at least one share, got k={k}")
    secret = np.asarray(secret, dtype=np.uint64)
    shares = [random_ring_elements(rng, secret.shape) for _ in range(k - 1)]
    last = secret.copy()
    for s in shares:
        last -= s
    return shares + [last]


def reconstruct_array(shares: Sequence[np.ndarray]) -> np.ndarray:
    if not len(shares):
        raise InputError("cannot reconstruct from an empty share set")
    total = np.zeros_like(np.asarray(shares[0], dtype=np.uint64))
    for s in shares:
        total += s
    return total


def worker_rngs(rng: RngLike, k: int) -> list[np.random.Generator]:
    """One generator per worker: either the given sequence or children spawned from ``rng``."""
    if isinstance(rng, np.random.Generator):
        return rng.spawn(k)
    rngs = list(rng)
    if len(rngs) != k:
        raise InputError(f"expected {k} per-worker generators, got {len(rngs)}")
    return rngs


def exchange_shares(secrets: Sequence[RingElement], rngs: Sequence[np.random.Generator]) -> list[RingElement]:
    """Run the all-to-all share exchange and return each worker's partial sum.

    Worker ``i`` splits its secret into ``k`` shares and sends share ``j`` to
    worker ``j`` (keeping its own). Worker ``j``'s partial is the sum of the
    ``k`` shares it holds.
    """
    k = len(secrets)
    share_sets = [share(s, k, r) for s, r in zip(secrets, rngs)]
    return [reconstruct([share_sets[i].shares[j] for i in range(k)]) for j in range(k)]


def exchange_share_arrays(secrets: Sequence[np.ndarray], rngs: Sequence[np.random.Generator]) -> list[np.ndarray]:
    """Vector form of :func:`exchange_shares`."""
    k = len(secrets)
    share_sets = [share_array(s, k, r) for s, r in zip(secrets, rngs)]
    return [reconstruct_array([share_sets[i][j] for i in range(k)]) for j in range(k)]


def check_sum_range(encoded: Sequence[RingElement]) -> None:
    total = sum(to_signed(v) for v in encoded)
    if not -(1 << (RING_BITS - 1)) <= total < 1 << (RING_BITS - 1):
        raise RangeError("sum of encoded values overflows the signed ring range")


def secure_sum_round(
    values: Sequence[float],
    k: int,
    codec: FixedPointCodec = FixedPointCodec(),
    rng: RngLike | None = None,
) -> float:
    """Sum one real per worker without any party seeing another's value.

    The aggregator only receives the ``k`` partial sums, adds them and
    decodes. The result equals the sum of the fixed-point encodings, so it
    differs from the float sum by at most ``k * 2**-(fractional_bits + 1)``.
    """
    if len(values) != k:
        raise InputError(f"expected {k} values, got {len(values)}")
    if k < 1:
        raise InputError("secure sum needs at least one worker")
    encoded = [encode_fixed(float(v), codec) for v in values]
    check_sum_range(encoded)
    rngs = worker_rngs(rng if rng is not None else np.random.default_rng(), k)
    partials = exchange_shares(encoded, rngs)
    return decode_fixed(reconstruct(partials), codec)


def secure_sum_arrays(
    arrays: Sequence[np.ndarray],
    codec: FixedPointCodec = FixedPointCodec(),
    rng: RngLike | None = None,
) -> np.ndarray:
    """Elementwise secure sum of one float vector per worker."""
    k = len(arrays)
    if k < 1:
        raise InputError("secure sum needs at least one worker")
    encoded = [encode_array(a, codec) for a in arrays]
    check_array_sum_range(arrays, codec)
    rngs = worker_rngs(rng if rng is not None else np.random.default_rng(), k)
    partials = exchange_share_arrays(encoded, rngs)
    return decode_array(reconstruct_array(partials), codec)


def check_array_sum_range(arrays: Sequence[np.ndarray], codec: FixedPointCodec) -> None:
    total = np.sum([np.asarray(a, dtype=np.float64) for a in arrays], axis=0)
    # one resolution step per addend of rounding slack
    if total.size and np.max(np.abs(total)) >= codec.max_magnitude - len(arrays) * codec.resolution:
        raise RangeError("sum of encoded vectors overflows the signed ring range")
