"""Classic 64-bit hash functions, range reduction, and slot-valued hashers.

Every hasher exposes the same small surface:

``slot(key) -> int``
    scalar slot in ``[0, n_slots)``
``slots(keys) -> ndarray[int64]``
    vectorised equivalent, bit-identical to ``slot``
``positions(keys) -> ndarray[float64]``
    continuous output in ``[0, n_slots)`` before flooring; used for gap analysis
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .models import CdfModel, RadixSplineModel, RmiModel

MASK64 = (1 << 64) - 1
MURMUR_C1 = 0xFF51AFD7ED558CCD
MURMUR_C2 = 0xC4CEB9FE1A85EC53
GOLDEN_64 = 0x9E3779B97F4A7C15

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S33 = np.uint64(33)


def murmur_finalize(key: int) -> int:
    """MurmurHash3 64-bit finalizer (fmix64)."""
    k = key & MASK64
    k ^= k >> 33
    k = (k * MURMUR_C1) & MASK64
    k ^= k >> 33
    k = (k * MURMUR_C2) & MASK64
    k ^= k >> 33
    return k


def murmur_finalize_array(keys: np.ndarray) -> np.ndarray:
    k = np.array(keys, dtype=np.uint64, copy=True)
    k ^= k >> _S33
    k *= np.uint64(MURMUR_C1)
    k ^= k >> _S33
    k *= np.uint64(MURMUR_C2)
    k ^= k >> _S33
    return k


def multiply_shift(key: int, a: int = GOLDEN_64, out_bits: int = 64) -> int:
    """``((a * key) mod 2**64) >> (64 - out_bits)``."""
    if not a & 1:
        raise ValueError("multiplier must be odd")
    if not 1 <= out_bits <= 64:
        raise ValueError("out_bits must lie in [1, 64]")
    return ((a * (key & MASK64)) & MASK64) >> (64 - out_bits)


def multiply_shift_array(keys: np.ndarray, a: int = GOLDEN_64, out_bits: int = 64) -> np.ndarray:
    if not a & 1:
        raise ValueError("multiplier must be odd")
    if not 1 <= out_bits <= 64:
        raise ValueError("out_bits must lie in [1, 64]")
    h = np.asarray(keys, dtype=np.uint64) * np.uint64(a)
    return h >> np.uint64(64 - out_bits)


def mulhi64_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """High 64 bits of the 128-bit product, elementwise, using 32-bit limbs."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    a_lo, a_hi = a & _M32, a >> _S32
    b_lo, b_hi = b & _M32, b >> _S32
    lolo = a_lo * b_lo
    hilo = a_hi * b_lo
    lohi = a_lo * b_hi
    cross = (lolo >> _S32) + (hilo & _M32) + lohi
    return a_hi * b_hi + (hilo >> _S32) + (cross >> _S32)


class FastModulo:
    """``h mod d`` through a precomputed reciprocal (round-up magic number).

    For a divisor ``d`` with ``l = ceil(log2 d)`` the 64-bit magic is
    ``floor(2**64 * (2**l - d) / d) + 1``; the quotient is then
    ``(t + ((h - t) >> min(l, 1))) >> max(l - 1, 0)`` with ``t = mulhi(magic, h)``.
    Exact for every 64-bit ``h`` and every ``d >= 1``.
    """

    __slots__ = ("divisor", "magic", "shift1", "shift2")

    def __init__(self, divisor: int) -> None:
        if not 1 <= divisor <= MASK64:
            raise ValueError("divisor must lie in [1, 2**64)")
        l = (divisor - 1).bit_length()
        self.divisor = divisor
        self.magic = ((1 << 64) * ((1 << l) - divisor)) // divisor + 1
        self.shift1 = min(l, 1)
        self.shift2 = max(l - 1, 0)

    def quotient(self, h: int) -> int:
        t = (self.magic * h) >> 64
        return (t + ((h - t) >> self.shift1)) >> self.shift2

    def mod(self, h: int) -> int:
        return h - self.quotient(h) * self.divisor

    def mod_array(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=np.uint64)
        t = mulhi64_array(h, np.uint64(self.magic))
        q = (t + ((h - t) >> np.uint64(self.shift1))) >> np.uint64(self.shift2)
        return h - q * np.uint64(self.divisor)

    def __repr__(self) -> str:
        return f"FastModulo(divisor={self.divisor})"


@lru_cache(maxsize=256)
def fast_modulo(divisor: int) -> FastModulo:
    return FastModulo(divisor)


def reduce_to_slots(h: int, n_slots: int) -> int:
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    return fast_modulo(n_slots).mod(h & MASK64)


def learned_slot(model: CdfModel, key: int, n_slots: int) -> int:
    """``clamp(floor(eval(key) * n_slots / n), 0, n_slots - 1)``.

    Flooring (not rounding) keeps slot boundaries at unit spacing in
    position space.
    """
    pos = model.evaluate(key)
    s = math.floor(pos * n_slots / model.n)
    if s < 0:
        return 0
    if s > n_slots - 1:
        return n_slots - 1
    return s


def learned_slots(model: CdfModel, keys: np.ndarray, n_slots: int) -> np.ndarray:
    pos = model.predict(keys)
    s = np.floor(pos * float(n_slots) / float(model.n))
    return np.clip(s, 0, n_slots - 1).astype(np.int64)


class MurmurHasher:
    kind = "murmur"

    def __init__(self, n_slots: int) -> None:
        if n_slots < 1:
            raise ValueError("n_slots must be >= 1")
        self.n_slots = n_slots
        self._fm = fast_modulo(n_slots)

    def slot(self, key: int) -> int:
        return self._fm.mod(murmur_finalize(key))

    def slots(self, keys: np.ndarray) -> np.ndarray:
        return self._fm.mod_array(murmur_finalize_array(keys)).astype(np.int64)

    def positions(self, keys: np.ndarray) -> np.ndarray:
        return murmur_finalize_array(keys).astype(np.float64) * (self.n_slots / 2.0**64)


class MultiplyShiftHasher:
    """Top 32 bits of ``a * key``, reduced modulo the slot count."""

    kind = "mshift"
    out_bits = 32

    def __init__(self, n_slots: int, a: int = GOLDEN_64) -> None:
        if n_slots < 1:
            raise ValueError("n_slots must be >= 1")
        if n_slots > 1 << self.out_bits:
            raise ValueError("multiply-shift hasher supports at most 2**32 slots")
        if not a & 1:
            raise ValueError("multiplier must be odd")
        self.n_slots = n_slots
        self.a = a
        self._fm = fast_modulo(n_slots)

    def slot(self, key: int) -> int:
        return self._fm.mod(multiply_shift(key, self.a, self.out_bits))

    def slots(self, keys: np.ndarray) -> np.ndarray:
        h = multiply_shift_array(keys, self.a, self.out_bits)
        return self._fm.mod_array(h).astype(np.int64)

    def positions(self, keys: np.ndarray) -> np.ndarray:
        h = multiply_shift_array(keys, self.a, self.out_bits)
        return h.astype(np.float64) * (self.n_slots / 2.0**self.out_bits)


class LearnedHasher:
    def __init__(self, model: CdfModel, n_slots: int) -> None:
        if n_slots < 1:
            raise ValueError("n_slots must be >= 1")
        self.model = model
        self.n_slots = n_slots
        self.kind = "rmi" if isinstance(model, RmiModel) else "rs"

    def slot(self, key: int) -> int:
        return learned_slot(self.model, key, self.n_slots)

    def slots(self, keys: np.ndarray) -> np.ndarray:
        return learned_slots(self.model, keys, self.n_slots)

    def positions(self, keys: np.ndarray) -> np.ndarray:
        return self.model.predict(keys) * (float(self.n_slots) / float(self.model.n))


SlotHasher = MurmurHasher | MultiplyShiftHasher | LearnedHasher

HASHER_KINDS = ("murmur", "mshift", "rmi", "rs")


def make_hasher(kind: str, n_slots: int, model: CdfModel | None = None) -> SlotHasher:
    if kind == "murmur":
        return MurmurHasher(n_slots)
    if kind == "mshift":
        return MultiplyShiftHasher(n_slots)
    if kind in ("rmi", "rs"):
        if model is None:
            raise ValueError(f"hasher {kind!r} needs a trained model")
        expected = RmiModel if kind == "rmi" else RadixSplineModel
        if not isinstance(model, expected):
            raise ValueError(f"hasher {kind!r} needs a {expected.__name__}")
        return LearnedHasher(model, n_slots)
    raise ValueError(f"unknown hasher {kind!r}; choose from {', '.join(HASHER_KINDS)}")
