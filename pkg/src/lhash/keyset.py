"""Sorted, duplicate-free 64-bit key sets: generation, loading and persistence.

On-disk format (KeyFile)::

    offset 0   uint64 LE   count
    offset 8   uint64 LE   key[0] ... key[count-1]

No padding and no trailer.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

U64_MAX = (1 << 64) - 1

_LE_U64 = np.dtype("<u8")


class KeySetError(ValueError):
    """Raised for invalid key sets, generator parameters or key files."""


@dataclass(frozen=True)
class KeySet:
    """Strictly increasing array of unsigned 64-bit keys.

    ``original_count`` and ``duplicates_removed`` are only meaningful for key
    sets produced by :func:`load_keyset` or :meth:`from_unsorted`.
    """

    keys: np.ndarray
    original_count: int = -1
    duplicates_removed: int = 0
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        keys = np.ascontiguousarray(self.keys, dtype=np.uint64)
        if keys.ndim != 1:
            raise KeySetError("keys must be one-dimensional")
        if keys.size > 1 and not bool(np.all(keys[1:] > keys[:-1])):
            raise KeySetError("keys must be strictly increasing")
        keys.setflags(write=False)
        object.__setattr__(self, "keys", keys)
        if self.original_count < 0:
            object.__setattr__(self, "original_count", int(keys.size))

    @classmethod
    def from_unsorted(cls, values, name: str = "") -> "KeySet":
        raw = np.asarray(values, dtype=np.uint64).ravel()
        uniq = np.unique(raw)
        return cls(uniq, original_count=int(raw.size),
                   duplicates_removed=int(raw.size - uniq.size), name=name)

    @property
    def count(self) -> int:
        return int(self.keys.size)

    def __len__(self) -> int:
        return int(self.keys.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KeySet):
            return NotImplemented
        return np.array_equal(self.keys, other.keys)

    def __hash__(self) -> int:
        return hash(self.keys.tobytes())

    def shuffled(self, seed: int) -> np.ndarray:
        """Return a seeded random permutation of the keys (a new writable array)."""
        rng = np.random.default_rng(seed)
        return rng.permutation(self.keys)


@dataclass(frozen=True)
class SequentialSpec:
    n: int
    deletion_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise KeySetError("n must be >= 1")
        if not 0.0 <= self.deletion_fraction < 1.0:
            raise KeySetError("deletion_fraction must lie in [0, 1)")
        if not 0 <= self.seed <= U64_MAX:
            raise KeySetError("seed must be an unsigned 64-bit integer")


def generate_sequential(spec: SequentialSpec) -> KeySet:
    """Keep a seeded random ``n``-subset of the integers ``0 .. m-1``.

    ``m = round(n / (1 - deletion_fraction))`` so the output always has
    exactly ``n`` keys; with no deletions the result is ``0 .. n-1``.
    """
    m = round(spec.n / (1.0 - spec.deletion_fraction))
    m = max(m, spec.n)
    if m - 1 > U64_MAX:
        raise KeySetError(f"sequence length {m} overflows the 64-bit key space")
    name = f"seq{spec.deletion_fraction * 100:g}"
    if m == spec.n:
        return KeySet(np.arange(spec.n, dtype=np.uint64), name=name)
    rng = np.random.default_rng(spec.seed)
    # drop the (smaller) deleted set rather than sampling survivors
    deleted = rng.choice(m, size=m - spec.n, replace=False)
    keep = np.ones(m, dtype=bool)
    keep[deleted] = False
    return KeySet(np.flatnonzero(keep).astype(np.uint64), name=name)


def generate_uniform(n: int, lo: int = 0, hi: int = U64_MAX, seed: int = 0) -> KeySet:
    """``n`` distinct keys drawn uniformly from ``[lo, hi)``, sorted."""
    if n < 0:
        raise KeySetError("n must be non-negative")
    if not 0 <= lo <= hi <= U64_MAX:
        raise KeySetError("need 0 <= lo <= hi <= 2**64-1")
    span = hi - lo
    if span < n:
        raise KeySetError(f"range [{lo}, {hi}) too small for {n} distinct keys")
    if n == 0:
        return KeySet(np.empty(0, dtype=np.uint64), name="uniform")
    rng = np.random.default_rng(seed)
    if span <= 4 * n:
        offsets = rng.choice(span, size=n, replace=False).astype(np.uint64)
        return KeySet(np.sort(offsets + np.uint64(lo)), name="uniform")
    keys = np.unique(rng.integers(lo, hi, size=n, dtype=np.uint64, endpoint=False))
    while keys.size < n:
        extra = rng.integers(lo, hi, size=n - keys.size, dtype=np.uint64, endpoint=False)
        keys = np.unique(np.concatenate([keys, extra]))
    return KeySet(keys, name="uniform")


def generate_heavy_tail(n: int, sigma: float = 2.0, scale: float = 1e9, seed: int = 0) -> KeySet:
    """Lognormal-distributed keys (mu=0), scaled and truncated to integers.

    Produces the skewed, heavy-tailed key spacing of the social-graph style
    datasets; duplicates are redrawn until ``n`` distinct keys exist.
    """
    if n < 1:
        raise KeySetError("n must be >= 1")
    rng = np.random.default_rng(seed)
    limit = float(U64_MAX >> 1)

    def draw(size: int) -> np.ndarray:
        vals = np.minimum(rng.lognormal(0.0, sigma, size) * scale, limit)
        return vals.astype(np.uint64)

    keys = np.unique(draw(n))
    while keys.size < n:
        keys = np.unique(np.concatenate([keys, draw(n - keys.size)]))
    return KeySet(keys, name="heavytail")


def write_keyset(ks: KeySet, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(np.array([ks.count], dtype=_LE_U64).tobytes())
        fh.write(ks.keys.astype(_LE_U64, copy=False).tobytes())


def load_keyset(path: str | os.PathLike) -> KeySet:
    """Read a KeyFile; keys are sorted and de-duplicated on load."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise KeySetError(f"cannot read {path}: {exc}") from exc
    if len(data) < 8:
        raise KeySetError(f"{path}: truncated header ({len(data)} bytes)")
    count = int(np.frombuffer(data[:8], dtype=_LE_U64)[0])
    if len(data) != 8 + 8 * count:
        raise KeySetError(f"{path}: size {len(data)} does not match 8 + 8*{count}")
    raw = np.frombuffer(data, dtype=_LE_U64, offset=8, count=count)
    return KeySet.from_unsorted(raw.astype(np.uint64), name=path.stem)


def dataset(name: str, n: int, seed: int = 0) -> KeySet:
    """Named synthetic dataset: ``seq0``, ``seq1``, ``seq10``, ``uniform``, ``heavytail``.

    ``seqX`` is the sequential dataset with ``X`` percent of keys deleted.
    """
    if name.startswith("seq"):
        try:
            pct = float(name[3:] or 0)
        except ValueError:
            raise KeySetError(f"unknown dataset {name!r}") from None
        if not math.isfinite(pct):
            raise KeySetError(f"unknown dataset {name!r}")
        ks = generate_sequential(SequentialSpec(n, pct / 100.0, seed))
    elif name == "uniform":
        ks = generate_uniform(n, 0, U64_MAX, seed)
    elif name in ("heavytail", "fb"):
        ks = generate_heavy_tail(n, seed=seed)
    else:
        raise KeySetError(f"unknown dataset {name!r}")
    object.__setattr__(ks, "name", name)
    return ks
