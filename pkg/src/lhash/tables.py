"""Bucket-chaining and Cuckoo hash tables over any slot hasher.

Tables accept any object with ``n_slots``, ``slot(key)`` and ``slots(keys)``
(see :mod:`lhash.hashing`). Payloads are fixed-size byte blocks.

Memory accounting (``bytes_allocated``):

* chaining: every bucket, home or overflow, costs
  ``s * (8 + payload_size) + 8`` bytes (entries plus a 4-byte occupancy count
  and a 4-byte overflow index);
* Cuckoo: the slot array, ``n_buckets * b * (8 + payload_size)`` bytes.

The hasher or model is never included; see :func:`lhash.models.model_size_bytes`.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .keyset import KeySet

PAYLOAD_SIZES = (8, 16, 64)
CHAIN_BOOKKEEPING_BYTES = 8
KICKING_STRATEGIES = ("balanced", "biased")
DEFAULT_MAX_KICKS = 500


class TableFrozenError(RuntimeError):
    pass


@dataclass
class TableStats:
    n_keys: int
    bytes_allocated: int
    overflow_bucket_count: int = 0
    chain_length_histogram: dict[int, int] = field(default_factory=dict)
    primary_key_ratio: float | None = None
    kick_count: int = 0
    failed_inserts: int = 0


def default_payloads(keys: np.ndarray, payload_size: int) -> np.ndarray:
    """Deterministic payloads: the key's little-endian bytes, repeated."""
    if payload_size < 1:
        raise ValueError("payload_size must be >= 1")
    raw = np.ascontiguousarray(keys, dtype="<u8").view(np.uint8).reshape(-1, 8)
    reps = -(-payload_size // 8)
    return np.ascontiguousarray(np.tile(raw, (1, reps))[:, :payload_size])


def _payload_bytes(payload, payload_size: int) -> bytes:
    data = bytes(payload)
    if len(data) != payload_size:
        raise ValueError(f"payload must be exactly {payload_size} bytes, got {len(data)}")
    return data


class ChainTable:
    """Bucket chaining: ``n_buckets`` home buckets of ``s`` entries each.

    A full bucket gets an overflow bucket from a shared pool; pool buckets are
    numbered in allocation order and chains are walked first to last.
    """

    def __init__(self, hasher, n_buckets: int, slots_per_bucket: int = 1,
                 payload_size: int = 8) -> None:
        if n_buckets < 1 or slots_per_bucket < 1:
            raise ValueError("n_buckets and slots_per_bucket must be >= 1")
        if hasher.n_slots != n_buckets:
            raise ValueError(f"hasher has {hasher.n_slots} slots, table has {n_buckets} buckets")
        self.hasher = hasher
        self.n_buckets = n_buckets
        self.slots_per_bucket = slots_per_bucket
        self.payload_size = payload_size
        self._allocate(n_buckets)
        self.n_overflow = 0
        self.n_keys = 0
        self.frozen = False

    def _allocate(self, capacity: int) -> None:
        s = self.slots_per_bucket
        self.keys = np.zeros((capacity, s), dtype=np.uint64)
        self.payloads = np.zeros((capacity, s, self.payload_size), dtype=np.uint8)
        self.counts = np.zeros(capacity, dtype=np.int32)
        self.next = np.full(capacity, -1, dtype=np.int64)

    def _grow(self) -> None:
        old = (self.keys, self.payloads, self.counts, self.next)
        self._allocate(max(2 * old[0].shape[0], 8))
        m = old[0].shape[0]
        self.keys[:m], self.payloads[:m], self.counts[:m], self.next[:m] = old

    @property
    def n_total_buckets(self) -> int:
        return self.n_buckets + self.n_overflow

    def freeze(self) -> None:
        self.frozen = True

    def insert(self, key: int, payload) -> None:
        """Append to the first free entry along the key's chain."""
        if self.frozen:
            raise TableFrozenError("table is frozen")
        data = np.frombuffer(_payload_bytes(payload, self.payload_size), dtype=np.uint8)
        b = self.hasher.slot(key)
        while True:
            c = int(self.counts[b])
            if np.any(self.keys[b, :c] == np.uint64(key)):
                raise KeyError(f"duplicate key {key}")
            if c < self.slots_per_bucket:
                self.keys[b, c] = key
                self.payloads[b, c] = data
                self.counts[b] = c + 1
                self.n_keys += 1
                return
            nxt = int(self.next[b])
            if nxt < 0:
                break
            b = nxt
        if self.n_total_buckets == self.keys.shape[0]:
            self._grow()
        new = self.n_total_buckets
        self.n_overflow += 1
        self.next[b] = new
        self.keys[new, 0] = key
        self.payloads[new, 0] = data
        self.counts[new] = 1
        self.n_keys += 1

    def probe(self, key: int) -> bytes | None:
        found, _ = self.probe_counted(key)
        return found

    def probe_counted(self, key: int) -> tuple[bytes | None, int]:
        """Payload (or ``None``) and the number of buckets visited."""
        b = self.hasher.slot(key)
        touched = 0
        k = np.uint64(key)
        while b >= 0:
            touched += 1
            c = int(self.counts[b])
            hit = np.flatnonzero(self.keys[b, :c] == k)
            if hit.size:
                return self.payloads[b, hit[0]].tobytes(), touched
            b = int(self.next[b])
        return None, touched

    def probe_many(self, keys: np.ndarray) -> np.ndarray:
        """Flat entry index ``bucket * s + slot`` per key, ``-1`` when absent."""
        keys = np.asarray(keys, dtype=np.uint64)
        s = self.slots_per_bucket
        result = np.full(keys.shape[0], -1, dtype=np.int64)
        bucket = self.hasher.slots(keys)
        pending = np.arange(keys.shape[0])
        lanes = np.arange(s)
        while pending.size:
            b = bucket[pending]
            rows = self.keys[b]
            match = (rows == keys[pending, None]) & (lanes < self.counts[b, None])
            hit = match.any(axis=1)
            result[pending[hit]] = b[hit] * s + match[hit].argmax(axis=1)
            miss = pending[~hit]
            nxt = self.next[bucket[miss]]
            more = nxt >= 0
            pending = miss[more]
            bucket[pending] = nxt[more]
        return result

    def payload_at(self, flat_index: np.ndarray) -> np.ndarray:
        flat = self.payloads[: self.n_total_buckets].reshape(-1, self.payload_size)
        return flat[np.asarray(flat_index)]

    def chain_lengths(self) -> np.ndarray:
        """Number of buckets (home + overflow) in each home bucket's chain."""
        lengths = np.ones(self.n_buckets, dtype=np.int64)
        cur = self.next[: self.n_buckets].copy()
        active = np.flatnonzero(cur >= 0)
        while active.size:
            lengths[active] += 1
            cur[active] = self.next[cur[active]]
            active = active[cur[active] >= 0]
        return lengths

    def bucket_bytes(self) -> int:
        return self.slots_per_bucket * (8 + self.payload_size) + CHAIN_BOOKKEEPING_BYTES

    def stats(self) -> TableStats:
        hist = Counter(self.chain_lengths().tolist())
        return TableStats(
            n_keys=self.n_keys,
            bytes_allocated=self.n_total_buckets * self.bucket_bytes(),
            overflow_bucket_count=self.n_overflow,
            chain_length_histogram=dict(sorted(hist.items())),
        )

    def stored_keys(self) -> np.ndarray:
        n = self.n_total_buckets
        mask = np.arange(self.slots_per_bucket) < self.counts[:n, None]
        return self.keys[:n][mask]


def chain_build(keys: KeySet | np.ndarray, payload_size: int, hasher, n_buckets: int,
                slots_per_bucket: int = 1, payloads: np.ndarray | None = None) -> ChainTable:
    """Insert every key in order; same layout as repeated :meth:`ChainTable.insert`.

    Vectorised: keys are grouped by home bucket (stable, so insertion order is
    kept within a bucket); the ``r``-th key of a bucket lands in chain
    position ``r // s``, entry ``r % s``; overflow buckets are numbered by the
    insertion index of the key that opened them.
    """
    arr = keys.keys if isinstance(keys, KeySet) else np.asarray(keys, dtype=np.uint64)
    if arr.size and np.unique(arr).size != arr.size:
        raise KeyError("duplicate keys")
    table = ChainTable(hasher, n_buckets, slots_per_bucket, payload_size)
    if payloads is None:
        payloads = default_payloads(arr, payload_size)
    payloads = np.asarray(payloads, dtype=np.uint8).reshape(arr.shape[0], payload_size)
    n = arr.shape[0]
    if n == 0:
        return table
    s = slots_per_bucket
    home = hasher.slots(arr)
    order = np.argsort(home, kind="stable")
    hs = home[order]
    rank = np.arange(n) - np.searchsorted(hs, hs, side="left")
    chain_pos = rank // s
    lane = rank % s

    opener = np.flatnonzero((chain_pos >= 1) & (lane == 0))
    pool_id = np.empty(n, dtype=np.int64)
    pool_id[opener[np.argsort(order[opener], kind="stable")]] = np.arange(opener.size)
    phys = np.where(chain_pos == 0, hs, 0)
    spilled = chain_pos >= 1
    phys[spilled] = n_buckets + pool_id[np.flatnonzero(spilled) - lane[spilled]]

    total = n_buckets + opener.size
    table._allocate(total)
    table.n_overflow = int(opener.size)
    table.keys[phys, lane] = arr[order]
    table.payloads[phys, lane] = payloads[order]
    table.counts[:] = np.bincount(phys, minlength=total)
    # the bucket preceding an opener holds the entry s positions earlier in the group
    table.next[phys[opener - s]] = phys[opener]
    table.n_keys = n
    return table


def chain_probe(table: ChainTable, key: int) -> bytes | None:
    return table.probe(key)


@dataclass
class InsertResult:
    ok: bool
    kicks: int = 0
    homeless: tuple[int, bytes] | None = None
    trace: list[tuple[int, int]] = field(default_factory=list)


class CuckooTable:
    """Two-choice bucketised Cuckoo hashing with balanced or biased kicking.

    Each slot carries a provenance bit: set when the entry sits in the bucket
    chosen by the primary hasher.
    """

    def __init__(self, n_buckets: int, bucket_size: int, primary, secondary,
                 kicking: str = "balanced", max_kicks: int = DEFAULT_MAX_KICKS,
                 payload_size: int = 8, seed: int = 0) -> None:
        if n_buckets < 1 or bucket_size < 1:
            raise ValueError("n_buckets and bucket_size must be >= 1")
        if kicking not in KICKING_STRATEGIES:
            raise ValueError(f"kicking must be one of {KICKING_STRATEGIES}")
        if max_kicks < 1:
            raise ValueError("max_kicks must be >= 1")
        for h in (primary, secondary):
            if h.n_slots != n_buckets:
                raise ValueError(f"hasher has {h.n_slots} slots, table has {n_buckets} buckets")
        self.n_buckets = n_buckets
        self.bucket_size = bucket_size
        self.primary = primary
        self.secondary = secondary
        self.kicking = kicking
        self.max_kicks = max_kicks
        self.payload_size = payload_size
        self.seed = seed
        self._rng = random.Random(seed)
        n = n_buckets * bucket_size
        self._keys: list[int | None] = [None] * n
        self._payloads: list[bytes | None] = [None] * n
        self._is_primary: list[bool] = [False] * n
        self._alt: list[int] = [0] * n
        self._counts: list[int] = [0] * n_buckets
        self.n_keys = 0
        self.kick_count = 0
        self.failed_inserts = 0
        self.homeless: list[tuple[int, bytes]] = []
        self.frozen = False
        self._arrays = None

    # -- insertion ---------------------------------------------------------

    def _place(self, bucket: int, key: int, payload: bytes, is_primary: bool, alt: int) -> None:
        pos = bucket * self.bucket_size + self._counts[bucket]
        self._keys[pos] = key
        self._payloads[pos] = payload
        self._is_primary[pos] = is_primary
        self._alt[pos] = alt
        self._counts[bucket] += 1

    def _victim(self, bucket: int) -> int:
        b = self.bucket_size
        base = bucket * b
        if self.kicking == "biased":
            candidates = [i for i in range(b) if not self._is_primary[base + i]]
            if candidates:
                return base + self._rng.choice(candidates)
        return base + self._rng.randrange(b)

    def _insert_hashed(self, key: int, payload: bytes, p: int, q: int,
                       trace: list | None) -> InsertResult:
        self._arrays = None
        if self._counts[p] < self.bucket_size:
            self._place(p, key, payload, True, q)
            self.n_keys += 1
            return InsertResult(True)
        if self._counts[q] < self.bucket_size:
            self._place(q, key, payload, q == p, p)
            self.n_keys += 1
            return InsertResult(True)
        self.n_keys += 1
        cur_key, cur_payload = key, payload
        cur_primary, cur_alt = q == p, p
        bucket = q
        kicks = 0
        while kicks < self.max_kicks:
            pos = self._victim(bucket)
            v_key, v_payload = self._keys[pos], self._payloads[pos]
            v_primary, v_alt = self._is_primary[pos], self._alt[pos]
            self._keys[pos], self._payloads[pos] = cur_key, cur_payload
            self._is_primary[pos], self._alt[pos] = cur_primary, cur_alt
            kicks += 1
            if trace is not None:
                trace.append((bucket, v_key))
            # the victim moves to its other bucket
            dest = v_alt
            cur_key, cur_payload = v_key, v_payload
            cur_primary = (not v_primary) or dest == bucket
            cur_alt = bucket
            if self._counts[dest] < self.bucket_size:
                self._place(dest, cur_key, cur_payload, cur_primary, cur_alt)
                self.kick_count += kicks
                return InsertResult(True, kicks, trace=trace or [])
            bucket = dest
        self.kick_count += kicks
        self.failed_inserts += 1
        self.n_keys -= 1
        self.homeless.append((cur_key, cur_payload))
        return InsertResult(False, kicks, homeless=(cur_key, cur_payload), trace=trace or [])

    def insert(self, key: int, payload, trace: bool = False) -> InsertResult:
        """Insert a new key. On failure the last evicted entry is returned as homeless."""
        if self.frozen:
            raise TableFrozenError("table is frozen")
        if self.probe(key) is not None:
            raise KeyError(f"duplicate key {key}")
        data = _payload_bytes(payload, self.payload_size)
        p = self.primary.slot(key)
        q = self.secondary.slot(key)
        return self._insert_hashed(key, data, p, q, [] if trace else None)

    def freeze(self) -> None:
        self.frozen = True

    # -- lookup ------------------------------------------------------------

    def _find(self, bucket: int, key: int) -> int:
        base = bucket * self.bucket_size
        for pos in range(base, base + self._counts[bucket]):
            if self._keys[pos] == key:
                return pos
        return -1

    def probe_counted(self, key: int) -> tuple[bytes | None, int]:
        """Primary bucket first, then secondary. Returns payload and buckets touched."""
        pos = self._find(self.primary.slot(key), key)
        if pos >= 0:
            return self._payloads[pos], 1
        pos = self._find(self.secondary.slot(key), key)
        if pos >= 0:
            return self._payloads[pos], 2
        return None, 2

    def probe(self, key: int) -> bytes | None:
        return self.probe_counted(key)[0]

    def _as_arrays(self):
        if self._arrays is None:
            occupied = np.array([k is not None for k in self._keys], dtype=bool)
            keys = np.array([0 if k is None else k for k in self._keys], dtype=np.uint64)
            self._arrays = (keys.reshape(self.n_buckets, self.bucket_size),
                            occupied.reshape(self.n_buckets, self.bucket_size))
        return self._arrays

    def probe_many(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat slot index per key (``-1`` if absent) and buckets touched per key."""
        keys = np.asarray(keys, dtype=np.uint64)
        table, occupied = self._as_arrays()
        b = self.bucket_size
        result = np.full(keys.shape[0], -1, dtype=np.int64)
        touched = np.ones(keys.shape[0], dtype=np.int64)
        p = self.primary.slots(keys)
        match = (table[p] == keys[:, None]) & occupied[p]
        hit = match.any(axis=1)
        result[hit] = p[hit] * b + match[hit].argmax(axis=1)
        miss = np.flatnonzero(~hit)
        touched[miss] = 2
        q = self.secondary.slots(keys[miss])
        match = (table[q] == keys[miss, None]) & occupied[q]
        hit2 = match.any(axis=1)
        result[miss[hit2]] = q[hit2] * b + match[hit2].argmax(axis=1)
        return result, touched

    def payload_at(self, flat_index: np.ndarray) -> list[bytes | None]:
        return [self._payloads[i] for i in np.asarray(flat_index).tolist()]

    # -- accounting --------------------------------------------------------

    @property
    def primary_key_ratio(self) -> float:
        if self.n_keys == 0:
            return 1.0
        stored = sum(1 for k, p in zip(self._keys, self._is_primary) if k is not None and p)
        return stored / self.n_keys

    def stats(self) -> TableStats:
        return TableStats(
            n_keys=self.n_keys,
            bytes_allocated=self.n_buckets * self.bucket_size * (8 + self.payload_size),
            primary_key_ratio=self.primary_key_ratio,
            kick_count=self.kick_count,
            failed_inserts=self.failed_inserts,
        )

    def stored_keys(self) -> np.ndarray:
        return np.array([k for k in self._keys if k is not None], dtype=np.uint64)

    def audit(self) -> list[str]:
        """Recompute both hashes for every stored entry; return inconsistencies."""
        problems = []
        positions = [i for i, k in enumerate(self._keys) if k is not None]
        if len(positions) != self.n_keys:
            problems.append(f"{len(positions)} stored entries, n_keys={self.n_keys}")
        if not positions:
            return problems
        keys = np.array([self._keys[i] for i in positions], dtype=np.uint64)
        bucket = np.array(positions) // self.bucket_size
        p = self.primary.slots(keys)
        q = self.secondary.slots(keys)
        prov = np.array([self._is_primary[i] for i in positions])
        for idx in np.flatnonzero((bucket != p) & (bucket != q)):
            problems.append(f"key {keys[idx]} in bucket {bucket[idx]}, hashes {p[idx]}/{q[idx]}")
        for idx in np.flatnonzero(prov != (bucket == p)):
            problems.append(f"key {keys[idx]} has a stale provenance bit")
        counts = np.bincount(bucket, minlength=self.n_buckets)
        if not np.array_equal(counts, np.array(self._counts)):
            problems.append("bucket occupancy counts disagree with stored entries")
        if np.unique(keys).size != keys.size:
            problems.append("duplicate keys stored")
        return problems


def cuckoo_build(keys: KeySet | np.ndarray, payload_size: int, primary, secondary,
                 n_buckets: int, bucket_size: int, kicking: str = "balanced",
                 max_kicks: int = DEFAULT_MAX_KICKS, seed: int = 0,
                 payloads: np.ndarray | None = None) -> CuckooTable:
    """Insert keys in order; failures are counted, not raised."""
    arr = keys.keys if isinstance(keys, KeySet) else np.asarray(keys, dtype=np.uint64)
    table = CuckooTable(n_buckets, bucket_size, primary, secondary, kicking, max_kicks,
                        payload_size, seed)
    if payloads is None:
        payloads = default_payloads(arr, payload_size)
    payloads = np.asarray(payloads, dtype=np.uint8).reshape(arr.shape[0], payload_size)
    p = primary.slots(arr).tolist()
    q = secondary.slots(arr).tolist()
    blobs = [row.tobytes() for row in payloads]
    for key, data, pb, qb in zip(arr.tolist(), blobs, p, q):
        table._insert_hashed(key, data, pb, qb, None)
    return table


def cuckoo_insert(table: CuckooTable, key: int, payload) -> InsertResult:
    return table.insert(key, payload)


def cuckoo_probe(table: CuckooTable, key: int) -> bytes | None:
    return table.probe(key)


def table_stats(table: ChainTable | CuckooTable) -> TableStats:
    return table.stats()
