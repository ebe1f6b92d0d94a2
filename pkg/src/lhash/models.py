"""Piece-wise linear CDF models used as order-preserving hash functions.

Two model families map a key to a real-valued position in ``[0, n - 1]``:

* :class:`RmiModel`, a two-level recursive model index: a linear root picks
  one of ``L`` linear leaves, the leaf predicts the rank.
* :class:`RadixSplineModel`, an error-bounded linear spline over ``(key, rank)``
  with a radix table narrowing the spline-point search.

Both are immutable after training and expose ``evaluate`` (scalar) and
``predict`` (vectorised, bit-identical to ``evaluate``).

Serialised blob layout (all little-endian)::

    magic    4 bytes  b"LHM" + version byte (currently 1)
    kind     1 byte   1 = RMI, 2 = RadixSpline
    RMI:     u64 n, u64 L, f64 root_slope, f64 root_intercept,
             L x (f64 slope, f64 intercept)
    RS:      u64 n, u32 radix_bits, u32 prefix_shift, u64 table_len,
             u64 n_points, table_len x u64 radix_table,
             n_points x u64 key, n_points x f64 position
"""

from __future__ import annotations

import bisect
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .keyset import KeySet

MAGIC = b"LHM\x01"
KIND_RMI = 1
KIND_RADIX_SPLINE = 2

DEFAULT_RADIX_BITS = 18
DEFAULT_MAX_ERROR = 32


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LinearSegment:
    slope: float
    intercept: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise ModelError("segment parameters must be finite")

    def __call__(self, x: float) -> float:
        return self.slope * x + self.intercept


def _least_squares(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Ordinary least squares on centred data; degenerate x gives a flat line."""
    mx = float(np.mean(x))
    my = float(np.mean(y))
    dx = x - mx
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        return 0.0, my
    slope = float(np.dot(dx, y - my)) / sxx
    return slope, my - slope * mx


@dataclass(frozen=True, eq=False)
class RmiModel:
    """Two-level RMI. ``leaf_params[j] = (slope, intercept)`` of leaf ``j``."""

    root_slope: float
    root_intercept: float
    leaf_params: np.ndarray
    n: int

    def __post_init__(self) -> None:
        params = np.ascontiguousarray(self.leaf_params, dtype=np.float64)
        if params.ndim != 2 or params.shape[1] != 2 or params.shape[0] < 1:
            raise ModelError("leaf_params must have shape (L, 2) with L >= 1")
        if not np.all(np.isfinite(params)):
            raise ModelError("leaf parameters must be finite")
        params.setflags(write=False)
        object.__setattr__(self, "leaf_params", params)
        if self.n < 1:
            raise ModelError("model must be trained on at least one key")

    @property
    def leaf_count(self) -> int:
        return int(self.leaf_params.shape[0])

    @property
    def root(self) -> LinearSegment:
        return LinearSegment(self.root_slope, self.root_intercept)

    @property
    def leaves(self) -> list[LinearSegment]:
        return [LinearSegment(float(a), float(b)) for a, b in self.leaf_params]

    def leaf_index(self, key: int) -> int:
        jf = math.floor(self.root_slope * float(key) + self.root_intercept)
        return int(min(max(jf, 0), self.leaf_count - 1))

    def leaf_indexes(self, keys: np.ndarray) -> np.ndarray:
        x = np.asarray(keys, dtype=np.uint64).astype(np.float64)
        jf = np.floor(self.root_slope * x + self.root_intercept)
        return np.clip(jf, 0, self.leaf_count - 1).astype(np.int64)

    def evaluate(self, key: int) -> float:
        x = float(key)
        slope, intercept = self.leaf_params[self.leaf_index(key)]
        p = float(slope) * x + float(intercept)
        return min(max(p, 0.0), self.n - 1.0)

    def predict(self, keys: np.ndarray) -> np.ndarray:
        x = np.asarray(keys, dtype=np.uint64).astype(np.float64)
        j = self.leaf_indexes(keys)
        p = self.leaf_params[j, 0] * x + self.leaf_params[j, 1]
        return np.clip(p, 0.0, self.n - 1.0)

    def size_bytes(self) -> int:
        return (self.leaf_count + 1) * 16


def train_rmi(keys: KeySet, leaf_count: int) -> RmiModel:
    """Fit the root to ``rank * L / n`` and each leaf to the ranks routed to it.

    All fits are ordinary least squares. A leaf that receives no keys predicts
    the rank of the first key routed past it (clamped to ``n - 1``); a leaf
    with a single key predicts that key's rank.
    """
    if keys.count == 0:
        raise ModelError("cannot train on an empty key set")
    if leaf_count < 1:
        raise ModelError("leaf_count must be >= 1")
    n = keys.count
    x = keys.keys.astype(np.float64)
    ranks = np.arange(n, dtype=np.float64)
    root_slope, root_intercept = _least_squares(x, ranks * (leaf_count / n))

    jf = np.floor(root_slope * x + root_intercept)
    j = np.clip(jf, 0, leaf_count - 1).astype(np.int64)
    counts = np.bincount(j, minlength=leaf_count)
    nz = counts > 0
    safe = np.where(nz, counts, 1)
    mx = np.bincount(j, weights=x, minlength=leaf_count) / safe
    my = np.bincount(j, weights=ranks, minlength=leaf_count) / safe
    dx = x - mx[j]
    dy = ranks - my[j]
    sxx = np.bincount(j, weights=dx * dx, minlength=leaf_count)
    sxy = np.bincount(j, weights=dx * dy, minlength=leaf_count)
    fit = sxx > 0.0
    slopes = np.zeros(leaf_count)
    slopes[fit] = sxy[fit] / sxx[fit]
    intercepts = my - slopes * mx
    boundary = np.minimum(np.cumsum(counts) - counts, n - 1).astype(np.float64)
    intercepts[~nz] = boundary[~nz]
    return RmiModel(float(root_slope), float(root_intercept),
                    np.column_stack([slopes, intercepts]), n)


@dataclass(frozen=True, eq=False)
class RadixSplineModel:
    radix_bits: int
    prefix_shift: int
    radix_table: np.ndarray
    spline_keys: np.ndarray
    spline_positions: np.ndarray
    n: int
    _keys_list: list = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        table = np.ascontiguousarray(self.radix_table, dtype=np.int64)
        sk = np.ascontiguousarray(self.spline_keys, dtype=np.uint64)
        sp = np.ascontiguousarray(self.spline_positions, dtype=np.float64)
        if not 1 <= self.radix_bits <= 30:
            raise ModelError("radix_bits must lie in [1, 30]")
        if table.shape != ((1 << self.radix_bits) + 1,):
            raise ModelError("radix table must have 2**radix_bits + 1 entries")
        if sk.size < 1 or sk.shape != sp.shape:
            raise ModelError("spline keys and positions must be non-empty and aligned")
        if np.any(np.diff(table) < 0):
            raise ModelError("radix table must be non-decreasing")
        if sk.size > 1 and (np.any(sk[1:] <= sk[:-1]) or np.any(np.diff(sp) < 0)):
            raise ModelError("spline points must have increasing keys and positions")
        for arr in (table, sk, sp):
            arr.setflags(write=False)
        object.__setattr__(self, "radix_table", table)
        object.__setattr__(self, "spline_keys", sk)
        object.__setattr__(self, "spline_positions", sp)
        object.__setattr__(self, "_keys_list", [int(k) for k in sk])

    @property
    def spline_points(self) -> list[tuple[int, float]]:
        return list(zip(self._keys_list, self.spline_positions.tolist()))

    @property
    def min_key(self) -> int:
        return self._keys_list[0]

    @property
    def max_key(self) -> int:
        return self._keys_list[-1]

    def _interpolate(self, key: int, lo: int) -> float:
        ks, ps = self._keys_list, self.spline_positions
        d = float(key - ks[lo])
        dy = float(ps[lo + 1]) - float(ps[lo])
        dk = float(ks[lo + 1] - ks[lo])
        return float(ps[lo]) + d * dy / dk

    def evaluate(self, key: int) -> float:
        ks = self._keys_list
        if key <= ks[0]:
            p = float(self.spline_positions[0])
        elif key >= ks[-1]:
            p = float(self.spline_positions[-1])
        else:
            prefix = (key - ks[0]) >> self.prefix_shift
            lo = int(self.radix_table[prefix])
            hi = int(self.radix_table[prefix + 1]) + 1
            idx = bisect.bisect_left(ks, key, lo, hi)
            if ks[idx] == key:
                p = float(self.spline_positions[idx])
            else:
                p = self._interpolate(key, idx - 1)
        return min(max(p, 0.0), self.n - 1.0)

    def predict(self, keys: np.ndarray) -> np.ndarray:
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        out = np.empty(keys.shape[0], dtype=np.float64)
        _kernels.rs_positions(keys, np.uint64(self.prefix_shift), self.radix_table,
                              self.spline_keys, self.spline_positions, float(self.n), out)
        return out

    def predict_binary_search(self, keys: np.ndarray) -> np.ndarray:
        """Same interpolation, located by a full binary search (no radix table)."""
        keys = np.asarray(keys, dtype=np.uint64)
        sk, sp = self.spline_keys, self.spline_positions
        idx = np.searchsorted(sk, keys, side="left")
        inner = np.clip(idx, 1, sk.size - 1) if sk.size > 1 else np.zeros_like(idx)
        out = np.empty(keys.shape[0], dtype=np.float64)
        below = keys <= sk[0]
        above = keys >= sk[-1]
        exact = (~below) & (~above) & (sk[np.minimum(idx, sk.size - 1)] == keys)
        interp = ~(below | above | exact)
        out[below] = sp[0]
        out[above] = sp[-1]
        out[exact] = sp[idx[exact]]
        hi = inner[interp]
        lo = hi - 1
        d = (keys[interp] - sk[lo]).astype(np.float64)
        dy = sp[hi] - sp[lo]
        dk = (sk[hi] - sk[lo]).astype(np.float64)
        out[interp] = sp[lo] + d * dy / dk
        return np.clip(out, 0.0, self.n - 1.0)

    def size_bytes(self) -> int:
        return int(self.radix_table.size) * 8 + int(self.spline_keys.size) * 16


def _fit_spline(keys: list[int], max_error: int) -> tuple[list[int], list[int]]:
    """Greedy one-pass spline corridor over ``(key, rank)`` in exact integers.

    The corridor holds the steepest and flattest admissible directions from the
    last spline point; orientation tests use integer cross products so that
    ``max_error = 0`` splits exactly at slope changes.
    """
    n = len(keys)
    out_k, out_p = [keys[0]], [0]
    if n == 1:
        return out_k, out_p
    base_k, base_p = keys[0], 0
    up_k, up_p = keys[1], 1 + max_error
    lo_k, lo_p = keys[1], max(1 - max_error, 0)
    prev_k, prev_p = keys[1], 1
    for i in range(2, n):
        k = keys[i]
        dx, dy = k - base_k, i - base_p
        ux, uy = up_k - base_k, up_p - base_p
        lx, ly = lo_k - base_k, lo_p - base_p
        new_up = i + max_error
        new_lo = max(i - max_error, 0)
        if ux * dy - uy * dx > 0 or lx * dy - ly * dx < 0:
            # point leaves the corridor: close the segment at the previous key
            out_k.append(prev_k)
            out_p.append(prev_p)
            base_k, base_p = prev_k, prev_p
            up_k, up_p = k, new_up
            lo_k, lo_p = k, new_lo
        else:
            if ux * (new_up - base_p) - uy * dx < 0:
                up_k, up_p = k, new_up
            if lx * (new_lo - base_p) - ly * dx > 0:
                lo_k, lo_p = k, new_lo
        prev_k, prev_p = k, i
    out_k.append(prev_k)
    out_p.append(prev_p)
    return out_k, out_p


def _shift_bits(span: int, radix_bits: int) -> int:
    return max(span.bit_length() - radix_bits, 0)


def train_radix_spline(keys: KeySet, max_error: int = DEFAULT_MAX_ERROR,
                       radix_bits: int = DEFAULT_RADIX_BITS) -> RadixSplineModel:
    if keys.count == 0:
        raise ModelError("cannot train on an empty key set")
    if max_error < 0:
        raise ModelError("max_error must be non-negative")
    if not 1 <= radix_bits <= 30:
        raise ModelError("radix_bits must lie in [1, 30]")
    sk, sp = _fit_spline(keys.keys.tolist(), max_error)
    spline_keys = np.array(sk, dtype=np.uint64)
    shift = _shift_bits(sk[-1] - sk[0], radix_bits)
    prefixes = (spline_keys - spline_keys[0]) >> np.uint64(shift)
    table = np.searchsorted(prefixes, np.arange((1 << radix_bits) + 1, dtype=np.uint64),
                            side="left")
    table = np.minimum(table, len(sk) - 1)
    return RadixSplineModel(radix_bits, shift, table, spline_keys,
                            np.array(sp, dtype=np.float64), keys.count)


CdfModel = RmiModel | RadixSplineModel


def evaluate(model: CdfModel, key: int) -> float:
    return model.evaluate(key)


def model_size_bytes(model: CdfModel) -> int:
    return model.size_bytes()


def rank_errors(model: CdfModel, keys: KeySet) -> np.ndarray:
    """``eval(key_i) - i`` for every training key."""
    return model.predict(keys.keys) - np.arange(keys.count, dtype=np.float64)


def monotonicity_violations(model: CdfModel, keys: KeySet) -> int:
    """Number of adjacent training-key pairs whose predictions decrease."""
    if keys.count < 2:
        return 0
    return int(np.count_nonzero(np.diff(model.predict(keys.keys)) < 0))


def model_to_bytes(model: CdfModel) -> bytes:
    if isinstance(model, RmiModel):
        head = MAGIC + struct.pack("<BQQdd", KIND_RMI, model.n, model.leaf_count,
                                   model.root_slope, model.root_intercept)
        return head + model.leaf_params.astype("<f8").tobytes()
    if isinstance(model, RadixSplineModel):
        head = MAGIC + struct.pack("<BQIIQQ", KIND_RADIX_SPLINE, model.n, model.radix_bits,
                                   model.prefix_shift, model.radix_table.size,
                                   model.spline_keys.size)
        return (head + model.radix_table.astype("<u8").tobytes()
                + model.spline_keys.astype("<u8").tobytes()
                + model.spline_positions.astype("<f8").tobytes())
    raise TypeError(f"not a model: {type(model).__name__}")


def model_from_bytes(blob: bytes) -> CdfModel:
    if blob[:4] != MAGIC:
        raise ModelError("bad magic or unsupported model version")
    kind = blob[4]
    try:
        if kind == KIND_RMI:
            n, leaves, rs, ri = struct.unpack_from("<QQdd", blob, 5)
            off = 5 + 32
            if len(blob) != off + 16 * leaves:
                raise ModelError("RMI blob has the wrong length")
            params = np.frombuffer(blob, dtype="<f8", offset=off, count=2 * leaves)
            return RmiModel(rs, ri, params.reshape(leaves, 2).astype(np.float64), n)
        if kind == KIND_RADIX_SPLINE:
            n, bits, shift, tlen, npts = struct.unpack_from("<QIIQQ", blob, 5)
            off = 5 + 32
            if len(blob) != off + 8 * tlen + 16 * npts:
                raise ModelError("RadixSpline blob has the wrong length")
            table = np.frombuffer(blob, dtype="<u8", offset=off, count=tlen)
            off += 8 * tlen
            sk = np.frombuffer(blob, dtype="<u8", offset=off, count=npts)
            off += 8 * npts
            sp = np.frombuffer(blob, dtype="<f8", offset=off, count=npts)
            return RadixSplineModel(bits, shift, table.astype(np.int64), sk.astype(np.uint64),
                                    sp.astype(np.float64), n)
    except struct.error as exc:
        raise ModelError(f"truncated model blob: {exc}") from exc
    raise ModelError(f"unknown model kind tag {kind}")


def save_model(model: CdfModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> CdfModel:
    return model_from_bytes(Path(path).read_bytes())
