"""Compiled inner loops shared by the model, batch and bench modules.

Float arithmetic here mirrors the numpy and pure-Python paths operation by
operation (no fastmath, so no FMA contraction); results are bit-identical.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np
from llvmlite import ir
from numba import types
from numba.core import cgutils
from numba.extending import intrinsic

_PREFETCH_READ = 0
_PREFETCH_LOCALITY = 3
_PREFETCH_DATA_CACHE = 1


@intrinsic
def _llvm_prefetch(typingctx, arr, idx):
    if not isinstance(arr, types.Array) or not isinstance(idx, types.Integer):
        return None
    sig = types.void(arr, idx)

    def codegen(context, builder, signature, args):
        aryty = signature.args[0]
        ary = context.make_array(aryty)(context, builder, args[0])
        i64 = ir.IntType(64)
        offset = builder.sext(args[1], i64) if args[1].type.width < 64 else args[1]
        ptr = builder.gep(ary.data, [offset])
        i8p = ir.IntType(8).as_pointer()
        i32 = ir.IntType(32)
        fnty = ir.FunctionType(ir.VoidType(), [i8p, i32, i32, i32])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "llvm.prefetch.p0i8")
        builder.call(fn, [builder.bitcast(ptr, i8p),
                          ir.Constant(i32, _PREFETCH_READ),
                          ir.Constant(i32, _PREFETCH_LOCALITY),
                          ir.Constant(i32, _PREFETCH_DATA_CACHE)])
        return context.get_dummy_value()

    return sig, codegen


@nb.njit(cache=True)
def prefetch_hint(arr, index):
    """Ask the cache hierarchy to load ``arr[index]``. No observable effect."""
    _llvm_prefetch(arr, index)


@nb.njit(cache=True, inline="always")
def _rmi_leaf(x, root_slope, root_intercept, last_leaf):
    # min/max clamps compile to branch-free selects
    return int(min(max(math.floor(root_slope * x + root_intercept), 0.0), last_leaf))


@nb.njit(cache=True, inline="always")
def _rmi_slot(x, slope, intercept, n_f, n_slots_f):
    p = min(max(slope * x + intercept, 0.0), n_f - 1.0)
    return int(min(max(math.floor(p * n_slots_f / n_f), 0.0), n_slots_f - 1.0))


@nb.njit(cache=True)
def rmi_slots_scalar(keys, root_slope, root_intercept, leaf_params, n, n_slots, out):
    """One key at a time: root -> leaf index -> leaf evaluation -> slot."""
    last_leaf = float(leaf_params.shape[0] - 1)
    n_f = float(n)
    n_slots_f = float(n_slots)
    for i in range(keys.shape[0]):
        x = float(keys[i])
        j = _rmi_leaf(x, root_slope, root_intercept, last_leaf)
        out[i] = _rmi_slot(x, leaf_params[j, 0], leaf_params[j, 1], n_f, n_slots_f)


_STAGE_PREDICT = 0
_STAGE_HASH = 1
_STAGE_DONE = 2


@nb.njit(cache=True)
def rmi_slots_interleaved(keys, n_full, root_slope, root_intercept, leaf_params,
                          n, n_slots, s, w, use_prefetch, out):
    """Round-robin over ``s`` two-stage state machines, ``w`` keys per group.

    Only ``keys[:n_full]`` is processed (``n_full`` must be a multiple of ``w``).
    Returns the number of state transitions; visits to finished instances
    are not counted.
    """
    last_leaf = float(leaf_params.shape[0] - 1)
    n_f = float(n)
    n_slots_f = float(n_slots)
    stage = np.zeros(s, np.int8)
    base = np.zeros(s, np.int64)
    leaf = np.zeros((s, w), np.int64)
    done = 0
    nxt = 0
    k = 0
    steps = 0
    while done < s:
        if k == s:
            k = 0
        st = stage[k]
        if st == _STAGE_PREDICT:
            if nxt < n_full:
                base[k] = nxt
                for t in range(w):
                    j = _rmi_leaf(float(keys[nxt + t]), root_slope, root_intercept, last_leaf)
                    leaf[k, t] = j
                    if use_prefetch:
                        _llvm_prefetch(leaf_params, 2 * j)
                stage[k] = _STAGE_HASH
                nxt += w
            else:
                stage[k] = _STAGE_DONE
                done += 1
            steps += 1
        elif st == _STAGE_HASH:
            b = base[k]
            for t in range(w):
                j = leaf[k, t]
                out[b + t] = _rmi_slot(float(keys[b + t]), leaf_params[j, 0], leaf_params[j, 1],
                                       n_f, n_slots_f)
            stage[k] = _STAGE_PREDICT
            steps += 1
        k += 1
    return steps


@nb.njit(cache=True, inline="always")
def _rs_interp(key, lo, hi, sp_keys, sp_pos):
    d = float(key - sp_keys[lo])
    dy = sp_pos[hi] - sp_pos[lo]
    dk = float(sp_keys[hi] - sp_keys[lo])
    return sp_pos[lo] + d * dy / dk


@nb.njit(cache=True)
def rs_positions(keys, shift, radix_table, sp_keys, sp_pos, n, out):
    """Radix-table lookup, bounded binary search, linear interpolation."""
    min_key = sp_keys[0]
    max_key = sp_keys[sp_keys.shape[0] - 1]
    last_pos = sp_pos[sp_pos.shape[0] - 1]
    n_max = n - 1.0
    for i in range(keys.shape[0]):
        key = keys[i]
        if key <= min_key:
            p = sp_pos[0]
        elif key >= max_key:
            p = last_pos
        else:
            prefix = (key - min_key) >> shift
            lo = radix_table[prefix]
            hi = radix_table[prefix + 1] + 1
            # first spline point with sp_key >= key inside [lo, hi)
            while lo < hi:
                mid = (lo + hi) >> 1
                if sp_keys[mid] < key:
                    lo = mid + 1
                else:
                    hi = mid
            if sp_keys[lo] == key:
                p = sp_pos[lo]
            else:
                p = _rs_interp(key, lo - 1, lo, sp_keys, sp_pos)
        if p < 0.0:
            p = 0.0
        elif p > n_max:
            p = n_max
        out[i] = p


@nb.njit(cache=True, inline="always")
def _mulhi64(a, b):
    m32 = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    a_lo = a & m32
    a_hi = a >> s32
    b_lo = b & m32
    b_hi = b >> s32
    lolo = a_lo * b_lo
    hilo = a_hi * b_lo
    lohi = a_lo * b_hi
    cross = (lolo >> s32) + (hilo & m32) + lohi
    return a_hi * b_hi + (hilo >> s32) + (cross >> s32)


@nb.njit(cache=True)
def murmur_slots_scalar(keys, magic, shift1, shift2, divisor, out):
    c1 = np.uint64(0xFF51AFD7ED558CCD)
    c2 = np.uint64(0xC4CEB9FE1A85EC53)
    s33 = np.uint64(33)
    sh1 = np.uint64(shift1)
    sh2 = np.uint64(shift2)
    for i in range(keys.shape[0]):
        h = keys[i]
        h ^= h >> s33
        h *= c1
        h ^= h >> s33
        h *= c2
        h ^= h >> s33
        t = _mulhi64(h, magic)
        q = (t + ((h - t) >> sh1)) >> sh2
        out[i] = np.int64(h - q * divisor)


@nb.njit(cache=True)
def mshift_slots_scalar(keys, a, out_bits, magic, shift1, shift2, divisor, out):
    sh = np.uint64(64 - out_bits)
    sh1 = np.uint64(shift1)
    sh2 = np.uint64(shift2)
    for i in range(keys.shape[0]):
        h = (keys[i] * a) >> sh
        t = _mulhi64(h, magic)
        q = (t + ((h - t) >> sh1)) >> sh2
        out[i] = np.int64(h - q * divisor)
