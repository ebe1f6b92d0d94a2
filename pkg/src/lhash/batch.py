"""Batched RMI hashing with interleaved parameter prefetching.

Keys are processed in groups of ``vector_width`` by ``group_size`` two-stage
state machines visited round-robin. In the predict stage an instance routes
its keys through the root model and issues prefetch hints for the selected
leaves' parameters; in the hash stage, reached only after every other
instance has had its turn, it evaluates the leaves. The output is the same
as the scalar slot map; only memory-level parallelism changes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .hashing import learned_slot
from .models import RmiModel

MAX_IN_FLIGHT = 4096


class Stage(enum.IntEnum):
    PREDICT = 0
    HASH = 1
    DONE = 2


_TRANSITIONS = {
    Stage.PREDICT: {Stage.HASH, Stage.DONE},
    Stage.HASH: {Stage.PREDICT},
    Stage.DONE: set(),
}


@dataclass(frozen=True)
class BatchConfig:
    group_size: int = 8
    vector_width: int = 8

    def __post_init__(self) -> None:
        if self.group_size < 1 or self.vector_width < 1:
            raise ValueError("group_size and vector_width must be >= 1")
        if self.group_size * self.vector_width > MAX_IN_FLIGHT:
            raise ValueError(f"group_size * vector_width must not exceed {MAX_IN_FLIGHT}")


@dataclass
class FsmInstance:
    """Reference (pure-Python) state of one in-flight key group."""

    stage: Stage = Stage.PREDICT
    start: int = 0
    leaf_indexes: np.ndarray | None = None
    leaf_params: np.ndarray | None = None

    def advance(self, to: Stage) -> None:
        if to not in _TRANSITIONS[self.stage]:
            raise RuntimeError(f"illegal transition {self.stage.name} -> {to.name}")
        self.stage = to


def prefetch_hint(params: np.ndarray, index: int) -> None:
    """Advise the memory system that ``params.flat[index]`` will be read soon."""
    _kernels.prefetch_hint(params, index)


def _check(model: RmiModel, n_slots: int) -> None:
    if not isinstance(model, RmiModel):
        raise TypeError("batched hashing supports two-level RMI models only")
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")


def hash_scalar(model: RmiModel, keys: np.ndarray, n_slots: int) -> np.ndarray:
    """Compiled one-key-at-a-time slot map (the non-interleaved baseline)."""
    _check(model, n_slots)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    out = np.empty(keys.shape[0], dtype=np.int64)
    _kernels.rmi_slots_scalar(keys, model.root_slope, model.root_intercept,
                              model.leaf_params, model.n, n_slots, out)
    return out


def hash_batch(model: RmiModel, keys: np.ndarray, n_slots: int,
               cfg: BatchConfig = BatchConfig(), prefetch: bool = True) -> np.ndarray:
    """Slot for every key, computed by interleaved state machines.

    The ``len(keys) % vector_width`` trailing keys go through the scalar path.
    """
    _check(model, n_slots)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    out = np.empty(keys.shape[0], dtype=np.int64)
    if keys.shape[0] == 0:
        return out
    w = cfg.vector_width
    n_full = keys.shape[0] - keys.shape[0] % w
    _kernels.rmi_slots_interleaved(keys, n_full, model.root_slope, model.root_intercept,
                                   model.leaf_params, model.n, n_slots,
                                   cfg.group_size, w, prefetch, out)
    if n_full < keys.shape[0]:
        _kernels.rmi_slots_scalar(keys[n_full:], model.root_slope, model.root_intercept,
                                  model.leaf_params, model.n, n_slots, out[n_full:])
    return out


def hash_batch_reference(model: RmiModel, keys: np.ndarray, n_slots: int,
                         cfg: BatchConfig = BatchConfig()) -> tuple[np.ndarray, int]:
    """Interpreted state machine with explicit stage bookkeeping.

    Slow; exists to make the schedule inspectable in tests. Returns the slots
    and the number of state transitions taken.
    """
    _check(model, n_slots)
    keys = np.asarray(keys, dtype=np.uint64)
    out = np.empty(keys.shape[0], dtype=np.int64)
    w, s = cfg.vector_width, cfg.group_size
    n_full = keys.shape[0] - keys.shape[0] % w
    fsm = [FsmInstance() for _ in range(s)]
    done = nxt = k = steps = 0
    while done < s:
        if k == s:
            k = 0
        inst = fsm[k]
        if inst.stage is Stage.PREDICT:
            if nxt < n_full:
                inst.start = nxt
                inst.leaf_indexes = model.leaf_indexes(keys[nxt:nxt + w])
                inst.leaf_params = model.leaf_params[inst.leaf_indexes]
                inst.advance(Stage.HASH)
                nxt += w
            else:
                inst.advance(Stage.DONE)
                done += 1
            steps += 1
        elif inst.stage is Stage.HASH:
            for t in range(w):
                x = float(keys[inst.start + t])
                slope, intercept = (float(v) for v in inst.leaf_params[t])
                p = min(max(slope * x + intercept, 0.0), model.n - 1.0)
                slot = math.floor(p * n_slots / model.n)
                out[inst.start + t] = min(max(slot, 0), n_slots - 1)
            inst.advance(Stage.PREDICT)
            steps += 1
        k += 1
    for i in range(n_full, keys.shape[0]):
        out[i] = learned_slot(model, int(keys[i]), n_slots)
    return out, steps
