"""Experiment drivers producing CSV result rows.

Every driver takes an :class:`ExperimentSpec` and returns a list of
:class:`ResultRow`. Non-timing values are deterministic for a fixed seed.
Timing values are medians over ``repetitions`` runs after one untimed warm-up
pass; keys are hashed or probed in a seeded shuffled order.

Result CSV columns: ``experiment, dataset, hasher, metric, value, units,
repetitions`` (``repetitions`` is 0 for non-timing rows).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _kernels
from .analysis import empty_slot_report, histogram_csv, output_gaps
from .batch import BatchConfig, hash_batch
from .hashing import MultiplyShiftHasher, MurmurHasher, make_hasher
from .keyset import KeySet, dataset, load_keyset
from .models import (DEFAULT_MAX_ERROR, DEFAULT_RADIX_BITS, RmiModel, model_size_bytes,
                     train_radix_spline, train_rmi)
from .tables import PAYLOAD_SIZES, chain_build, cuckoo_build, default_payloads

log = logging.getLogger(__name__)

DEFAULT_N = 1_000_000
DEFAULT_REPETITIONS = 5
DEFAULT_LEAVES = 1000
DEFAULT_LEAF_GRID = (10, 1_000, 100_000)
RESULT_COLUMNS = ("experiment", "dataset", "hasher", "metric", "value", "units", "repetitions")


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    datasets: list[str] = field(default_factory=lambda: ["seq10"])
    n: int = DEFAULT_N
    seed: int = 42
    hashers: list[str] = field(default_factory=lambda: ["murmur", "rmi"])
    leaves: int = DEFAULT_LEAVES
    leaf_grid: list[int] = field(default_factory=lambda: list(DEFAULT_LEAF_GRID))
    max_error: int = DEFAULT_MAX_ERROR
    radix_bits: int = DEFAULT_RADIX_BITS
    table: str = "chain"
    bucket_size: int = 1
    payload: int = 8
    kicking: str = "biased"
    load_factor: float | None = None
    max_kicks: int = 500
    repetitions: int = DEFAULT_REPETITIONS
    batch: BatchConfig = field(default_factory=BatchConfig)
    prefetch: bool = True
    include_build: bool = False
    raw: bool = False
    bins: int = 1000
    g_max: float = 5.0

    def validate(self) -> None:
        if self.repetitions < 3:
            raise SpecError("repetitions must be >= 3 (the median is reported)")
        if self.n < 1:
            raise SpecError("n must be >= 1")
        if not self.datasets:
            raise SpecError("at least one dataset is required")
        if self.table not in ("chain", "cuckoo"):
            raise SpecError("table must be 'chain' or 'cuckoo'")
        if self.payload not in PAYLOAD_SIZES:
            raise SpecError(f"payload must be one of {PAYLOAD_SIZES}")
        if self.kicking not in ("balanced", "biased"):
            raise SpecError("kicking must be 'balanced' or 'biased'")
        if self.load_factor is not None and not 0 < self.load_factor <= 1.0:
            raise SpecError("load factor must lie in (0, 1]")
        if self.bucket_size < 1 or self.leaves < 1 or any(L < 1 for L in self.leaf_grid):
            raise SpecError("bucket size and leaf counts must be >= 1")
        for h in self.hashers:
            if h not in ("murmur", "mshift", "rmi", "rs"):
                raise SpecError(f"unknown hasher {h!r}")


@dataclass
class ResultRow:
    experiment: str
    dataset: str
    hasher: str
    metric: str
    value: float
    units: str
    repetitions: int = 0

    def __post_init__(self) -> None:
        if not self.units:
            raise ValueError("units must be non-empty")


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        value = repr(float(r.value)) if isinstance(r.value, float) else r.value
        w.writerow([r.experiment, r.dataset, r.hasher, r.metric, value, r.units, r.repetitions])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ResultRow]:
    reader = csv.DictReader(io.StringIO(text))
    return [ResultRow(d["experiment"], d["dataset"], d["hasher"], d["metric"],
                      float(d["value"]), d["units"], int(d["repetitions"])) for d in reader]


def load_dataset(descriptor: str, n: int, seed: int) -> KeySet:
    """A KeyFile path if one exists, else a named synthetic dataset."""
    path = Path(descriptor)
    ks = load_keyset(path) if path.is_file() else dataset(descriptor, n, seed)
    log.info("dataset %s: %d keys", descriptor, ks.count)
    return ks


def train_for(kind: str, keys: KeySet, spec: ExperimentSpec, leaves: int | None = None):
    if kind == "rmi":
        return train_rmi(keys, leaves or spec.leaves)
    if kind == "rs":
        return train_radix_spline(keys, spec.max_error, spec.radix_bits)
    return None


def hasher_for(kind: str, keys: KeySet, n_slots: int, spec: ExperimentSpec,
               leaves: int | None = None):
    return make_hasher(kind, n_slots, train_for(kind, keys, spec, leaves))


def time_median_ns(fn, n_items: int, repetitions: int) -> tuple[float, list[float]]:
    """Median ns per item over ``repetitions`` timed calls after one warm-up call."""
    fn()
    per_item = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        fn()
        per_item.append((time.perf_counter_ns() - t0) / max(n_items, 1))
    return float(np.median(per_item)), per_item


def time_round_robin(fns: dict, n_items: int, repetitions: int) -> dict:
    """Median ns per item for several callables, timed in interleaved rounds.

    Every callable is warmed up once, then each round times each callable
    once, so slow drifts in machine state hit all candidates alike. The
    starting callable rotates between rounds to cancel position effects.
    """
    names = list(fns)
    for fn in fns.values():
        fn()
    samples = {name: [] for name in names}
    for r in range(repetitions):
        for name in names[r % len(names):] + names[:r % len(names)]:
            t0 = time.perf_counter_ns()
            fns[name]()
            samples[name].append((time.perf_counter_ns() - t0) / max(n_items, 1))
    return {name: float(np.median(v)) for name, v in samples.items()}


def compiled_slot_fn(hasher, keys: np.ndarray, out: np.ndarray):
    """Zero-argument callable hashing ``keys`` into ``out`` with a compiled loop."""
    if isinstance(hasher, MurmurHasher):
        fm = hasher._fm
        args = (np.uint64(fm.magic), fm.shift1, fm.shift2, np.uint64(fm.divisor), out)
        return lambda: _kernels.murmur_slots_scalar(keys, *args)
    if isinstance(hasher, MultiplyShiftHasher):
        fm = hasher._fm
        args = (np.uint64(hasher.a), hasher.out_bits, np.uint64(fm.magic), fm.shift1,
                fm.shift2, np.uint64(fm.divisor), out)
        return lambda: _kernels.mshift_slots_scalar(keys, *args)
    model = hasher.model
    if isinstance(model, RmiModel):
        return lambda: _kernels.rmi_slots_scalar(keys, model.root_slope, model.root_intercept,
                                                 model.leaf_params, model.n, hasher.n_slots, out)
    return lambda: out.__setitem__(slice(None), hasher.slots(keys))


def _timing_rows(exp: str, ds: str, hasher: str, metric: str, units: str,
                 median: float, raw: list[float], spec: ExperimentSpec) -> list[ResultRow]:
    rows = [ResultRow(exp, ds, hasher, metric, median, units, spec.repetitions)]
    if spec.raw:
        rows += [ResultRow(f"{exp}:rep={i}", ds, hasher, f"{metric}_raw", v, units, 1)
                 for i, v in enumerate(raw)]
    return rows


def cmd_throughput(spec: ExperimentSpec) -> list[ResultRow]:
    """Median ns/key for each hasher; RMI over the leaf grid, scalar and interleaved."""
    spec.validate()
    rows: list[ResultRow] = []
    cfg = spec.batch
    for name in spec.datasets:
        ks = load_dataset(name, spec.n, spec.seed)
        probe = ks.shuffled(spec.seed)
        n = ks.count
        out = np.empty(n, dtype=np.int64)
        for kind in spec.hashers:
            if kind in ("murmur", "mshift"):
                h = make_hasher(kind, n)
                med, raw = time_median_ns(compiled_slot_fn(h, probe, out), n, spec.repetitions)
                rows += _timing_rows(f"throughput:{kind}", name, kind, "ns_per_key", "ns",
                                     med, raw, spec)
                continue
            grid = spec.leaf_grid if kind == "rmi" else [None]
            for L in grid:
                t0 = time.perf_counter_ns()
                h = hasher_for(kind, ks, n, spec, L)
                build_ns = (time.perf_counter_ns() - t0) / n if spec.include_build else 0.0
                tag = f"L={L}" if kind == "rmi" else f"max_error={spec.max_error}"
                med, raw = time_median_ns(compiled_slot_fn(h, probe, out), n, spec.repetitions)
                rows += _timing_rows(f"throughput:{kind}:{tag}:scalar", name, kind,
                                     "ns_per_key", "ns", med + build_ns,
                                     [r + build_ns for r in raw], spec)
                rows.append(ResultRow(f"throughput:{kind}:{tag}", name, kind, "model_bytes",
                                      model_size_bytes(h.model), "bytes"))
                if kind == "rmi":
                    model = h.model

                    def batched():
                        hash_batch(model, probe, n, cfg, spec.prefetch)

                    med, raw = time_median_ns(batched, n, spec.repetitions)
                    exp = (f"throughput:rmi:{tag}:batched:s={cfg.group_size}:w={cfg.vector_width}"
                           f":prefetch={int(spec.prefetch)}")
                    rows += _timing_rows(exp, name, kind, "ns_per_key", "ns", med + build_ns,
                                         [r + build_ns for r in raw], spec)
    return rows


def cmd_collisions(spec: ExperimentSpec) -> list[ResultRow]:
    """Empirical and predicted empty-slot fractions, ``n`` keys into ``n`` slots."""
    spec.validate()
    rows = []
    for name in spec.datasets:
        ks = load_dataset(name, spec.n, spec.seed)
        for kind in spec.hashers:
            h = hasher_for(kind, ks, ks.count, spec)
            rep = empty_slot_report(ks, h, spec.bins, spec.g_max)
            exp = f"collisions:{kind}"
            rows += [
                ResultRow(exp, name, kind, "empty_fraction_empirical",
                          rep.empty_fraction_empirical, "fraction"),
                ResultRow(exp, name, kind, "empty_fraction_analytic",
                          rep.empty_fraction_analytic, "fraction"),
                ResultRow(exp, name, kind, "uniform_baseline", rep.uniform_baseline, "fraction"),
            ]
    return rows


def _n_buckets(n_keys: int, bucket_size: int, load_factor: float) -> int:
    return max(1, math.ceil(n_keys / (bucket_size * load_factor)))


def cmd_probe(spec: ExperimentSpec) -> list[ResultRow]:
    """Build one table per dataset x hasher and probe every key in shuffled order."""
    spec.validate()
    rows = []
    for name in spec.datasets:
        ks = load_dataset(name, spec.n, spec.seed)
        order = ks.shuffled(spec.seed)
        payloads = default_payloads(ks.keys, spec.payload)
        for kind in spec.hashers:
            lf = spec.load_factor or (1.0 if spec.table == "chain" else 0.95)
            nb = _n_buckets(ks.count, spec.bucket_size, lf)
            exp = (f"probe:{spec.table}:b={spec.bucket_size}:payload={spec.payload}"
                   f":lf={lf:g}" + (f":{spec.kicking}" if spec.table == "cuckoo" else ""))
            t0 = time.perf_counter_ns()
            h = hasher_for(kind, ks, nb, spec)
            if spec.table == "chain":
                table = chain_build(ks, spec.payload, h, nb, spec.bucket_size, payloads)
            else:
                second = make_hasher("mshift" if kind == "murmur" else "murmur", nb)
                table = cuckoo_build(ks, spec.payload, h, second, nb, spec.bucket_size,
                                     spec.kicking, spec.max_kicks, spec.seed, payloads)
            build_ns = (time.perf_counter_ns() - t0) / ks.count if spec.include_build else 0.0

            def run():
                res = table.probe_many(order)
                return res[0] if isinstance(res, tuple) else res

            med, raw = time_median_ns(run, ks.count, spec.repetitions)
            hits = int(np.count_nonzero(run() >= 0))
            stats = table.stats()
            rows += _timing_rows(exp, name, kind, "ns_per_probe", "ns", med + build_ns,
                                 [r + build_ns for r in raw], spec)
            rows += [
                ResultRow(exp, name, kind, "hits", hits, "keys"),
                ResultRow(exp, name, kind, "bytes_allocated", stats.bytes_allocated, "bytes"),
            ]
            if getattr(h, "model", None) is not None:
                rows.append(ResultRow(exp, name, kind, "model_bytes",
                                      model_size_bytes(h.model), "bytes"))
            if spec.table == "chain":
                rows.append(ResultRow(exp, name, kind, "overflow_buckets",
                                      stats.overflow_bucket_count, "buckets"))
            else:
                rows += [
                    ResultRow(exp, name, kind, "primary_key_ratio", stats.primary_key_ratio,
                              "fraction"),
                    ResultRow(exp, name, kind, "kicks", stats.kick_count, "evictions"),
                    ResultRow(exp, name, kind, "failed_inserts", stats.failed_inserts, "keys"),
                ]
                if stats.failed_inserts:
                    rows.append(ResultRow(exp, name, kind, "error", stats.failed_inserts,
                                          "failed_inserts"))
    return rows


def cmd_gaps(spec: ExperimentSpec) -> tuple[str, list[ResultRow]]:
    """Gap histogram CSV for the first dataset and hasher, plus empty-slot rows
    for every dataset under that hasher."""
    spec.validate()
    kind = spec.hashers[0]
    histogram = ""
    rows = []
    for i, name in enumerate(spec.datasets):
        ks = load_dataset(name, spec.n, spec.seed)
        h = hasher_for(kind, ks, ks.count, spec)
        if i == 0:
            histogram = histogram_csv(output_gaps(ks, h, spec.bins, spec.g_max), name)
        rep = empty_slot_report(ks, h, spec.bins, spec.g_max)
        rows += [
            ResultRow(f"gaps:{kind}", name, kind, "empty_fraction_empirical",
                      rep.empty_fraction_empirical, "fraction"),
            ResultRow(f"gaps:{kind}", name, kind, "empty_fraction_analytic",
                      rep.empty_fraction_analytic, "fraction"),
        ]
    return histogram, rows


def spec_fields() -> list[str]:
    return [f.name for f in fields(ExperimentSpec)]
