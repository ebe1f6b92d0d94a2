import numpy as np
import pytest

from lhash import bench
from lhash.analysis import uniform_baseline
from lhash.batch import BatchConfig
from lhash.bench import ExperimentSpec, ResultRow, SpecError
from lhash.hashing import make_hasher
from lhash.keyset import dataset
from lhash.models import train_radix_spline, train_rmi


def small(**kw):
    base = dict(n=20_000, repetitions=3, leaf_grid=[10, 1000])
    base.update(kw)
    return ExperimentSpec(**base)


def by_metric(rows, metric):
    return [r for r in rows if r.metric == metric]


@pytest.mark.parametrize("bad", [dict(repetitions=2), dict(n=0), dict(datasets=[]),
                                 dict(table="open"), dict(payload=12), dict(kicking="lifo"),
                                 dict(load_factor=1.5), dict(hashers=["crc"]),
                                 dict(leaf_grid=[0])])
def test_spec_validation(bad):
    with pytest.raises(SpecError):
        small(**bad).validate()


def test_result_row_needs_units():
    with pytest.raises(ValueError):
        ResultRow("e", "d", "h", "m", 1.0, "")


def test_csv_roundtrip():
    rows = [ResultRow("e", "d", "h", "m", 0.1 + 0.2, "ns", 5), ResultRow("x", "y", "z", "w", 3, "keys")]
    text = bench.rows_to_csv(rows)
    assert text.splitlines()[0] == ",".join(bench.RESULT_COLUMNS)
    back = bench.rows_from_csv(text)
    assert back[0].value == 0.1 + 0.2 and back[0].repetitions == 5
    assert back[1].value == 3.0


@pytest.mark.parametrize("kind", ["murmur", "mshift", "rmi", "rs"])
def test_compiled_slot_fn_matches_hasher(kind):
    keys = dataset("heavytail", 10_000, seed=1)
    model = {"rmi": train_rmi(keys, 100), "rs": train_radix_spline(keys, 8)}.get(kind)
    h = make_hasher(kind, 9_973, model)
    probe = np.random.default_rng(0).permutation(keys.keys)
    out = np.empty(probe.size, dtype=np.int64)
    bench.compiled_slot_fn(h, probe, out)()
    np.testing.assert_array_equal(out, h.slots(probe))


def test_throughput_rows():
    spec = small(hashers=["murmur", "rmi", "rs"], raw=True)
    rows = bench.cmd_throughput(spec)
    timing = by_metric(rows, "ns_per_key")
    exps = [r.experiment for r in timing]
    assert exps.count("throughput:murmur") == 1
    for L in (10, 1000):
        assert f"throughput:rmi:L={L}:scalar" in exps
        assert any(e.startswith(f"throughput:rmi:L={L}:batched") for e in exps)
    assert all(r.repetitions == 3 and r.value > 0 and r.units == "ns" for r in timing)
    assert len(by_metric(rows, "ns_per_key_raw")) == 3 * len(timing)
    sizes = {r.experiment: r.value for r in by_metric(rows, "model_bytes")}
    assert sizes["throughput:rmi:L=10"] == 11 * 16


def test_collisions_rows():
    spec = small(datasets=["seq0", "seq10"], hashers=["murmur", "rmi", "rs"], n=100_000)
    rows = bench.cmd_collisions(spec)
    get = {(r.dataset, r.hasher, r.metric): r.value for r in rows}
    base = uniform_baseline(100_000)
    assert get[("seq0", "rmi", "empty_fraction_empirical")] == 0.0
    assert get[("seq0", "rs", "empty_fraction_empirical")] == 0.0
    for ds in ("seq0", "seq10"):
        assert abs(get[(ds, "murmur", "empty_fraction_empirical")] - base) <= 0.005
        assert get[(ds, "murmur", "uniform_baseline")] == base
    assert get[("seq10", "rs", "empty_fraction_empirical")] < base - 0.05
    assert len(rows) == 2 * 3 * 3


def test_collisions_are_deterministic():
    spec = small(datasets=["seq10", "uniform"], hashers=["murmur", "rmi"])
    assert bench.cmd_collisions(spec) == bench.cmd_collisions(spec)


def test_probe_chain_hits_everything():
    rows = bench.cmd_probe(small(datasets=["seq1", "uniform"], hashers=["murmur", "rmi"],
                                 bucket_size=2, payload=16))
    for r in by_metric(rows, "hits"):
        assert r.value == 20_000
    assert by_metric(rows, "overflow_buckets")
    assert not by_metric(rows, "error")


def test_probe_chain_learned_is_smaller_on_low_collision_data():
    rows = bench.cmd_probe(small(datasets=["seq1"], hashers=["murmur", "rmi"], n=100_000))
    size = {r.hasher: r.value for r in by_metric(rows, "bytes_allocated")}
    assert size["rmi"] < size["murmur"]


def test_probe_cuckoo_rows():
    rows = bench.cmd_probe(small(datasets=["uniform", "seq10"], hashers=["murmur", "rs"],
                                 table="cuckoo", bucket_size=8))
    hits = by_metric(rows, "hits")
    failed = by_metric(rows, "failed_inserts")
    for h, f in zip(hits, failed):
        assert h.value == 20_000 - f.value
    # uniform keys never trouble either pairing at this load
    assert all(f.value == 0 for f in failed if f.dataset == "uniform")
    ratios = by_metric(rows, "primary_key_ratio")
    assert len(ratios) == 4 and all(0.5 < r.value <= 1.0 for r in ratios)


def test_probe_cuckoo_failure_is_a_row():
    spec = small(hashers=["murmur"], table="cuckoo", bucket_size=1, load_factor=1.0,
                 max_kicks=5, n=5000)
    rows = bench.cmd_probe(spec)
    errors = by_metric(rows, "error")
    assert len(errors) == 1 and errors[0].value > 0
    hits = by_metric(rows, "hits")[0].value
    assert hits == 5000 - errors[0].value


def test_gaps_seq0_single_bin():
    hist, rows = bench.cmd_gaps(small(datasets=["seq0"], hashers=["rs"], bins=100))
    lines = hist.splitlines()
    assert len(lines) == 101
    dens = [float(line.split(",")[3]) for line in lines[1:]]
    nonzero = [i for i, d in enumerate(dens) if d > 0]
    assert len(nonzero) == 1 and float(lines[1 + nonzero[0]].split(",")[1]) == 1.0
    assert rows[0].value == 0.0


def test_gaps_uniform_looks_exponential():
    hist, _ = bench.cmd_gaps(small(datasets=["uniform"], hashers=["rs"], n=200_000))
    rows = [line.split(",") for line in hist.splitlines()[1:]]
    lo = np.array([float(r[1]) for r in rows])
    dens = np.array([float(r[3]) for r in rows])
    for a, b in [(0.0, 0.1), (0.95, 1.05), (2.0, 2.5)]:
        sel = (lo >= a - 1e-12) & (lo < b - 1e-12)
        # average of exp(-x) over [a, b)
        expected = (np.exp(-a) - np.exp(-b)) / (b - a)
        assert dens[sel].mean() == pytest.approx(expected, rel=0.05)


def test_batch_settings_are_carried():
    spec = small(hashers=["rmi"], leaf_grid=[10], batch=BatchConfig(4, 16), prefetch=False)
    exps = [r.experiment for r in bench.cmd_throughput(spec)]
    assert "throughput:rmi:L=10:batched:s=4:w=16:prefetch=0" in exps
