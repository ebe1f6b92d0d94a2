import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lhash.batch import (MAX_IN_FLIGHT, BatchConfig, FsmInstance, Stage, hash_batch,
                         hash_batch_reference, hash_scalar, prefetch_hint)
from lhash.hashing import learned_slot, learned_slots
from lhash.keyset import dataset
from lhash.models import train_radix_spline, train_rmi


@pytest.fixture(scope="module")
def model():
    return train_rmi(dataset("seq10", 50_000, seed=1), 1000)


@pytest.fixture(scope="module")
def probe():
    return np.random.default_rng(3).integers(0, 60_000, 10_007, dtype=np.uint64)


def test_empty_input(model):
    assert hash_batch(model, np.array([], dtype=np.uint64), 10).size == 0


def test_degenerate_config_is_scalar(model, probe):
    out = hash_batch(model, probe, 50_000, BatchConfig(1, 1))
    np.testing.assert_array_equal(out, learned_slots(model, probe, 50_000))
    assert out[:200].tolist() == [learned_slot(model, int(k), 50_000) for k in probe[:200]]


@pytest.mark.parametrize("s,w", [(1, 1), (2, 3), (4, 8), (8, 8), (16, 4), (3, 64)])
def test_configs_match_scalar(model, probe, s, w):
    expected = hash_scalar(model, probe, 50_000)
    np.testing.assert_array_equal(expected, learned_slots(model, probe, 50_000))
    np.testing.assert_array_equal(hash_batch(model, probe, 50_000, BatchConfig(s, w)), expected)


def test_prefetch_does_not_change_output(model, probe):
    cfg = BatchConfig(8, 8)
    np.testing.assert_array_equal(hash_batch(model, probe, 777, cfg, prefetch=True),
                                  hash_batch(model, probe, 777, cfg, prefetch=False))


def test_large_model_bit_identical():
    keys = dataset("uniform", 1_000_000, seed=8)
    m = train_rmi(keys, 100_000)
    probe = np.random.default_rng(1).permutation(keys.keys)
    np.testing.assert_array_equal(hash_batch(m, probe, keys.count, BatchConfig(8, 8)),
                                  learned_slots(m, probe, keys.count))


@pytest.mark.parametrize("n_keys,s,w", [(1000, 4, 8), (1003, 4, 8), (5, 8, 8), (64, 1, 1)])
def test_reference_fsm(model, probe, n_keys, s, w):
    keys = probe[:n_keys]
    out, steps = hash_batch_reference(model, keys, 50_000, BatchConfig(s, w))
    np.testing.assert_array_equal(out, hash_scalar(model, keys, 50_000))
    # each full group costs a predict and a hash step; each instance retires once
    assert steps == 2 * (n_keys // w) + s


def test_fsm_transitions():
    inst = FsmInstance()
    inst.advance(Stage.HASH)
    inst.advance(Stage.PREDICT)
    inst.advance(Stage.DONE)
    with pytest.raises(RuntimeError):
        inst.advance(Stage.PREDICT)
    with pytest.raises(RuntimeError):
        FsmInstance(stage=Stage.HASH).advance(Stage.DONE)


def test_config_validation():
    with pytest.raises(ValueError):
        BatchConfig(0, 8)
    with pytest.raises(ValueError):
        BatchConfig(8, 0)
    with pytest.raises(ValueError):
        BatchConfig(MAX_IN_FLIGHT, 2)


def test_rejects_radix_spline(identity_keys):
    with pytest.raises(TypeError):
        hash_batch(train_radix_spline(identity_keys), np.arange(5, dtype=np.uint64), 5)


def test_prefetch_hint_is_a_no_op(model):
    before = model.leaf_params.copy()
    for i in (0, 1, model.leaf_params.size - 1):
        assert prefetch_hint(model.leaf_params, i) is None
    np.testing.assert_array_equal(before, model.leaf_params)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 2**64 - 1), max_size=300), st.integers(1, 9),
       st.integers(1, 9), st.integers(1, 5000))
def test_batch_equivalence_property(model, keys, s, w, n_slots):
    arr = np.array(keys, dtype=np.uint64)
    np.testing.assert_array_equal(hash_batch(model, arr, n_slots, BatchConfig(s, w)),
                                  learned_slots(model, arr, n_slots))
