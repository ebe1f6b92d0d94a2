import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lhash.keyset import KeySet, dataset, generate_heavy_tail
from lhash.models import (ModelError, RadixSplineModel, RmiModel, load_model,
                          model_from_bytes, model_size_bytes, model_to_bytes,
                          monotonicity_violations, rank_errors, save_model,
                          train_radix_spline, train_rmi)


def ks(values):
    return KeySet(np.array(values, dtype=np.uint64))


def naive_ols(xs, ys):
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    if sxx == 0:
        return 0.0, my
    slope = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sxx
    return slope, my - slope * mx


def naive_rmi_predictions(keys, L):
    """Two-level fit written out key by key, without numpy."""
    n = len(keys)
    xs = [float(k) for k in keys]
    root = naive_ols(xs, [i * L / n for i in range(n)])
    route = [min(max(math.floor(root[0] * x + root[1]), 0), L - 1) for x in xs]
    members = {}
    for i, j in enumerate(route):
        members.setdefault(j, []).append(i)
    leaves = {j: naive_ols([xs[i] for i in idx], [float(i) for i in idx])
              for j, idx in members.items()}
    out = []
    for x, j in zip(xs, route):
        a, b = leaves[j]
        out.append(min(max(a * x + b, 0.0), n - 1.0))
    return root, out


# --- RMI -------------------------------------------------------------------

def test_rmi_identity_fit(identity_keys):
    m = train_rmi(identity_keys, 1)
    slope, intercept = m.leaf_params[0]
    assert slope == pytest.approx(1.0, abs=1e-9)
    assert intercept == pytest.approx(0.0, abs=1e-9)
    assert m.evaluate(50) == pytest.approx(50.0, abs=1e-9)
    assert all(m.evaluate(k) == pytest.approx(k, abs=1e-9) for k in range(100))


def test_rmi_half_slope():
    m = train_rmi(ks(range(0, 200, 2)), 1)
    assert m.evaluate(6) == pytest.approx(3.0, abs=1e-9)


def test_rmi_clamps_out_of_range():
    m = train_rmi(ks(range(100, 200)), 4)
    assert m.evaluate(0) == 0.0
    assert m.evaluate(2**64 - 1) == 99.0


def test_rmi_matches_naive_oracle_on_heavy_tail():
    keys = generate_heavy_tail(10_000, seed=3)
    m = train_rmi(keys, 64)
    root, expected = naive_rmi_predictions(keys.keys.tolist(), 64)
    assert m.root_slope == pytest.approx(root[0], rel=1e-9)
    assert m.root_intercept == pytest.approx(root[1], rel=1e-9, abs=1e-9)
    got = m.predict(keys.keys)
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-6)
    errs = got - np.arange(keys.count)
    oracle_errs = np.array(expected) - np.arange(keys.count)
    np.testing.assert_allclose(np.sort(errs), np.sort(oracle_errs), atol=1e-6)


def test_rmi_empty_leaf_predicts_boundary_rank():
    # keys cluster at both ends, so the middle leaves receive nothing
    keys = ks(list(range(10)) + list(range(1000, 1010)))
    m = train_rmi(keys, 10)
    counts = np.bincount(m.leaf_indexes(keys.keys), minlength=10)
    empty = np.flatnonzero(counts == 0)
    assert empty.size > 0
    boundary = np.cumsum(counts) - counts
    for j in empty:
        assert m.leaf_params[j, 0] == 0.0
        assert m.leaf_params[j, 1] == min(boundary[j], keys.count - 1)


def test_rmi_single_key_leaf():
    m = train_rmi(ks([42]), 3)
    assert m.evaluate(42) == 0.0


def test_rmi_errors():
    with pytest.raises(ModelError):
        train_rmi(ks([]), 4)
    with pytest.raises(ModelError):
        train_rmi(ks([1, 2]), 0)


def test_rmi_scalar_and_vector_agree():
    keys = dataset("seq10", 20_000, seed=2)
    m = train_rmi(keys, 500)
    probe = np.random.default_rng(0).integers(0, 30_000, 2000, dtype=np.uint64)
    assert m.predict(probe).tolist() == [m.evaluate(int(k)) for k in probe]


def test_rmi_monotonicity_violations_are_counted():
    keys = dataset("seq10", 100_000, seed=1)
    assert monotonicity_violations(train_rmi(keys, 1), keys) == 0
    m = train_rmi(keys, 10_000)
    preds = [m.evaluate(int(k)) for k in keys.keys]
    expected = sum(1 for a, b in zip(preds, preds[1:]) if b < a)
    assert monotonicity_violations(m, keys) == expected


@settings(max_examples=40, deadline=None)
@given(st.sets(st.integers(0, 2**63), min_size=1, max_size=300), st.integers(1, 50))
def test_rmi_outputs_in_range(values, L):
    keys = ks(sorted(values))
    m = train_rmi(keys, L)
    probe = np.array(sorted(values) + [0, 2**64 - 1], dtype=np.uint64)
    p = m.predict(probe)
    assert np.all((p >= 0) & (p <= keys.count - 1))


# --- RadixSpline -----------------------------------------------------------

@pytest.mark.parametrize("e", [0, 1, 32])
def test_rs_linear_data_has_two_points(identity_keys, e):
    m = train_radix_spline(identity_keys, e)
    assert m.spline_points == [(0, 0.0), (99, 99.0)]
    assert m.evaluate(50) == 50.0


def test_rs_breaks_at_slope_changes():
    keys = [0, 1, 2, 100, 101, 102]
    m = train_radix_spline(ks(keys), 0)
    assert m.spline_points == [(0, 0.0), (2, 2.0), (100, 3.0), (102, 5.0)]
    for rank, k in enumerate(keys):
        assert abs(m.evaluate(k) - rank) == 0.0


def test_rs_spline_points_are_exact():
    keys = dataset("heavytail", 5000, seed=4)
    m = train_radix_spline(keys, 8, radix_bits=10)
    for k, p in m.spline_points:
        assert m.evaluate(k) == p


@pytest.mark.parametrize("e", [1, 8, 32])
def test_rs_error_bound_exhaustive(e):
    keys = dataset("heavytail", 20_000, seed=e)
    m = train_radix_spline(keys, e)
    errs = np.abs(rank_errors(m, keys))
    assert errs.max() <= e + 1e-9


def test_rs_radix_path_matches_binary_search():
    keys = dataset("heavytail", 50_000, seed=5)
    m = train_radix_spline(keys, 16, radix_bits=12)
    rng = np.random.default_rng(9)
    lo, hi = int(keys.keys[0]), int(keys.keys[-1])
    probe = np.concatenate([rng.integers(lo, hi, 100_000, dtype=np.uint64, endpoint=True),
                            keys.keys[:1000], np.array([0, 2**64 - 1], dtype=np.uint64)])
    np.testing.assert_array_equal(m.predict(probe), m.predict_binary_search(probe))
    assert [m.evaluate(int(k)) for k in probe[:2000]] == m.predict(probe[:2000]).tolist()


def test_rs_clamps():
    m = train_radix_spline(ks(range(10, 20)), 0)
    assert m.evaluate(0) == 0.0
    assert m.evaluate(1000) == 9.0


def test_rs_errors():
    with pytest.raises(ModelError):
        train_radix_spline(ks([]), 4)
    with pytest.raises(ModelError):
        train_radix_spline(ks([1]), -1)


def bruteforce_max_error(keys, points):
    """Rank error of a piecewise-linear interpolant, computed with fractions."""
    from fractions import Fraction
    worst = Fraction(0)
    pk = [k for k, _ in points]
    for rank, k in enumerate(keys):
        if k <= pk[0]:
            pred = Fraction(points[0][1])
        elif k >= pk[-1]:
            pred = Fraction(points[-1][1])
        else:
            i = max(j for j in range(len(pk)) if pk[j] <= k)
            (k0, p0), (k1, p1) = points[i], points[i + 1]
            pred = Fraction(int(p0)) + Fraction(k - k0) * Fraction(int(p1 - p0), k1 - k0)
        worst = max(worst, abs(pred - rank))
    return worst


@settings(max_examples=80, deadline=None)
@given(st.sets(st.integers(0, 2**40), min_size=1, max_size=120), st.integers(0, 6))
def test_rs_error_bound_property(values, e):
    keys = sorted(values)
    m = train_radix_spline(ks(keys), e, radix_bits=4)
    assert bruteforce_max_error(keys, m.spline_points) <= e
    p = m.predict(np.array(keys, dtype=np.uint64))
    assert np.all(np.abs(p - np.arange(len(keys))) <= e + 1e-9)
    assert np.all(np.diff(p) >= 0)


# --- sizes and serialization ----------------------------------------------

def test_model_sizes(identity_keys):
    assert model_size_bytes(train_rmi(identity_keys, 1)) == 32
    assert model_size_bytes(train_rmi(identity_keys, 4)) == 80
    rs = train_radix_spline(identity_keys, 0, radix_bits=2)
    assert len(rs.spline_points) == 2
    assert model_size_bytes(rs) == 72


@pytest.mark.parametrize("kind", ["rmi", "rs"])
def test_model_roundtrip(tmp_path, kind):
    keys = dataset("seq10", 5000, seed=1)
    m = train_rmi(keys, 32) if kind == "rmi" else train_radix_spline(keys, 4, 8)
    path = tmp_path / "m.bin"
    save_model(m, path)
    back = load_model(path)
    assert type(back) is type(m)
    np.testing.assert_array_equal(back.predict(keys.keys), m.predict(keys.keys))


def test_model_blob_rejects_garbage():
    m = train_rmi(ks(range(10)), 2)
    blob = model_to_bytes(m)
    with pytest.raises(ModelError):
        model_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ModelError):
        model_from_bytes(blob[:-1])
    with pytest.raises(ModelError):
        model_from_bytes(blob[:10])


def test_model_types_are_validated():
    with pytest.raises(ModelError):
        RmiModel(1.0, 0.0, np.zeros((0, 2)), 10)
    with pytest.raises(ModelError):
        RmiModel(1.0, 0.0, np.array([[np.nan, 0.0]]), 10)
    with pytest.raises(ModelError):
        RadixSplineModel(2, 0, np.zeros(3, dtype=np.int64), np.array([1], dtype=np.uint64),
                         np.array([0.0]), 1)
