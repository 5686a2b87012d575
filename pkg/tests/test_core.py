import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from somstream.core import (
    DatasetMeta,
    Instance,
    UsageError,
    batch_label_cardinality,
    discriminant,
    euclidean_distance,
    scale_features,
    scale_matrix,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def loop_distance(a, b):
    total = 0.0
    for u, v in zip(a, b):
        total += (u - v) * (u - v)
    return math.sqrt(total)


class TestDistance:
    def test_pythagorean(self):
        assert euclidean_distance((0, 0), (3, 4)) == 5.0

    def test_identity(self):
        a = (0.3, -1.2, 7.0)
        assert euclidean_distance(a, a) == 0.0

    def test_matches_scalar_loop(self):
        a, b = (0.2, 0.7, 0.1), (0.5, 0.5, 0.5)
        assert euclidean_distance(a, b) == pytest.approx(loop_distance(a, b), abs=1e-15)
        assert euclidean_distance(a, b) == pytest.approx(math.sqrt(0.29), abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            euclidean_distance((1, 2), (1, 2, 3))

    @given(st.lists(finite, min_size=1, max_size=8).flatmap(
        lambda a: st.tuples(st.just(a), st.lists(finite, min_size=len(a), max_size=len(a)))))
    def test_symmetric_and_loop_oracle(self, pair):
        a, b = pair
        assert euclidean_distance(a, b) == euclidean_distance(b, a)
        assert euclidean_distance(a, b) == pytest.approx(loop_distance(a, b), rel=1e-12, abs=1e-12)


class TestDiscriminant:
    def test_zero_distance(self):
        assert discriminant((1.0, 2.0), (1.0, 2.0)) == 1.0

    def test_unit_distance(self):
        assert discriminant((0.0, 1.0), (0.0, 0.0)) == pytest.approx(0.36787944117144233, abs=1e-15)

    def test_ln2_distance(self):
        assert discriminant((math.log(2),), (0.0,)) == pytest.approx(0.5, abs=1e-15)

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=2), st.lists(st.floats(-10, 10), min_size=2, max_size=2))
    def test_range(self, x, m):
        v = discriminant(x, m)
        assert 0.0 < v <= 1.0
        if x == m:
            assert v == 1.0
        elif euclidean_distance(x, m) > 1e-15:
            # below that, exp(-d) rounds to exactly 1.0
            assert v < 1.0

    def test_strictly_decreasing(self):
        outs = [discriminant((d,), (0.0,)) for d in np.linspace(0, 5, 20)]
        assert all(a > b for a, b in zip(outs, outs[1:]))


class TestCardinality:
    def test_direct_mean(self):
        lc = batch_label_cardinality([frozenset({0}), frozenset({0, 1})])
        assert lc.z == 1.5 and lc.N == 2

    def test_singletons(self):
        assert batch_label_cardinality([frozenset({j}) for j in range(5)]).z == 1.0

    def test_empty(self):
        with pytest.raises(UsageError):
            batch_label_cardinality([])

    @given(st.lists(st.frozensets(st.integers(0, 4)), min_size=1, max_size=30),
           st.lists(st.frozensets(st.integers(0, 4)), min_size=1, max_size=30))
    def test_concatenation_is_weighted_mean(self, a, b):
        whole = batch_label_cardinality(a + b)
        za, zb = batch_label_cardinality(a), batch_label_cardinality(b)
        assert whole.z == pytest.approx((za.z * za.N + zb.z * zb.N) / (za.N + zb.N), abs=1e-12)


class TestScaling:
    meta = DatasetMeta(3, 2, np.array([0.0, -1.0, 2.0]), np.array([10.0, 1.0, 2.0]))

    def test_min_and_max(self):
        assert np.array_equal(scale_features(self.meta.feature_min, self.meta), [0.0, 0.0, 0.5])
        assert np.array_equal(scale_features(self.meta.feature_max, self.meta), [1.0, 1.0, 0.5])

    def test_midpoint(self):
        np.testing.assert_allclose(scale_features([5.0, 0.0, 2.0], self.meta), 0.5, atol=1e-12)

    def test_clamped_outside_range(self):
        assert np.array_equal(scale_features([-5.0, 3.0, 99.0], self.meta), [0.0, 1.0, 0.5])

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            scale_features([1.0], self.meta)

    def test_disabled_is_identity(self):
        meta = DatasetMeta(2, 1, np.zeros(2), np.ones(2), scaling=False)
        assert np.array_equal(scale_features([-3.0, 7.0], meta), [-3.0, 7.0])

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
    def test_idempotent_on_unit_range(self, x):
        meta = DatasetMeta(3, 1, np.zeros(3), np.ones(3))
        once = scale_features(x, meta)
        assert np.array_equal(scale_features(once, meta), once)
        assert np.array_equal(once, x)

    def test_matrix_matches_rows(self):
        X = np.random.default_rng(0).uniform(-2, 12, size=(20, 3))
        rows = np.array([scale_features(x, self.meta) for x in X])
        assert np.array_equal(scale_matrix(X, self.meta), rows)

    def test_fit(self):
        meta = DatasetMeta.fit([[1.0, 5.0], [3.0, 4.0]], 2)
        assert np.array_equal(meta.feature_min, [1.0, 4.0])
        assert np.array_equal(meta.feature_max, [3.0, 5.0])


def test_instance_is_immutable():
    inst = Instance([1.0, 2.0], {1}, 3)
    with pytest.raises(ValueError):
        inst.features[0] = 5.0
    assert inst.truth == frozenset({1})
    with pytest.raises(UsageError):
        Instance([1.0], None, -1)


def test_meta_rejects_inverted_range():
    with pytest.raises(UsageError):
        DatasetMeta(1, 1, np.array([2.0]), np.array([1.0]))
