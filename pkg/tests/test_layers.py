import itertools

import numpy as np
import pytest

from temimo import autodiff as ad
from temimo import layers
from temimo.tensor_ops import Permutation, permute_dim, powerset

from helpers import assert_fd_matches, permute_pair, rand_perm

rng = np.random.default_rng(99)


def make_mde(n_dims, d_in, d_out, subsets=None, seed=0):
    store = ad.ParamStore()
    layer = layers.MDELayer(
        store, "mde", n_dims, d_in, d_out, np.random.default_rng(seed), subsets=subsets
    )
    return layer, store


class TestMDELayer:
    def test_hand_example_one_dim(self):
        layer, _ = make_mde(1, 1, 1)
        layer.weights[0].value = np.array([[1.0]])  # identity path
        layer.weights[1].value = np.array([[1.0]])  # mean path
        layer.bias.value = np.zeros(1)
        out = ad.value_of(layer(np.array([[1.0], [3.0]])))
        assert np.allclose(out, [[3.0], [5.0]])

    def test_identity_path_only(self):
        layer, _ = make_mde(2, 3, 3)
        for i, s in enumerate(layer.subsets):
            layer.weights[i].value = np.eye(3) if s == frozenset() else np.zeros((3, 3))
        layer.bias.value = np.zeros(3)
        x = rng.standard_normal((4, 5, 3))
        assert np.allclose(ad.value_of(layer(x)), x, rtol=1e-12)

    def test_parameter_count_full_powerset(self):
        layer, store = make_mde(3, 8, 8)
        assert layer.param_count == 2**3 * 64 + 8
        assert store.total_size() == layer.param_count

    def test_bias_only_constant_output(self):
        layer, _ = make_mde(2, 2, 3)
        for w in layer.weights:
            w.value = np.zeros((2, 3))
        layer.bias.value = np.array([1.0, -2.0, 0.5])
        out = ad.value_of(layer(rng.standard_normal((3, 4, 2))))
        assert np.allclose(out, np.broadcast_to(layer.bias.value, out.shape))

    def test_requires_empty_subset(self):
        with pytest.raises(ValueError):
            make_mde(2, 2, 2, subsets=[{1}, {2}])

    @pytest.mark.parametrize("subsets", [None, [set(), {1}], [set(), {2}, {1, 2}]])
    def test_equivariance_every_dim(self, subsets):
        layer, _ = make_mde(2, 3, 2, subsets=subsets, seed=3)
        x = rng.standard_normal((4, 5, 3))
        y = ad.value_of(layer(x))
        for _ in range(10):
            for d in (1, 2):
                p = rand_perm(rng, x.shape[d - 1])
                lhs = ad.value_of(layer(permute_dim(x, d, p)))
                rhs = permute_dim(y, d, p)
                assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, np.max(np.abs(rhs)))

    def test_batch_dim_means_stay_per_sample(self):
        layer, _ = make_mde(2, 3, 2, seed=5)
        xs = rng.standard_normal((6, 4, 5, 3))
        batched = ad.value_of(layer(xs))
        per_sample = np.stack([ad.value_of(layer(xs[i])) for i in range(6)])
        assert np.allclose(batched, per_sample, rtol=1e-12)

    def test_shared_weight_matrix_oracle(self):
        """Construct the full flattened weight matrix and compare outputs."""
        from helpers import mde_dense_matrix

        shapes = [(2,), (3,), (1, 2), (2, 2), (2, 3), (3, 3), (2, 2, 2), (2, 3, 2), (3, 3, 3)]
        for extents in shapes:
            n = len(extents)
            for d in (1, 2):
                layer, _ = make_mde(n, d, d, seed=n * 10 + d)
                x = rng.standard_normal(extents + (d,))
                got = ad.value_of(layer(x)).reshape(-1)
                full, bias = mde_dense_matrix(layer, extents)
                want = full @ x.reshape(-1) + bias
                assert np.max(np.abs(got - want)) <= 1e-9

    def test_gradients_match_fd(self):
        layer, store = make_mde(2, 3, 2, seed=11)
        x = rng.standard_normal((3, 4, 3))

        def build():
            y = layer(x)
            return ad.sum_axis(ad.mul(y, y))

        assert_fd_matches(build, store.nodes(), rng)


class TestPatternSubsets:
    def test_p1_families(self):
        fams = layers.pattern_subsets("P1", 3, 4)
        want = [frozenset(), frozenset({1}), frozenset({2}), frozenset({3})]
        assert all(f == want for f in fams)

    def test_p3_example(self):
        fams = layers.pattern_subsets("P3", 3, 3)
        assert fams == [
            [frozenset(), frozenset({1})],
            [frozenset(), frozenset({2})],
            [frozenset(), frozenset({3})],
        ]

    def test_full_families(self):
        fams = layers.pattern_subsets("FULL", 2, 2)
        assert all(len(f) == 4 for f in fams)

    def test_p2_default_covers(self):
        fams = layers.pattern_subsets("P2", 3, 3)
        covered = set().union(*[set().union(*f) for f in fams])
        assert covered == {1, 2, 3}
        assert all(frozenset() in f and all(len(s) <= 1 for s in f) for f in fams)

    def test_rejects_uncovering_schedule(self):
        bad = [[set(), {1}, {3}]] * 3  # never averages dim 2
        with pytest.raises(ValueError):
            layers.pattern_subsets("P2", 3, 3, schedule=bad)

    def test_rejects_single_dim_schedule(self):
        bad = [[set(), {1}]] * 3
        with pytest.raises(ValueError):
            layers.pattern_subsets("P3", 3, 3, schedule=bad)

    def test_rejects_short_p3(self):
        with pytest.raises(ValueError):
            layers.pattern_subsets("P3", 3, 2)

    def test_pattern_layers_stay_equivariant(self):
        for pattern in ("P1", "P2", "P3"):
            fams = layers.pattern_subsets(pattern, 3, 3)
            for fam in fams:
                layer, _ = make_mde(3, 2, 2, subsets=fam, seed=7)
                x = rng.standard_normal((2, 3, 4, 2))
                y = ad.value_of(layer(x))
                for d in (1, 2, 3):
                    p = rand_perm(rng, x.shape[d - 1])
                    lhs = ad.value_of(layer(permute_dim(x, d, p)))
                    assert np.allclose(lhs, permute_dim(y, d, p), atol=1e-12)


class TestPartitions:
    def test_counts_match_bell_numbers(self):
        for n, bell in ((1, 1), (2, 2), (3, 5), (4, 15), (5, 52)):
            assert len(layers.enumerate_partitions(n)) == bell

    def test_bell_recurrence_oracle(self):
        """Cross-check counts against the binomial recurrence."""
        from math import comb

        bell = [1]
        for n in range(1, 7):
            bell.append(sum(comb(n - 1, i) * bell[i] for i in range(n)))
        for n in range(1, 7):
            assert len(layers.enumerate_partitions(n)) == bell[n]

    def test_partitions_are_valid_and_unique(self):
        for n in (3, 4):
            parts = layers.enumerate_partitions(n)
            assert len(set(parts)) == len(parts)
            for part in parts:
                elems = sorted(e for block in part for e in block)
                assert elems == list(range(n))

    def test_out_of_range(self):
        for n in (0, 7):
            with pytest.raises(ValueError):
                layers.enumerate_partitions(n)

    def test_labeled_12_partitions(self):
        parts = layers.hoe_partitions(1, 2)
        assert len(parts) == 5
        as_sets = [frozenset(frozenset(b) for b in p) for p in parts]
        o1, o2, i1 = ("o", 1), ("o", 2), ("i", 1)
        expected = [
            frozenset({frozenset({o1, o2, i1})}),
            frozenset({frozenset({o1, o2}), frozenset({i1})}),
            frozenset({frozenset({o1, i1}), frozenset({o2})}),
            frozenset({frozenset({o1}), frozenset({o2, i1})}),
            frozenset({frozenset({o1}), frozenset({o2}), frozenset({i1})}),
        ]
        assert set(as_sets) == set(expected)


class TestHOEPatterns:
    def setup_method(self):
        self.parts = layers.hoe_partitions(1, 2)
        self.x = np.array([[2.0], [5.0]])  # M=2, D=1, entries a=2, b=5

    def _pattern(self, block_sets):
        for p in self.parts:
            if frozenset(frozenset(b) for b in p) == block_sets:
                return ad.value_of(layers.hoe_build_feature(self.x, p, 1, 2))[..., 0]
        raise AssertionError("partition not found")

    def test_five_12_order_patterns(self):
        o1, o2, i1 = ("o", 1), ("o", 2), ("i", 1)
        a, b = 2.0, 5.0
        mean = (a + b) / 2.0
        diag_copy = self._pattern(frozenset({frozenset({o1, o2, i1})}))
        assert np.allclose(diag_copy, [[a, 0.0], [0.0, b]])
        constant_mean = self._pattern(
            frozenset({frozenset({o1}), frozenset({o2}), frozenset({i1})})
        )
        assert np.allclose(constant_mean, np.full((2, 2), mean))
        column_copy = self._pattern(frozenset({frozenset({o1}), frozenset({o2, i1})}))
        assert np.allclose(column_copy, [[a, b], [a, b]])
        row_copy = self._pattern(frozenset({frozenset({o2}), frozenset({o1, i1})}))
        assert np.allclose(row_copy, [[a, a], [b, b]])
        diag_mean = self._pattern(frozenset({frozenset({o1, o2}), frozenset({i1})}))
        assert np.allclose(diag_mean, [[mean, 0.0], [0.0, mean]])

    def test_22_partition_count_and_diag(self):
        parts = layers.hoe_partitions(2, 2)
        assert len(parts) == 15
        # the all-in-one block copies the input diagonal onto the output diagonal
        allone = next(p for p in parts if len(p) == 1)
        x = rng.standard_normal((3, 3, 2))
        out = ad.value_of(layers.hoe_build_feature(x, allone, 2, 2))
        for t in range(3):
            assert np.allclose(out[t, t], x[t, t])
        assert np.allclose(out[0, 1], 0.0)

    def test_22_input_diag_average(self):
        # blocks {{i1,i2},{o1},{o2}}: constant mean over the input diagonal
        parts = layers.hoe_partitions(2, 2)
        target = frozenset(
            {
                frozenset({("i", 1), ("i", 2)}),
                frozenset({("o", 1)}),
                frozenset({("o", 2)}),
            }
        )
        part = next(p for p in parts if frozenset(frozenset(b) for b in p) == target)
        x = rng.standard_normal((4, 4, 3))
        out = ad.value_of(layers.hoe_build_feature(x, part, 2, 2))
        want = np.mean([x[t, t] for t in range(4)], axis=0)
        assert np.allclose(out, np.broadcast_to(want, out.shape))


def make_hoe(in_order, d, seed=0, partitions=None):
    store = ad.ParamStore()
    layer = layers.HOELayer(
        store, "hoe", in_order, 2, d, d, np.random.default_rng(seed), partitions=partitions
    )
    return layer, store


class TestHOELayer:
    def test_single_weight_is_diag_embed(self):
        layer, _ = make_hoe(1, 1)
        for i, w in enumerate(layer.weights):
            w.value = np.array([[1.0]]) if i == 0 else np.zeros((1, 1))
        # partition order: index 0 is the all-in-one block {o1,o2,i1}
        assert layer.partitions[0] == ((("o", 1), ("o", 2), ("i", 1)),)
        for b in layer.biases:
            b.value = np.zeros(1)
        out = ad.value_of(layer(np.array([[2.0], [5.0]])))[..., 0]
        assert np.allclose(out, [[2.0, 0.0], [0.0, 5.0]])

    def test_bias_only_patterns(self):
        layer, _ = make_hoe(1, 1)
        for w in layer.weights:
            w.value = np.zeros((1, 1))
        # bias partitions of {o1, o2}: all-tied (diagonal), separate (constant)
        diag_idx = layer_bias_index(layer, 1)
        const_idx = layer_bias_index(layer, 2)
        layer.biases[diag_idx].value = np.array([3.0])
        layer.biases[const_idx].value = np.array([0.25])
        out = ad.value_of(layer(np.zeros((3, 1))))[..., 0]
        want = 3.0 * np.eye(3) + 0.25 * np.ones((3, 3))
        assert np.allclose(out, want)

    def test_parameter_count(self):
        layer, store = make_hoe(1, 8)
        assert layer.param_count == 5 * 64 + 2 * 8
        assert store.total_size() == layer.param_count
        layer22, store22 = make_hoe(2, 4)
        assert layer22.param_count == 15 * 16 + 2 * 4

    def test_12_equivariance_exact(self):
        layer, _ = make_hoe(1, 3, seed=2)
        x = rng.standard_normal((5, 3))
        y = ad.value_of(layer(x))
        for _ in range(10):
            p = rand_perm(rng, 5)
            lhs = ad.value_of(layer(permute_dim(x, 1, p)))
            rhs = permute_pair(y, 1, p)
            assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_22_equivariance_exact(self):
        layer, _ = make_hoe(2, 2, seed=3)
        x = rng.standard_normal((4, 4, 2))
        y = ad.value_of(layer(x))
        for _ in range(10):
            p = rand_perm(rng, 4)
            lhs = ad.value_of(layer(permute_pair(x, 1, p)))
            rhs = permute_pair(y, 1, p)
            assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_batched_matches_loop(self):
        layer, _ = make_hoe(1, 2, seed=4)
        xs = rng.standard_normal((6, 3, 2))
        batched = ad.value_of(layer(xs))
        looped = np.stack([ad.value_of(layer(xs[i])) for i in range(6)])
        assert np.allclose(batched, looped, rtol=1e-12)

    def test_partition_subset_still_equivariant(self):
        full = layers.hoe_partitions(1, 2)
        layer, _ = make_hoe(1, 2, seed=5, partitions=full[:3])
        assert layer.param_count == 3 * 4 + 2 * 2
        x = rng.standard_normal((4, 2))
        y = ad.value_of(layer(x))
        for _ in range(5):
            p = rand_perm(rng, 4)
            lhs = ad.value_of(layer(permute_dim(x, 1, p)))
            assert np.allclose(lhs, permute_pair(y, 1, p), atol=1e-12)

    def test_invalid_partition_rejected(self):
        with pytest.raises(ValueError):
            make_hoe(1, 2, partitions=[((("o", 1),), (("o", 2),))])  # misses i1

    def test_gradients_match_fd(self):
        layer, store = make_hoe(1, 2, seed=6)
        x = rng.standard_normal((3, 2))

        def build():
            y = layer(x)
            return ad.sum_axis(ad.mul(y, y))

        assert_fd_matches(build, store.nodes(), rng)


def layer_bias_index(layer, want_blocks):
    from temimo.layers import enumerate_partitions

    for i, part in enumerate(enumerate_partitions(layer.out_order)):
        if len(part) == want_blocks:
            return i
    raise AssertionError


def make_pma(dim, heads, seed=0):
    store = ad.ParamStore()
    layer = layers.PMALayer(store, "pma", dim, heads, np.random.default_rng(seed))
    return layer, store


class TestPMA:
    def test_row_permutation_invariance(self):
        layer, _ = make_pma(6, 2)
        x = rng.standard_normal((7, 6))
        y = ad.value_of(layer(x))
        assert y.shape == (1, 6)
        for _ in range(10):
            p = rand_perm(rng, 7)
            y2 = ad.value_of(layer(permute_dim(x, 1, p)))
            assert np.max(np.abs(y2 - y)) <= 1e-9

    def test_duplicated_identical_rows(self):
        layer, _ = make_pma(4, 2, seed=1)
        row = rng.standard_normal(4)
        x1 = np.tile(row, (3, 1))
        x2 = np.tile(row, (6, 1))
        y1, y2 = ad.value_of(layer(x1)), ad.value_of(layer(x2))
        assert np.max(np.abs(y1 - y2)) <= 1e-9

    def test_single_row_softmax_weight_one(self):
        layer, _ = make_pma(4, 2, seed=2)
        x = rng.standard_normal((1, 4))
        y = ad.value_of(layer(x))
        assert y.shape == (1, 4)
        assert np.all(np.isfinite(y))

    def test_batched_pooling_axis(self):
        layer, _ = make_pma(4, 2, seed=3)
        x = rng.standard_normal((3, 5, 4))
        y = ad.value_of(layer(x, axis=1))
        assert y.shape == (3, 1, 4)
        looped = np.stack([ad.value_of(layer(x[i], axis=0)) for i in range(3)])
        assert np.allclose(y, looped, rtol=1e-12)

    def test_feature_axis_rejected(self):
        layer, _ = make_pma(4, 2)
        with pytest.raises(ValueError):
            layer(rng.standard_normal((3, 4)), axis=1)

    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            make_pma(6, 4)

    def test_gradients_match_fd(self):
        layer, store = make_pma(4, 2, seed=4)
        x = rng.standard_normal((5, 4))

        def build():
            y = layer(x)
            return ad.sum_axis(ad.mul(y, y))

        assert_fd_matches(build, store.nodes(), rng, per_node=1)


def make_mdi(n_dims, pool_dims, dim, heads=2, seed=0):
    store = ad.ParamStore()
    layer = layers.MDILayer(
        store, "mdi", n_dims, pool_dims, dim, heads, np.random.default_rng(seed)
    )
    return layer, store


class TestMDI:
    def test_shape_contract(self):
        layer, _ = make_mdi(3, [3], 4)
        x = rng.standard_normal((5, 3, 6, 4))
        assert ad.value_of(layer(x)).shape == (5, 3, 4)

    def test_invariance_on_pooled_dims(self):
        layer, _ = make_mdi(3, [2, 3], 4, seed=1)
        x = rng.standard_normal((4, 3, 5, 4))
        y = ad.value_of(layer(x))
        assert y.shape == (4, 4)
        for _ in range(10):
            for d in (2, 3):
                p = rand_perm(rng, x.shape[d - 1])
                y2 = ad.value_of(layer(permute_dim(x, d, p)))
                assert np.max(np.abs(y2 - y)) <= 1e-9

    def test_equivariance_on_kept_dims(self):
        layer, _ = make_mdi(3, [3], 4, seed=2)
        x = rng.standard_normal((4, 3, 5, 4))
        y = ad.value_of(layer(x))
        for d in (1, 2):
            p = rand_perm(rng, x.shape[d - 1])
            y2 = ad.value_of(layer(permute_dim(x, d, p)))
            assert np.allclose(y2, permute_dim(y, d, p), atol=1e-9)

    def test_batch_dim_supported(self):
        layer, _ = make_mdi(3, [3], 4, seed=3)
        xs = rng.standard_normal((2, 4, 3, 5, 4))
        batched = ad.value_of(layer(xs))
        looped = np.stack([ad.value_of(layer(xs[i])) for i in range(2)])
        assert batched.shape == (2, 4, 3, 4)
        assert np.allclose(batched, looped, rtol=1e-12)

    def test_bad_pool_dims(self):
        with pytest.raises(ValueError):
            make_mdi(3, [4], 4)


class TestGlue:
    def test_relu_values(self):
        assert ad.relu(np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]

    def test_relu_and_ln_commute_with_leading_permutation(self):
        x = rng.standard_normal((5, 4, 3))
        g, b = np.ones(3), np.zeros(3)
        for d in (1, 2):
            p = rand_perm(rng, x.shape[d - 1])
            assert np.allclose(
                ad.relu(permute_dim(x, d, p)), permute_dim(ad.relu(x), d, p)
            )
            assert np.allclose(
                ad.layer_norm(permute_dim(x, d, p), g, b),
                permute_dim(ad.layer_norm(x, g, b), d, p),
                atol=1e-12,
            )
