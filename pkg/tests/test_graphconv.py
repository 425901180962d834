import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import edgeconv_loop, sum_conv_loop
from pointgcn.graphconv import (
    ConvParams,
    edgeconv_baseline,
    edgeconv_shuffled,
    gather_edge_features,
    generic_graph_conv,
    sum_conv,
    track_allocations,
)
from pointgcn.knn import knn_search
from pointgcn.verify import relative_difference


def random_layer(rng, N=40, d=5, M=7, K=6):
    X = rng.normal(size=(N, d))
    nbrs = knn_search(X, K).indices
    params = ConvParams(rng.normal(size=(d, M)), rng.normal(size=(d, M)), rng.normal(size=M))
    return X, nbrs, params


class TestConvParams:
    def test_psi_derived(self, rng):
        p = ConvParams(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
        np.testing.assert_array_equal(p.psi, p.phi - p.theta)
        np.testing.assert_array_equal(p.bias, np.zeros(4))

    def test_immutable(self, rng):
        p = ConvParams(np.ones((2, 2)), np.ones((2, 2)))
        with pytest.raises(ValueError):
            p.theta[0, 0] = 5.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ConvParams(np.ones((2, 3)), np.ones((3, 2)))
        with pytest.raises(ValueError):
            ConvParams(np.ones((2, 3)), np.ones((2, 3)), np.ones(2))


class TestGather:
    def test_scalar_example(self):
        E = gather_edge_features(np.array([[1.0], [4.0]]), np.array([[0, 1], [1, 0]]))
        np.testing.assert_array_equal(E[0], [[0, 1], [3, 1]])

    def test_self_only_local_half_zero(self, cloud):
        E = gather_edge_features(cloud, knn_search(cloud, 1))
        assert (E[..., :3] == 0).all()

    def test_translation(self, cloud):
        nbrs = knn_search(cloud, 4)
        c = np.array([1.5, -2.0, 0.25])
        E0, E1 = gather_edge_features(cloud, nbrs), gather_edge_features(cloud + c, nbrs)
        np.testing.assert_allclose(E1[..., :3], E0[..., :3], atol=1e-12)
        np.testing.assert_allclose(E1[..., 3:], E0[..., 3:] + c)

    def test_out_of_range(self, cloud):
        with pytest.raises(IndexError):
            gather_edge_features(cloud, np.full((64, 2), 64))


class TestSumConv:
    def test_zero_weights(self, cloud):
        assert (sum_conv(cloud, knn_search(cloud, 3), np.zeros((3, 5))) == 0).all()

    def test_self_identity(self, cloud):
        np.testing.assert_array_equal(sum_conv(cloud, knn_search(cloud, 1), np.eye(3)), cloud)

    def test_scalar_example(self):
        out = sum_conv(np.array([[1.0], [4.0]]), np.array([[0, 1], [1, 0]]), np.array([[2.0]]))
        assert out[0, 0] == 10

    def test_against_loop(self, rng):
        X = rng.normal(size=(12, 3))
        nbrs = knn_search(X, 4).indices
        theta = rng.normal(size=(3, 5))
        np.testing.assert_allclose(sum_conv(X, nbrs, theta), sum_conv_loop(X.tolist(), nbrs.tolist(), theta.tolist()))

    def test_shape_mismatch(self, cloud):
        with pytest.raises(ValueError):
            sum_conv(cloud, knn_search(cloud, 2), np.ones((4, 2)))


class TestEdgeConv:
    scalar = dict(features=np.array([[1.0], [4.0]]), nbrs=np.array([[0, 1], [1, 0]]),
                  params=ConvParams([[2.0]], [[3.0]]))

    def test_baseline_scalar_example(self):
        assert edgeconv_baseline(**self.scalar)[0, 0] == 9

    def test_shuffled_scalar_example(self):
        assert edgeconv_shuffled(**self.scalar)[0, 0] == 9

    def test_bias_only(self, cloud):
        p = ConvParams(np.zeros((3, 4)), np.zeros((3, 4)), [1.0, 2.0, 3.0, 4.0])
        nbrs = knn_search(cloud, 5)
        for fn in (edgeconv_baseline, edgeconv_shuffled):
            np.testing.assert_array_equal(fn(cloud, nbrs, p), np.tile([1.0, 2, 3, 4], (64, 1)))

    @pytest.mark.parametrize("agg", ["max", "sum"])
    def test_baseline_against_loop(self, rng, agg):
        X, nbrs, p = random_layer(rng, N=15, d=3, M=4, K=5)
        expected = edgeconv_loop(X.tolist(), nbrs.tolist(), p.theta.tolist(), p.phi.tolist(), p.bias.tolist(), agg)
        np.testing.assert_allclose(edgeconv_baseline(X, nbrs, p, agg), expected, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("agg", ["max", "sum"])
    def test_permutation_invariance(self, rng, agg):
        X, nbrs, p = random_layer(rng)
        perm = np.stack([rng.permutation(row) for row in nbrs])
        for fn in (edgeconv_baseline, edgeconv_shuffled):
            np.testing.assert_allclose(fn(X, perm, p, agg), fn(X, nbrs, p, agg), rtol=1e-12, atol=1e-12)

    def test_psi_zero_ignores_center(self, rng):
        X, nbrs, p = random_layer(rng)
        p0 = ConvParams(p.theta, p.theta)
        out = edgeconv_shuffled(X, nbrs, p0)
        np.testing.assert_allclose(out, (X @ p.theta)[nbrs].max(axis=1), rtol=1e-14)

    def test_translation_split(self, rng):
        X, nbrs, p = random_layer(rng)
        c = 0.75
        delta = edgeconv_baseline(X + c, nbrs, p) - edgeconv_baseline(X, nbrs, p)
        np.testing.assert_allclose(delta, np.broadcast_to(c * p.phi.sum(axis=0), delta.shape), atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["max", "sum"]))
    def test_shuffle_equivalence(self, seed, agg):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(1, 80))
        X, nbrs, p = random_layer(rng, N=N, d=int(rng.integers(1, 9)), M=int(rng.integers(1, 12)),
                                  K=int(rng.integers(1, min(N, 12) + 1)))
        base = edgeconv_baseline(X, nbrs, p, agg)
        assert relative_difference(base, edgeconv_shuffled(X, nbrs, p, agg)) < 1e-9

    def test_activation_after_aggregation(self, rng):
        X, nbrs, p = random_layer(rng)
        raw = edgeconv_baseline(X, nbrs, p)
        act = edgeconv_shuffled(X, nbrs, p, activation="leaky_relu")
        np.testing.assert_allclose(act, np.where(raw > 0, raw, 0.2 * raw), rtol=1e-9, atol=1e-12)

    def test_bad_aggregation(self, rng):
        X, nbrs, p = random_layer(rng)
        with pytest.raises(ValueError):
            edgeconv_baseline(X, nbrs, p, agg="mean")

    def test_width_mismatch(self, rng):
        X, nbrs, p = random_layer(rng)
        with pytest.raises(ValueError):
            edgeconv_shuffled(X[:, :2], nbrs, p)


class TestNoExpansion:
    @pytest.mark.parametrize("N,d,M,K", [(200, 16, 8, 20), (300, 4, 32, 15), (128, 64, 64, 40)])
    def test_shuffled_footprint(self, rng, N, d, M, K):
        X, nbrs, p = random_layer(rng, N, d, M, K)
        with track_allocations() as shuffled:
            edgeconv_shuffled(X, nbrs, p)
        with track_allocations() as baseline:
            edgeconv_baseline(X, nbrs, p)
        peak = max(size for _, size in shuffled)
        assert peak <= N * max(M, d) + N * K
        assert sum(size for _, size in shuffled) <= 3 * (N * max(M, d) + N * K)
        assert max(size for _, size in baseline) >= N * K * 2 * d

    def test_tracker_inactive_by_default(self, rng):
        X, nbrs, p = random_layer(rng)
        edgeconv_shuffled(X, nbrs, p)  # no tracker, no error


class TestGenericConv:
    def test_equal_slots_reduce_to_sum_conv(self, rng):
        X, nbrs, _ = random_layer(rng, K=4)
        theta = rng.normal(size=(5, 3))
        np.testing.assert_allclose(generic_graph_conv(X, nbrs, [theta] * 4, "sum"), sum_conv(X, nbrs, theta))

    def test_single_slot(self, rng):
        X = rng.normal(size=(10, 3))
        theta = rng.normal(size=(3, 2))
        nbrs = knn_search(X, 1)
        np.testing.assert_allclose(generic_graph_conv(X, nbrs, [theta]), X @ theta)

    def test_scalar_example(self):
        out = generic_graph_conv(np.array([[2.0], [5.0]]), np.array([[0, 1], [1, 0]]), [[[1.0]], [[-1.0]]], "sum")
        assert out[0, 0] == -3

    def test_slot_count_mismatch(self, rng):
        X, nbrs, _ = random_layer(rng, K=3)
        with pytest.raises(ValueError):
            generic_graph_conv(X, nbrs, [np.ones((5, 2))] * 2)
