import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_graph
from gpscl.encoder import gin_layer
from gpscl.errors import ConfigError, DimensionError
from gpscl.graphs import Graph
from gpscl.pooling import (
    cluster_assign,
    cluster_pool,
    init_cluster_pooler,
    init_topk_pooler,
    keep_count,
    pool,
    topk_margin,
    topk_pool,
    topk_scores,
    topk_select,
)
from gpscl.tensor import Tensor, backward, finite_diff_grad, max_relative_error, sum_all


def zero_out(params):
    for _, t in params.named_parameters():
        t.data[:] = 0.0


def brute_topk(scores, m):
    """Repeatedly take the best remaining node, scanning left to right so ties go low."""
    remaining = list(range(len(scores)))
    kept = []
    for _ in range(m):
        best = remaining[0]
        for i in remaining:
            if scores[i] > scores[best]:
                best = i
        kept.append(best)
        remaining.remove(best)
    return sorted(kept)


def triple_loop(S, X, A):
    n, m = S.shape
    Xp = np.zeros((m, X.shape[1]))
    Ap = np.zeros((m, m))
    for c in range(m):
        for i in range(n):
            Xp[c] += S[i, c] * X[i]
    for c in range(m):
        for c2 in range(m):
            for i in range(n):
                for j in range(n):
                    Ap[c, c2] += S[i, c] * A[i, j] * S[j, c2]
    return Xp, Ap


class TestKeepCount:
    @pytest.mark.parametrize("n,rho,m", [(5, 0.4, 2), (5, 0.9, 5), (1, 0.1, 1), (1, 1.0, 1), (10, 0.3, 3), (3, 2 / 3, 2)])
    def test_examples(self, n, rho, m):
        assert keep_count(n, rho) == m

    @given(st.integers(1, 60), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_monotone_and_bounded(self, n, r1, r2):
        lo, hi = sorted((r1, r2))
        assert 1 <= keep_count(n, lo) <= keep_count(n, hi) <= n

    @pytest.mark.parametrize("n,rho", [(0, 0.5), (3, 0.0), (3, 1.5)])
    def test_invalid(self, n, rho):
        with pytest.raises(ConfigError):
            keep_count(n, rho)


class TestTopK:
    def test_zero_weights_give_zero_scores(self, rng):
        g = random_graph(rng, 5, 3)
        params = init_topk_pooler(rng, 3, 4, 0.5)
        zero_out(params)
        np.testing.assert_array_equal(topk_scores(g, params).data, np.zeros((5, 1)))

    def test_scores_direct_composition(self, rng):
        g = random_graph(rng, 5, 3)
        params = init_topk_pooler(rng, 3, 4, 0.5)
        H = gin_layer(g.X, g.A, params.gnn).data
        direct = np.tanh(H @ params.score.weight.data + params.score.bias.data)
        np.testing.assert_allclose(topk_scores(g, params).data, direct, atol=1e-14)

    def test_scores_equivariant(self, rng):
        g = random_graph(rng, 6, 3)
        params = init_topk_pooler(rng, 3, 4, 0.5)
        perm = rng.permutation(6)
        np.testing.assert_allclose(
            topk_scores(g.permuted(perm), params).data, topk_scores(g, params).data[perm], atol=1e-12
        )

    def test_full_keep_uniform_scores(self, rng):
        g = random_graph(rng, 4, 2)
        params = init_topk_pooler(rng, 2, 3, 1.0)
        zero_out(params)
        params.score.bias.data[:] = 0.3
        s = np.tanh(0.3)
        out = topk_pool(g, params)
        np.testing.assert_array_equal(out.A.data, g.A.data)
        np.testing.assert_allclose(out.X.data, s * g.X.data, atol=1e-15)

    def test_path_example(self):
        X = Tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        A = Tensor([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        scores = np.array([0.9, 0.1, 0.5])
        idx = topk_select(scores, keep_count(3, 2 / 3))
        np.testing.assert_array_equal(idx, [0, 2])
        np.testing.assert_array_equal(A.data[np.ix_(idx, idx)], np.zeros((2, 2)))
        np.testing.assert_allclose(X.data[idx] * scores[idx, None], [[0.9, 1.8], [2.5, 3.0]])

    def test_path_example_through_pool(self, rng):
        # node-identity features and a linear score net reproduce exact scores
        X = np.eye(3)
        g = Graph.from_arrays(X, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        params = init_topk_pooler(rng, 3, 3, 2 / 3)
        zero_out(params)
        target = np.arctanh([0.9, 0.1, 0.5])
        # h = MLP((1+eps)X + AX) with MLP = identity when weights are eye and relu passes nonnegatives
        params.gnn.lin1.weight.data[:] = np.eye(3)
        params.gnn.lin2.weight.data[:] = np.linalg.inv(np.eye(3) + g.A.data)
        params.score.weight.data[:] = target[:, None]
        out = topk_pool(g, params)
        assert out.idx == (0, 2)
        np.testing.assert_allclose(out.X.data, [[0.9, 0, 0], [0, 0, 0.5]], atol=1e-12)
        np.testing.assert_array_equal(out.A.data, np.zeros((2, 2)))

    def test_tie_goes_to_lower_index(self):
        np.testing.assert_array_equal(topk_select(np.array([0.1, 0.7, 0.7]), 1), [1])
        np.testing.assert_array_equal(topk_select(np.array([0.5, 0.5, 0.5, 0.5]), 2), [0, 1])

    def test_margin(self):
        assert topk_margin(np.array([0.9, 0.1, 0.5]), 2) == pytest.approx(0.4)
        assert topk_margin(np.array([0.9, 0.1]), 2) == np.inf

    def test_brute_force_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 9))
            g = random_graph(rng, n, 3)
            params = init_topk_pooler(rng, 3, 4, float(rng.uniform(0.1, 1.0)))
            out = topk_pool(g, params)
            s = topk_scores(g, params).data[:, 0]
            idx = brute_topk(list(s), keep_count(n, params.rho))
            assert list(out.idx) == idx
            for a in range(len(idx)):
                for b in range(len(idx)):
                    assert out.A.data[a, b] == g.A.data[idx[a], idx[b]]
                assert np.array_equal(out.X.data[a], g.X.data[idx[a]] * s[idx[a]])
            out.validate(n, params.rho)

    def test_gradient_through_scores(self, rng):
        g = random_graph(rng, 6, 3)
        params = init_topk_pooler(rng, 3, 4, 0.5)
        s = topk_scores(g, params).data
        assert topk_margin(s, 3) > 1e-3
        W = Tensor(rng.uniform(-1, 1, (3, 3)))

        def loss(_=None):
            return sum_all(topk_pool(g, params).X * W)

        backward(loss())
        for name, p in params.named_parameters():
            assert max_relative_error(p.grad, finite_diff_grad(loss, p)) < 1e-4, name


class TestCluster:
    def test_rows_stochastic(self, rng):
        g = random_graph(rng, 7, 3)
        params = init_cluster_pooler(rng, 3, 4, 0.5, max_nodes=10)
        S = cluster_assign(g, params)
        assert S.shape == (7, 4)
        np.testing.assert_allclose(S.data.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_weights_uniform(self, rng):
        g = random_graph(rng, 5, 3)
        params = init_cluster_pooler(rng, 3, 4, 0.4, max_nodes=12)
        zero_out(params)
        np.testing.assert_allclose(cluster_assign(g, params).data, np.full((5, 2), 0.5))

    def test_assign_direct_composition(self, rng):
        g = random_graph(rng, 5, 3)
        params = init_cluster_pooler(rng, 3, 4, 0.6, max_nodes=8)
        H = gin_layer(g.X, g.A, params.gnn).data
        logits = (H @ params.assign.weight.data + params.assign.bias.data)[:, :3]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        np.testing.assert_allclose(cluster_assign(g, params).data, e / e.sum(axis=1, keepdims=True), atol=1e-14)

    def test_identity_assignment(self, rng):
        g = random_graph(rng, 4, 3)
        out = cluster_pool(g, S=Tensor(np.eye(4)))
        np.testing.assert_array_equal(out.X.data, g.X.data)
        np.testing.assert_array_equal(out.A.data, g.A.data)

    def test_single_cluster_collapse(self, rng):
        g = random_graph(rng, 5, 3)
        out = cluster_pool(g, S=Tensor(np.ones((5, 1))))
        np.testing.assert_allclose(out.X.data, g.X.data.sum(axis=0, keepdims=True), atol=1e-14)
        assert out.A.data[0, 0] == g.A.data.sum()

    def test_triple_loop_oracle(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 9))
            g = random_graph(rng, n, 3)
            params = init_cluster_pooler(rng, 3, 4, 0.5, max_nodes=8)
            out = cluster_pool(g, params)
            Xp, Ap = triple_loop(out.S.data, g.X.data, g.A.data)
            np.testing.assert_allclose(out.X.data, Xp, atol=1e-9)
            np.testing.assert_allclose(out.A.data, Ap, atol=1e-9)
            assert abs(out.A.data.sum() - Ap.sum()) < 1e-9
            np.testing.assert_allclose(out.A.data, out.A.data.T, atol=1e-9)
            out.validate(n, 0.5)

    def test_too_many_clusters(self, rng):
        params = init_cluster_pooler(rng, 3, 4, 0.5, max_nodes=4)
        with pytest.raises(DimensionError):
            cluster_pool(random_graph(rng, 8, 3), params)

    def test_gradients(self, rng):
        g = random_graph(rng, 5, 3)
        params = init_cluster_pooler(rng, 3, 4, 0.6, max_nodes=6)
        W = Tensor(rng.uniform(-1, 1, (3, 3)))
        V = Tensor(rng.uniform(-1, 1, (3, 3)))

        def loss(_=None):
            out = cluster_pool(g, params)
            return sum_all(out.X * W) + sum_all(out.A * V)

        backward(loss())
        for name, p in params.named_parameters():
            assert max_relative_error(p.grad, finite_diff_grad(loss, p)) < 1e-4, name


def test_pool_dispatch(rng):
    g = random_graph(rng, 5, 3)
    assert pool(g, init_topk_pooler(rng, 3, 4, 0.4)).idx is not None
    assert pool(g, init_cluster_pooler(rng, 3, 4, 0.4, 5)).S is not None
    with pytest.raises(TypeError):
        pool(g, object())
