import numpy as np
import pytest

from conftest import dense_transformer, grad_error, random_weighted
from gsr import diffmath as dm
from gsr.diffmath import DiffArray
from gsr.gnn import (FeedForward, GraphNorm, GraphTransformerLayer, MpnnLayer, Neighborhood,
                     complete_neighborhood, dot_edge_init, head_count, learned_domain,
                     minmax_normalize, weighted_neighborhood)


def feats(rng, n, d):
    return DiffArray(rng.normal(size=(n, d)))


class TestMpnnLayer:
    def test_beta_one_ignores_neighbours(self, rng):
        layer = MpnnLayer(3, 4, rng, beta=1.0)
        x = feats(rng, 5, 3)
        nbhd = Neighborhood.from_lists([[1, 2], [0], [0, 3, 4], [2], [2]])
        assert np.array_equal(layer(x, nbhd).value, layer.f_n(x).value)

    def test_beta_zero_sums_neighbours(self, rng):
        layer = MpnnLayer(2, 2, rng, beta=0.0)
        x = DiffArray([[1.0, 2.0], [3.0, 5.0], [7.0, 11.0]])
        nbhd = Neighborhood.from_lists([[1, 2], [], []])
        assert np.allclose(layer.combine(x, nbhd).value[0], [10.0, 16.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_summation(self, seed):
        rng = np.random.default_rng(seed)
        adj = random_weighted(6, rng) > 0
        lists = [np.flatnonzero(r) for r in adj]
        layer = MpnnLayer(3, 4, rng, beta=0.5)
        x = rng.normal(size=(6, 3))
        z = np.array([0.5 * x[i] + 0.5 * x[lists[i]].sum(axis=0) for i in range(6)])
        f = layer.f_n
        want = np.maximum(z @ f.fc0.weight.value + f.fc0.bias.value, 0) @ f.fc1.weight.value
        want += f.fc1.bias.value
        got = layer(DiffArray(x), Neighborhood.from_lists(lists)).value
        assert np.allclose(got, want, atol=1e-12)

    def test_index_out_of_range(self, rng):
        layer = MpnnLayer(2, 2, rng)
        with pytest.raises(IndexError):
            layer(feats(rng, 2, 2), Neighborhood.from_lists([[5], [0]]))

    def test_bad_arguments(self, rng):
        with pytest.raises(ValueError):
            MpnnLayer(2, 2, rng, beta=1.5)
        with pytest.raises(ValueError):
            MpnnLayer(2, 2, rng, weight_rule="max")

    def test_learnable_beta_in_unit_interval(self, rng):
        layer = MpnnLayer(2, 2, rng, beta=0.3, learnable_beta=True)
        assert layer.beta().item() == pytest.approx(0.3)
        layer.beta_logit.value[:] = 50.0
        assert 0.0 <= layer.beta().item() <= 1.0

    @pytest.mark.parametrize("rule", ["uniform", "attention"])
    def test_gradients(self, rule):
        rng = np.random.default_rng(0)
        layer = MpnnLayer(3, 3, rng, beta=0.4, learnable_beta=True, weight_rule=rule)
        x = DiffArray(rng.normal(size=(5, 3)), requires_grad=True)
        nbhd = Neighborhood.from_adjacency(random_weighted(5, rng), self_loops=False)
        w = rng.normal(size=(5, 3))
        build = lambda: dm.reduce_sum(dm.mul(layer(x, nbhd), w))
        assert grad_error(build, [x, *layer.named_parameters().values()]) < 1e-4


class TestGraphTransformerLayer:
    def test_single_node_attends_to_itself(self, rng):
        layer = GraphTransformerLayer(3, 4, 2, rng)
        _, alpha = layer.attend(feats(rng, 1, 3), Neighborhood.from_lists([[]], self_loops=True))
        assert np.array_equal(alpha, np.ones((1, 2)))

    def test_identical_keys_give_uniform_weights(self, rng):
        layer = GraphTransformerLayer(3, 4, 2, rng)
        layer.key.weight.value[:] = 0.0
        nbhd = Neighborhood.from_lists([[1, 2, 3], [0], [0], [0]], self_loops=True)
        _, alpha = layer.attend(feats(rng, 4, 3), nbhd)
        assert np.allclose(alpha[:4], 0.25, atol=1e-15)
        assert np.allclose(alpha[4:], 0.5, atol=1e-15)

    @pytest.mark.parametrize("heads", [1, 2])
    def test_path_graph_matches_dense_oracle(self, heads):
        rng = np.random.default_rng(11)
        layer = GraphTransformerLayer(3, 4, heads, rng)
        adj = np.diag(np.ones(3), 1) + np.diag(np.ones(3), -1)
        x = rng.normal(size=(4, 3))
        got = layer(DiffArray(x), Neighborhood.from_adjacency(adj, self_loops=True)).value
        assert np.allclose(got, dense_transformer(layer, x, adj), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_attention_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        layer = GraphTransformerLayer(4, 8, 4, rng)
        nbhd = Neighborhood.from_adjacency(random_weighted(9, rng, 0.3), self_loops=True)
        _, alpha = layer.attend(feats(rng, 9, 4), nbhd)
        sums = np.add.reduceat(alpha, nbhd.indptr[:-1], axis=0)
        assert np.allclose(sums, 1.0, atol=1e-12, rtol=0)

    def test_head_count_falls_back_to_divisor(self):
        assert head_count(16, 4) == 4
        assert head_count(6, 4) == 3
        assert head_count(1, 4) == 1
        assert head_count(7, 4) == 1

    def test_dropout_only_in_training(self, rng):
        layer = GraphTransformerLayer(3, 8, 2, rng, dropout=0.5)
        x, nbhd = feats(rng, 5, 3), complete_neighborhood(5)
        assert np.array_equal(layer(x, nbhd).value, layer(x, nbhd).value)
        drop = layer(x, nbhd, training=True, rng=np.random.default_rng(0)).value
        assert not np.array_equal(drop, layer(x, nbhd).value)

    def test_gradients(self):
        rng = np.random.default_rng(3)
        layer = GraphTransformerLayer(3, 4, 2, rng)
        x = DiffArray(rng.normal(size=(5, 3)), requires_grad=True)
        nbhd = Neighborhood.from_adjacency(random_weighted(5, rng), self_loops=True)
        w = rng.normal(size=(5, 4))
        build = lambda: dm.reduce_sum(dm.mul(layer(x, nbhd), w))
        assert grad_error(build, [x, *layer.named_parameters().values()]) < 1e-4


class TestGraphNorm:
    @pytest.mark.parametrize("seed", range(5))
    def test_zero_mean_per_channel(self, seed):
        rng = np.random.default_rng(seed)
        out = GraphNorm(4)(DiffArray(rng.normal(size=(7, 4)) * 5 + 3)).value
        assert np.allclose(out.mean(axis=0), 0.0, atol=1e-9)

    def test_segments_normalised_separately(self, rng):
        x = DiffArray(rng.normal(size=(7, 2)) + np.arange(7)[:, None])
        out = GraphNorm(2)(x, [0, 3, 7]).value
        assert np.allclose(out[:3].mean(axis=0), 0, atol=1e-9)
        assert np.allclose(out[3:].mean(axis=0), 0, atol=1e-9)

    def test_gradients(self):
        rng = np.random.default_rng(4)
        norm = GraphNorm(3)
        for p in norm.named_parameters().values():
            p.value[...] = rng.uniform(0.5, 1.5, size=p.shape)
        x = DiffArray(rng.normal(size=(6, 3)), requires_grad=True)
        w = rng.normal(size=(6, 3))
        build = lambda: dm.reduce_sum(dm.mul(norm(x), w))
        assert grad_error(build, [x, *norm.named_parameters().values()]) < 1e-4


def make_layer(kind, rng):
    return {"mpnn-uniform": lambda: MpnnLayer(3, 4, rng, beta=0.3),
            "mpnn-attention": lambda: MpnnLayer(3, 4, rng, weight_rule="attention"),
            "transformer": lambda: GraphTransformerLayer(3, 4, 2, rng),
            "graphnorm": lambda: GraphNorm(3)}[kind]()


class TestPermutationEquivariance:
    @pytest.mark.parametrize("kind", ["mpnn-uniform", "mpnn-attention", "transformer", "graphnorm"])
    def test_equivariant(self, kind):
        rng = np.random.default_rng(21)
        for trial in range(10):
            n = int(rng.integers(2, 11))
            adj = random_weighted(n, rng, 0.5)
            x = rng.normal(size=(n, 3))
            perm = rng.permutation(n)
            layer = make_layer(kind, np.random.default_rng(trial))
            self_loops = kind == "transformer"
            nb = Neighborhood.from_adjacency(adj, self_loops=self_loops)
            nb_p = Neighborhood.from_adjacency(adj[perm][:, perm], self_loops=self_loops)
            if kind == "graphnorm":
                out, out_p = layer(DiffArray(x)).value, layer(DiffArray(x[perm])).value
            else:
                out = layer(DiffArray(x), nb).value
                out_p = layer(DiffArray(x[perm]), nb_p).value
            assert np.max(np.abs(out_p - out[perm])) < 1e-9


class TestEdgeHelpers:
    def test_orthonormal_rows_give_zero_offdiagonal(self):
        e = dot_edge_init(DiffArray(np.eye(4))).value
        assert np.array_equal(e, np.zeros((4, 4)))

    def test_dot_example(self):
        e = dot_edge_init(DiffArray([[1.0, 2.0], [1.0, 2.0]])).value
        assert e[0, 1] == 5.0 and e[1, 0] == 5.0 and e[0, 0] == 0.0

    def test_dot_matches_matmul(self, rng):
        x = rng.normal(size=(5, 3))
        want = x @ x.T
        np.fill_diagonal(want, 0.0)
        assert np.allclose(dot_edge_init(DiffArray(x)).value, want, atol=1e-14)

    def test_minmax_example(self):
        e = np.array([[0, 2, 4], [2, 0, 6], [4, 6, 0]], dtype=float)
        out = minmax_normalize(DiffArray(e)).value
        assert np.allclose(out, [[0, 0, 0.5], [0, 0, 1], [0.5, 1, 0]])

    def test_minmax_constant_is_zero(self):
        assert np.array_equal(minmax_normalize(DiffArray(np.full((4, 4), 3.0))).value,
                              np.zeros((4, 4)))

    @pytest.mark.parametrize("seed", range(5))
    def test_minmax_range(self, seed):
        rng = np.random.default_rng(seed)
        out = minmax_normalize(DiffArray(rng.normal(size=(6, 6)))).value
        off = out[~np.eye(6, dtype=bool)]
        assert off.min() == 0.0 and off.max() == 1.0
        assert np.all(np.diag(out) == 0.0)

    def test_learned_domain_at_zero(self):
        a_ref, a_hat = learned_domain(DiffArray(np.zeros((4, 2))))
        assert np.array_equal(a_hat.value, np.full((4, 4), 0.5))
        assert np.array_equal(a_ref.value, np.full((4, 4), 0.5))

    def test_learned_domain_saturates(self):
        a_ref, _ = learned_domain(DiffArray(np.full((3, 2), 10.0)))
        assert np.allclose(a_ref.value, 1.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_learned_domain_masks_below_half(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(6, 3))
        a_hat = 1.0 / (1.0 + np.exp(-(x @ x.T)))
        a_ref, _ = learned_domain(DiffArray(x))
        assert np.allclose(a_ref.value, np.where(a_hat >= 0.5, a_hat, 0.0), atol=1e-15)

    def test_learned_domain_gradient_through_sigmoid_only(self):
        rng = np.random.default_rng(6)
        x = DiffArray(rng.normal(size=(4, 2)), requires_grad=True)
        w = rng.normal(size=(4, 4))
        build = lambda: dm.reduce_sum(dm.mul(learned_domain(x)[0], w))
        assert grad_error(build, [x]) < 1e-4

    def test_weighted_neighborhood_weights(self):
        dense = DiffArray([[0.0, 0.7, 0.0], [0.7, 0.0, 0.2], [0.0, 0.2, 0.0]])
        nb = weighted_neighborhood(dense)
        s = nb.sparse_matrix().toarray()
        assert np.allclose(s, dense.value + np.eye(3))

    def test_feedforward_has_no_final_relu(self, rng):
        ff = FeedForward([2, 3], rng)
        ff.fc0.bias.value[:] = -100.0
        assert np.all(ff(feats(rng, 4, 2)).value < 0)
