import numpy as np
import pytest

from graphbo.graph import normalized_adjacency, permute_nodes
from graphbo.surrogate import (
    GraphBatch,
    SurrogateConfig,
    SurrogateParams,
    TrainingError,
    compose_relation_weights,
    downsized_config,
    forward,
    forward_batch,
    gc_layer_forward,
    init_params,
    loss,
    loss_and_grad,
    pooling_forward,
    prior_concat,
    train,
)

from helpers import central_difference, make_graph, max_relative_error, path, random_graph


def small_dataset(seed, config, count=4, max_nodes=6):
    rng = np.random.default_rng(seed)
    graphs = [random_graph(rng, int(rng.integers(1, max_nodes + 1)), 0.5, config.input_dim,
                           config.global_dim, config.num_relations, gid=i) for i in range(count)]
    return graphs, rng.normal(size=count)


def gradient_check(seed, config=None, h=1e-5):
    """Worst relative error between backprop and central differences over all parameters."""
    config = config or downsized_config()
    graphs, y = small_dataset(seed, config)
    batch = GraphBatch(graphs, config.num_relations)
    params = init_params(config, seed)
    _, grads = loss_and_grad(batch, y, params, config)
    worst = 0.0
    for name, arr in params.arrays.items():
        numeric = central_difference(lambda: loss(batch, y, params, config), arr, h)
        worst = max(worst, max_relative_error(grads[name], numeric, floor=1e-7))
    return worst


class TestConfig:
    def test_defaults(self):
        c = SurrogateConfig(input_dim=500, global_dim=4)
        assert (c.num_gc_layers, c.num_fc_layers) == (5, 5)
        assert (c.gc_width, c.pool_width, c.fc_width) == (48, 50, 45)
        assert (c.gc_activation, c.pool_activation, c.fc_activation) == ("tanh", "identity", "tanh")
        assert c.learning_rate == 1e-4 and c.dropout == 0.0 and c.penalty == 1e-5
        assert c.basis_dim == 46

    @pytest.mark.parametrize("bad", [dict(gc_width=0), dict(num_bases=0), dict(dropout=1.0),
                                     dict(lambda_switch=2), dict(fc_activation="elu")])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            SurrogateConfig(input_dim=3, global_dim=2, **bad)


class TestInit:
    def test_deterministic(self):
        c = downsized_config()
        a, b = init_params(c, 3), init_params(c, 3)
        for k in a.arrays:
            np.testing.assert_array_equal(a[k], b[k])

    def test_seed_changes_values(self):
        c = downsized_config()
        assert not np.array_equal(init_params(c, 1)["pool.weight"], init_params(c, 2)["pool.weight"])

    def test_shapes_and_zero_biases(self):
        c = downsized_config()
        p = init_params(c, 0)
        assert p["gc0.bases"].shape == (2, 3, 8)
        assert p["gc1.bases"].shape == (2, 8, 8)
        assert p["gc0.coef"].shape == (2, 2)
        assert p["pool.weight"].shape == (8, 5)
        assert p["fc0.weight"].shape == (7, 6)
        assert p["head.weight"].shape == (6,)
        np.testing.assert_array_equal(p["fc0.bias"], 0.0)
        np.testing.assert_array_equal(p["head.bias"], 0.0)

    def test_weight_block_mean_near_zero(self):
        c = SurrogateConfig(input_dim=48, global_dim=0, num_bases=1)
        w = init_params(c, 0)["gc1.bases"][0]
        a = np.sqrt(6.0 / 96)
        sd = a / np.sqrt(3)
        assert abs(w.mean()) < 3 * sd / np.sqrt(w.size)
        assert np.abs(w).max() <= a

    def test_json_roundtrip_bitwise(self, tmp_path):
        p = init_params(downsized_config(), 5)
        p.save(tmp_path / "p.json")
        q = SurrogateParams.load(tmp_path / "p.json")
        for k in p.arrays:
            assert p[k].tobytes() == q[k].tobytes()


class TestBasisComposition:
    def test_single_basis(self):
        c = downsized_config(num_bases=1, num_relations=3)
        p = init_params(c, 0)
        p.arrays["gc0.coef"][:] = 1.0
        w = compose_relation_weights(p, 0)
        for r in range(3):
            np.testing.assert_array_equal(w[r], p["gc0.bases"][0])

    def test_cancelling_bases(self):
        c = downsized_config()
        p = init_params(c, 0)
        p.arrays["gc0.bases"][1] = p["gc0.bases"][0]
        p.arrays["gc0.coef"][:] = [1.0, -1.0]
        np.testing.assert_array_equal(compose_relation_weights(p, 0), 0.0)

    def test_explicit_sum(self):
        c = downsized_config(num_relations=3)
        p = init_params(c, 1)
        w = compose_relation_weights(p, 1)
        v, beta = p["gc1.bases"], p["gc1.coef"]
        for r in range(3):
            np.testing.assert_allclose(w[r], beta[r, 0] * v[0] + beta[r, 1] * v[1], rtol=0, atol=1e-15)

    def test_onehot_coefficients_free_weights(self):
        # with B >= D_E and one-hot rows the layer is an unconstrained per-relation layer
        rng = np.random.default_rng(0)
        g = random_graph(rng, 5, 0.6, d_v=3, num_relations=2)
        a = normalized_adjacency(g)
        free = rng.normal(size=(2, 3, 4))
        bases = free.copy()
        coef = np.eye(2)
        w = np.einsum("rb,bio->rio", coef, bases)
        out, _ = gc_layer_forward(g.node_features, list(a), w, "tanh")
        ref = np.tanh(a[0] @ g.node_features @ free[0] + a[1] @ g.node_features @ free[1])
        np.testing.assert_allclose(out, ref, atol=1e-14)


class TestLayers:
    def test_single_node_identity(self):
        h = np.array([[0.3, -1.2]])
        out, _ = gc_layer_forward(h, [np.array([[1.0]])], np.eye(2)[None], "identity")
        np.testing.assert_array_equal(out, h)

    def test_empty_second_relation_adds_self_term(self):
        g = make_graph(3, [(0, 1), (1, 2)], d_v=2, num_relations=2,
                       features=np.arange(6.0).reshape(3, 2))
        a = normalized_adjacency(g)
        w = np.random.default_rng(0).normal(size=(2, 2, 3))
        out, _ = gc_layer_forward(g.node_features, list(a), w, "identity")
        h = g.node_features
        np.testing.assert_allclose(out, a[0] @ h @ w[0] + h @ w[1], atol=1e-14)

    def test_one_edge_mixes_rows(self):
        h = np.array([[1.0, 0.0], [0.0, 2.0]])
        a = normalized_adjacency(make_graph(2, [(0, 1)]))
        out, _ = gc_layer_forward(h, list(a), np.eye(2)[None], "identity")
        np.testing.assert_allclose(out, [[0.5, 1.0], [0.5, 1.0]])

    def test_pooling_single_node(self):
        pooled, _, _ = pooling_forward(np.zeros((1, 2)), np.eye(2), np.ones((1, 1)), "identity")
        np.testing.assert_allclose(pooled, [[0.5, 0.5]])

    def test_pooling_identical_rows(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(3, 4))
        row = rng.normal(size=(1, 3))
        one, _, _ = pooling_forward(row, w, np.ones((1, 1)), "identity")
        many, _, _ = pooling_forward(np.repeat(row, 5, axis=0), w, np.ones((1, 5)), "identity")
        np.testing.assert_allclose(many, 5 * one, rtol=1e-14)

    def test_pooling_two_rows(self):
        h = np.array([[1.0, 0.0], [0.0, 3.0]])
        w = np.array([[1.0, -1.0], [0.5, 2.0]])
        logits = h @ w
        e = np.exp(logits)
        ref = (e / e.sum(axis=1, keepdims=True)).sum(axis=0)
        pooled, _, _ = pooling_forward(h, w, np.ones((1, 2)), "identity")
        np.testing.assert_allclose(pooled[0], ref, rtol=1e-14)

    def test_prior_concat(self):
        hp = np.array([0.1, 0.2, 0.3])
        np.testing.assert_array_equal(prior_concat(hp, [0.2, 0.8], 0), [0.1, 0.2, 0.3, 0, 0])
        np.testing.assert_array_equal(prior_concat(hp, [0.2, 0.8], 1), [0.1, 0.2, 0.3, 0.2, 0.8])

    def test_prior_concat_length_check(self):
        with pytest.raises(ValueError):
            prior_concat(np.zeros(3), [1.0], 1, global_dim=2)


class TestForward:
    def test_zero_parameters(self):
        c = downsized_config()
        p = init_params(c, 0)
        for k in p.arrays:
            p.arrays[k][:] = 0.0
        p.arrays["head.bias"][:] = 0.7
        g = random_graph(np.random.default_rng(1), 4, d_v=3, num_relations=2)
        y, phi, trace = forward(g, p, c)
        assert y == pytest.approx(0.7)
        np.testing.assert_array_equal(phi, [0, 0, 0, 0, 0, 0, 1])
        assert trace is None

    def test_trace_only_in_train_mode(self):
        c = downsized_config()
        g = random_graph(np.random.default_rng(1), 4, d_v=3, num_relations=2)
        _, _, trace = forward(g, init_params(c, 0), c, mode="train")
        assert trace is not None and len(trace.gc_outputs) == 2

    def test_hand_computed_tiny_net(self):
        c = SurrogateConfig(input_dim=1, global_dim=1, num_gc_layers=1, num_fc_layers=1,
                            gc_width=2, pool_width=2, fc_width=2, num_bases=1)
        p = SurrogateParams({
            "gc0.bases": np.array([[[1.0, -0.5]]]),
            "gc0.coef": np.array([[1.0]]),
            "pool.weight": np.array([[0.3, -0.2], [0.1, 0.4]]),
            "fc0.weight": np.array([[0.5, -1.0], [0.25, 0.5], [1.0, 2.0]]),
            "fc0.bias": np.array([0.1, -0.1]),
            "head.weight": np.array([2.0, -1.0]),
            "head.bias": np.array([0.05]),
        })
        g = path(3, features=np.array([[1.0], [2.0], [3.0]]), global_attributes=[0.4])
        s6 = 1 / np.sqrt(6)
        a = np.array([[0.5, s6, 0.0], [s6, 1 / 3, s6], [0.0, s6, 0.5]])
        ah = a @ np.array([1.0, 2.0, 3.0])
        h1 = np.tanh(np.column_stack([ah, -0.5 * ah]))
        logits = h1 @ p["pool.weight"]
        sm = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        x = np.concatenate([sm.sum(axis=0), [0.4]])
        f = np.tanh(x @ p["fc0.weight"] + p["fc0.bias"])
        y_ref = 2.0 * f[0] - 1.0 * f[1] + 0.05
        y, phi, _ = forward(g, p, c)
        assert y == pytest.approx(y_ref, abs=1e-14)
        np.testing.assert_allclose(phi, [f[0], f[1], 1.0], atol=1e-15)

    def test_permutation_invariance(self):
        c = downsized_config()
        rng = np.random.default_rng(7)
        p = init_params(c, 7)
        for _ in range(5):
            g = random_graph(rng, 6, 0.5, d_v=3, num_relations=2)
            perm = rng.permutation(6)
            y1, phi1, _ = forward(g, p, c)
            y2, phi2, _ = forward(permute_nodes(g, perm), p, c)
            assert y1 == pytest.approx(y2, abs=1e-9)
            np.testing.assert_allclose(phi1, phi2, atol=1e-9)

    def test_predict_does_not_mutate(self):
        c = downsized_config()
        p = init_params(c, 0)
        before = p.copy()
        g = random_graph(np.random.default_rng(0), 5, d_v=3, num_relations=2)
        forward(g, p, c)
        forward(g, p, c)
        for k in p.arrays:
            assert p[k].tobytes() == before[k].tobytes()

    def test_batch_equals_single(self):
        c = downsized_config()
        graphs, _ = small_dataset(2, c, count=5)
        p = init_params(c, 2)
        yb, phib, _ = forward_batch(GraphBatch(graphs), p, c)
        for i, g in enumerate(graphs):
            y, phi, _ = forward(g, p, c)
            assert yb[i] == pytest.approx(y, abs=1e-13)
            np.testing.assert_allclose(phib[i], phi, atol=1e-13)

    def test_lambda_zero_ignores_globals(self):
        c = downsized_config(lambda_switch=0)
        p = init_params(c, 0)
        g = random_graph(np.random.default_rng(0), 4, d_v=3, num_relations=2)
        y1, _, _ = forward(g, p, c)
        y2, _, _ = forward(g.with_global_attributes([9.0, -9.0]), p, c)
        assert y1 == y2

    def test_dimension_mismatch(self):
        c = downsized_config()
        g = random_graph(np.random.default_rng(0), 4, d_v=5, num_relations=2)
        with pytest.raises(ValueError, match="input_dim"):
            forward(g, init_params(c, 0), c)

    def test_dropout_only_in_training(self):
        c = downsized_config(dropout=0.5)
        p = init_params(c, 0)
        g = random_graph(np.random.default_rng(0), 4, d_v=3, num_relations=2)
        a, _, _ = forward(g, p, c)
        b, _, _ = forward(g, p, c)
        assert a == b
        t1, _, _ = forward(g, p, c, "train", np.random.default_rng(1))
        assert t1 != a


class TestLoss:
    def test_perfect_fit(self):
        c = downsized_config(penalty=0.0)
        graphs, _ = small_dataset(0, c, count=3)
        p = init_params(c, 0)
        yhat, _, _ = forward_batch(GraphBatch(graphs), p, c)
        assert loss(graphs, yhat, p, c) == pytest.approx(0.0, abs=1e-20)

    def test_single_residual(self):
        c = downsized_config(penalty=0.0)
        graphs, _ = small_dataset(0, c, count=1)
        p = init_params(c, 0)
        y0, _, _ = forward(graphs[0], p, c)
        assert loss(graphs, [y0 - 2.0], p, c) == pytest.approx(4.0, abs=1e-12)

    def test_penalty_term(self):
        c = downsized_config()
        graphs, y = small_dataset(0, c, count=3)
        p = init_params(c, 0)
        yhat, _, _ = forward_batch(GraphBatch(graphs), p, c)
        sq = sum(float(np.sum(v ** 2)) for v in p.arrays.values())
        expected = float(np.sum((yhat - y) ** 2)) + 1e-5 * sq
        assert loss(graphs, y, p, c) == pytest.approx(expected, rel=1e-14)


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_central_differences(self, seed):
        assert gradient_check(seed) < 1e-4

    def test_relu_and_lambda_zero(self):
        c = downsized_config(gc_activation="relu", pool_activation="tanh", lambda_switch=0)
        assert gradient_check(11, c) < 1e-4

    def test_dropout_gradient_with_fixed_mask(self):
        c = downsized_config(dropout=0.3)
        graphs, y = small_dataset(4, c)
        batch = GraphBatch(graphs)
        params = init_params(c, 4)
        _, grads = loss_and_grad(batch, y, params, c, np.random.default_rng(9))

        def f():
            return loss_and_grad(batch, y, params, c, np.random.default_rng(9))[0]

        numeric = central_difference(f, params.arrays["fc0.weight"])
        assert max_relative_error(grads["fc0.weight"], numeric, floor=1e-7) < 1e-4


class TestTrain:
    def test_memorizes_one_sample(self):
        c = downsized_config(learning_rate=1e-3)
        graphs, _ = small_dataset(0, c, count=1)
        p, final = train((graphs, [1.5]), init_params(c, 0), c, epochs=2000)
        y, _, _ = forward(graphs[0], p, c)
        assert (y - 1.5) ** 2 < 1e-4

    def test_zero_epochs(self):
        c = downsized_config()
        graphs, y = small_dataset(0, c)
        p0 = init_params(c, 0)
        p, value = train((graphs, y), p0, c, epochs=0)
        for k in p0.arrays:
            np.testing.assert_array_equal(p[k], p0[k])
        assert value == pytest.approx(loss(graphs, y, p0, c))

    def test_final_not_worse_than_initial(self):
        c = downsized_config(learning_rate=0.5)
        graphs, y = small_dataset(3, c, count=6)
        p0 = init_params(c, 3)
        _, value = train((graphs, y), p0, c, epochs=30)
        assert value <= loss(graphs, y, p0, c)

    def test_reproducible(self):
        c = downsized_config(dropout=0.2)
        graphs, y = small_dataset(1, c)
        a, la = train((graphs, y), init_params(c, 1), c, epochs=20, seed=5)
        b, lb = train((graphs, y), init_params(c, 1), c, epochs=20, seed=5)
        assert la == lb
        for k in a.arrays:
            assert a[k].tobytes() == b[k].tobytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_target_aborts(self):
        c = downsized_config()
        graphs, _ = small_dataset(0, c, count=2)
        with pytest.raises(TrainingError):
            train((graphs, [np.inf, 0.0]), init_params(c, 0), c, epochs=3)

    def test_empty_dataset(self):
        c = downsized_config()
        with pytest.raises(ValueError):
            train(([], []), init_params(c, 0), c, epochs=1)
