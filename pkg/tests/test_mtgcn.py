import numpy as np
import pytest

from stcausal.errors import DivergenceError, EstimationError
from stcausal.mtgcn import (
    GraphSpec,
    MtgcnRegressor,
    build_graphs,
    forward,
    gradient_check,
    init_model,
    normalize_adjacency,
    predictive_error,
    train,
)


def identity_graphs(n_nodes, n_views=1):
    # zero adjacency + self loops normalizes to the identity operator
    return GraphSpec(node_count=n_nodes, adjacencies=[np.zeros((n_nodes, n_nodes))] * n_views)


def random_graphs(n_nodes, n_views, rng):
    mats = []
    for _ in range(n_views):
        A = np.abs(rng.normal(size=(n_nodes, n_nodes)))
        A = (A + A.T) / 2
        np.fill_diagonal(A, 0.0)
        mats.append(A)
    return GraphSpec(node_count=n_nodes, adjacencies=mats)


def random_model(n_nodes, n_views, rng, hidden=6, n_layers=2, activation="tanh"):
    model = init_model(n_nodes, n_views, hidden=hidden, n_layers=n_layers,
                       activation=activation, rng=rng)
    model.readout = rng.normal(size=model.readout.shape)
    model.readout_bias = rng.normal(size=model.readout_bias.shape)
    for layer in model.weights:
        for W in layer:
            W += rng.normal(scale=0.3, size=W.shape)
    return model


class TestGraphSpec:
    def test_validation(self):
        with pytest.raises(ValueError, match="symmetric"):
            GraphSpec(node_count=2, adjacencies=[np.array([[0.0, 1.0], [0.5, 0.0]])])
        with pytest.raises(ValueError, match="diagonal"):
            GraphSpec(node_count=2, adjacencies=[np.eye(2)])
        with pytest.raises(ValueError, match="non-negative"):
            GraphSpec(node_count=2, adjacencies=[np.array([[0.0, -1.0], [-1.0, 0.0]])])

    def test_normalization_identity(self):
        np.testing.assert_allclose(normalize_adjacency(np.zeros((4, 4))), np.eye(4))

    def test_normalization_degree(self):
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        ahat = normalize_adjacency(A)
        np.testing.assert_allclose(ahat, np.full((2, 2), 0.5))


class TestBuildGraphs:
    def test_duplicate_features_get_unit_edge(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=500)
        signals = np.column_stack([x, x, rng.normal(size=500)])
        spec = build_graphs(signals)
        assert spec.adjacencies[0][0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_independent_features_pruned(self):
        rng = np.random.default_rng(1)
        signals = rng.normal(size=(4000, 6))
        spec = build_graphs(signals, threshold=0.2)
        assert np.all(spec.adjacencies[0] == 0.0)

    def test_adjacency_symmetric(self):
        rng = np.random.default_rng(2)
        signals = rng.normal(size=(100, 5)) @ rng.normal(size=(5, 5))
        strata = rng.integers(0, 2, size=100)
        spec = build_graphs(signals, strata=strata)
        assert len(spec.adjacencies) == 2
        for A in spec.adjacencies:
            np.testing.assert_array_equal(A, A.T)
            assert np.all(np.diag(A) == 0.0)

    def test_constant_feature_zero_degree(self):
        rng = np.random.default_rng(3)
        signals = np.column_stack([np.ones(50), rng.normal(size=(50, 2))])
        spec = build_graphs(signals)
        assert np.all(spec.adjacencies[0][0] == 0.0)


class TestForward:
    def test_zero_weights_give_bias(self):
        graphs = identity_graphs(4)
        model = init_model(4, 1, hidden=3, rng=np.random.default_rng(0))
        for layer in model.weights:
            for W in layer:
                W[:] = 0.0
        model.readout_bias[:] = 2.5
        preds = forward(model, graphs, np.random.default_rng(1).normal(size=(6, 4)))
        np.testing.assert_allclose(preds, 2.5)

    def test_identity_linear_single_layer_reduces_to_affine(self):
        # algebraic oracle: with the identity operator and linear activation,
        # prediction_b = sum_jc R[j,c] * (s_bj * W[0,c] + bias_c) + rb
        rng = np.random.default_rng(4)
        n_nodes = 5
        graphs = identity_graphs(n_nodes)
        model = random_model(n_nodes, 1, rng, hidden=4, n_layers=1, activation="linear")
        model.biases[0] = rng.normal(size=4)
        S = rng.normal(size=(7, n_nodes))
        W = model.weights[0][0][0]  # (hidden,)
        R = model.readout[0]  # (nodes, hidden)
        expected = S @ (R @ W) + (R @ model.biases[0]).sum() + model.readout_bias[0]
        np.testing.assert_allclose(forward(model, graphs, S), expected, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        n_nodes = 7
        graphs = random_graphs(n_nodes, 2, rng)
        model = random_model(n_nodes, 2, rng)
        S = rng.normal(size=(10, n_nodes))
        base = forward(model, graphs, S)

        perm = rng.permutation(n_nodes)
        graphs_p = GraphSpec(
            node_count=n_nodes,
            adjacencies=[A[np.ix_(perm, perm)] for A in graphs.adjacencies],
        )
        model_p = model.copy()
        model_p.readout = model.readout[:, perm, :]
        np.testing.assert_allclose(
            forward(model_p, graphs_p, S[:, perm]), base, atol=1e-12
        )

    def test_shape_mismatch_rejected(self):
        graphs = identity_graphs(3)
        model = init_model(3, 1, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="nodes"):
            forward(model, graphs, np.zeros((2, 4)))


class TestGradients:
    @pytest.mark.parametrize("activation", ["tanh", "linear"])
    def test_matches_finite_differences(self, activation):
        rng = np.random.default_rng(6)
        graphs = random_graphs(6, 2, rng)
        model = random_model(6, 2, rng, activation=activation)
        S = rng.normal(size=(9, 6))
        y = rng.normal(size=9)
        worst = gradient_check(model, graphs, S, y, rng, probes_per_tensor=20)
        assert worst < 1e-4

    def test_sparse_operator_path(self):
        # enough nodes that operators go sparse; gradients must still agree
        rng = np.random.default_rng(7)
        n_nodes = 70
        A = np.zeros((n_nodes, n_nodes))
        for j in range(0, n_nodes - 1, 2):
            A[j, j + 1] = A[j + 1, j] = 1.0
        graphs = GraphSpec(node_count=n_nodes, adjacencies=[A])
        model = random_model(n_nodes, 1, rng, hidden=4)
        S = rng.normal(size=(5, n_nodes))
        y = rng.normal(size=5)
        import scipy.sparse as sp

        assert any(sp.issparse(op) for op in graphs.operators())
        assert gradient_check(model, graphs, S, y, rng, probes_per_tensor=10) < 1e-4


class TestTrain:
    def test_zero_epochs_unchanged(self):
        rng = np.random.default_rng(8)
        graphs = identity_graphs(4)
        model = init_model(4, 1, rng=rng)
        S = rng.normal(size=(10, 4))
        y = rng.normal(size=10)
        out = train(model, graphs, S, y, epochs=0, rng=rng)
        for (_, a, _), (_, b, _) in zip(
            __import__("stcausal.mtgcn", fromlist=["_param_tensors"])._param_tensors(model),
            __import__("stcausal.mtgcn", fromlist=["_param_tensors"])._param_tensors(out),
        ):
            np.testing.assert_array_equal(a, b)
        assert len(out.loss_trace) == 1

    def test_loss_trace_non_increasing(self):
        rng = np.random.default_rng(9)
        graphs = identity_graphs(5)
        model = init_model(5, 1, rng=rng)
        S = rng.normal(size=(40, 5))
        y = S @ rng.normal(size=5)
        out = train(model, graphs, S, y, epochs=50, lr=0.5, rng=rng)
        trace = np.asarray(out.loss_trace)
        assert np.all(np.diff(trace) <= 0.0)

    def test_realizable_linear_target_reaches_tiny_loss(self):
        rng = np.random.default_rng(10)
        n_nodes = 4
        graphs = identity_graphs(n_nodes)
        model = init_model(n_nodes, 1, hidden=8, n_layers=2, activation="linear", rng=rng)
        S = rng.normal(size=(120, n_nodes))
        coefs = np.array([1.0, -2.0, 0.5, 1.5])
        y = S @ coefs + 0.7
        model.readout_bias[:] = y.mean()
        out = train(model, graphs, S, y, epochs=4000, lr=0.5, rng=rng)
        assert out.loss_trace[-1] < 1e-4

    def test_divergent_scale_raises(self):
        rng = np.random.default_rng(11)
        graphs = identity_graphs(3)
        model = init_model(3, 1, rng=rng)
        S = rng.normal(size=(5, 3))
        with pytest.raises(DivergenceError):
            train(model, graphs, S, np.full(5, 1e8), epochs=1, rng=rng)

    def test_bad_gradient_selfcheck_raises(self, monkeypatch):
        import stcausal.mtgcn as m

        rng = np.random.default_rng(12)
        graphs = identity_graphs(3)
        model = init_model(3, 1, rng=rng)
        monkeypatch.setattr(m, "gradient_check", lambda *a, **k: 1.0)
        with pytest.raises(EstimationError, match="finite differences"):
            m.train(model, graphs, rng.normal(size=(5, 3)), rng.normal(size=5), epochs=1, rng=rng)


class TestPredictiveError:
    def test_perfect_predictions(self):
        rng = np.random.default_rng(13)
        graphs = identity_graphs(3)
        model = random_model(3, 1, rng)
        S = rng.normal(size=(8, 3))
        y = forward(model, graphs, S)
        assert predictive_error(model, graphs, S, y) == 0.0

    def test_zero_predictor_gives_target_scale(self):
        rng = np.random.default_rng(14)
        graphs = identity_graphs(3)
        model = init_model(3, 1, rng=rng)
        for layer in model.weights:
            for W in layer:
                W[:] = 0.0
        y = rng.normal(size=500)
        y -= y.mean()
        pe = predictive_error(model, graphs, np.zeros((500, 3)), y)
        assert pe == pytest.approx(y.std(), rel=1e-12)

    def test_empty_rejected(self):
        graphs = identity_graphs(2)
        model = init_model(2, 1, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="empty"):
            predictive_error(model, graphs, np.zeros((0, 2)), np.zeros(0))


class TestRegressor:
    def test_fit_predict_deterministic(self):
        rng = np.random.default_rng(15)
        S = rng.normal(size=(60, 5))
        y = S @ rng.normal(size=5) + rng.normal(scale=0.1, size=60)
        graphs = build_graphs(S)
        a = MtgcnRegressor(hidden=8, epochs=30, seed=3).fit(S, y, graphs)
        b = MtgcnRegressor(hidden=8, epochs=30, seed=3).fit(S, y, graphs)
        np.testing.assert_array_equal(a.predict(S), b.predict(S))
        assert a.score_rmse(S, y) < y.std()

    def test_get_params(self):
        reg = MtgcnRegressor(hidden=4, epochs=10)
        assert reg.get_params()["hidden"] == 4
