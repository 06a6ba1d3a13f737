import csv

import numpy as np
import pytest

from agbp.engine import (
    DampingConfig,
    MessageState,
    TraceWriter,
    apply_damping,
    compute_marginals,
    factor_to_variable,
    global_iteration,
    informative_edges,
    init_messages,
    leaf_message,
    local_iteration,
    variable_to_factor,
)
from agbp.errors import GraphError, MessageStateError, UnderdeterminedVariableError
from agbp.graph import build_factor_graph, classify_factors, defreeze, freeze_tie_factors
from agbp.model import ClusterPartition, LinearModel


def _graph(dense, z, v):
    return build_factor_graph(LinearModel.from_dense(dense, z, v))


def _run(graph, state, iterations, damping=None):
    for _ in range(iterations):
        state = global_iteration(graph, state, damping)
    return state


def _assert_same_state(a: MessageState, b: MessageState):
    np.testing.assert_array_equal(a.f2x_mean, b.f2x_mean)
    np.testing.assert_array_equal(a.f2x_variance, b.f2x_variance)
    np.testing.assert_array_equal(a.x2f_mean, b.x2f_mean)
    np.testing.assert_array_equal(a.x2f_variance, b.x2f_variance)


class TestLeafMessages:
    @pytest.mark.parametrize("h, z, v, expected", [
        (1.0, 5.0, 2.0, (5.0, 2.0)),
        (2.0, 4.0, 1.0, (2.0, 0.25)),
        (-0.5, 1.0, 1.0, (-2.0, 4.0)),
    ])
    def test_constant_message(self, h, z, v, expected):
        graph = _graph([[h]], [z], [v])
        assert leaf_message(graph, 0) == expected

    def test_branch_factor_is_not_a_leaf(self, chain_graph):
        with pytest.raises(GraphError):
            leaf_message(chain_graph, 1)


class TestInit:
    def test_defaults(self, two_cluster_graph):
        state = init_messages(two_cluster_graph)
        assert np.all(state.f2x_mean == 0.0)
        assert np.all(state.f2x_variance == 1000.0)
        assert not state.has_x2f

    def test_leaf_ignores_prior(self, diagonal_graph):
        state = init_messages(diagonal_graph, prior_mean=9.0, prior_variance=5.0)
        assert state.f2x(diagonal_graph, 0, 0) == (2.0, 0.25)

    @pytest.mark.parametrize("variance", [0.0, -1.0, np.inf])
    def test_bad_prior_variance(self, chain_graph, variance):
        with pytest.raises(MessageStateError):
            init_messages(chain_graph, prior_variance=variance)

    def test_underdetermined_graph(self):
        graph = _graph([[1.0, 1.0], [1.0, 0.0]], [1, 1], [1, 1])
        with pytest.raises(UnderdeterminedVariableError):
            init_messages(graph)

    def test_warm_start_refreshes_leaves(self, chain_graph):
        converged = _run(chain_graph, init_messages(chain_graph), 10)
        changed = chain_graph.with_observation(0, 1.5, 0.5)
        warm = init_messages(changed, warm=converged)
        assert warm.f2x(changed, 0, 0) == (1.5, 0.5)
        np.testing.assert_array_equal(warm.branch_means(changed), converged.branch_means(chain_graph))


class TestScalarUpdates:
    def test_variable_to_factor_combines_others(self):
        # f0 ties x0 and x1; f1, f2 are leaves on x0, f3 a leaf on x1
        graph = _graph([[1, 1], [1, 0], [1, 0], [0, 1]], [0, 1, 3, 0], [1, 1, 1, 1])
        state = init_messages(graph)
        assert variable_to_factor(graph, state, 0, 0) == (2.0, 0.5)

    def test_variable_to_factor_single_incoming(self):
        graph = _graph([[1, 1], [1, 0], [0, 1]], [0, 7, 1], [1, 3, 1])
        assert variable_to_factor(graph, init_messages(graph), 0, 0) == pytest.approx((7.0, 3.0), rel=1e-15)

    def test_variable_to_factor_vague_prior(self):
        graph = _graph([[1, 1], [1, 1], [1, 0], [0, 1]], [0, 0, 5, 0], [1, 1, 1, 1])
        state = init_messages(graph, prior_mean=0.0, prior_variance=1e10)
        mean, variance = variable_to_factor(graph, state, 0, 0)
        assert mean == pytest.approx(5.0, rel=1e-9)
        assert variance == pytest.approx(1.0, rel=1e-9)

    def test_variable_to_factor_empty_set(self):
        graph = _graph([[1.0, 1.0], [1.0, 0.0]], [1, 1], [1, 1])
        state = MessageState(np.ones(3), np.ones(3), np.ones(2), np.ones(2))
        with pytest.raises(UnderdeterminedVariableError):
            variable_to_factor(graph, state, 1, 0)

    def test_factor_to_variable(self):
        graph = _graph([[2, 1], [0, 1], [1, 0]], [10, 4, 0], [1, 1, 1])
        state = global_iteration(graph, init_messages(graph))
        assert state.x2f(graph, 1, 0) == (4.0, 1.0)
        assert factor_to_variable(graph, state, 0, 0) == (3.0, 0.5)
        assert state.f2x(graph, 0, 0) == (3.0, 0.5)

    def test_factor_to_variable_exact_inputs(self):
        # zero-variance inputs with mean 0: infinite precision, no weight
        graph = _graph([[2, 1], [0, 1], [1, 0]], [0, 4, 0], [3, 1, 1])
        state = MessageState(np.ones(4), np.zeros(4), np.full(2, np.inf), np.zeros(2))
        assert factor_to_variable(graph, state, 0, 0) == (0.0, 0.75)

    def test_factor_to_variable_uninformative_input(self):
        graph = _graph([[2, 1], [0, 1], [1, 0]], [10, 4, 0], [1, 1, 1])
        state = MessageState(np.ones(4), np.ones(4), np.zeros(2), np.full(2, 5.0))
        assert factor_to_variable(graph, state, 0, 0) == (0.0, np.inf)

    def test_leaf_factor_sends_no_branch_message(self, chain_graph):
        state = init_messages(chain_graph)
        with pytest.raises(GraphError):
            factor_to_variable(chain_graph, state, 0, 0)

    def test_vectorized_matches_scalar(self, two_cluster_graph):
        g = two_cluster_graph
        before = _run(g, init_messages(g), 3)
        after = global_iteration(g, before)
        for e in g.branch_edges:
            f, x = int(g.edge_factor[e]), int(g.edge_variable[e])
            np.testing.assert_allclose(variable_to_factor(g, before, x, f), after.x2f(g, x, f), rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(factor_to_variable(g, after, f, x), after.f2x(g, f, x),
                                       rtol=1e-12, atol=1e-12)


class TestDamping:
    def _config(self, q, zeta):
        return DampingConfig(weight=zeta, probability=float(q), mask=np.array([q]))

    def test_undamped_edge(self):
        assert apply_damping(self._config(False, 0.7), 10.0, 3.0, 0) == 3.0

    def test_full_weight_returns_previous(self):
        assert apply_damping(self._config(True, 1.0), 10.0, 3.0, 0) == 10.0

    def test_blend(self):
        assert apply_damping(self._config(True, 0.9), 10.0, 0.0, 0) == pytest.approx(9.0)

    def test_zero_probability_is_bitwise_undamped(self, two_cluster_graph):
        g = two_cluster_graph
        damping = DampingConfig.create(g, 0.5, 0.0, seed=3)
        assert not damping.mask.any()
        _assert_same_state(_run(g, init_messages(g), 5, damping), _run(g, init_messages(g), 5))

    def test_mask_is_seeded(self, two_cluster_graph):
        a = DampingConfig.create(two_cluster_graph, 0.5, 0.5, seed=11)
        b = DampingConfig.create(two_cluster_graph, 0.5, 0.5, seed=11)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert a.mask.size == two_cluster_graph.dimension

    def test_resample_draws_new_masks(self, two_cluster_graph):
        damping = DampingConfig.create(two_cluster_graph, 0.5, 0.5, seed=2, resample=True)
        masks = [damping.next_mask().copy() for _ in range(5)]
        assert any(not np.array_equal(masks[0], m) for m in masks[1:])

    def test_scope(self, two_cluster_graph):
        damping = DampingConfig.create(two_cluster_graph, 0.5, 1.0, scope="local")
        assert damping.applies("local") and not damping.applies("global")

    def test_invalid_weight(self):
        with pytest.raises(ValueError):
            DampingConfig(weight=1.5, probability=0.5, mask=np.zeros(1, dtype=bool))


class TestIterations:
    def test_marginals_after_init(self, diagonal_graph):
        means, variances = compute_marginals(diagonal_graph, init_messages(diagonal_graph))
        np.testing.assert_array_equal(means, [2.0, -3.0, 0.5])
        np.testing.assert_array_equal(variances, [0.25, 2.0, 0.03125])

    def test_two_equal_messages(self):
        state = MessageState.from_moments([2.0, 2.0], [0.5, 0.5], [], [])
        graph = _graph([[1.0], [1.0]], [2, 2], [0.5, 0.5])
        means, variances = compute_marginals(graph, state)
        np.testing.assert_array_equal(means, [2.0])
        np.testing.assert_array_equal(variances, [0.25])

    def test_leaf_only_graph_is_fixed(self, diagonal_graph):
        state = init_messages(diagonal_graph)
        after = global_iteration(diagonal_graph, state)
        np.testing.assert_array_equal(after.f2x_mean, state.f2x_mean)
        np.testing.assert_array_equal(after.f2x_variance, state.f2x_variance)
        assert after.iteration == 1

    def test_deterministic(self, two_cluster_graph):
        state = _run(two_cluster_graph, init_messages(two_cluster_graph), 2)
        _assert_same_state(global_iteration(two_cluster_graph, state), global_iteration(two_cluster_graph, state))

    def test_input_state_untouched(self, two_cluster_graph):
        state = init_messages(two_cluster_graph)
        snapshot = state.copy()
        global_iteration(two_cluster_graph, state)
        np.testing.assert_array_equal(state.f2x_mean, snapshot.f2x_mean)
        assert state.iteration == 0

    def test_tree_is_exact(self, chain_model, chain_graph):
        means, variances = compute_marginals(chain_graph, _run(chain_graph, init_messages(chain_graph), 10))
        h = chain_model.to_dense()
        info = h.T @ np.diag(1.0 / chain_model.variances) @ h
        expected = np.linalg.solve(info, h.T @ (chain_model.observations / chain_model.variances))
        np.testing.assert_allclose(means, expected, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(variances, np.diag(np.linalg.inv(info)), rtol=1e-10)


class TestLocalIteration:
    def test_no_ties_matches_global(self, two_cluster_graph):
        g = two_cluster_graph
        state = _run(g, init_messages(g), 2)
        view = freeze_tie_factors(g, state, classify_factors(g, ClusterPartition.single(6)))
        assert view.tie_edges.size == 0
        _assert_same_state(local_iteration(view, state), global_iteration(g, state))

    def test_tie_messages_pinned(self, two_cluster_graph, two_cluster_partition):
        g = two_cluster_graph
        state = global_iteration(g, init_messages(g))
        view = freeze_tie_factors(g, state, classify_factors(g, two_cluster_partition))
        for _ in range(4):
            state = local_iteration(view, state)
        np.testing.assert_array_equal(state.f2x_precision[view.tie_edges], view.snapshot_precision)
        np.testing.assert_array_equal(state.f2x_weighted[view.tie_edges], view.snapshot_weighted)

        defreeze(view)
        with pytest.raises(MessageStateError):
            local_iteration(view, state)
        released = global_iteration(g, state)
        assert not np.array_equal(released.f2x_weighted[view.tie_edges], view.snapshot_weighted)


def test_trace_writer(tmp_path, chain_graph):
    path = tmp_path / "trace.csv"
    with TraceWriter(path) as trace:
        state = init_messages(chain_graph)
        trace.record(chain_graph, state)
        trace.record(chain_graph, global_iteration(chain_graph, state))
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 8 + 6 + 8
    assert [r["edge_kind"] for r in rows[:8]] == ["f2x"] * 8
    assert rows[8]["edge_kind"] == "x2f" and rows[8]["iteration"] == "1"
    assert float(rows[0]["mean"]) == pytest.approx(0.3)


class TestUninformativeMessages:
    def test_zero_precision_reads_as_flat(self):
        state = MessageState.from_moments([1.0, 4.0], [np.inf, 2.0], [], [])
        np.testing.assert_array_equal(state.f2x_precision, [0.0, 0.5])
        np.testing.assert_array_equal(state.f2x_weighted, [0.0, 2.0])
        np.testing.assert_array_equal(state.f2x_mean, [0.0, 4.0])
        np.testing.assert_array_equal(state.f2x_variance, [np.inf, 2.0])

    def test_cavity_messages_fade_without_overflow(self, square_graph):
        g = square_graph
        state = _run(g, init_messages(g), 2000)
        cavity = [g.edge_id(0, 1), g.edge_id(1, 0)]
        np.testing.assert_array_equal(state.f2x_precision[cavity], 0.0)
        np.testing.assert_array_equal(state.f2x_weighted[cavity], 0.0)
        state.validate(g)
        means, variances = compute_marginals(g, state)
        np.testing.assert_allclose(means, [1.0, 2.0], rtol=1e-12)
        assert np.all(np.isfinite(variances))

    def test_informative_edges(self, square_graph):
        g = square_graph
        state = _run(g, init_messages(g), 100)
        np.testing.assert_array_equal(informative_edges(g, state.f2x_precision), [True, False, False, True])
