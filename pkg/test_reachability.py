import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from dataset import DemoDataset, DemoTrajectory, Step, flatten
from errors import ConfigurationError, DataError
from reachability import (Node, StateGraph, build_graph, default_merge_eps, load_artifact, pairwise_distances,
                          save_artifact, shortest_path_lengths, value, value_iteration)

GAMMA = 0.95


def closed_form(d, gamma=GAMMA):
    return -(1.0 - gamma ** d) / (1.0 - gamma)


def random_graph(rng, size):
    nodes = [Node(i, np.array([float(i + 1), 1.0])) for i in range(size)]
    density = rng.uniform(0.02, 0.2)
    edges = [(u, v) for u in range(size) for v in range(size) if u != v and rng.random() < density]
    return StateGraph(nodes, edges, 0.0)


def dataset_from(features_by_traj):
    return DemoDataset([DemoTrajectory(name, [Step(name, t, row, 0) for t, row in enumerate(rows, start=1)])
                        for name, rows in features_by_traj.items()])


class TestValueIteration:

    def test_matches_shortest_path_closed_form(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            size = int(rng.integers(1, 41))
            graph = random_graph(rng, size)
            table = value_iteration(graph, GAMMA)
            adjacency = np.zeros((size, size))
            for u, v in graph.edges:
                adjacency[u, v] = 1.0
            hops = shortest_path(csr_matrix(adjacency), directed=True, unweighted=True)
            for s in range(size):
                for g in range(size):
                    expected = table.unreachable if np.isinf(hops[s, g]) else closed_form(int(hops[s, g]))
                    assert table.lookup(s, g) == pytest.approx(expected, abs=1e-9)
            np.testing.assert_array_equal(np.diag(table.values), np.zeros(size))

    def test_goal_value_is_exactly_zero_and_unreachable_is_the_floor(self):
        nodes = [Node(i, np.array([i + 1.0])) for i in range(3)]
        table = value_iteration(StateGraph(nodes, [(0, 1)], 0.0), GAMMA)
        assert table.lookup(1, 1) == 0.0
        assert table.lookup(0, 1) == pytest.approx(-1.0)
        assert table.lookup(1, 0) == table.unreachable == pytest.approx(-20.0)
        assert table.lookup(0, 2) == table.unreachable

    def test_values_are_monotone_in_path_length(self):
        nodes = [Node(i, np.array([i + 1.0])) for i in range(6)]
        chain = StateGraph(nodes, [(i, i + 1) for i in range(5)], 0.0)
        table = value_iteration(chain, GAMMA)
        row = [table.lookup(s, 5) for s in range(6)]
        assert row == sorted(row)

    def test_invalid_gamma_and_tolerance(self):
        graph = StateGraph([Node(0, np.array([1.0]))], [], 0.0)
        for gamma in (0.0, 1.0, 1.5):
            with pytest.raises(ConfigurationError):
                value_iteration(graph, gamma)
        with pytest.raises(ConfigurationError):
            value_iteration(graph, GAMMA, tol=0.0)

    def test_networkx_path_lengths_agree(self):
        rng = np.random.default_rng(1)
        graph = random_graph(rng, 15)
        table = value_iteration(graph, GAMMA)
        for source, lengths in shortest_path_lengths(graph).items():
            for target, hops in lengths.items():
                assert table.lookup(source, target) == pytest.approx(closed_form(hops), abs=1e-9)


class TestGraphConstruction:

    def test_stitching_through_a_shared_state(self):
        dataset = dataset_from({
            "a": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            "b": [[5.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 5.0]],
        })
        graph = build_graph(dataset, merge_eps=0.01)
        table = value_iteration(graph, GAMMA)
        assert graph.node_of(("a", 2)) == graph.node_of(("b", 2))
        start, goal = graph.node_of(("a", 1)), graph.node_of(("b", 3))
        assert table.lookup(start, goal) > table.unreachable
        assert table.lookup(start, goal) == pytest.approx(closed_form(2), abs=1e-12)

    def test_no_stitching_without_merging(self):
        dataset = dataset_from({
            "a": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            "b": [[5.0, 0.0, 0.0], [0.0, 1.001, 0.0], [0.0, 0.0, 5.0]],
        })
        graph = build_graph(dataset, merge_eps=0.0)
        table = value_iteration(graph, GAMMA)
        assert len(graph) == 6
        assert table.lookup(graph.node_of(("a", 1)), graph.node_of(("b", 3))) == table.unreachable

    def test_every_member_links_to_an_earlier_one_within_merge_eps(self):
        rng = np.random.default_rng(2)
        dataset = dataset_from({f"t{i}": rng.normal(size=(12, 3)) * 0.3 + 1.0 for i in range(4)})
        graph = build_graph(dataset, merge_eps=0.4)
        batch = flatten(dataset)
        for node in graph.nodes:
            rows = sorted(batch.index_of(ref) for ref in node.members)
            for later, row in enumerate(rows[1:], start=1):
                earlier = batch.features[rows[:later]]
                assert pairwise_distances(batch.features[[row]], earlier).min() <= 0.4
        assert sum(len(node.members) for node in graph.nodes) == len(batch)

    def test_single_linkage_chains_but_never_joins_existing_nodes(self):
        chained = build_graph(dataset_from({"a": [[0.0, 1.0], [0.3, 1.0], [0.6, 1.0]]}), merge_eps=0.4)
        assert len(chained) == 1
        # The last step reaches both earlier nodes; it joins the lower id and the two stay apart
        split = build_graph(dataset_from({"a": [[0.0, 1.0]], "b": [[1.0, 1.0], [0.5, 1.0]]}), merge_eps=0.5)
        assert len(split) == 2
        assert split.node_of(("b", 2)) == split.node_of(("a", 1)) == 0

    def test_consecutive_steps_in_one_node_add_no_self_loop(self):
        dataset = dataset_from({"a": [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]})
        graph = build_graph(dataset, merge_eps=0.0)
        assert len(graph) == 2
        assert graph.edges == [(0, 1)]

    def test_default_merge_eps_scales_the_median_gap(self):
        features = np.array([[0.0, 1.0], [1.0, 1.0], [3.0, 1.0]])
        assert default_merge_eps(features, factor=0.05) == pytest.approx(0.05 * 1.0)
        assert default_merge_eps(features[:1]) == 0.0

    def test_nearest_node_prefers_lowest_id_on_ties(self):
        nodes = [Node(0, np.array([1.0, 0.0])), Node(1, np.array([-1.0, 0.0])), Node(2, np.array([0.0, 5.0]))]
        graph = StateGraph(nodes, [], 0.0)
        assert graph.nearest_node([0.0, 0.5]) == 0
        assert graph.nearest_node([-0.9, 0.0]) == 1

    def test_unknown_step_reference(self):
        graph = build_graph(dataset_from({"a": [[1.0, 0.0]]}))
        with pytest.raises(DataError):
            graph.node_of(("b", 1))

    def test_value_for_arbitrary_features(self):
        dataset = dataset_from({"a": [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]})
        graph = build_graph(dataset, merge_eps=0.0)
        table = value_iteration(graph, GAMMA)
        assert value([0.9, 0.1], [-1.1, 0.0], graph, table) == pytest.approx(closed_form(2))


def test_artifact_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    dataset = dataset_from({f"t{i}": rng.normal(size=(6, 3)) + 1.0 for i in range(3)})
    graph = build_graph(dataset, merge_eps=0.5)
    table = value_iteration(graph, GAMMA)
    path = tmp_path / "graph.jsonl"
    save_artifact(graph, table, str(path), {"dataset": "demo.jsonl"})
    loaded_graph, loaded_table, metadata = load_artifact(str(path))
    assert metadata == {"dataset": "demo.jsonl"}
    assert loaded_graph.edges == graph.edges
    assert [n.members for n in loaded_graph.nodes] == [n.members for n in graph.nodes]
    np.testing.assert_array_equal(loaded_graph.representatives, graph.representatives)
    np.testing.assert_array_equal(loaded_table.values, table.values)
    assert loaded_graph.merge_eps == graph.merge_eps


def test_truncated_artifact_is_rejected(tmp_path):
    dataset = dataset_from({"a": [[1.0, 0.0], [0.0, 1.0]]})
    graph = build_graph(dataset, merge_eps=0.0)
    path = tmp_path / "graph.jsonl"
    save_artifact(graph, value_iteration(graph, GAMMA), str(path))
    lines = path.read_text().splitlines()
    path.write_text('\n'.join(lines[:-1]) + '\n')
    with pytest.raises(DataError, match="truncated"):
        load_artifact(str(path))
