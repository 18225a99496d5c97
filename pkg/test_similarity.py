import numpy as np
import pytest

from dataset import DemoDataset, DemoTrajectory, Step, flatten
from errors import DataError
from similarity import cosine_similarities, cosine_similarity, expert_prefix, knn


def dataset_from(features_by_traj):
    trajs = []
    for traj_id, rows in features_by_traj.items():
        trajs.append(DemoTrajectory(traj_id, [Step(traj_id, t, row, 0) for t, row in enumerate(rows, start=1)]))
    return DemoDataset(trajs)


class TestCosine:

    def test_cosine_of_parallel_and_orthogonal_vectors(self):
        assert cosine_similarity([1.0, 0.0], [3.0, 0.0]) == pytest.approx(1.0)
        assert cosine_similarity([1.0, 0.0], [0.0, 2.0]) == pytest.approx(0.0)
        assert cosine_similarity([1.0, 1.0], [-1.0, -1.0]) == pytest.approx(-1.0)

    def test_cosine_is_scale_invariant(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=8), rng.normal(size=8)
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(5.0 * a, 0.25 * b), abs=1e-12)

    def test_dimension_mismatch_and_zero_vector(self):
        with pytest.raises(DataError):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])
        with pytest.raises(DataError, match="zero norm"):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_vectorised_matches_pairwise(self):
        rng = np.random.default_rng(1)
        dataset = dataset_from({f"t{i}": rng.normal(size=(4, 6)) + 0.1 for i in range(3)})
        batch = flatten(dataset)
        query = rng.normal(size=6)
        sims = cosine_similarities(query, batch)
        for row, value in zip(batch.features, sims):
            assert value == pytest.approx(cosine_similarity(query, row), abs=1e-12)


class TestKnn:

    def test_neighbours_sorted_by_descending_similarity(self):
        rng = np.random.default_rng(2)
        dataset = dataset_from({f"t{i}": rng.normal(size=(5, 4)) + 0.1 for i in range(4)})
        batch = flatten(dataset)
        result = knn(rng.normal(size=4), batch, k=7)
        sims = [n.similarity for n in result.neighbors]
        assert len(result.neighbors) == 7
        assert sims == sorted(sims, reverse=True)

    def test_ties_break_by_traj_id_then_t(self):
        dataset = dataset_from({
            "b": [[1.0, 0.0], [2.0, 0.0]],
            "a": [[0.0, 1.0], [3.0, 0.0]],
        })
        result = knn([1.0, 0.0], flatten(dataset), k=3)
        assert [n.ref for n in result.neighbors] == [("a", 2), ("b", 1), ("b", 2)]

    def test_k_larger_than_batch_returns_everything(self):
        dataset = dataset_from({"a": [[1.0, 0.0], [0.0, 1.0]]})
        assert len(knn([1.0, 1.0], flatten(dataset), k=10).neighbors) == 2

    def test_invalid_k(self):
        dataset = dataset_from({"a": [[1.0, 0.0]]})
        with pytest.raises(DataError):
            knn([1.0, 0.0], flatten(dataset), k=0)

    def test_exact_member_is_its_own_nearest_neighbour(self):
        rng = np.random.default_rng(3)
        dataset = dataset_from({"a": rng.normal(size=(6, 5)) + 0.2})
        batch = flatten(dataset)
        nearest = knn(batch.features[4], batch, k=1).neighbors[0]
        assert nearest.ref == ("a", 5)
        assert nearest.similarity == pytest.approx(1.0)


def test_expert_prefix_stops_at_the_referenced_step():
    dataset = dataset_from({"a": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]})
    prefix = expert_prefix(("a", 2), dataset)
    assert len(prefix) == 2
    np.testing.assert_array_equal(prefix.features, [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DataError):
        expert_prefix(("a", 4), dataset)
