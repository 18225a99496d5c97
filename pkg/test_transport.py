import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from dataset import DemoDataset, DemoTrajectory, Step, flatten
from errors import ConfigurationError, DataError
from similarity import knn
from transport import cost_matrix, pairwise_matrix, resolve_threshold, trajectory_filter, wasserstein


def lp_oracle(x, y):
    """Transport LP solved independently with HiGHS."""
    rows, cols = x.shape[0], y.shape[0]
    cost = np.array([[float(np.sum((a - b) ** 2)) for b in y] for a in x])
    equalities = []
    bounds = []
    for i in range(rows):
        row = np.zeros((rows, cols))
        row[i, :] = 1.0
        equalities.append(row.ravel())
        bounds.append(1.0 / rows)
    for j in range(cols):
        col = np.zeros((rows, cols))
        col[:, j] = 1.0
        equalities.append(col.ravel())
        bounds.append(1.0 / cols)
    result = linprog(cost.ravel(), A_eq=np.array(equalities), b_eq=np.array(bounds),
                     bounds=(0, None), method='highs')
    assert result.success
    return result.fun


def permutation_oracle(x, y):
    """Equal lengths and uniform weights: some permutation is optimal."""
    n = x.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, math.fsum(float(np.sum((x[i] - y[j]) ** 2)) for i, j in enumerate(perm)) / n)
    return best


def dataset_from(features_by_traj):
    return DemoDataset([DemoTrajectory(name, [Step(name, t, row, 0) for t, row in enumerate(rows, start=1)])
                        for name, rows in features_by_traj.items()])


class TestWasserstein:

    def test_matches_lp_oracle_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(220):
            dim = int(rng.integers(1, 5))
            x = rng.normal(size=(int(rng.integers(1, 6)), dim))
            y = rng.normal(size=(int(rng.integers(1, 6)), dim))
            assert wasserstein(x, y).value == pytest.approx(lp_oracle(x, y), abs=1e-7)

    def test_matches_permutation_oracle_on_square_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(1, 6))
            x, y = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
            assert wasserstein(x, y).value == pytest.approx(permutation_oracle(x, y), abs=1e-9)

    def test_networkx_backend_agrees_with_pot(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            x = rng.normal(size=(int(rng.integers(1, 6)), 3))
            y = rng.normal(size=(int(rng.integers(1, 6)), 3))
            assert wasserstein(x, y, solver='networkx').value == \
                pytest.approx(wasserstein(x, y, solver='pot').value, abs=1e-7)

    def test_identity_and_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.normal(size=(int(rng.integers(1, 6)), 4))
            y = rng.normal(size=(int(rng.integers(1, 6)), 4))
            assert wasserstein(x, x).value <= 1e-9
            assert wasserstein(x, y).value == pytest.approx(wasserstein(y, x).value, abs=1e-9)

    def test_plan_has_uniform_marginals(self):
        rng = np.random.default_rng(4)
        x, y = rng.normal(size=(3, 2)), rng.normal(size=(5, 2))
        plan = wasserstein(x, y).plan
        np.testing.assert_allclose(plan.sum(axis=1), np.full(3, 1 / 3), atol=1e-12)
        np.testing.assert_allclose(plan.sum(axis=0), np.full(5, 1 / 5), atol=1e-12)
        assert np.all(plan >= 0)

    def test_single_points_reduce_to_ground_cost(self):
        assert wasserstein([[0.0, 0.0]], [[3.0, 4.0]]).value == pytest.approx(25.0)

    def test_cosine_ground_metric(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert wasserstein(x, x, metric='cosine').value == pytest.approx(0.0, abs=1e-12)
        assert wasserstein([[1.0, 0.0]], [[0.0, 1.0]], metric='cosine').value == pytest.approx(1.0)

    def test_invalid_arguments(self):
        with pytest.raises(DataError, match="dimension"):
            wasserstein([[1.0, 0.0]], [[1.0, 0.0, 0.0]])
        with pytest.raises(DataError, match="empty"):
            wasserstein(np.zeros((0, 2)), [[1.0, 0.0]])
        with pytest.raises(ConfigurationError):
            wasserstein([[1.0]], [[2.0]], solver='sinkhorn')
        with pytest.raises(ConfigurationError):
            cost_matrix(np.ones((1, 2)), np.ones((1, 2)), metric='manhattan')


class TestThreshold:

    def test_absolute_override_wins(self):
        assert resolve_threshold([1.0, 2.0, 3.0], 0.5, absolute=0.25) == 0.25

    def test_quantile_of_candidate_distances(self):
        assert resolve_threshold([1.0, 2.0, 3.0], 0.5) == pytest.approx(2.0)
        assert resolve_threshold([1.0, 2.0, 3.0], 1.0) == pytest.approx(3.0)

    def test_empty_candidate_list_keeps_everything(self):
        assert resolve_threshold([], 0.5) == math.inf

    def test_quantile_out_of_range(self):
        with pytest.raises(ConfigurationError):
            resolve_threshold([1.0], 1.5)


def test_filter_keeps_candidates_within_threshold():
    dataset = dataset_from({
        "near": [[1.0, 0.0], [1.0, 0.1]],
        "far": [[0.0, 5.0], [1.0, 0.1]],
    })
    live = np.array([[1.0, 0.0], [1.0, 0.1]])
    candidates = knn(live[-1], flatten(dataset), k=4)
    kept = trajectory_filter(candidates, live, dataset, threshold=0.01)
    refs = {scored.neighbor.ref for scored in kept}
    assert ("near", 2) in refs
    assert ("far", 2) not in refs
    assert all(scored.distance <= 0.01 for scored in kept)


def test_pairwise_matrix_is_symmetric_with_zero_diagonal():
    rng = np.random.default_rng(5)
    dataset = dataset_from({f"t{i}": rng.normal(size=(int(rng.integers(1, 5)), 3)) + 0.1 for i in range(3)})
    matrix = pairwise_matrix(dataset)
    assert matrix.shape == (3, 3)
    np.testing.assert_array_equal(np.diag(matrix), np.zeros(3))
    np.testing.assert_array_equal(matrix, matrix.T)
