"""
Exact Wasserstein distance between a live trajectory and expert prefixes, and
the trajectory-similarity threshold filter built on it.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import networkx as nx
import numpy as np
import ot
from scipy.spatial.distance import cdist

from dataset import DemoDataset
from errors import ConfigurationError, DataError, InvariantError
from similarity import CandidateSet, Neighbor

logger = logging.getLogger('demobot')

GROUND_METRICS = ('sqeuclidean', 'cosine')
SOLVERS = ('pot', 'networkx')
# Integer cost resolution for the networkx backend
COST_QUANTUM = 2 ** 40


@dataclass(frozen=True)
class TrajectoryDistance:
    value: float
    plan: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ScoredCandidate:
    neighbor: Neighbor
    distance: float


def trajectory_features(trajectory) -> np.ndarray:
    """(n, D) feature matrix of a DemoTrajectory, LiveTrajectory or array."""
    features = getattr(trajectory, 'features', trajectory)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DataError("trajectory is empty")
    return features


def ground_cost(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.dot(diff, diff))


def cost_matrix(live: np.ndarray, prefix: np.ndarray, metric: str = 'sqeuclidean') -> np.ndarray:
    if live.shape[1] != prefix.shape[1]:
        raise DataError(f"dimension mismatch: {live.shape[1]} vs {prefix.shape[1]}")
    if metric == 'sqeuclidean':
        # Exact per-entry evaluation keeps W(tau, tau) at exactly zero
        diff = live[:, None, :] - prefix[None, :, :]
        return np.einsum('ijk,ijk->ij', diff, diff)
    if metric == 'cosine':
        return np.maximum(cdist(live, prefix, metric='cosine'), 0.0)
    raise ConfigurationError(f"unknown ground metric '{metric}', expected one of {GROUND_METRICS}")


def _solve_pot(rows: int, cols: int, scale: int, cost: np.ndarray) -> np.ndarray:
    supply = np.full(rows, scale // rows, dtype=np.float64)
    demand = np.full(cols, scale // cols, dtype=np.float64)
    plan, log = ot.emd(supply, demand, cost, numItermax=1_000_000, log=True)
    if log.get('warning'):
        raise InvariantError(f"network simplex did not converge: {log['warning']}")
    return plan


def _solve_networkx(rows: int, cols: int, scale: int, cost: np.ndarray) -> np.ndarray:
    top = float(cost.max())
    quantum = COST_QUANTUM / top if top > 0 else 1.0
    graph = nx.DiGraph()
    for i in range(rows):
        graph.add_node(('r', i), demand=-(scale // rows))
    for j in range(cols):
        graph.add_node(('c', j), demand=scale // cols)
    for i in range(rows):
        for j in range(cols):
            graph.add_edge(('r', i), ('c', j), weight=int(round(cost[i, j] * quantum)))
    _, flow = nx.network_simplex(graph)
    plan = np.zeros((rows, cols))
    for i in range(rows):
        for (_, j), mass in flow[('r', i)].items():
            plan[i, j] = mass
    return plan


def wasserstein(live, expert_prefix, metric: str = 'sqeuclidean', solver: str = 'pot',
                keep_plan: bool = True) -> TrajectoryDistance:
    """
    Exact optimal-transport distance with uniform marginals 1/t over the live
    states and 1/n over the expert prefix.

    Supplies are scaled by lcm(t, n) to integers, solved exactly with the
    network simplex, and the plan is rescaled; the value is always evaluated
    on the unquantised float costs.
    """
    x = trajectory_features(live)
    y = trajectory_features(expert_prefix)
    rows, cols = x.shape[0], y.shape[0]
    cost = cost_matrix(x, y, metric)
    if not np.all(np.isfinite(cost)):
        raise DataError("cost matrix contains non-finite entries")
    scale = math.lcm(rows, cols)
    if solver == 'pot':
        flow = _solve_pot(rows, cols, scale, cost)
    elif solver == 'networkx':
        flow = _solve_networkx(rows, cols, scale, cost)
    else:
        raise ConfigurationError(f"unknown transport solver '{solver}', expected one of {SOLVERS}")
    plan = flow / scale
    value = max(float(np.sum(plan * cost)), 0.0)
    return TrajectoryDistance(value, plan if keep_plan else None)


def resolve_threshold(distances: Sequence[float], quantile: float = 0.5,
                      absolute: Optional[float] = None) -> float:
    """Absolute override if given, else the q-quantile of the candidates' distances."""
    if absolute is not None:
        return float(absolute)
    if not 0.0 <= quantile <= 1.0:
        raise ConfigurationError(f"threshold quantile {quantile} outside [0, 1]")
    if len(distances) == 0:
        return math.inf
    return float(np.quantile(np.asarray(distances, dtype=np.float64), quantile))


def trajectory_filter(candidates: CandidateSet, live, dataset: DemoDataset, threshold: float,
                      metric: str = 'sqeuclidean', solver: str = 'pot') -> List[ScoredCandidate]:
    """Candidates whose expert prefix lies within `threshold` of the live trajectory."""
    live_features = trajectory_features(live)
    kept = []
    for neighbor in candidates.neighbors:
        traj_id, t = neighbor.ref
        prefix = dataset.trajectory(traj_id).features[:t]
        distance = wasserstein(live_features, prefix, metric, solver, keep_plan=False).value
        if distance <= threshold:
            kept.append(ScoredCandidate(neighbor, distance))
    logger.debug(f"Trajectory filter kept {len(kept)}/{len(candidates.neighbors)} at threshold {threshold:.6g}")
    return kept


def pairwise_matrix(dataset: DemoDataset, metric: str = 'sqeuclidean', solver: str = 'pot') -> np.ndarray:
    """Symmetric matrix of distances between whole trajectories, in traj_id order."""
    ids = dataset.traj_ids
    size = len(ids)
    matrix = np.zeros((size, size))
    for i in range(size):
        for j in range(i + 1, size):
            value = wasserstein(dataset.trajectory(ids[i]).features,
                                dataset.trajectory(ids[j]).features,
                                metric, solver, keep_plan=False).value
            matrix[i, j] = matrix[j, i] = value
    return matrix
