"""
Goal-conditioned value function over the demonstration state graph.

Steps whose features lie within merge_eps of each other share a node; edges
follow consecutive demonstration steps, so merged nodes stitch trajectories
together. With reward -1 per step and termination at the goal, the exact
value of reaching g from s on this deterministic graph is

    V(s, g) = -(1 - gamma**d) / (1 - gamma)

with d the shortest-path edge count, and -1 / (1 - gamma) when g is
unreachable.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import networkx as nx
import numpy as np
from scipy.spatial.distance import cdist

from dataset import DemoDataset, StepRef, as_feature, flatten
from errors import ConfigurationError, DataError, InvariantError

logger = logging.getLogger('demobot')

GRAPH_FORMAT = 'demobot-graph'
GRAPH_VERSION = 1
GRAPH_METRICS = ('euclidean', 'cosine')


@dataclass
class Node:
    node_id: int
    representative: np.ndarray
    members: List[StepRef] = field(default_factory=list)

    @property
    def trajectories(self) -> List[str]:
        return sorted({traj_id for traj_id, _ in self.members})


class StateGraph:

    def __init__(self, nodes: List[Node], edges, merge_eps: float, metric: str = 'euclidean'):
        if metric not in GRAPH_METRICS:
            raise ConfigurationError(f"unknown graph metric '{metric}', expected one of {GRAPH_METRICS}")
        self.nodes = nodes
        self.merge_eps = float(merge_eps)
        self.metric = metric
        self.digraph = nx.DiGraph()
        self.digraph.add_nodes_from(range(len(nodes)))
        self.digraph.add_edges_from(sorted(set(edges)))
        self._node_of: Dict[StepRef, int] = {}
        for node in nodes:
            for ref in node.members:
                if ref in self._node_of:
                    raise InvariantError(f"step {ref!r} belongs to two nodes")
                self._node_of[ref] = node.node_id
        self.representatives = np.stack([node.representative for node in nodes]) if nodes \
            else np.zeros((0, 0))
        self.representatives.flags.writeable = False

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def edges(self) -> List[Tuple[int, int]]:
        return sorted(self.digraph.edges())

    def node_of(self, ref: StepRef) -> int:
        try:
            return self._node_of[ref]
        except KeyError:
            raise DataError(f"step {ref!r} is not part of the graph") from None

    def nearest_node(self, feature) -> int:
        """Closest node representative under the graph metric; lowest id on ties."""
        if not self.nodes:
            raise DataError("state graph is empty")
        feature = as_feature(feature, self.representatives.shape[1])
        distances = pairwise_distances(feature[None, :], self.representatives, self.metric)[0]
        return int(np.argmin(distances))


@dataclass(frozen=True)
class ValueTable:
    gamma: float
    values: np.ndarray
    iterations: int = 0

    @property
    def unreachable(self) -> float:
        return -1.0 / (1.0 - self.gamma)

    def lookup(self, s_node: int, g_node: int) -> float:
        return float(self.values[s_node, g_node])


def pairwise_distances(a: np.ndarray, b: np.ndarray, metric: str = 'euclidean') -> np.ndarray:
    if metric == 'euclidean':
        return cdist(a, b, metric='euclidean')
    if metric == 'cosine':
        distances = cdist(a, b, metric='cosine')
        # Rounding leaves identical directions a few ulps away from zero
        distances[np.abs(distances) < 1e-12] = 0.0
        return np.maximum(distances, 0.0)
    raise ConfigurationError(f"unknown graph metric '{metric}', expected one of {GRAPH_METRICS}")


def default_merge_eps(features: np.ndarray, metric: str = 'euclidean', factor: float = 0.05,
                      distances: Optional[np.ndarray] = None) -> float:
    """factor x median nearest-neighbour distance among all demonstration features."""
    if features.shape[0] < 2:
        return 0.0
    if distances is None:
        distances = pairwise_distances(features, features, metric)
    distances = distances.copy()
    np.fill_diagonal(distances, np.inf)
    return float(factor * np.median(distances.min(axis=1)))


def build_graph(dataset: DemoDataset, merge_eps: Optional[float] = None, metric: str = 'euclidean',
                eps_factor: float = 0.05) -> StateGraph:
    """
    Greedy single-linkage merge in flatten order: each step joins the
    lowest-id existing node holding any member within merge_eps of it, or
    opens a new node. Existing nodes are never merged with each other, so
    every member after a node's first lies within merge_eps of an earlier
    member of the same node.
    """
    batch = flatten(dataset)
    features = batch.features
    distances = pairwise_distances(features, features, metric)
    if merge_eps is None:
        merge_eps = default_merge_eps(features, metric, eps_factor, distances)
    if merge_eps < 0:
        raise ConfigurationError(f"merge_eps must be >= 0, got {merge_eps}")

    count = len(batch)
    labels = np.full(count, -1, dtype=np.int64)
    sizes: List[int] = []
    for i in range(count):
        within = np.flatnonzero(distances[i, :i] <= merge_eps)
        if within.size:
            chosen = int(labels[within].min())
        else:
            chosen = len(sizes)
            sizes.append(0)
        labels[i] = chosen
        sizes[chosen] += 1

    nodes = []
    for node_id in range(len(sizes)):
        rows = np.flatnonzero(labels == node_id)
        nodes.append(Node(node_id, features[rows].mean(axis=0), [batch.refs[r] for r in rows]))

    edges = set()
    for i in range(count - 1):
        (traj_a, _), (traj_b, _) = batch.refs[i], batch.refs[i + 1]
        if traj_a == traj_b and labels[i] != labels[i + 1]:
            edges.add((int(labels[i]), int(labels[i + 1])))

    graph = StateGraph(nodes, edges, merge_eps, metric)
    stitched = sum(1 for node in nodes if len(node.trajectories) > 1)
    logger.info(f"Built state graph: {len(nodes)} nodes from {count} steps, {len(edges)} edges, "
                f"{stitched} stitched nodes, merge_eps={merge_eps:.6g}")
    return graph


def value_iteration(graph: StateGraph, gamma: float = 0.95, tol: float = 1e-10,
                    max_iterations: Optional[int] = None) -> ValueTable:
    """
    Synchronous Bellman iteration of V(s, g) = -1 + gamma * max_{s'} V(s', g)
    over all goals at once, with V(g, g) = 0. Nodes without successors keep the
    unreachable value.
    """
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError(f"gamma must lie in (0, 1), got {gamma}")
    if tol <= 0:
        raise ConfigurationError(f"tol must be > 0, got {tol}")
    size = len(graph)
    floor = -1.0 / (1.0 - gamma)
    values = np.full((size, size), floor)
    np.fill_diagonal(values, 0.0)

    edges = np.asarray(graph.edges, dtype=np.int64).reshape(-1, 2)
    iterations = 0
    if edges.size:
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        sources, targets = edges[order, 0], edges[order, 1]
        heads, starts = np.unique(sources, return_index=True)
        cap = max_iterations if max_iterations is not None else 10 * size + 1000
        diagonal = np.arange(size)
        while True:
            iterations += 1
            best = np.maximum.reduceat(values[targets], starts, axis=0)
            updated = values.copy()
            updated[heads] = -1.0 + gamma * best
            np.maximum(updated, floor, out=updated)
            updated[diagonal, diagonal] = 0.0
            delta = float(np.max(np.abs(updated - values)))
            values = updated
            if delta <= tol:
                break
            if iterations >= cap:
                raise InvariantError(f"value iteration did not converge after {iterations} sweeps "
                                     f"(last change {delta:.3g})")
    values.flags.writeable = False
    logger.info(f"Value iteration converged after {iterations} sweeps over {size} nodes (gamma={gamma})")
    return ValueTable(gamma, values, iterations)


def value(s, g, graph: StateGraph, table: ValueTable) -> float:
    """V(s, g) for arbitrary features, via their nearest graph nodes."""
    return table.lookup(graph.nearest_node(s), graph.nearest_node(g))


def shortest_path_lengths(graph: StateGraph) -> Dict[int, Dict[int, int]]:
    return {source: dict(lengths) for source, lengths in nx.all_pairs_shortest_path_length(graph.digraph)}


def save_artifact(graph: StateGraph, table: ValueTable, path: str, metadata: Optional[dict] = None) -> None:
    """
    Newline-delimited JSON: a header, one record per node (representative and
    members), one per edge, then one row of the dense value matrix per line.
    """
    header = {
        "format": GRAPH_FORMAT,
        "version": GRAPH_VERSION,
        "node_count": len(graph),
        "edge_count": len(graph.edges),
        "feature_dim": int(graph.representatives.shape[1]),
        "merge_eps": graph.merge_eps,
        "metric": graph.metric,
        "gamma": table.gamma,
        "iterations": table.iterations,
        "metadata": metadata or {},
    }
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(header, sort_keys=True) + '\n')
        for node in graph.nodes:
            f.write(json.dumps({"node": node.node_id,
                                "representative": node.representative.tolist(),
                                "members": [[traj_id, t] for traj_id, t in node.members]}) + '\n')
        for u, v in graph.edges:
            f.write(json.dumps({"edge": [u, v]}) + '\n')
        for i in range(len(graph)):
            f.write(json.dumps({"row": i, "values": table.values[i].tolist()}) + '\n')
    logger.info(f"Saved graph artifact with {len(graph)} nodes to {path}")


def load_artifact(path: str) -> Tuple[StateGraph, ValueTable, dict]:
    try:
        with open(path, encoding='utf-8') as f:
            lines = f.read().splitlines()
    except FileNotFoundError as e:
        raise DataError("file not found", path=path) from e
    try:
        header = json.loads(lines[0])
    except (IndexError, ValueError) as e:
        raise DataError("malformed header", path=path, line=1) from e
    if not isinstance(header, dict) or header.get('format') != GRAPH_FORMAT:
        raise DataError(f"not a {GRAPH_FORMAT} file", path=path, line=1)
    size = header['node_count']
    nodes: List[Node] = []
    edges = []
    values = np.empty((size, size))
    rows_seen = 0
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
            if 'node' in record:
                if record['node'] != len(nodes):
                    raise DataError("node ids out of order", path=path, line=lineno)
                members = [(traj_id, int(t)) for traj_id, t in record['members']]
                nodes.append(Node(record['node'], np.asarray(record['representative'], dtype=np.float64),
                                  members))
            elif 'edge' in record:
                u, v = record['edge']
                edges.append((int(u), int(v)))
            elif 'row' in record:
                row = np.asarray(record['values'], dtype=np.float64)
                if record['row'] != rows_seen or row.shape != (size,):
                    raise DataError("value rows out of order or wrong width", path=path, line=lineno)
                values[rows_seen] = row
                rows_seen += 1
            else:
                raise DataError("unrecognised record", path=path, line=lineno)
        except (ValueError, KeyError, TypeError) as e:
            if isinstance(e, DataError):
                raise
            raise DataError(f"malformed record ({e})", path=path, line=lineno) from e
    if len(nodes) != size or rows_seen != size or len(edges) != header['edge_count']:
        raise DataError("artifact is truncated", path=path)
    values.flags.writeable = False
    graph = StateGraph(nodes, edges, header['merge_eps'], header['metric'])
    table = ValueTable(header['gamma'], values, header.get('iterations', 0))
    return graph, table, header.get('metadata', {})
