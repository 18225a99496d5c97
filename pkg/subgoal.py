import logging
import math
from dataclasses import dataclass, field
from typing import AbstractSet, Any, Dict, List, Optional

import numpy as np

from dataset import DemoDataset, RetrievalBatch, StepRef, as_feature
from errors import DataError, InvariantError
from reachability import StateGraph, ValueTable, pairwise_distances
from similarity import knn
from transport import resolve_threshold, wasserstein


class LiveTrajectory:
    """The robot's visited states so far, oldest first."""

    def __init__(self, feature_dim: int, states=None):
        self.feature_dim = feature_dim
        self._states: List[np.ndarray] = []
        for state in (states if states is not None else []):
            self.append(state)

    def append(self, feature) -> None:
        self._states.append(as_feature(feature, self.feature_dim))

    def __len__(self) -> int:
        return len(self._states)

    @property
    def last(self) -> np.ndarray:
        if not self._states:
            raise DataError("live trajectory is empty")
        return self._states[-1]

    @property
    def features(self) -> np.ndarray:
        if not self._states:
            raise DataError("live trajectory is empty")
        return np.stack(self._states)

    def recent(self, cap: Optional[int]) -> np.ndarray:
        """The most recent `cap` states as an (n, D) matrix."""
        if not self._states:
            raise DataError("live trajectory is empty")
        states = self._states if not cap else self._states[-cap:]
        return np.stack(states)


@dataclass(frozen=True)
class CandidateAudit:
    ref: StepRef
    index: int
    node: int
    similarity: float
    distance: float
    value: float
    filtered: bool       # passed the trajectory filter
    excluded: bool       # at or behind the live position on its demonstration
    position: int = 0    # step the live state has reached on the candidate's demonstration

    @property
    def admissible(self) -> bool:
        return self.filtered and not self.excluded

    def to_record(self) -> Dict[str, Any]:
        return {
            "ref": [self.ref[0], self.ref[1]],
            "node": self.node,
            "similarity": self.similarity,
            "distance": self.distance,
            "value": self.value,
            "filtered": self.filtered,
            "excluded": self.excluded,
            "position": self.position,
        }


@dataclass(frozen=True)
class SubgoalDecision:
    chosen: StepRef
    candidates: List[CandidateAudit]
    fallback_used: bool
    threshold: float
    live_node: int
    step: int = 0

    @property
    def chosen_audit(self) -> CandidateAudit:
        for audit in self.candidates:
            if audit.ref == self.chosen:
                return audit
        raise InvariantError(f"chosen sub-goal {self.chosen!r} missing from its audit list")

    @property
    def survivors(self) -> List[CandidateAudit]:
        return [audit for audit in self.candidates if audit.admissible]

    @property
    def fallback_pool(self) -> List[CandidateAudit]:
        """Candidates ahead of the live state regardless of the filter, else all of them."""
        return [audit for audit in self.candidates if not audit.excluded] or list(self.candidates)

    def to_record(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "chosen": [self.chosen[0], self.chosen[1]],
            "fallback_used": self.fallback_used,
            "threshold": self.threshold if math.isfinite(self.threshold) else None,
            "live_node": self.live_node,
            "candidates": [audit.to_record() for audit in self.candidates],
        }


def ranking_key(audit: CandidateAudit, use_value: bool = True):
    """Sort key for the argmax: value, then similarity, then lower (traj_id, t)."""
    return (-audit.value if use_value else 0.0, -audit.similarity, audit.ref)


def live_position(current: np.ndarray, chain: np.ndarray, metric: str = 'euclidean') -> int:
    """
    Step the live state has reached along one demonstration (1-based).

    The nearest step counts as reached unless the live state still lies on its
    near side: closer to the previous step than to the next one, or, for the
    final step, behind it along the last transition. The first step always
    counts as reached.
    """
    distances = pairwise_distances(current[None, :], chain, metric)[0]
    nearest = int(np.argmin(distances))
    if nearest == 0:
        return 1
    if nearest == len(chain) - 1:
        short = float(np.dot(current - chain[nearest], chain[nearest] - chain[nearest - 1])) < 0.0
    else:
        short = distances[nearest - 1] < distances[nearest + 1]
    return nearest if short else nearest + 1


@dataclass
class SubgoalSelector:
    """
    Sub-goal retrieval over a fixed demonstration set: nearest neighbours of
    the current state, Wasserstein filtering of their expert prefixes against
    the live history, and an argmax of forward reachability among survivors.

    Each candidate is judged against the live state's position on its own
    demonstration: steps at or behind that position are excluded, and V is
    taken from the node of that position. Holds no mutable state between calls.
    """
    dataset: DemoDataset
    batch: RetrievalBatch
    graph: StateGraph
    table: ValueTable
    k: int = 10
    threshold_quantile: float = 0.5
    threshold_absolute: Optional[float] = None
    history_cap: int = 50
    ground_metric: str = 'sqeuclidean'
    solver: str = 'pot'
    use_filter: bool = True
    use_value: bool = True
    logger: Any = field(default=None, repr=False)

    def __post_init__(self):
        if self.logger is None:
            self.logger = logging.getLogger('demobot')

    @classmethod
    def from_config(cls, dataset, batch, graph, table, config: Dict[str, Any], logger=None) -> 'SubgoalSelector':
        transport = config['transport']
        subgoal = config['subgoal']
        return cls(dataset, batch, graph, table,
                   k=config['similarity']['k'],
                   threshold_quantile=transport['threshold_quantile'],
                   threshold_absolute=transport['threshold_absolute'],
                   history_cap=subgoal['history_cap'],
                   ground_metric=transport['ground_metric'],
                   solver=transport['solver'],
                   use_filter=subgoal['use_filter'],
                   use_value=subgoal['use_value'],
                   logger=logger)

    def select(self, live: LiveTrajectory, blocked: AbstractSet[StepRef] = frozenset()) -> SubgoalDecision:
        """`blocked` steps are treated like visited ones and never chosen outside the fallback."""
        if len(self.batch) == 0:
            raise DataError("retrieval batch is empty")
        current = live.last
        history = live.recent(self.history_cap)
        candidates = knn(current, self.batch, self.k)
        live_node = self.graph.nearest_node(current)

        positions: Dict[str, int] = {}
        scored = []
        for neighbor in candidates.neighbors:
            traj_id, t = neighbor.ref
            chain = self.dataset.trajectory(traj_id).features
            if traj_id not in positions:
                positions[traj_id] = live_position(current, chain, self.graph.metric)
            reached = positions[traj_id]
            here = self.graph.node_of((traj_id, reached))
            node = self.graph.node_of(neighbor.ref)
            distance = wasserstein(history, chain[:t], self.ground_metric, self.solver, keep_plan=False).value
            excluded = t <= reached or node == here or neighbor.ref in blocked
            scored.append((neighbor, node, distance, self.table.lookup(here, node), excluded, reached))

        if self.use_filter:
            threshold = resolve_threshold([s[2] for s in scored], self.threshold_quantile,
                                          self.threshold_absolute)
        else:
            threshold = math.inf
        audits = [CandidateAudit(neighbor.ref, neighbor.index, node, neighbor.similarity, distance, v,
                                 filtered=distance <= threshold, excluded=excluded, position=reached)
                  for neighbor, node, distance, v, excluded, reached in scored]

        survivors = [audit for audit in audits if audit.admissible]
        if survivors:
            chosen = min(survivors, key=lambda audit: ranking_key(audit, self.use_value))
            fallback = False
        else:
            ahead = [audit for audit in audits if not audit.excluded]
            chosen = min(ahead or audits, key=lambda audit: ranking_key(audit, False))
            fallback = True
            self.logger.warning(f"Sub-goal fallback at live length {len(live)}: no admissible candidate "
                                f"among {len(audits)}, using most similar {chosen.ref}")
        self.logger.debug(f"Sub-goal {chosen.ref} (node {chosen.node}, V={chosen.value:.4f}, "
                          f"W={chosen.distance:.4g}) from step {chosen.position} of {chosen.ref[0]}")
        return SubgoalDecision(chosen.ref, audits, fallback, threshold, live_node, len(live))


def select_subgoal(live: LiveTrajectory, batch: RetrievalBatch, dataset: DemoDataset, graph: StateGraph,
                   table: ValueTable, params: Optional[Dict[str, Any]] = None) -> SubgoalDecision:
    """One-shot selection; `params` takes SubgoalSelector field names (k, threshold_quantile, ...)."""
    return SubgoalSelector(dataset, batch, graph, table, **(params or {})).select(live)
