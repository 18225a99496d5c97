import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from dataset import DemoDataset, DemoTrajectory, RetrievalBatch, StepRef, as_feature
from errors import DataError

logger = logging.getLogger('demobot')


@dataclass(frozen=True)
class Neighbor:
    index: int          # row in the retrieval batch
    ref: StepRef
    similarity: float


@dataclass(frozen=True)
class CandidateSet:
    query: np.ndarray
    neighbors: List[Neighbor]
    k: int


def cosine_similarity(a, b) -> float:
    """(a . b) / (|a| |b|); both vectors must be finite with non-zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    a = as_feature(a)
    b = as_feature(b)
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def cosine_similarities(query, batch: RetrievalBatch) -> np.ndarray:
    """Cosine similarity of the query against every batch row."""
    query = as_feature(query)
    if query.shape[0] != batch.features.shape[1]:
        raise DataError(f"dimension mismatch: query {query.shape[0]} vs batch {batch.features.shape[1]}")
    return (batch.features @ query) / (batch.norms * np.linalg.norm(query))


def knn(query, batch: RetrievalBatch, k: int = 10) -> CandidateSet:
    """
    The k batch entries most similar to the query, sorted by descending
    similarity. Equal similarities are ordered by (traj_id, t); since the batch
    is laid out in that order, a stable sort on the negated similarity
    implements the tie-break directly.
    """
    if len(batch) == 0:
        raise DataError("retrieval batch is empty")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    sims = cosine_similarities(query, batch)
    order = np.argsort(-sims, kind='stable')[:k]
    neighbors = [Neighbor(int(i), batch.refs[i], float(sims[i])) for i in order]
    return CandidateSet(np.asarray(query, dtype=np.float64), neighbors, k)


def expert_prefix(ref: StepRef, dataset: DemoDataset) -> DemoTrajectory:
    """The demonstration holding `ref`, terminated at that step (inclusive)."""
    traj_id, t = ref
    dataset.step(traj_id, t)
    return dataset.trajectory(traj_id).prefix(t)
