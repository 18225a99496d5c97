"""
Demonstration data types, the newline-delimited dataset file format and the
flattened retrieval batch.

File layout (UTF-8, one JSON object per line):

    {"format": "demobot-dataset", "version": 1, "feature_dim": D,
     "action_count": 14, "trajectories": T, "steps": N, "metadata": {...}}
    {"traj_id": "...", "t": 1, "task_tag": "...", "action": 0, "feature": [...]}
    ...

Step records are grouped by trajectory and ordered by t. Floats are written in
shortest round-trip form so load(save(d)) reproduces every feature bit for bit.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DataError

FORMAT_NAME = 'demobot-dataset'
FORMAT_VERSION = 1
ACTION_COUNT = 14

logger = logging.getLogger('demobot')

StepRef = Tuple[str, int]


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def as_feature(values, dim: Optional[int] = None) -> np.ndarray:
    """Validates a feature vector: finite entries, non-zero norm and (optionally) dimension."""
    feature = np.asarray(values, dtype=np.float64)
    if feature.ndim != 1:
        raise DataError(f"feature must be one-dimensional, got shape {feature.shape}")
    if dim is not None and feature.shape[0] != dim:
        raise DataError(f"feature dimension {feature.shape[0]} does not match {dim}")
    if not np.all(np.isfinite(feature)):
        raise DataError("feature contains non-finite entries")
    if not np.any(feature):
        raise DataError("feature has zero norm")
    return feature


@dataclass(eq=False)
class Step:
    traj_id: str
    t: int
    feature: np.ndarray
    action: int

    def __post_init__(self):
        if isinstance(self.t, bool) or not isinstance(self.t, (int, np.integer)) or self.t < 1:
            raise DataError(f"timestep must be an integer >= 1, got {self.t!r}", traj_id=self.traj_id)
        if isinstance(self.action, bool) or not isinstance(self.action, (int, np.integer)) \
                or not 0 <= self.action < ACTION_COUNT:
            raise DataError(f"action {self.action!r} outside [0, {ACTION_COUNT - 1}]", traj_id=self.traj_id)
        self.t = int(self.t)
        self.action = int(self.action)
        self.feature = as_feature(self.feature)

    @property
    def ref(self) -> StepRef:
        return (self.traj_id, self.t)


@dataclass(eq=False)
class DemoTrajectory:
    traj_id: str
    steps: List[Step]
    task_tag: str = ''

    def __post_init__(self):
        if not self.steps:
            raise DataError("trajectory is empty", traj_id=self.traj_id)
        for index, step in enumerate(self.steps, start=1):
            if step.traj_id != self.traj_id:
                raise DataError(f"step {index} carries traj_id '{step.traj_id}'", traj_id=self.traj_id)
            if step.t != index:
                raise DataError(f"timesteps not consecutive: expected {index}, got {step.t}",
                                traj_id=self.traj_id)
        dims = {step.feature.shape[0] for step in self.steps}
        if len(dims) != 1:
            raise DataError(f"mixed feature dimensions {sorted(dims)}", traj_id=self.traj_id)
        self._features = np.ascontiguousarray(np.stack([step.feature for step in self.steps]))
        self._features.flags.writeable = False

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def features(self) -> np.ndarray:
        """Read-only (n, D) matrix of the trajectory's features."""
        return self._features

    @property
    def actions(self) -> List[int]:
        return [step.action for step in self.steps]

    def prefix(self, t: int) -> 'DemoTrajectory':
        if not 1 <= t <= len(self.steps):
            raise DataError(f"prefix length {t} outside [1, {len(self.steps)}]", traj_id=self.traj_id)
        return DemoTrajectory(self.traj_id, self.steps[:t], self.task_tag)


@dataclass(eq=False)
class DemoDataset:
    trajectories: List[DemoTrajectory]
    feature_dim: int = field(default=0)
    action_count: int = ACTION_COUNT
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise DataError("dataset has no trajectories")
        if self.action_count != ACTION_COUNT:
            raise DataError(f"action_count must be {ACTION_COUNT}, got {self.action_count}")
        if not self.feature_dim:
            self.feature_dim = int(self.trajectories[0].features.shape[1])
        self._by_id: Dict[str, DemoTrajectory] = {}
        for traj in self.trajectories:
            if traj.traj_id in self._by_id:
                raise DataError("duplicate traj_id", traj_id=traj.traj_id)
            if traj.features.shape[1] != self.feature_dim:
                raise DataError(f"feature dimension {traj.features.shape[1]} does not match {self.feature_dim}",
                                traj_id=traj.traj_id)
            self._by_id[traj.traj_id] = traj

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def step_count(self) -> int:
        return sum(len(traj) for traj in self.trajectories)

    @property
    def traj_ids(self) -> List[str]:
        return sorted(self._by_id)

    def trajectory(self, traj_id: str) -> DemoTrajectory:
        try:
            return self._by_id[traj_id]
        except KeyError:
            raise DataError("dangling reference: no such trajectory", traj_id=traj_id) from None

    def step(self, traj_id: str, t: int) -> Step:
        traj = self.trajectory(traj_id)
        if not 1 <= t <= len(traj):
            raise DataError(f"dangling reference: no step {t}", traj_id=traj_id)
        return traj.steps[t - 1]


class RetrievalBatch:
    """
    Every demonstration step laid out for dense scanning, ordered by (traj_id, t).
    Row i of `features` belongs to `refs[i]`.
    """

    def __init__(self, refs: Sequence[StepRef], features: np.ndarray, actions: np.ndarray):
        self.refs: List[StepRef] = list(refs)
        self.features = np.ascontiguousarray(features, dtype=np.float64)
        self.actions = np.asarray(actions, dtype=np.int64)
        self.norms = np.linalg.norm(self.features, axis=1)
        self._index = {ref: i for i, ref in enumerate(self.refs)}
        for array in (self.features, self.actions, self.norms):
            array.flags.writeable = False

    def __len__(self) -> int:
        return len(self.refs)

    def resolve(self, i: int) -> StepRef:
        return self.refs[i]

    def index_of(self, ref: StepRef) -> int:
        try:
            return self._index[ref]
        except KeyError:
            raise DataError(f"dangling reference {ref!r}") from None


def flatten(dataset: DemoDataset) -> RetrievalBatch:
    refs: List[StepRef] = []
    blocks = []
    actions: List[int] = []
    for traj_id in dataset.traj_ids:
        traj = dataset.trajectory(traj_id)
        refs.extend(step.ref for step in traj.steps)
        blocks.append(traj.features)
        actions.extend(traj.actions)
    return RetrievalBatch(refs, np.concatenate(blocks, axis=0), np.asarray(actions))


def subset(dataset: DemoDataset, n: int) -> DemoDataset:
    """The first n trajectories in id order (data-efficiency sweeps use nested subsets)."""
    if n < 1:
        raise DataError(f"subset size must be >= 1, got {n}")
    ids = dataset.traj_ids[:n]
    metadata = dict(dataset.metadata, subset=len(ids))
    return DemoDataset([dataset.trajectory(i) for i in ids], dataset.feature_dim, dataset.action_count, metadata)


def save_dataset(dataset: DemoDataset, path: str, sidecar_path: Optional[str] = None) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "feature_dim": dataset.feature_dim,
        "action_count": dataset.action_count,
        "trajectories": len(dataset.trajectories),
        "steps": dataset.step_count,
        "metadata": dataset.metadata,
    }
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(json.dumps(header, sort_keys=True, allow_nan=False) + '\n')
            for traj_id in dataset.traj_ids:
                traj = dataset.trajectory(traj_id)
                for step in traj.steps:
                    record = {
                        "traj_id": step.traj_id,
                        "t": step.t,
                        "task_tag": traj.task_tag,
                        "action": step.action,
                        "feature": step.feature.tolist(),
                    }
                    f.write(json.dumps(record, allow_nan=False) + '\n')
    except ValueError as e:
        raise DataError(f"cannot serialise dataset: {e}", path=path) from e
    logger.info(f"Saved {len(dataset)} trajectories ({dataset.step_count} steps) to {path}")
    if sidecar_path:
        save_feature_sidecar(dataset, sidecar_path)


def _parse_header(line: str, path: str) -> Dict[str, Any]:
    try:
        header = json.loads(line, parse_constant=_reject_constant)
    except ValueError as e:
        raise DataError(f"malformed header ({e})", path=path, line=1) from e
    if not isinstance(header, dict) or header.get('format') != FORMAT_NAME:
        raise DataError(f"not a {FORMAT_NAME} file", path=path, line=1)
    if header.get('version') != FORMAT_VERSION:
        raise DataError(f"unsupported version {header.get('version')!r}", path=path, line=1)
    dim = header.get('feature_dim')
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
        raise DataError(f"invalid feature_dim {dim!r}", path=path, line=1)
    if header.get('action_count') != ACTION_COUNT:
        raise DataError(f"action_count must be {ACTION_COUNT}", path=path, line=1)
    return header


def load_dataset(path: str, sidecar_path: Optional[str] = None) -> DemoDataset:
    """
    Reads and validates a dataset file. Errors name the offending line and,
    where known, the trajectory.

    When a sidecar path is given, the sidecar must hold exactly the features of
    the text records, bit for bit.
    """
    try:
        with open(path, encoding='utf-8') as f:
            lines = f.read().splitlines()
    except FileNotFoundError as e:
        raise DataError("file not found", path=path) from e
    if not lines:
        raise DataError("empty file", path=path)

    header = _parse_header(lines[0], path)
    dim = header['feature_dim']
    grouped: Dict[str, List[Step]] = {}
    tags: Dict[str, str] = {}

    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line, parse_constant=_reject_constant)
        except ValueError as e:
            raise DataError(f"malformed record ({e})", path=path, line=lineno) from e
        if not isinstance(record, dict):
            raise DataError("record is not an object", path=path, line=lineno)
        missing = [key for key in ('traj_id', 't', 'task_tag', 'action', 'feature') if key not in record]
        if missing:
            raise DataError(f"record missing {', '.join(missing)}", path=path, line=lineno)
        traj_id = record['traj_id']
        if not isinstance(traj_id, str) or not traj_id:
            raise DataError("traj_id must be a non-empty string", path=path, line=lineno)
        feature = record['feature']
        if not isinstance(feature, list) or len(feature) != dim:
            raise DataError(f"feature dimension {len(feature) if isinstance(feature, list) else '?'} "
                            f"does not match {dim}", path=path, line=lineno, traj_id=traj_id)
        if traj_id in tags and tags[traj_id] != record['task_tag']:
            raise DataError("task_tag changes within trajectory", path=path, line=lineno, traj_id=traj_id)
        tags.setdefault(traj_id, record['task_tag'])
        steps = grouped.setdefault(traj_id, [])
        expected_t = len(steps) + 1
        if record['t'] != expected_t:
            raise DataError(f"timesteps not consecutive: expected {expected_t}, got {record['t']}",
                            path=path, line=lineno, traj_id=traj_id)
        try:
            steps.append(Step(traj_id, record['t'], feature, record['action']))
        except DataError as e:
            raise DataError(str(e), path=path, line=lineno) from e
        except (TypeError, ValueError) as e:
            raise DataError(f"invalid step ({e})", path=path, line=lineno, traj_id=traj_id) from e

    trajectories = [DemoTrajectory(traj_id, steps, tags[traj_id]) for traj_id, steps in grouped.items()]
    dataset = DemoDataset(trajectories, dim, ACTION_COUNT, header.get('metadata') or {})
    if header.get('steps') not in (None, dataset.step_count):
        raise DataError(f"header announces {header['steps']} steps, file holds {dataset.step_count}", path=path)
    if sidecar_path:
        sidecar = load_feature_sidecar(sidecar_path, dataset)
        if not np.array_equal(sidecar, flatten(dataset).features):
            raise DataError("sidecar features differ from the text records", path=sidecar_path)
    logger.debug(f"Loaded {len(dataset)} trajectories ({dataset.step_count} steps) from {path}")
    return dataset


def save_feature_sidecar(dataset: DemoDataset, path: str) -> None:
    """Raw little-endian float64 features in flatten order, row-major."""
    flatten(dataset).features.astype('<f8').tofile(path)


def load_feature_sidecar(path: str, dataset: DemoDataset) -> np.ndarray:
    try:
        raw = np.fromfile(path, dtype='<f8')
    except FileNotFoundError as e:
        raise DataError("sidecar not found", path=path) from e
    expected = dataset.step_count * dataset.feature_dim
    if raw.size != expected:
        raise DataError(f"sidecar holds {raw.size} values, expected {expected}", path=path)
    return raw.reshape(dataset.step_count, dataset.feature_dim).astype(np.float64)


def features_equal(a: DemoDataset, b: DemoDataset) -> bool:
    """Content equality: same trajectories, tags, actions and bit-identical features."""
    if a.traj_ids != b.traj_ids or a.feature_dim != b.feature_dim:
        return False
    for traj_id in a.traj_ids:
        ta, tb = a.trajectory(traj_id), b.trajectory(traj_id)
        if ta.task_tag != tb.task_tag or ta.actions != tb.actions:
            return False
        if not np.array_equal(ta.features, tb.features):
            return False
    return True

