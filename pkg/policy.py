import logging
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, FrozenSet, List, Optional, Sequence, Set

from dataset import DemoDataset, RetrievalBatch, StepRef
from errors import ConfigurationError, DataError
from gcbc import GCBCModel, gcbc_action
from similarity import knn
from subgoal import CandidateAudit, LiveTrajectory, SubgoalDecision, SubgoalSelector

logger = logging.getLogger('demobot')


class ActionId(IntEnum):
    BODY_FORWARD = 0
    BODY_LEFT = 1
    BODY_RIGHT = 2
    BODY_BACKWARD = 3
    BODY_TURN_LEFT = 4
    BODY_TURN_RIGHT = 5
    HAND_FORWARD = 6
    HAND_BACKWARD = 7
    HAND_LEFT = 8
    HAND_RIGHT = 9
    HAND_UP = 10
    HAND_DOWN = 11
    HAND_GRASP = 12
    HAND_RELEASE = 13


ACTION_NAMES: Dict[ActionId, str] = {
    ActionId.BODY_FORWARD: 'body move-forward',
    ActionId.BODY_LEFT: 'body move-left',
    ActionId.BODY_RIGHT: 'body move-right',
    ActionId.BODY_BACKWARD: 'body move-backward',
    ActionId.BODY_TURN_LEFT: 'body turn-left',
    ActionId.BODY_TURN_RIGHT: 'body turn-right',
    ActionId.HAND_FORWARD: 'hand move-forward',
    ActionId.HAND_BACKWARD: 'hand move-backward',
    ActionId.HAND_LEFT: 'hand move-left',
    ActionId.HAND_RIGHT: 'hand move-right',
    ActionId.HAND_UP: 'hand move-up',
    ActionId.HAND_DOWN: 'hand move-down',
    ActionId.HAND_GRASP: 'hand grasp',
    ActionId.HAND_RELEASE: 'hand release',
}

POLICY_VARIANTS = ('demobot+retrieval', 'demobot+valued', 'demobot+gcbc', 'naive-1nn')
AGGREGATIONS = ('sum', 'mean')
DEFAULT_PATIENCE = 3


def retrieval_action(decision: SubgoalDecision, dataset: DemoDataset) -> ActionId:
    """Replays the action stored at the chosen sub-goal step."""
    traj_id, t = decision.chosen
    return ActionId(dataset.step(traj_id, t).action)


def valued_retrieval_action(candidates: Sequence[CandidateAudit], dataset: DemoDataset,
                            aggregation: str = 'sum') -> ActionId:
    """
    Groups candidates by their stored action and returns the action with the
    largest aggregated reachability value. Ties go to the action carried by the
    single highest-value candidate, then to the lowest action id.
    """
    if not candidates:
        raise DataError("valued retrieval needs at least one candidate")
    if aggregation not in AGGREGATIONS:
        raise ConfigurationError(f"unknown aggregation '{aggregation}', expected one of {AGGREGATIONS}")
    groups: Dict[int, List[float]] = {}
    for audit in candidates:
        action = dataset.step(*audit.ref).action
        groups.setdefault(action, []).append(audit.value)

    def score(action: int) -> float:
        values = groups[action]
        return sum(values) if aggregation == 'sum' else sum(values) / len(values)

    best = max(groups, key=lambda action: (score(action), max(groups[action]), -action))
    return ActionId(best)


@dataclass(frozen=True)
class PolicyStep:
    action: ActionId
    decision: Optional[SubgoalDecision] = None


class MotionPolicy(ABC):
    """Maps the live trajectory to the next discrete action."""

    name = ''

    @abstractmethod
    def act(self, live: LiveTrajectory) -> PolicyStep:
        pass


class SelectorPolicy(MotionPolicy):
    """
    Base for the policies driven by sub-goal selection. A sub-goal chosen
    `patience` times in one episode is treated as unreachable and blocked for
    the rest of it; 0 disables blocking. Build one instance per episode.
    """

    def __init__(self, selector: SubgoalSelector, patience: int = DEFAULT_PATIENCE):
        if patience < 0:
            raise ConfigurationError(f"patience must be >= 0, got {patience}")
        self._selector = selector
        self._patience = patience
        self._picks: Counter = Counter()
        self._blocked: Set[StepRef] = set()

    @property
    def blocked(self) -> FrozenSet[StepRef]:
        return frozenset(self._blocked)

    def decide(self, live: LiveTrajectory) -> SubgoalDecision:
        decision = self._selector.select(live, blocked=self.blocked)
        if self._patience and not decision.fallback_used:
            self._picks[decision.chosen] += 1
            if self._picks[decision.chosen] >= self._patience:
                self._blocked.add(decision.chosen)
                logger.debug(f"Blocking sub-goal {decision.chosen} after {self._patience} picks "
                             f"without progress")
        return decision


class RetrievalPolicy(SelectorPolicy):
    name = 'demobot+retrieval'

    def act(self, live: LiveTrajectory) -> PolicyStep:
        decision = self.decide(live)
        return PolicyStep(retrieval_action(decision, self._selector.dataset), decision)


class ValuedRetrievalPolicy(SelectorPolicy):
    name = 'demobot+valued'

    def __init__(self, selector: SubgoalSelector, aggregation: str = 'sum', patience: int = DEFAULT_PATIENCE):
        if aggregation not in AGGREGATIONS:
            raise ConfigurationError(f"unknown aggregation '{aggregation}', expected one of {AGGREGATIONS}")
        super().__init__(selector, patience)
        self._aggregation = aggregation

    def act(self, live: LiveTrajectory) -> PolicyStep:
        decision = self.decide(live)
        pool = decision.fallback_pool if decision.fallback_used else decision.survivors
        action = valued_retrieval_action(pool, self._selector.dataset, self._aggregation)
        return PolicyStep(action, decision)


class GCBCPolicy(SelectorPolicy):
    name = 'demobot+gcbc'

    def __init__(self, selector: SubgoalSelector, model: GCBCModel, patience: int = DEFAULT_PATIENCE):
        super().__init__(selector, patience)
        self._model = model

    def act(self, live: LiveTrajectory) -> PolicyStep:
        decision = self.decide(live)
        goal = self._selector.dataset.step(*decision.chosen).feature
        return PolicyStep(ActionId(gcbc_action(self._model, live.last, goal)), decision)


class NearestNeighborPolicy(MotionPolicy):
    """Control baseline: replay the action of the single most similar step, no filter, no value."""

    name = 'naive-1nn'

    def __init__(self, dataset: DemoDataset, batch: RetrievalBatch):
        self._dataset = dataset
        self._batch = batch

    def act(self, live: LiveTrajectory) -> PolicyStep:
        nearest = knn(live.last, self._batch, k=1).neighbors[0]
        return PolicyStep(ActionId(int(self._batch.actions[nearest.index])))


def make_policy(variant: str, selector: SubgoalSelector, model: Optional[GCBCModel] = None,
                aggregation: str = 'sum', patience: int = DEFAULT_PATIENCE) -> MotionPolicy:
    if variant == 'demobot+retrieval':
        return RetrievalPolicy(selector, patience)
    if variant == 'demobot+valued':
        return ValuedRetrievalPolicy(selector, aggregation, patience)
    if variant == 'demobot+gcbc':
        if model is None:
            raise ConfigurationError("policy 'demobot+gcbc' needs a trained GCBC model")
        return GCBCPolicy(selector, model, patience)
    if variant == 'naive-1nn':
        return NearestNeighborPolicy(selector.dataset, selector.batch)
    raise ConfigurationError(f"unknown policy variant '{variant}', expected one of {POLICY_VARIANTS}")
