from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from policy import MotionPolicy
from state import EnvConfig
from subgoal import LiveTrajectory
from surrogate_env import ObservationModel, rollout


@dataclass
class EpisodeResult:
    seed: int
    success: bool
    steps: int
    fallback_count: int = 0
    rejected_moves: int = 0
    decisions: List[Dict[str, Any]] = field(default_factory=list)
    final_state: Dict[str, Any] = field(default_factory=dict)

    @property
    def fallback_rate(self) -> float:
        return self.fallback_count / len(self.decisions) if self.decisions else 0.0

    def to_record(self, include_decisions: bool = True) -> Dict[str, Any]:
        record = {
            "seed": self.seed,
            "success": self.success,
            "steps": self.steps,
            "fallback_count": self.fallback_count,
            "rejected_moves": self.rejected_moves,
            "final_state": self.final_state,
        }
        if include_decisions:
            record["decisions"] = self.decisions
        return record


class EpisodeController:
    """
    Runs one closed-loop episode: observe, select a sub-goal, act, step,
    until success or the step cap. Each episode gets its own live trajectory,
    so a controller can serve several workers at once.
    """

    def __init__(self, logger, config, status_update_callback: Optional[Callable] = None) -> None:
        self._logger = logger
        self._config = config
        self._status_update_callback = status_update_callback

    def run_episode(self, policy: MotionPolicy, env_config: EnvConfig, seed: int, max_steps: int = 500,
                    model: Optional[ObservationModel] = None) -> EpisodeResult:
        model = model or ObservationModel.from_config(env_config)
        live = LiveTrajectory(model.feature_dim)
        decisions: List[Dict[str, Any]] = []
        fallbacks = 0

        def act(state, feature):
            nonlocal fallbacks
            live.append(feature)
            chosen = policy.act(live)
            if chosen.decision is not None:
                fallbacks += int(chosen.decision.fallback_used)
                decisions.append(dict(chosen.decision.to_record(), action=int(chosen.action)))
            else:
                decisions.append({"step": len(live), "action": int(chosen.action)})
            return chosen.action

        try:
            record = rollout(env_config, seed, act, max_steps, model)
        except Exception as e:
            self._logger.error(f"Episode with seed {seed} ({policy.name}, {env_config.task}) failed: {e}",
                               exc_info=True)
            raise

        result = EpisodeResult(seed, record.success, record.steps, fallbacks, record.rejected_moves,
                               decisions, record.final_state.get_status_payload())
        outcome = "success" if result.success else "failure"
        self._logger.debug(f"Episode seed {seed} ({policy.name}, {env_config.task}): {outcome} after "
                           f"{result.steps} steps, {fallbacks} fallbacks")
        if self._status_update_callback:
            self._status_update_callback(result)
        return result
