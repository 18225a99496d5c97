"""
Desk-scale surrogate world for the curtain tasks: a planar mobile base with
a three-axis arm, and a curtain modelled as a chain of particles hanging from
a rail along the world x axis.

  curtain_open: the curtain fills a doorway; the robot must sweep it aside
                and pass through to the far side of the rail.
  gap_cover:    the curtain is gathered beside a gap; the robot must drag it
                across the gap and let go.

The curtain is quasi-static: after every action a fixed number of
constraint-projection passes restore the chain spacing limits. Observations
are egocentric and lifted into feature space by a seeded random matrix.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from dataset import DemoDataset, DemoTrajectory, Step
from errors import ConfigurationError, ExpertError
from policy import ActionId
from state import (ARENA_X, ARENA_Y, ARM_DEFAULT, ARM_MAX, ARM_MIN, EnvConfig, Geometry,
                   WorldState)

logger = logging.getLogger('demobot')

# Gap-cover rail starts this far left of the gap
GAP_MARGIN = 0.05
# Intrinsic head: bias, base (x, y, cos, sin), arm (3), gripper, colour (cos, sin), hand cue (3)
INTRINSIC_BASE = 14
REACH_EPS = 1e-9

# Expert tolerances
HEADING_TOL = math.radians(5.0)
LATERAL_TOL = 0.05
STANDOFF = 0.45
STANDOFF_TOL = 0.05
ARM_TOL = 0.025
DRAG_MARGIN = 0.1
JITTER_PERIOD = 25

_BODY_DIRECTIONS = {
    ActionId.BODY_FORWARD: 0.0,
    ActionId.BODY_LEFT: math.pi / 2,
    ActionId.BODY_RIGHT: -math.pi / 2,
    ActionId.BODY_BACKWARD: math.pi,
}
_HAND_DIRECTIONS = {
    ActionId.HAND_FORWARD: (1.0, 0.0, 0.0),
    ActionId.HAND_BACKWARD: (-1.0, 0.0, 0.0),
    ActionId.HAND_LEFT: (0.0, 1.0, 0.0),
    ActionId.HAND_RIGHT: (0.0, -1.0, 0.0),
    ActionId.HAND_UP: (0.0, 0.0, 1.0),
    ActionId.HAND_DOWN: (0.0, 0.0, -1.0),
}


def _wrap(angle: float) -> float:
    return math.remainder(angle, 2.0 * math.pi)


def _tip_world(xy, heading: float, offset) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    return np.array([xy[0] + offset[0] * c - offset[1] * s,
                     xy[1] + offset[0] * s + offset[1] * c,
                     offset[2]])


def _to_base_frame(xy, heading: float, point) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    rx, ry = point[0] - xy[0], point[1] - xy[1]
    return np.array([rx * c + ry * s, -rx * s + ry * c, point[2]])


def _within_reach(offset: np.ndarray) -> bool:
    return bool(np.all(offset >= np.asarray(ARM_MIN) - REACH_EPS) and
                np.all(offset <= np.asarray(ARM_MAX) + REACH_EPS))


# ---------------------------------------------------------------------------
# reset


def max_extent(rest_length: float, max_strain: float, particles: int) -> float:
    """Furthest the handle can sit from the anchor while held half a segment off the rail."""
    longest = rest_length * (1.0 + max_strain)
    return (particles - 2) * longest + math.sqrt(longest ** 2 - (0.5 * longest) ** 2)


def reset(config: EnvConfig, seed: int) -> WorldState:
    """
    Samples material, colour and start pose from `seed` in a fixed draw order.
    The curtain starts at rest: spread across the doorway for curtain_open,
    gathered at the anchor for gap_cover.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    rest_scale = float(rng.uniform(*config.rest_scale_range))
    max_strain = float(rng.uniform(*config.max_strain_range))
    hue = float(config.hues[int(rng.integers(len(config.hues)))])
    distance = float(rng.uniform(*config.distances))
    lateral = float(rng.uniform(-config.lateral, config.lateral))
    heading = math.pi / 2 + float(rng.uniform(-config.heading_dev, config.heading_dev))

    count = config.particles
    width = config.width
    rest_length = rest_scale * width / (count - 1)
    longest = rest_length * (1.0 + max_strain)
    shortest = rest_length * config.min_spacing_ratio
    rail_z = config.curtain_height / 2.0

    if config.task == 'curtain_open':
        opening = (-width / 2.0, width / 2.0)
        anchor = opening[0]
        spacing = width / (count - 1)
        if spacing > longest + 1e-12:
            raise ConfigurationError(f"curtain of rest length {rest_length:.4f} and strain {max_strain:.3f} "
                                     f"cannot span a {width} m doorway")
        xs = anchor + spacing * np.arange(count)
    else:
        gap = width / config.gap_ratio
        opening = (-gap / 2.0, gap / 2.0)
        anchor = opening[0] - GAP_MARGIN
        needed = opening[1] + DRAG_MARGIN - anchor
        reach = max_extent(rest_length, max_strain, count)
        if reach < needed:
            raise ConfigurationError(f"gap of {gap:.3f} m is wider than the curtain reach "
                                     f"({reach:.3f} m from the anchor, {needed:.3f} m needed)")
        xs = anchor + shortest * np.arange(count)

    curtain = np.column_stack([xs, np.zeros(count), np.full(count, rail_z)])
    geometry = Geometry((0.0, 0.0), rail_z, opening, anchor)
    base = np.array([lateral, -distance, _wrap(heading)])
    return WorldState(config, geometry, base, np.array(ARM_DEFAULT, dtype=np.float64), curtain,
                      rest_length, max_strain, hue, seed=seed)


# ---------------------------------------------------------------------------
# step


def _in_arena(state: WorldState, xy) -> bool:
    ox, oy = state.geometry.origin
    return ARENA_X[0] <= xy[0] - ox <= ARENA_X[1] and ARENA_Y[0] <= xy[1] - oy <= ARENA_Y[1]


def crossing_allowed(state: WorldState, start, end) -> bool:
    """Whether a straight base move from `start` to `end` may cross the rail line."""
    oy = state.geometry.origin[1]
    if (start[1] < oy) == (end[1] < oy):
        return True
    if state.task != 'curtain_open':
        return False
    x_cross = start[0] + (end[0] - start[0]) * (oy - start[1]) / (end[1] - start[1])
    low, high = state.geometry.opening
    if not low <= x_cross <= high:
        return False
    gaps = np.hypot(state.curtain[:, 0] - x_cross, state.curtain[:, 1] - oy)
    return bool(np.all(gaps >= state.config.body_radius))


def project_handle(state: WorldState, point) -> np.ndarray:
    """Closest feasible position for the held handle to `point`."""
    geometry = state.geometry
    oy = geometry.origin[1]
    longest = state.max_spacing
    offset = np.array([point[1] - oy, point[2] - geometry.rail_z])
    norm = float(np.hypot(*offset))
    limit = 0.5 * longest
    if norm > limit:
        offset *= limit / norm
        norm = limit
    count = state.curtain.shape[0]
    low = geometry.anchor_x + (count - 1) * state.min_spacing
    high = geometry.anchor_x + (count - 2) * longest + math.sqrt(longest ** 2 - norm ** 2)
    x = min(max(float(point[0]), low), high)
    return np.array([x, oy + offset[0], geometry.rail_z + offset[1]])


def _place(state: WorldState, xy, heading: float, offset) -> bool:
    """Moves base and arm together; a held handle follows the tip if the arm can absorb the projection."""
    if state.grasped_particle is None:
        state.base_pose[:] = (xy[0], xy[1], heading)
        state.arm_offset[:] = offset
        return True
    handle = project_handle(state, _tip_world(xy, heading, offset))
    absorbed = _to_base_frame(xy, heading, handle)
    if not _within_reach(absorbed):
        return False
    state.base_pose[:] = (xy[0], xy[1], heading)
    state.arm_offset[:] = absorbed
    state.curtain[state.grasped_particle] = handle
    return True


def _grasp(state: WorldState) -> None:
    if state.grasped_particle is not None:
        return
    handle = state.handle_index
    if np.linalg.norm(state.tip() - state.curtain[handle]) > state.config.grasp_radius:
        return
    held = state.copy()
    held.grasped_particle = handle
    if _place(held, state.base_pose[:2], state.base_pose[2], state.arm_offset):
        state.grasped_particle = handle
        state.gripper_closed = True
        state.arm_offset[:] = held.arm_offset
        state.curtain[handle] = held.curtain[handle]


def _release(state: WorldState) -> None:
    if state.grasped_particle is not None:
        particle = state.grasped_particle
        state.curtain[particle, 1] = state.geometry.origin[1]
        state.curtain[particle, 2] = state.geometry.rail_z
    state.grasped_particle = None
    state.gripper_closed = False


def relax(state: WorldState) -> None:
    """
    One quasi-static pass: Gauss-Seidel projection of the spacing limits along
    the rail, then a sweep that clamps every free particle into the interval
    both pinned ends allow, so the limits hold exactly on return.
    """
    config = state.config
    geometry = state.geometry
    xs = state.curtain[:, 0].copy()
    count = xs.shape[0]
    shortest = state.min_spacing
    longest = state.max_spacing
    held = state.grasped_particle is not None
    handle = state.curtain[-1]
    off_rail = float(np.hypot(handle[1] - geometry.origin[1], handle[2] - geometry.rail_z)) if held else 0.0
    limits = np.full(count - 1, longest)
    limits[-1] = math.sqrt(max(longest ** 2 - off_rail ** 2, 0.0))
    weights = np.ones(count)
    weights[0] = 0.0
    if held:
        weights[-1] = 0.0

    for _ in range(config.solver_iterations):
        for i in range(count - 1):
            spacing = xs[i + 1] - xs[i]
            if spacing > limits[i]:
                error = spacing - limits[i]
            elif spacing < shortest:
                error = spacing - shortest
            else:
                continue
            total = weights[i] + weights[i + 1]
            if total == 0.0:
                continue
            xs[i] += weights[i] / total * error
            xs[i + 1] -= weights[i + 1] / total * error

    if held:
        end = xs[-1]
        remaining = np.concatenate([np.cumsum(limits[::-1])[::-1], [0.0]])
        for i in range(1, count - 1):
            low = max(xs[i - 1] + shortest, end - remaining[i])
            high = min(xs[i - 1] + limits[i - 1], end - (count - 1 - i) * shortest)
            xs[i] = min(max(xs[i], low), high)
    else:
        for i in range(1, count):
            xs[i] = min(max(xs[i], xs[i - 1] + shortest), xs[i - 1] + limits[i - 1])

    state.curtain[:, 0] = xs
    last = count - 1 if held else count
    state.curtain[1:last, 1] = geometry.origin[1]
    state.curtain[1:last, 2] = geometry.rail_z


def step(state: WorldState, action) -> WorldState:
    """Applies one discrete action and relaxes the curtain; returns a new state."""
    action = ActionId(int(action))
    nxt = state.copy()
    nxt.step_count += 1
    config = nxt.config
    x, y, heading = (float(v) for v in nxt.base_pose)
    moved = True

    if action in _BODY_DIRECTIONS:
        direction = heading + _BODY_DIRECTIONS[action]
        target = (x + config.body_step * math.cos(direction), y + config.body_step * math.sin(direction))
        moved = _in_arena(nxt, target) and crossing_allowed(nxt, (x, y), target) \
            and _place(nxt, target, heading, nxt.arm_offset.copy())
    elif action in (ActionId.BODY_TURN_LEFT, ActionId.BODY_TURN_RIGHT):
        turn = math.radians(config.turn_step_deg)
        heading = _wrap(heading + (turn if action == ActionId.BODY_TURN_LEFT else -turn))
        moved = _place(nxt, (x, y), heading, nxt.arm_offset.copy())
    elif action in _HAND_DIRECTIONS:
        offset = nxt.arm_offset + config.hand_step * np.asarray(_HAND_DIRECTIONS[action])
        offset = np.clip(offset, ARM_MIN, ARM_MAX)
        moved = _place(nxt, (x, y), heading, offset)
    elif action == ActionId.HAND_GRASP:
        _grasp(nxt)
    else:
        _release(nxt)

    nxt.last_move_rejected = not moved
    relax(nxt)
    return nxt


# ---------------------------------------------------------------------------
# observation


class ObservationModel:
    """
    Egocentric intrinsic vector lifted to `feature_dim` by a fixed Gaussian
    matrix drawn from `lift_seed`, plus bounded uniform noise keyed on the
    episode seed and step count.

    Besides the body-frame particles the vector carries a hand-camera cue:
    the handle relative to the arm tip, scaled by `hand_weight` and zeroed
    while the handle is out of view.
    """

    def __init__(self, feature_dim: int = 64, lift_seed: int = 0, noise_scale: float = 0.002,
                 particles: int = 16, colour_weight: float = 0.1, fov_deg: float = 60.0,
                 view_range: float = 4.0, gripper_weight: float = 0.2, hand_weight: float = 5.0):
        self.intrinsic_dim = INTRINSIC_BASE + 3 * particles
        if feature_dim < self.intrinsic_dim:
            raise ConfigurationError(f"feature_dim {feature_dim} is below the intrinsic dimension "
                                     f"{self.intrinsic_dim}; the lift would lose information")
        if noise_scale < 0:
            raise ConfigurationError(f"noise_scale must be >= 0, got {noise_scale}")
        self.feature_dim = feature_dim
        self.lift_seed = lift_seed
        self.noise_scale = noise_scale
        self.particles = particles
        self.colour_weight = colour_weight
        self.gripper_weight = gripper_weight
        self.hand_weight = hand_weight
        self.fov = math.radians(fov_deg)
        self.view_range = view_range
        rng = np.random.default_rng(lift_seed)
        self.lift = rng.normal(size=(feature_dim, self.intrinsic_dim)) / math.sqrt(feature_dim)
        self.lift.flags.writeable = False

    @classmethod
    def from_config(cls, config: EnvConfig) -> 'ObservationModel':
        return cls(config.feature_dim, config.lift_seed, config.noise_scale, config.particles,
                   config.colour_weight, config.fov_deg, config.view_range, config.gripper_weight,
                   config.hand_weight)

    def intrinsic(self, state: WorldState) -> np.ndarray:
        ox, oy = state.geometry.origin
        x, y, heading = state.base_pose
        forward, left = state.heading_vectors()
        relative = state.curtain[:, :2] - state.base_pose[:2]
        ahead = relative @ forward
        side = relative @ left
        visible = (np.hypot(ahead, side) <= self.view_range) & (np.abs(np.arctan2(side, ahead)) <= self.fov)
        particles = np.column_stack([ahead, side, state.curtain[:, 2]])
        particles[~visible] = 0.0

        hand = np.zeros(3)
        if visible[state.handle_index]:
            hand = self.hand_weight * (particles[state.handle_index] - state.arm_offset)
        hue = math.radians(state.hue)
        head = [1.0, x - ox, y - oy, math.cos(heading), math.sin(heading),
                *state.arm_offset, self.gripper_weight if state.gripper_closed else 0.0,
                self.colour_weight * math.cos(hue), self.colour_weight * math.sin(hue), *hand]
        return np.concatenate([np.asarray(head), particles.ravel()])

    def encode(self, state: WorldState) -> np.ndarray:
        feature = self.lift @ self.intrinsic(state)
        if self.noise_scale > 0:
            noise = np.random.default_rng([self.lift_seed, state.seed, state.step_count])
            feature = feature + noise.uniform(-self.noise_scale, self.noise_scale, self.feature_dim)
        return feature


def observe(state: WorldState, model: ObservationModel) -> np.ndarray:
    return model.encode(state)


# ---------------------------------------------------------------------------
# success


def success(state: WorldState) -> bool:
    oy = state.geometry.origin[1]
    if state.task == 'curtain_open':
        if state.base_pose[1] < oy:
            return False
        gaps = np.hypot(state.curtain[:, 0] - state.base_pose[0], state.curtain[:, 1] - state.base_pose[1])
        return bool(np.all(gaps > state.config.clear_radius))
    low, high = state.geometry.opening
    return state.grasped_particle is None and bool(state.curtain[:, 0].min() <= low) \
        and bool(state.curtain[:, 0].max() >= high)


# ---------------------------------------------------------------------------
# expert


def drag_target(state: WorldState) -> float:
    """Handle x at which the expert stops dragging."""
    if state.task == 'curtain_open':
        gathered = state.geometry.anchor_x + (state.curtain.shape[0] - 1) * state.min_spacing
        return gathered + DRAG_MARGIN
    return state.geometry.opening[1] + DRAG_MARGIN


def _face_rail(state: WorldState) -> Optional[ActionId]:
    error = _wrap(state.base_pose[2] - math.pi / 2)
    if abs(error) > HEADING_TOL:
        return ActionId.BODY_TURN_RIGHT if error > 0 else ActionId.BODY_TURN_LEFT
    return None


def _line_up(state: WorldState, x: float) -> Optional[ActionId]:
    error = x - state.base_pose[0]
    if abs(error) > LATERAL_TOL:
        return ActionId.BODY_RIGHT if error > 0 else ActionId.BODY_LEFT
    return None


def _reach_for(state: WorldState, point) -> ActionId:
    wanted = _to_base_frame(state.base_pose[:2], state.base_pose[2], point)
    error = wanted - state.arm_offset
    axis = int(np.argmax(np.abs(error)))
    if abs(error[axis]) <= ARM_TOL:
        return ActionId.HAND_GRASP
    positive = error[axis] > 0
    return [(ActionId.HAND_FORWARD, ActionId.HAND_BACKWARD),
            (ActionId.HAND_LEFT, ActionId.HAND_RIGHT),
            (ActionId.HAND_UP, ActionId.HAND_DOWN)][axis][0 if positive else 1]


def check_start(state: WorldState) -> None:
    """Raises ExpertError unless the start pose lies inside the configured reset ranges."""
    config = state.config
    ox, oy = state.geometry.origin
    x, y, heading = state.base_pose
    low, high = config.distances
    distance, lateral = oy - y, x - ox
    deviation = abs(_wrap(heading - math.pi / 2))
    if not low - REACH_EPS <= distance <= high + REACH_EPS:
        raise ExpertError(f"start distance {distance:.3f} m is outside [{low}, {high}]", seed=state.seed)
    if abs(lateral) > config.lateral + REACH_EPS:
        raise ExpertError(f"start lateral offset {lateral:.3f} m exceeds {config.lateral}", seed=state.seed)
    if deviation > config.heading_dev + REACH_EPS:
        raise ExpertError(f"start heading deviation {math.degrees(deviation):.1f} deg exceeds "
                          f"{math.degrees(config.heading_dev):.1f}", seed=state.seed)


def scripted_expert(state: WorldState) -> Optional[ActionId]:
    """
    Deterministic expert. Approach: face the rail, walk up to arm's length,
    side-step until level with the handle, align the arm one axis at a time,
    grasp. Then drag the handle past the task target and release;
    curtain_open finishes by walking through the cleared doorway. Returns
    None once the task is done; refuses a start pose outside the reset ranges.
    """
    if success(state):
        return None
    oy = state.geometry.origin[1]
    x, y, _ = state.base_pose
    if not _in_arena(state, (x, y)):
        raise ExpertError(f"base ({x:.3f}, {y:.3f}) is outside the arena", seed=state.seed)
    if state.step_count == 0:
        check_start(state)
    handle = state.curtain[state.handle_index]
    target = drag_target(state)

    if state.grasped_particle is not None:
        if state.grasped_particle != state.handle_index:
            raise ExpertError(f"holding particle {state.grasped_particle}, not the handle", seed=state.seed)
        if state.task == 'curtain_open':
            return ActionId.BODY_LEFT if handle[0] > target else ActionId.HAND_RELEASE
        return ActionId.BODY_RIGHT if handle[0] < target else ActionId.HAND_RELEASE

    if state.task == 'curtain_open' and handle[0] <= target + 1e-9:
        centre = (state.curtain[:, 0].max() + state.geometry.opening[1]) / 2.0
        return _face_rail(state) or _line_up(state, centre) or ActionId.BODY_FORWARD

    if y >= oy:
        raise ExpertError(f"base is past the rail (y={y:.3f}) before the task is done", seed=state.seed)
    turn = _face_rail(state)
    if turn is not None:
        return turn
    standoff = oy - y
    if standoff > STANDOFF + STANDOFF_TOL:
        return ActionId.BODY_FORWARD
    if standoff < STANDOFF - 2 * STANDOFF_TOL:
        return ActionId.BODY_BACKWARD
    shift = _line_up(state, handle[0])
    if shift is not None:
        return shift
    return _reach_for(state, handle)


_BODY_ACTIONS = frozenset(_BODY_DIRECTIONS) | {ActionId.BODY_TURN_LEFT, ActionId.BODY_TURN_RIGHT}
_NUDGES = {ActionId.HAND_UP: ActionId.HAND_DOWN, ActionId.HAND_DOWN: ActionId.HAND_UP}


class ScriptedExpert:
    """
    The scripted expert with seeded micro-jitter. About once per
    `jitter_period` body moves it nudges the arm up or down, takes its next
    body move, then undoes the nudge, so the jitter leaves no net arm offset.
    """

    def __init__(self, seed: int, jitter_period: int = JITTER_PERIOD, logger=None):
        self._rng = np.random.default_rng(seed)
        self._period = jitter_period
        self._seed = seed
        self._logger = logger or logging.getLogger('demobot')
        self._undo: Optional[ActionId] = None
        self._carried = False

    def __call__(self, state: WorldState, feature=None) -> Optional[ActionId]:
        action = scripted_expert(state)
        if action is None:
            self._undo = None
            return None
        if self._undo is not None:
            if self._carried or action not in _BODY_ACTIONS:
                undo, self._undo = self._undo, None
                return undo
            self._carried = True
            return action
        if self._period and state.grasped_particle is None and action in _BODY_ACTIONS \
                and self._rng.random() < 1.0 / self._period:
            nudge = ActionId.HAND_UP if self._rng.random() < 0.5 else ActionId.HAND_DOWN
            z = state.arm_offset[2] + state.config.hand_step * _HAND_DIRECTIONS[nudge][2]
            if not ARM_MIN[2] <= z <= ARM_MAX[2]:
                nudge = _NUDGES[nudge]
            self._undo, self._carried = _NUDGES[nudge], False
            self._logger.debug(f"Expert seed {self._seed} step {state.step_count}: jitter {nudge.name}")
            return nudge
        return action


# ---------------------------------------------------------------------------
# rollouts and demonstrations


PolicyFn = Callable[[WorldState, np.ndarray], Optional[int]]


@dataclass
class Rollout:
    seed: int
    features: List[np.ndarray]
    actions: List[int]
    success: bool
    final_state: WorldState
    rejected_moves: int = 0

    @property
    def steps(self) -> int:
        return len(self.actions)


def rollout(config: EnvConfig, seed: int, policy_fn: PolicyFn, max_steps: int = 500,
            model: Optional[ObservationModel] = None) -> Rollout:
    """
    Closed loop from reset(config, seed): observe, ask the policy, step, until
    success, the step cap, or the policy returning None.
    """
    model = model or ObservationModel.from_config(config)
    state = reset(config, seed)
    features = [observe(state, model)]
    actions: List[int] = []
    rejected = 0
    while not success(state) and len(actions) < max_steps:
        action = policy_fn(state, features[-1])
        if action is None:
            break
        state = step(state, action)
        rejected += int(state.last_move_rejected)
        actions.append(int(action))
        features.append(observe(state, model))
    return Rollout(seed, features, actions, success(state), state, rejected)


def demo_seeds(task: str, n: int, seed: int) -> List[int]:
    """Per-demonstration reset seeds, drawn from a stream disjoint from evaluation seeds."""
    task_key = sum(ord(c) for c in task)
    return [int(s) for s in np.random.SeedSequence([seed, task_key]).generate_state(n)]


def gen_demos(task: str, n: int, config: Optional[EnvConfig] = None, seed: int = 0,
              max_steps: int = 500, logger=None) -> DemoDataset:
    """
    Records n successful expert rollouts. Step t holds the observation after
    t - 1 actions and the command that produced it; step 1 carries the first
    command.
    """
    logger = logger or logging.getLogger('demobot')
    if n < 1:
        raise ConfigurationError(f"need at least one demonstration, got n={n}")
    config = (config or EnvConfig()).replace(task=task)
    model = ObservationModel.from_config(config)
    seeds = demo_seeds(task, n, seed)
    trajectories = []
    for index, demo_seed in enumerate(seeds):
        record = rollout(config, demo_seed, ScriptedExpert(demo_seed, logger=logger), max_steps, model)
        if not record.success:
            raise ExpertError(f"expert failed to finish {task} within {max_steps} steps", seed=demo_seed)
        traj_id = f"{task}-{index:04d}"
        commands = [record.actions[0]] + record.actions
        steps = [Step(traj_id, t, feature, commands[t - 1])
                 for t, feature in enumerate(record.features, start=1)]
        trajectories.append(DemoTrajectory(traj_id, steps, task))
        logger.debug(f"Demo {traj_id} (seed {demo_seed}): {record.steps} actions")

    metadata = {
        "task": task,
        "seed": seed,
        "episode_seeds": seeds,
        "lift_seed": config.lift_seed,
        "noise_scale": config.noise_scale,
        "env": config.to_dict(),
    }
    dataset = DemoDataset(trajectories, config.feature_dim, metadata=metadata)
    logger.info(f"Generated {n} {task} demonstrations, {dataset.step_count} steps in total")
    return dataset
