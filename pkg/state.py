import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from errors import ConfigurationError

TASKS = ('curtain_open', 'gap_cover')
DEMO_HUES = (0.0, 72.0, 144.0, 216.0, 288.0)

# Per-task geometry and start-pose ranges; EnvConfig fields left as None fall back to these
TASK_DEFAULTS: Dict[str, Dict[str, Any]] = {
    'curtain_open': {
        'curtain_width': 1.1,
        'distance_range': (1.0, 3.0),
        'lateral_max': 2.0,
        'heading_dev_deg': 15.0,
    },
    'gap_cover': {
        'curtain_width': 1.2,
        'distance_range': (1.0, 2.0),
        'lateral_max': 0.8,
        'heading_dev_deg': 15.0,
    },
}

# Arm reach box in the base frame: forward, left, up (m)
ARM_DEFAULT = (0.45, 0.0, 0.5)
ARM_MIN = (0.2, -0.4, 0.2)
ARM_MAX = (0.9, 0.4, 1.2)
# Arena relative to the geometry origin (m)
ARENA_X = (-4.0, 4.0)
ARENA_Y = (-4.0, 2.0)


@dataclass(frozen=True)
class EnvConfig:
    """Surrogate environment settings: geometry, material ranges, start-pose ranges, kinematics, sensing."""
    task: str = 'curtain_open'
    particles: int = 16
    curtain_width: Optional[float] = None
    curtain_height: float = 1.6
    gap_ratio: float = 1.2
    min_spacing_ratio: float = 0.1
    rest_scale_range: Tuple[float, float] = (1.0, 1.0)
    max_strain_range: Tuple[float, float] = (0.1, 0.1)
    hues: Tuple[float, ...] = DEMO_HUES
    colour_weight: float = 0.1
    gripper_weight: float = 0.2
    hand_weight: float = 5.0
    distance_range: Optional[Tuple[float, float]] = None
    lateral_max: Optional[float] = None
    heading_dev_deg: Optional[float] = None
    solver_iterations: int = 8
    feature_dim: int = 64
    lift_seed: int = 0
    noise_scale: float = 0.002
    body_step: float = 0.1
    turn_step_deg: float = 10.0
    hand_step: float = 0.05
    grasp_radius: float = 0.08
    body_radius: float = 0.2
    clear_radius: float = 0.3
    fov_deg: float = 60.0
    view_range: float = 4.0

    def __post_init__(self):
        for name in ('rest_scale_range', 'max_strain_range', 'hues', 'distance_range'):
            value = getattr(self, name)
            if isinstance(value, list):
                object.__setattr__(self, name, tuple(value))
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task '{self.task}', expected one of {TASKS}")
        if self.particles < 3:
            raise ConfigurationError(f"curtain needs at least 3 particles, got {self.particles}")
        if self.width <= 0 or self.curtain_height <= 0 or self.gap_ratio <= 0:
            raise ConfigurationError("curtain width, height and gap ratio must be positive")
        if not 0 < self.min_spacing_ratio < 1:
            raise ConfigurationError(f"min_spacing_ratio must lie in (0, 1), got {self.min_spacing_ratio}")
        for name in ('rest_scale_range', 'max_strain_range', 'distance_range'):
            value = getattr(self, name)
            if value is not None and (len(value) != 2 or value[0] > value[1] or value[0] < 0):
                raise ConfigurationError(f"{name} must be an ordered non-negative pair, got {value}")
        if self.rest_scale_range[0] <= 0:
            raise ConfigurationError("rest_scale_range must be positive")
        if not self.hues:
            raise ConfigurationError("at least one curtain hue is required")
        if self.noise_scale < 0:
            raise ConfigurationError(f"noise_scale must be >= 0, got {self.noise_scale}")
        for name in ('colour_weight', 'gripper_weight', 'hand_weight'):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        low, high = self.distances
        if high > -ARENA_Y[0] or self.lateral > ARENA_X[1]:
            raise ConfigurationError("start-pose ranges leave the arena")

    @property
    def width(self) -> float:
        if self.curtain_width is not None:
            return float(self.curtain_width)
        return TASK_DEFAULTS[self.task]['curtain_width']

    @property
    def distances(self) -> Tuple[float, float]:
        return tuple(self.distance_range or TASK_DEFAULTS[self.task]['distance_range'])

    @property
    def lateral(self) -> float:
        return self.lateral_max if self.lateral_max is not None else TASK_DEFAULTS[self.task]['lateral_max']

    @property
    def heading_dev(self) -> float:
        """Maximum start-heading deviation in radians."""
        degrees = self.heading_dev_deg if self.heading_dev_deg is not None \
            else TASK_DEFAULTS[self.task]['heading_dev_deg']
        return math.radians(degrees)

    @classmethod
    def from_dict(cls, section: Dict[str, Any], task: Optional[str] = None) -> 'EnvConfig':
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise ConfigurationError(f"unknown env keys {sorted(unknown)}")
        values = dict(section)
        if task is not None:
            values['task'] = task
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {key: list(value) if isinstance(value, tuple) else value
                for key, value in dataclasses.asdict(self).items()}

    def replace(self, **overrides) -> 'EnvConfig':
        return dataclasses.replace(self, **overrides)


@dataclass(frozen=True)
class Geometry:
    """Task layout in world coordinates. The rail runs along x through `origin`."""
    origin: Tuple[float, float]
    rail_z: float
    opening: Tuple[float, float]    # doorway (curtain_open) or gap (gap_cover) x-extent
    anchor_x: float

    def shifted(self, dx: float, dy: float) -> 'Geometry':
        return Geometry((self.origin[0] + dx, self.origin[1] + dy), self.rail_z,
                        (self.opening[0] + dx, self.opening[1] + dx), self.anchor_x + dx)


@dataclass
class WorldState:
    """
    Surrogate world: robot base pose (x, y, heading), arm offset in the base
    frame, gripper, and the curtain as a particle chain hanging from the rail.
    Particle 0 is pinned at the anchor; the last particle is the handle.
    """
    config: EnvConfig
    geometry: Geometry
    base_pose: np.ndarray
    arm_offset: np.ndarray
    curtain: np.ndarray
    rest_length: float
    max_strain: float
    hue: float
    gripper_closed: bool = False
    grasped_particle: Optional[int] = None
    step_count: int = 0
    seed: int = 0
    last_move_rejected: bool = field(default=False, compare=False)

    @property
    def task(self) -> str:
        return self.config.task

    @property
    def handle_index(self) -> int:
        return self.curtain.shape[0] - 1

    @property
    def max_spacing(self) -> float:
        return self.rest_length * (1.0 + self.max_strain)

    @property
    def min_spacing(self) -> float:
        return self.rest_length * self.config.min_spacing_ratio

    def heading_vectors(self) -> Tuple[np.ndarray, np.ndarray]:
        heading = self.base_pose[2]
        forward = np.array([math.cos(heading), math.sin(heading)])
        left = np.array([-math.sin(heading), math.cos(heading)])
        return forward, left

    def tip(self) -> np.ndarray:
        """Arm tip in world coordinates."""
        forward, left = self.heading_vectors()
        xy = self.base_pose[:2] + self.arm_offset[0] * forward + self.arm_offset[1] * left
        return np.array([xy[0], xy[1], self.arm_offset[2]])

    def copy(self) -> 'WorldState':
        return dataclasses.replace(self, base_pose=self.base_pose.copy(), arm_offset=self.arm_offset.copy(),
                                   curtain=self.curtain.copy())

    def get_status_payload(self) -> dict:
        """Gathers the state into a JSON-serialisable dictionary."""
        return {
            "task": self.task,
            "step": self.step_count,
            "seed": self.seed,
            "base_pose": [float(v) for v in self.base_pose],
            "arm_offset": [float(v) for v in self.arm_offset],
            "gripper": "closed" if self.gripper_closed else "open",
            "grasped_particle": self.grasped_particle,
            "handle": [float(v) for v in self.curtain[-1]],
            "curtain_extent": [float(self.curtain[:, 0].min()), float(self.curtain[:, 0].max())],
            "opening": list(self.geometry.opening),
        }
