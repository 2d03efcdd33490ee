"""Procedural multi-room environment with ground-truth object detection."""

from .env import (
    Action,
    Detection,
    Env,
    RewardMode,
    TargetReached,
    TaskState,
    step,
    visible_objects,
)
from .geometry import line_of_sight, line_of_sight_many, point_wall_distance, segment_hits, segments_hit, wrap_angle
from .render import render_patch
from .scene import (
    Door,
    FloorPlan,
    Pose,
    Scene,
    SceneConfig,
    SceneObject,
    generate_scene,
)

__all__ = [
    "Action",
    "Detection",
    "Door",
    "Env",
    "FloorPlan",
    "Pose",
    "RewardMode",
    "Scene",
    "SceneConfig",
    "SceneObject",
    "TargetReached",
    "TaskState",
    "generate_scene",
    "line_of_sight",
    "line_of_sight_many",
    "point_wall_distance",
    "render_patch",
    "step",
    "visible_objects",
    "wrap_angle",
]
