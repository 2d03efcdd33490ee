"""Elementary-action dynamics, target bookkeeping and ground-truth detection."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import line_of_sight, line_of_sight_many, point_wall_distance, segment_hits, wrap_angle
from .render import angular_halfwidth, covered_fraction, occluder_intervals, render_patch
from .scene import Pose, Scene


class Action(enum.IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2


class RewardMode(str, enum.Enum):
    IMMEDIATE = "immediate"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class TargetReached:
    index: int


@dataclass
class TaskState:
    target_sequence: list[int]
    next_index: int = 0
    reward_mode: RewardMode = RewardMode.IMMEDIATE

    @property
    def n_targets(self) -> int:
        return len(self.target_sequence)

    @property
    def finished(self) -> bool:
        return self.next_index >= len(self.target_sequence)

    @property
    def current_target(self) -> Optional[int]:
        return None if self.finished else self.target_sequence[self.next_index]

    def progress_vector(self) -> np.ndarray:
        x = np.zeros(self.n_targets)
        if not self.finished:
            x[self.next_index] = 1.0
        return x


@dataclass
class Detection:
    object_id: int
    class_id: int
    patch: np.ndarray
    range: float
    bearing: float
    occlusion_fraction: float = 0.0

    def world_position(self, pose: Pose) -> tuple[float, float]:
        a = pose.heading + self.bearing
        return (pose.x + self.range * math.cos(a), pose.y + self.range * math.sin(a))


def step(scene: Scene, pose: Pose, task: TaskState, a: Action):
    """Apply one elementary action. Mutates ``task`` on target contact.

    Returns ``(new_pose, reward, events, done)``.
    """
    cfg = scene.config
    if a == Action.FORWARD:
        nx = pose.x + cfg.step_len * math.cos(pose.heading)
        ny = pose.y + cfg.step_len * math.sin(pose.heading)
        walls = scene.plan.walls
        blocked = segment_hits(pose.xy, (nx, ny), walls, open_start=True, open_end=False) or (
            point_wall_distance((nx, ny), walls) < cfg.wall_clearance
        )
        new_pose = pose if blocked else Pose(nx, ny, pose.heading)
    elif a == Action.TURN_LEFT:
        new_pose = Pose(pose.x, pose.y, pose.heading + cfg.turn_angle)
    elif a == Action.TURN_RIGHT:
        new_pose = Pose(pose.x, pose.y, pose.heading - cfg.turn_angle)
    else:
        raise ValueError(f"unknown action {a!r}")

    reward = 0.0
    events: list[TargetReached] = []
    target = task.current_target
    if target is not None:
        tx, ty = scene.objects[target].position
        if math.hypot(new_pose.x - tx, new_pose.y - ty) <= cfg.reach_radius:
            events.append(TargetReached(task.next_index))
            task.next_index += 1
            if task.reward_mode == RewardMode.IMMEDIATE or task.finished:
                reward = 1.0
    return new_pose, reward, events, task.finished


def visible_objects(scene: Scene, pose: Pose, rng: np.random.Generator | None = None) -> list[Detection]:
    """Ground-truth detections in the field of view, ordered by object id.

    Objects need range <= detection_range, |bearing| <= fov/2 and a clear
    line of sight to their centre. Detections occluded by nearer objects over
    more than ``occlusion_drop`` of their angular extent are dropped.
    """
    cfg = scene.config
    pos = scene.positions
    if len(pos) == 0:
        return []
    dx, dy = pos[:, 0] - pose.x, pos[:, 1] - pose.y
    dist = np.hypot(dx, dy)
    bearing = np.mod(np.arctan2(dy, dx) - pose.heading + math.pi, 2 * math.pi) - math.pi
    half_fov = cfg.fov / 2.0
    in_view = (dist <= cfg.detection_range) & (np.abs(bearing) <= half_fov)
    if not in_view.any():
        return []
    near = np.flatnonzero(dist <= cfg.detection_range + cfg.object_radius)
    clear = line_of_sight_many(pose.xy, pos[near], scene.plan.walls)
    los = {int(j): bool(ok) for j, ok in zip(near, clear)}

    noise = cfg.noise_amp if rng is not None else 0.0
    dets = []
    for i in np.flatnonzero(in_view):
        i = int(i)
        if not los[i]:
            continue
        ai = angular_halfwidth(dist[i], cfg.object_radius)
        occ = [
            scene.objects[j]
            for j, ok in los.items()
            if ok
            and j != i
            and dist[j] < dist[i]
            and abs(wrap_angle(bearing[j] - bearing[i])) <= ai + angular_halfwidth(dist[j], cfg.object_radius)
        ]
        half, intervals = occluder_intervals(pose.xy, pos[i], [o.position for o in occ], cfg.object_radius)
        frac = covered_fraction(half, intervals)
        if frac > cfg.occlusion_drop:
            continue
        obj = scene.objects[i]
        patch = render_patch(
            obj,
            pose,
            occ,
            radius=cfg.object_radius,
            detection_range=cfg.detection_range,
            noise_amp=noise,
            rng=rng,
        )
        dets.append(Detection(i, obj.class_id, patch, float(dist[i]), float(bearing[i]), frac))
    return dets


@dataclass
class Env:
    """One episode on a scene: pose, task progress and a step counter.

    Pixel noise for the frame after ``n`` steps is drawn from a stream seeded
    by ``(episode_seed, n)``, so replays of the same action sequence are
    bit-identical.
    """

    scene: Scene
    reward_mode: RewardMode = RewardMode.IMMEDIATE
    episode_seed: int = 0
    spawn: Optional[Pose] = None
    pose: Pose = field(init=False)
    task: TaskState = field(init=False)
    steps: int = field(init=False, default=0)
    total_reward: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.reward_mode = RewardMode(self.reward_mode)
        self.pose = self.spawn if self.spawn is not None else self.scene.spawn
        self.task = TaskState(list(self.scene.target_sequence), 0, self.reward_mode)

    @property
    def done(self) -> bool:
        return self.task.finished

    @property
    def truncated(self) -> bool:
        return self.steps >= self.scene.config.max_steps

    def step(self, a: Action):
        self.pose, reward, events, done = step(self.scene, self.pose, self.task, a)
        self.steps += 1
        self.total_reward += reward
        return reward, events, done

    def observe(self) -> list[Detection]:
        rng = np.random.default_rng([self.episode_seed & 0xFFFFFFFFFFFFFFFF, self.steps])
        return visible_objects(self.scene, self.pose, rng)
