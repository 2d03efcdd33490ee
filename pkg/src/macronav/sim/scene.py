"""Procedural multi-room scenes: floor plans, placed objects, spawn poses."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidConfig
from .geometry import as_walls, point_wall_distance

TWO_PI = 2.0 * math.pi

N_CLASSES = 12
CYLINDER_CLASSES = tuple(range(6))
TEXTURED_CLASSES = tuple(range(6, 12))

_OBJECT_MARGIN = 0.6
_OBJECT_SEPARATION = 0.9
_SPAWN_MARGIN = 0.5
_SPAWN_OBJECT_GAP = 1.0
_DOOR_CORNER_GAP = 0.5
_PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        h = math.fmod(float(self.heading), TWO_PI)
        if h < 0.0:
            h += TWO_PI
        if h >= TWO_PI:
            h = 0.0
        object.__setattr__(self, "heading", h)

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass
class SceneConfig:
    rooms: int = 4
    objects_per_room: int = 3
    n_targets: int = 1
    noise_amp: float = 0.02
    room_min: float = 4.0
    room_max: float = 6.0
    door_width: float = 1.2
    extra_door_prob: float = 0.25
    target_style: str = "cylinder"
    step_len: float = 0.25
    turn_deg: float = 15.0
    fov_deg: float = 90.0
    detection_range: float = 5.0
    reach_radius: float = 0.5
    object_radius: float = 0.3
    occlusion_drop: float = 0.8
    wall_clearance: float = 0.05
    max_steps: int = 5000

    @property
    def turn_angle(self) -> float:
        return math.radians(self.turn_deg)

    @property
    def fov(self) -> float:
        return math.radians(self.fov_deg)

    def validate(self) -> None:
        if self.rooms < 2:
            raise InvalidConfig(f"need at least 2 rooms, got {self.rooms}")
        if self.objects_per_room < 1:
            raise InvalidConfig("objects_per_room must be >= 1")
        if self.n_targets not in (1, 2, 3):
            raise InvalidConfig(f"n_targets must be 1, 2 or 3, got {self.n_targets}")
        if self.target_style not in ("cylinder", "textured"):
            raise InvalidConfig(f"unknown target_style {self.target_style!r}")
        if not 0.0 < self.room_min <= self.room_max:
            raise InvalidConfig("room size bounds must satisfy 0 < room_min <= room_max")
        if self.door_width + 2 * _DOOR_CORNER_GAP > self.room_min:
            raise InvalidConfig("door does not fit on the smallest wall")
        if self.n_targets * 1 > self.rooms * self.objects_per_room:
            raise InvalidConfig("more targets than objects")

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "SceneConfig":
        """Build from string values (config file); unknown keys are ignored."""
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in values:
                kwargs[f.name] = _coerce(f.type, values[f.name], f.name)
        return cls(**kwargs)


def _coerce(type_name, raw: str, key: str):
    try:
        if type_name in (int, "int"):
            return int(raw)
        if type_name in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise InvalidConfig(f"bad value for {key}: {raw!r}") from None


@dataclass(frozen=True)
class Door:
    rooms: tuple[int, int]
    a: tuple[float, float]
    b: tuple[float, float]


@dataclass
class FloorPlan:
    rooms: list[tuple[float, float, float, float]]  # x0, y0, x1, y1
    doors: list[Door]
    walls: np.ndarray

    def room_of(self, p) -> Optional[int]:
        x, y = float(p[0]), float(p[1])
        for i, (x0, y0, x1, y1) in enumerate(self.rooms):
            if x0 < x < x1 and y0 < y < y1:
                return i
        return None

    def contains(self, p) -> bool:
        x, y = float(p[0]), float(p[1])
        return any(x0 <= x <= x1 and y0 <= y <= y1 for x0, y0, x1, y1 in self.rooms)

    def is_free(self, p, clearance: float) -> bool:
        return self.contains(p) and point_wall_distance(p, self.walls) >= clearance - 1e-9

    def door_graph(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {i: set() for i in range(len(self.rooms))}
        for d in self.doors:
            i, j = d.rooms
            adj[i].add(j)
            adj[j].add(i)
        return adj


@dataclass
class SceneObject:
    id: int
    class_id: int
    position: tuple[float, float]
    appearance_seed: int
    is_target: bool = False
    target_rank: Optional[int] = None


@dataclass
class Scene:
    seed: int
    config: SceneConfig
    plan: FloorPlan
    objects: list[SceneObject]
    spawn: Pose
    _positions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._positions = np.array([o.position for o in self.objects], dtype=float).reshape(-1, 2)

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    @property
    def target_sequence(self) -> list[int]:
        ranked = sorted((o.target_rank, o.id) for o in self.objects if o.is_target)
        return [oid for _, oid in ranked]

    def object(self, oid: int) -> SceneObject:
        return self.objects[oid]

    def sample_spawn(self, rng: np.random.Generator) -> Pose:
        return _sample_spawn(self.plan, self._positions, rng)


def target_classes(style: str) -> tuple[int, ...]:
    return CYLINDER_CLASSES[:3] if style == "cylinder" else TEXTURED_CLASSES[:3]


def distractor_classes(style: str) -> tuple[int, ...]:
    reserved = set(target_classes(style))
    return tuple(c for c in range(N_CLASSES) if c not in reserved)


def _grow_cells(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    cells = [(0, 0)]
    taken = {(0, 0)}
    while len(cells) < n:
        frontier = sorted(
            {
                (cx + dx, cy + dy)
                for cx, cy in cells
                for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))
            }
            - taken
        )
        nxt = frontier[int(rng.integers(len(frontier)))]
        cells.append(nxt)
        taken.add(nxt)
    return cells


def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def _build_plan(cfg: SceneConfig, rng: np.random.Generator) -> FloorPlan:
    cells = _grow_cells(cfg.rooms, rng)
    xs = sorted({c[0] for c in cells})
    ys = sorted({c[1] for c in cells})
    widths = rng.uniform(cfg.room_min, cfg.room_max, size=len(xs))
    heights = rng.uniform(cfg.room_min, cfg.room_max, size=len(ys))
    xoff = dict(zip(xs, np.concatenate([[0.0], np.cumsum(widths)[:-1]])))
    yoff = dict(zip(ys, np.concatenate([[0.0], np.cumsum(heights)[:-1]])))
    wmap = dict(zip(xs, widths))
    hmap = dict(zip(ys, heights))

    index = {c: i for i, c in enumerate(cells)}
    rooms = []
    for cx, cy in cells:
        x0, y0 = float(xoff[cx]), float(yoff[cy])
        rooms.append((x0, y0, x0 + float(wmap[cx]), y0 + float(hmap[cy])))

    adjacent = sorted(
        tuple(sorted((index[c], index[(c[0] + dx, c[1] + dy)])))
        for c in cells
        for dx, dy in ((1, 0), (0, 1))
        if (c[0] + dx, c[1] + dy) in index
    )
    parent = list(range(len(cells)))
    with_door = set()
    for k in rng.permutation(len(adjacent)):
        i, j = adjacent[int(k)]
        ri, rj = _find(parent, i), _find(parent, j)
        if ri != rj:
            parent[ri] = rj
            with_door.add((i, j))
        elif rng.random() < cfg.extra_door_prob:
            with_door.add((i, j))

    walls: list[tuple[float, float, float, float]] = []
    doors: list[Door] = []
    for i, (cx, cy) in enumerate(cells):
        x0, y0, x1, y1 = rooms[i]
        sides = {
            (1, 0): ((x1, y0), (x1, y1)),
            (-1, 0): ((x0, y0), (x0, y1)),
            (0, 1): ((x0, y1), (x1, y1)),
            (0, -1): ((x0, y0), (x1, y0)),
        }
        for (dx, dy), (a, b) in sides.items():
            nb = index.get((cx + dx, cy + dy))
            if nb is None:
                walls.append((*a, *b))
                continue
            if nb < i:
                continue  # shared side handled once, from the lower index
            pair = (min(i, nb), max(i, nb))
            if pair not in with_door:
                walls.append((*a, *b))
                continue
            length = math.dist(a, b)
            half = cfg.door_width / 2.0
            c = rng.uniform(_DOOR_CORNER_GAP + half, length - _DOOR_CORNER_GAP - half)
            ux, uy = (b[0] - a[0]) / length, (b[1] - a[1]) / length
            g0 = (a[0] + ux * (c - half), a[1] + uy * (c - half))
            g1 = (a[0] + ux * (c + half), a[1] + uy * (c + half))
            walls.append((*a, *g0))
            walls.append((*g1, *b))
            doors.append(Door(pair, g0, g1))
    return FloorPlan(rooms=rooms, doors=doors, walls=as_walls(walls))


def _uniform_in_room(room, margin, rng):
    x0, y0, x1, y1 = room
    return (float(rng.uniform(x0 + margin, x1 - margin)), float(rng.uniform(y0 + margin, y1 - margin)))


def _sample_spawn(plan: FloorPlan, positions: np.ndarray, rng: np.random.Generator) -> Pose:
    for _ in range(_PLACEMENT_TRIES * 4):
        room = plan.rooms[int(rng.integers(len(plan.rooms)))]
        p = _uniform_in_room(room, _SPAWN_MARGIN, rng)
        if len(positions) and np.min(np.hypot(*(positions - p).T)) < _SPAWN_OBJECT_GAP:
            continue
        return Pose(p[0], p[1], float(rng.uniform(0.0, TWO_PI)))
    raise InvalidConfig("could not find a free spawn pose")


def generate_scene(seed: int, cfg: SceneConfig | None = None) -> Scene:
    """Build a deterministic scene from ``(seed, cfg)``.

    Rooms are cells of a random polyomino laid on a grid with random column
    widths and row heights, so neighbouring rooms share whole walls. Doors
    form a random spanning tree of the room adjacency, plus optional extras.
    """
    cfg = cfg or SceneConfig()
    cfg.validate()
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x5CE4E])
    plan = _build_plan(cfg, rng)

    placed: list[tuple[float, float]] = []
    room_objects: list[list[int]] = []
    for room in plan.rooms:
        ids = []
        for _ in range(cfg.objects_per_room):
            for _try in range(_PLACEMENT_TRIES):
                p = _uniform_in_room(room, _OBJECT_MARGIN, rng)
                if all(math.dist(p, q) >= _OBJECT_SEPARATION for q in placed):
                    break
            else:
                raise InvalidConfig("object placement failed; rooms too small for objects_per_room")
            ids.append(len(placed))
            placed.append(p)
        room_objects.append(ids)

    distractors = distractor_classes(cfg.target_style)
    objects = [
        SceneObject(
            id=i,
            class_id=int(distractors[int(rng.integers(len(distractors)))]),
            position=p,
            appearance_seed=int(rng.integers(0, 2**63 - 1)),
        )
        for i, p in enumerate(placed)
    ]

    n_rooms = len(plan.rooms)
    target_rooms = rng.choice(n_rooms, size=cfg.n_targets, replace=cfg.n_targets > n_rooms)
    tclasses = target_classes(cfg.target_style)
    used: set[int] = set()
    for rank, r in enumerate(target_rooms):
        free = [i for i in room_objects[int(r)] if i not in used]
        if not free:
            free = [i for i in range(len(objects)) if i not in used]
        oid = free[int(rng.integers(len(free)))]
        used.add(oid)
        objects[oid].class_id = tclasses[rank]
        objects[oid].is_target = True
        objects[oid].target_rank = rank

    positions = np.array(placed, dtype=float)
    spawn = _sample_spawn(plan, positions, rng)
    return Scene(seed=int(seed), config=cfg, plan=plan, objects=objects, spawn=spawn)
