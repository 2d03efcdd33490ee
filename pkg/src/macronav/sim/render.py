"""Synthetic 16x16 RGB object patches.

Each object class has a fixed palette entry. Cylinder classes are flat
saturated colours with cylindrical shading; textured classes mix two muted
colours in a seeded stripe, checker or blob pattern. The view-dependent part
(brightness by range, texture roll by bearing, occluder columns) is layered
on top of a cached base texture.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np

from .geometry import wrap_angle
from .scene import CYLINDER_CLASSES, Pose, SceneObject

PATCH = 16
RANGE_QUANTUM = 0.25
BEARING_QUANTUM = math.radians(15.0)

CYLINDER_COLORS = np.array(
    [
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (0.0, 0.0, 1.0),
        (1.0, 1.0, 0.0),
        (1.0, 0.0, 1.0),
        (0.0, 1.0, 1.0),
    ]
)
MUTED_COLORS = np.array(
    [
        (0.55, 0.35, 0.20),
        (0.50, 0.50, 0.50),
        (0.90, 0.60, 0.20),
        (0.45, 0.30, 0.60),
        (0.50, 0.55, 0.20),
        (0.20, 0.50, 0.50),
    ]
)


@lru_cache(maxsize=4096)
def _base_texture_cached(class_id: int, appearance_seed: int) -> np.ndarray:
    rng = np.random.default_rng([appearance_seed & 0xFFFFFFFFFFFFFFFF, class_id])
    jj = np.arange(PATCH) - (PATCH - 1) / 2.0
    if class_id in CYLINDER_CLASSES:
        depth = 0.2 + 0.1 * rng.random()
        shade = 1.0 - depth * (jj / (PATCH / 2.0)) ** 2
        tex = np.broadcast_to(shade[None, :, None], (PATCH, PATCH, 1)) * CYLINDER_COLORS[class_id]
    else:
        k = class_id - len(CYLINDER_CLASSES)
        a, b = MUTED_COLORS[k % 6], MUTED_COLORS[(k + 2) % 6]
        ii, jg = np.meshgrid(np.arange(PATCH), np.arange(PATCH), indexing="ij")
        kind = k % 3
        if kind == 0:
            theta = rng.uniform(0.0, math.pi)
            period = rng.uniform(3.0, 6.0)
            phase = rng.random()
            mask = ((ii * math.cos(theta) + jg * math.sin(theta)) / period + phase) % 1.0 < 0.5
        elif kind == 1:
            cell = int(rng.integers(2, 5))
            off = int(rng.integers(cell))
            mask = (((ii + off) // cell + (jg + off) // cell) % 2) == 0
        else:
            coarse = rng.random((4, 4))
            mask = np.kron(coarse, np.ones((4, 4))) > 0.5
        tex = np.where(mask[..., None], a, b)
    tex = np.ascontiguousarray(tex, dtype=np.float64)
    tex.setflags(write=False)
    return tex


def base_texture(class_id: int, appearance_seed: int) -> np.ndarray:
    return _base_texture_cached(int(class_id), int(appearance_seed))


def base_color(class_id: int) -> np.ndarray:
    if class_id in CYLINDER_CLASSES:
        return CYLINDER_COLORS[class_id]
    k = class_id - len(CYLINDER_CLASSES)
    return 0.5 * (MUTED_COLORS[k % 6] + MUTED_COLORS[(k + 2) % 6])


def quantize(value: float, quantum: float) -> float:
    return round(value / quantum) * quantum


def brightness(range_m: float, detection_range: float) -> float:
    rq = quantize(range_m, RANGE_QUANTUM)
    return float(np.clip(1.0 - 0.5 * rq / detection_range, 0.4, 1.0))


def angular_halfwidth(dist: float, radius: float) -> float:
    if dist <= radius:
        return math.pi / 2.0
    return math.asin(radius / dist)


def _view(pose_xy, p) -> tuple[float, float]:
    dx, dy = p[0] - pose_xy[0], p[1] - pose_xy[1]
    return math.hypot(dx, dy), math.atan2(dy, dx)


def occluder_intervals(pose_xy, target_pos, occluder_positions, radius: float):
    """Angular intervals of nearer occluders, relative to the target's bearing.

    Returns ``(halfwidth, [(lo, hi, index), ...])`` where each interval is
    clipped to the target's own extent ``[-halfwidth, halfwidth]``.
    """
    d, b = _view(pose_xy, target_pos)
    a = angular_halfwidth(d, radius)
    out = []
    for k, q in enumerate(occluder_positions):
        dq, bq = _view(pose_xy, q)
        if dq >= d:
            continue
        aq = angular_halfwidth(dq, radius)
        c = wrap_angle(bq - b)
        lo, hi = max(c - aq, -a), min(c + aq, a)
        if hi > lo:
            out.append((lo, hi, k))
    return a, out


def covered_fraction(halfwidth: float, intervals) -> float:
    if not intervals:
        return 0.0
    spans = sorted((lo, hi) for lo, hi, _ in intervals)
    total = 0.0
    cur_lo, cur_hi = spans[0]
    for lo, hi in spans[1:]:
        if lo > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    total += cur_hi - cur_lo
    return min(1.0, total / (2.0 * halfwidth))


def render_patch(
    obj: SceneObject,
    pose: Pose,
    occluders: Sequence[SceneObject] = (),
    *,
    radius: float = 0.3,
    detection_range: float = 5.0,
    noise_amp: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Render the patch of ``obj`` seen from ``pose``.

    Occluders farther than ``obj`` are ignored. Columns whose viewing ray
    falls inside a nearer occluder's angular extent take that occluder's
    colour (nearest occluder wins). Noise is drawn from ``rng`` when both
    ``noise_amp > 0`` and ``rng`` are given.
    """
    pose_xy = pose.xy
    dist, bear = _view(pose_xy, obj.position)
    bearing = wrap_angle(bear - pose.heading)
    shift = int(round(bearing / BEARING_QUANTUM))
    tex = np.roll(base_texture(obj.class_id, obj.appearance_seed), shift, axis=1)
    patch = tex * brightness(dist, detection_range)

    occ_pos = [o.position for o in occluders]
    half, intervals = occluder_intervals(pose_xy, obj.position, occ_pos, radius)
    if intervals:
        # column 0 looks along the most positive (leftmost) bearing
        cols = half * (1.0 - 2.0 * (np.arange(PATCH) + 0.5) / PATCH)
        order = sorted(intervals, key=lambda iv: -_view(pose_xy, occ_pos[iv[2]])[0])
        for lo, hi, k in order:  # farthest first so the nearest paints last
            hit = (cols >= lo) & (cols <= hi)
            if hit.any():
                occ = occluders[k]
                dq = _view(pose_xy, occ.position)[0]
                patch[:, hit, :] = base_color(occ.class_id) * brightness(dq, detection_range)

    if noise_amp > 0.0 and rng is not None:
        patch = patch + noise_amp * rng.uniform(-1.0, 1.0, size=patch.shape)
    return np.clip(patch, 0.0, 1.0).astype(np.float32)
