"""Planar geometry helpers: segment tests against a wall array.

Walls are stored as an ``(n, 4)`` float array of ``x0, y0, x1, y1`` rows so
that every query is vectorised over all walls at once.
"""

from __future__ import annotations

import math

import numpy as np

_EPS = 1e-12


def as_walls(walls) -> np.ndarray:
    arr = np.asarray(walls, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 4))
    return arr.reshape(-1, 4)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def segments_hit(p, qs, walls: np.ndarray, *, open_start: bool, open_end: bool) -> np.ndarray:
    """For each end point in ``qs``, whether segment p->q touches any wall.

    The wall segments are closed (touching an endpoint counts). The ends of
    p->q are excluded when ``open_start`` / ``open_end`` is set. Degenerate
    segments (q == p) never hit.
    """
    qs = np.asarray(qs, dtype=float).reshape(-1, 2)
    if len(walls) == 0 or len(qs) == 0:
        return np.zeros(len(qs), dtype=bool)
    px, py = float(p[0]), float(p[1])
    dx, dy = (qs[:, 0] - px)[:, None], (qs[:, 1] - py)[:, None]
    wx0, wy0, wx1, wy1 = (walls[None, :, k] for k in range(4))
    ex, ey = wx1 - wx0, wy1 - wy0
    rx, ry = wx0 - px, wy0 - py
    den = _cross(dx, dy, ex, ey)
    t_num = _cross(rx, ry, ex, ey)
    u_num = _cross(rx, ry, dx, dy)
    lo_t = _EPS if open_start else -_EPS
    hi_t = 1.0 - _EPS if open_end else 1.0 + _EPS

    nz = np.abs(den) > _EPS
    safe = np.where(nz, den, 1.0)
    t = t_num / safe
    u = u_num / safe
    hit = nz & (t > lo_t) & (t < hi_t) & (u >= -_EPS) & (u <= 1.0 + _EPS)

    # parallel walls: only collinear overlap blocks
    dd = dx * dx + dy * dy
    par = ~nz & (np.abs(u_num) <= _EPS * np.maximum(1.0, np.sqrt(dd))) & (dd > 0)
    if par.any():
        dds = np.where(dd > 0, dd, 1.0)
        s0 = (rx * dx + ry * dy) / dds
        s1 = ((wx1 - px) * dx + (wy1 - py) * dy) / dds
        smin, smax = np.minimum(s0, s1), np.maximum(s0, s1)
        hit |= par & (smax > lo_t) & (smin < hi_t)
    return hit.any(axis=1) & (dd[:, 0] > 0)


def segment_hits(p, q, walls: np.ndarray, *, open_start: bool, open_end: bool) -> bool:
    """True if segment p->q touches any wall (see ``segments_hit``)."""
    return bool(segments_hit(p, [q], walls, open_start=open_start, open_end=open_end)[0])


def line_of_sight(p, q, walls) -> bool:
    """True iff the open segment (p, q) meets no wall segment."""
    return not segment_hits(p, q, as_walls(walls), open_start=True, open_end=True)


def line_of_sight_many(p, qs, walls) -> np.ndarray:
    """Vectorised ``line_of_sight`` from one point to many."""
    return ~segments_hit(p, qs, as_walls(walls), open_start=True, open_end=True)


def point_wall_distance(p, walls: np.ndarray) -> float:
    """Distance from point p to the nearest wall segment (inf with no walls)."""
    if len(walls) == 0:
        return math.inf
    px, py = float(p[0]), float(p[1])
    x0, y0 = walls[:, 0], walls[:, 1]
    ex, ey = walls[:, 2] - x0, walls[:, 3] - y0
    ll = ex * ex + ey * ey
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(ll > 0, ((px - x0) * ex + (py - y0) * ey) / np.where(ll > 0, ll, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    cx, cy = x0 + s * ex - px, y0 + s * ey - py
    return float(np.sqrt(np.min(cx * cx + cy * cy)))
