"""Macro-action execution: A* over the map, then an aim-and-go controller."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .errors import EmptyMap, NoPath, UnknownNode
from .sim.env import Action, Env, TargetReached
from .sim.geometry import wrap_angle
from .sim.scene import Pose
from .topomap import TopoMap

ARRIVED = "arrived"

MACRO_BUDGET = 500
MAX_BLOCKED = 10


@dataclass
class MacroAction:
    target: int


@dataclass
class MacroOutcome:
    elementary_steps: int = 0
    reward_sum: float = 0.0
    reached: bool = False
    events: list = field(default_factory=list)

    @property
    def aborted(self) -> bool:
        return any(e in ("budget_exhausted", "blocked") for e in self.events)


def shortest_path(tmap: TopoMap, start: int, goal: int, trace: Optional[list] = None) -> list[int]:
    """A* with the straight-line heuristic; ties go to the smaller node id.

    When ``trace`` is given, ``(f, g, node)`` is appended for each expansion.
    """
    if start not in tmap.nodes:
        raise UnknownNode(start)
    if goal not in tmap.nodes:
        raise UnknownNode(goal)
    gx, gy = tmap.nodes[goal].position

    def h(n: int) -> float:
        x, y = tmap.nodes[n].position
        return math.hypot(x - gx, y - gy)

    g = {start: 0.0}
    parent: dict[int, int] = {}
    heap = [(h(start), start)]
    closed: set[int] = set()
    while heap:
        f, n = heapq.heappop(heap)
        if n in closed:
            continue
        closed.add(n)
        if trace is not None:
            trace.append((f, g[n], n))
        if n == goal:
            path = [n]
            while n in parent:
                n = parent[n]
                path.append(n)
            return path[::-1]
        for m in sorted(tmap.adjacency[n]):
            if m in closed:
                continue
            cand = g[n] + tmap.edges[(min(n, m), max(n, m))]
            if cand < g.get(m, math.inf):
                g[m] = cand
                parent[m] = n
                heapq.heappush(heap, (cand + h(m), m))
    raise NoPath(f"no path from {start} to {goal}")


def path_cost(tmap: TopoMap, path: list[int]) -> float:
    cost = 0.0
    for a, b in zip(path, path[1:]):
        cost += tmap.edges[(min(a, b), max(a, b))]
    return cost


def nearest_node(tmap: TopoMap, pose: Pose | tuple[float, float]) -> int:
    if not tmap.nodes:
        raise EmptyMap("map has no nodes")
    x, y = pose.xy if isinstance(pose, Pose) else pose
    return min(tmap.nodes.values(), key=lambda n: (math.hypot(n.position[0] - x, n.position[1] - y), n.id)).id


def visible_start(tmap: TopoMap, pose: Pose) -> int:
    """Nearest node with a clear line from ``pose``; plain nearest if none is visible."""
    if not tmap.nodes:
        raise EmptyMap("map has no nodes")
    x, y = pose.xy
    ranked = sorted(tmap.nodes.values(), key=lambda n: (math.hypot(n.position[0] - x, n.position[1] - y), n.id))
    for n in ranked:
        if tmap.los((x, y), n.position):
            return n.id
    return ranked[0].id


def controller_step(
    pose: Pose,
    waypoint: tuple[float, float],
    reach_radius: float = 0.5,
    turn_angle: float = math.radians(15.0),
) -> Union[Action, str]:
    """Aim-and-go: turn toward the waypoint, then walk; positive bearing turns left."""
    dx, dy = waypoint[0] - pose.x, waypoint[1] - pose.y
    if math.hypot(dx, dy) <= reach_radius:
        return ARRIVED
    err = wrap_angle(math.atan2(dy, dx) - pose.heading)
    if abs(err) > turn_angle / 2.0:
        return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT
    return Action.FORWARD


class Explorer:
    """Runs elementary actions on an env while keeping the map up to date.

    After every action the frame's detections are merged, nearby nodes are
    flagged explored and waypoints are dropped. A breadcrumb waypoint is also
    dropped at the last pose that still saw ``last_anchor`` whenever the
    agent loses sight of it, so anchor edges are always straight and clear.
    """

    def __init__(self, env: Env, tmap: TopoMap, on_step: Optional[Callable[[float, list], None]] = None):
        self.env = env
        self.map = tmap
        self.on_step = on_step

    def observe(self) -> None:
        pose = self.env.pose
        if self.map.last_anchor is None:
            self.map.drop_waypoint(pose)
        self.map.integrate_detections(pose, self.env.observe())
        self.map.mark_explored(pose)
        self.map.add_waypoint_if_needed(pose)

    def act(self, a: Action) -> tuple[float, list[TargetReached], bool]:
        before = self.env.pose
        reward, events, done = self.env.step(a)
        pose = self.env.pose
        anchor = self.map.last_anchor
        if anchor is not None and pose.xy != before.xy and not self.map.los(self.map.nodes[anchor].position, pose.xy):
            self.map.drop_waypoint(before)
        self.observe()
        if self.on_step is not None:
            self.on_step(reward, events)
        return reward, events, done

    def arrive(self, nid: int) -> None:
        """Record that the agent stands at node ``nid``."""
        tmap = self.map
        anchor = tmap.last_anchor
        if anchor is not None and anchor != nid:
            if not tmap.los(tmap.nodes[anchor].position, tmap.nodes[nid].position):
                anchor = tmap.drop_waypoint(self.env.pose)
            tmap.add_traversal_edge(anchor, nid)
        tmap.last_anchor = nid


def execute_macro(
    explorer: Explorer,
    action: MacroAction,
    budget: int = MACRO_BUDGET,
    max_blocked: int = MAX_BLOCKED,
) -> MacroOutcome:
    """Walk to ``action.target`` along A* paths, replanning at each waypoint.

    Planning starts from the nearest node the agent can see, so the first
    leg is a clear straight line. Raises NoPath (with no steps taken) when the target is not connected to
    the node nearest the agent.
    """
    env, tmap = explorer.env, explorer.map
    cfg = env.scene.config
    tmap.node(action.target)
    out = MacroOutcome()
    start = visible_start(tmap, env.pose)
    try:
        path = shortest_path(tmap, start, action.target)
    except NoPath:
        path = shortest_path(tmap, nearest_node(tmap, env.pose), action.target)
    idx = 0
    blocked = 0
    idle_arrivals = 0  # arrivals since the last elementary step
    while True:
        wp = path[idx]
        a = controller_step(env.pose, tmap.nodes[wp].position, cfg.reach_radius, cfg.turn_angle)
        if a == ARRIVED:
            idle_arrivals += 1
            if idle_arrivals > len(tmap.nodes) + 1:
                out.events.append("no_path")
                break
            explorer.arrive(wp)
            if wp == action.target:
                out.reached = True
                break
            try:
                path = shortest_path(tmap, wp, action.target)
                idx = 1
                if not tmap.los(env.pose.xy, tmap.nodes[path[1]].position):
                    # we stopped off the edge line; restart from a node we can see
                    alt = visible_start(tmap, env.pose)
                    ax, ay = tmap.nodes[alt].position
                    if alt != wp and math.hypot(ax - env.pose.x, ay - env.pose.y) > cfg.reach_radius:
                        path = shortest_path(tmap, alt, action.target)
                        idx = 0
            except NoPath:
                out.events.append("no_path")
                break
            continue
        if out.elementary_steps >= budget or env.truncated:
            out.events.append("budget_exhausted")
            break
        before = env.pose
        reward, events, done = explorer.act(a)
        out.elementary_steps += 1
        idle_arrivals = 0
        out.reward_sum += reward
        out.events.extend(events)
        if done:
            break
        if a == Action.FORWARD and env.pose == before:
            blocked += 1
            if blocked >= max_blocked:
                out.events.append("blocked")
                break
        elif a == Action.FORWARD:
            blocked = 0
    return out
