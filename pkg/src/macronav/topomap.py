"""Incrementally built object/waypoint graph.

Object nodes carry a bounded list of image patches and an ``explored`` flag;
waypoint nodes are patch-less places the agent has stood on. Edges are
undirected and weighted by the Euclidean distance of their endpoints.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NotAnObject, ParseError, UnknownNode
from .sim.env import Detection
from .sim.geometry import as_walls, line_of_sight
from .sim.scene import Pose

PATCH_SHAPE = (16, 16, 3)
PATCH_FLOATS = 16 * 16 * 3
BLOB_MAGIC = b"TMPX"


class NodeKind(str, enum.Enum):
    OBJECT = "OBJ"
    WAYPOINT = "WP"


@dataclass
class MapParams:
    merge_radius: float = 0.3
    patch_cap: int = 32
    waypoint_spacing: float = 2.0
    explored_radius: float = 1.0


@dataclass
class MapNode:
    id: int
    kind: NodeKind
    position: tuple[float, float]
    patches: list[np.ndarray] = field(default_factory=list)
    explored: bool = False
    object_id: Optional[int] = None
    n_obs: int = 0

    @property
    def is_object(self) -> bool:
        return self.kind == NodeKind.OBJECT


def _freeze(patch: np.ndarray) -> np.ndarray:
    arr = np.array(patch, dtype=np.float32, copy=True).reshape(PATCH_SHAPE)
    arr.setflags(write=False)
    return arr


class TopoMap:
    """Growing graph of object and waypoint nodes.

    ``walls`` (an ``(n, 4)`` array) is only needed by the operations that
    test line of sight; a map loaded from disk can be inspected without it.
    """

    def __init__(self, params: MapParams | None = None, walls=None, seed: int = 0):
        self.params = params or MapParams()
        self.walls = as_walls(walls if walls is not None else [])
        self.nodes: dict[int, MapNode] = {}
        self.edges: dict[tuple[int, int], float] = {}
        self.adjacency: dict[int, set[int]] = {}
        self.last_anchor: Optional[int] = None
        self._by_object: dict[int, int] = {}
        self._next_id = 0
        self._rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x70F0])

    # ------------------------------------------------------------------ basics
    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, nid: int) -> MapNode:
        try:
            return self.nodes[nid]
        except KeyError:
            raise UnknownNode(nid) from None

    def position(self, nid: int) -> np.ndarray:
        return np.asarray(self.node(nid).position, dtype=float)

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def neighbors(self, nid: int) -> set[int]:
        return self.adjacency.get(nid, set())

    def object_node(self, object_id: int) -> Optional[int]:
        return self._by_object.get(object_id)

    def _new_node(self, kind: NodeKind, position, **kw) -> MapNode:
        node = MapNode(self._next_id, kind, (float(position[0]), float(position[1])), **kw)
        self.nodes[node.id] = node
        self.adjacency[node.id] = set()
        self._next_id += 1
        if node.object_id is not None:
            self._by_object[node.object_id] = node.id
        return node

    def add_node(self, kind: NodeKind, position, **kw) -> int:
        """Insert a bare node (no edges, anchor untouched); returns its id."""
        return self._new_node(NodeKind(kind), position, **kw).id

    def add_edge(self, a: int, b: int) -> bool:
        """Insert edge {a, b}; returns False if it already existed or a == b."""
        na, nb = self.node(a), self.node(b)
        if a == b:
            return False
        key = (min(a, b), max(a, b))
        if key in self.edges:
            return False
        self.edges[key] = math.dist(na.position, nb.position)
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)
        return True

    def _move_node(self, node: MapNode, position) -> None:
        node.position = (float(position[0]), float(position[1]))
        for other in self.adjacency[node.id]:
            key = (min(node.id, other), max(node.id, other))
            self.edges[key] = math.dist(node.position, self.nodes[other].position)

    def los(self, p, q) -> bool:
        return line_of_sight(p, q, self.walls)

    # -------------------------------------------------------------- operations
    def integrate_detections(self, pose: Pose, dets: Sequence[Detection]) -> list[int]:
        """Merge one frame of detections into the map.

        Returns the ids of created or updated object nodes, in detection
        order. Co-visible objects with mutual line of sight are linked, and
        each detected object is linked to ``last_anchor`` when the two see
        each other; an object left without any edge gets a waypoint dropped
        at the current pose so it stays reachable.
        """
        touched: list[int] = []
        for det in dets:
            wp = det.world_position(pose)
            nid = self._by_object.get(det.object_id)
            if nid is None:
                nid = self._nearest_object_within(wp, self.params.merge_radius)
            if nid is None:
                node = self._new_node(
                    NodeKind.OBJECT, wp, object_id=det.object_id, patches=[_freeze(det.patch)], n_obs=1
                )
            else:
                node = self.nodes[nid]
                self._append_patch(node, det.patch)
                node.n_obs += 1
                new_pos = np.add(node.position, (np.subtract(wp, node.position)) / node.n_obs)
                if tuple(new_pos) != node.position:
                    self._move_node(node, new_pos)
            touched.append(node.id)

        for i in range(len(touched)):
            for j in range(i + 1, len(touched)):
                a, b = touched[i], touched[j]
                if a != b and not self.has_edge(a, b):
                    if self.los(self.nodes[a].position, self.nodes[b].position):
                        self.add_edge(a, b)

        anchor = self.last_anchor
        if anchor is not None:
            for nid in touched:
                if not self.has_edge(anchor, nid) and self.los(self.nodes[anchor].position, self.nodes[nid].position):
                    self.add_edge(anchor, nid)
            orphans = [nid for nid in touched if not self.adjacency[nid]]
            if orphans:
                # the detection itself proves line of sight from the pose
                crumb = self.drop_waypoint(pose)
                for nid in orphans:
                    self.add_edge(crumb, nid)
        return touched

    def _nearest_object_within(self, p, radius: float) -> Optional[int]:
        best, best_d = None, radius
        for node in self.nodes.values():
            if node.is_object:
                d = math.dist(node.position, p)
                if d <= best_d:
                    best, best_d = node.id, d
        return best

    def _append_patch(self, node: MapNode, patch: np.ndarray) -> None:
        if len(node.patches) >= self.params.patch_cap:
            del node.patches[int(self._rng.integers(len(node.patches)))]
        node.patches.append(_freeze(patch))

    def mark_explored(self, pose: Pose) -> list[int]:
        """Flag object nodes within ``explored_radius`` of the pose."""
        newly = []
        r = self.params.explored_radius
        for node in self.nodes.values():
            if node.is_object and not node.explored and math.dist(node.position, pose.xy) <= r:
                node.explored = True
                newly.append(node.id)
        return newly

    def drop_waypoint(self, pose: Pose) -> int:
        """Create a waypoint at the pose, link it to ``last_anchor`` and anchor there."""
        node = self._new_node(NodeKind.WAYPOINT, pose.xy, explored=True)
        if self.last_anchor is not None:
            self.add_edge(self.last_anchor, node.id)
        self.last_anchor = node.id
        return node.id

    def add_waypoint_if_needed(self, pose: Pose) -> Optional[int]:
        """Drop a waypoint when every node is farther than ``waypoint_spacing``."""
        spacing = self.params.waypoint_spacing
        for node in self.nodes.values():
            if math.dist(node.position, pose.xy) <= spacing:
                return None
        return self.drop_waypoint(pose)

    def add_traversal_edge(self, a: int, b: int) -> None:
        self.node(a)
        self.node(b)
        self.add_edge(a, b)

    def action_set(self) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.is_object)

    def unexplored(self, ids: Iterable[int]) -> list[bool]:
        return [not self.nodes[i].explored for i in ids]

    # ------------------------------------------------------------- comparison
    def __eq__(self, other) -> bool:
        if not isinstance(other, TopoMap):
            return NotImplemented
        if self.nodes.keys() != other.nodes.keys() or self.edges != other.edges:
            return False
        if self.last_anchor != other.last_anchor:
            return False
        for nid, a in self.nodes.items():
            b = other.nodes[nid]
            if (a.kind, a.position, a.explored, a.object_id) != (b.kind, b.position, b.explored, b.object_id):
                return False
            if len(a.patches) != len(b.patches):
                return False
            if any(not np.array_equal(p, q) for p, q in zip(a.patches, b.patches)):
                return False
        return True

    __hash__ = None  # type: ignore[assignment]


def sample_patches(node: MapNode, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Draw ``n`` of the node's patches; without replacement when enough exist."""
    if not node.is_object:
        raise NotAnObject(f"node {node.id} is a waypoint")
    k = len(node.patches)
    if k == 0:
        raise NotAnObject(f"node {node.id} has no patches")
    idx = rng.choice(k, size=n, replace=k < n)
    return [node.patches[int(i)] for i in idx]


# ----------------------------------------------------------------- text dump
def serialize(tmap: TopoMap) -> tuple[str, bytes]:
    """Return the text document and the patch sidecar blob."""
    lines = [f"TOPOMAP v1 {len(tmap.nodes)} {len(tmap.edges)}"]
    if tmap.last_anchor is not None:
        lines.append(f"ANCHOR {tmap.last_anchor}")
    blob = bytearray(BLOB_MAGIC)
    for nid in sorted(tmap.nodes):
        n = tmap.nodes[nid]
        oid = "-" if n.object_id is None else str(n.object_id)
        lines.append(
            f"NODE {n.id} {n.kind.value} {n.position[0]!r} {n.position[1]!r} "
            f"{int(n.explored)} {len(n.patches)} {oid}"
        )
        for p in n.patches:
            blob += struct.pack("<I", n.id)
            blob += np.ascontiguousarray(p, dtype="<f4").tobytes()
    for a, b in sorted(tmap.edges):
        lines.append(f"EDGE {a} {b}")
    return "\n".join(lines) + "\n", bytes(blob)


def _read_patches(blob: bytes) -> dict[int, list[np.ndarray]]:
    if blob[:4] != BLOB_MAGIC:
        raise ParseError("patch blob: bad magic")
    rec = 4 + 4 * PATCH_FLOATS
    body = blob[4:]
    if len(body) % rec:
        raise ParseError("patch blob: truncated record")
    out: dict[int, list[np.ndarray]] = {}
    for off in range(0, len(body), rec):
        (nid,) = struct.unpack_from("<I", body, off)
        arr = np.frombuffer(body, dtype="<f4", count=PATCH_FLOATS, offset=off + 4)
        out.setdefault(nid, []).append(_freeze(arr.astype(np.float32)))
    return out


def deserialize(text: str, blob: bytes | None = None, walls=None, params: MapParams | None = None) -> TopoMap:
    """Inverse of :func:`serialize`. Raises ParseError with the offending line."""
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty document", 1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "TOPOMAP" or head[1] != "v1":
        raise ParseError(f"bad header {lines[0]!r}", 1)
    try:
        n_nodes, n_edges = int(head[2]), int(head[3])
    except ValueError:
        raise ParseError("bad header counts", 1) from None

    patches = _read_patches(blob) if blob is not None else {}
    tmap = TopoMap(params, walls)
    anchor: Optional[int] = None
    seen_nodes = seen_edges = 0
    edge_pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "ANCHOR" and len(parts) == 2:
                anchor = None if parts[1] == "-" else int(parts[1])
            elif tag == "NODE" and len(parts) == 8:
                nid = int(parts[1])
                kind = NodeKind(parts[2])
                pos = (float(parts[3]), float(parts[4]))
                explored = {"0": False, "1": True}[parts[5]]
                n_patch = int(parts[6])
                oid = None if parts[7] == "-" else int(parts[7])
                if nid in tmap.nodes:
                    raise ParseError(f"duplicate node {nid}", lineno)
                plist = patches.get(nid, [])
                if blob is not None and len(plist) != n_patch:
                    raise ParseError(f"node {nid}: expected {n_patch} patches, blob has {len(plist)}", lineno)
                node = MapNode(nid, kind, pos, list(plist), explored, oid, n_obs=max(1, n_patch))
                tmap.nodes[nid] = node
                tmap.adjacency[nid] = set()
                if oid is not None:
                    tmap._by_object[oid] = nid
                seen_nodes += 1
            elif tag == "EDGE" and len(parts) == 3:
                edge_pairs.append((int(parts[1]), int(parts[2]), lineno))
                seen_edges += 1
            else:
                raise ParseError(f"unrecognised line {line!r}", lineno)
        except (ValueError, KeyError):
            raise ParseError(f"malformed line {line!r}", lineno) from None

    if seen_nodes != n_nodes or seen_edges != n_edges:
        raise ParseError(
            f"expected {n_nodes} nodes / {n_edges} edges, found {seen_nodes} / {seen_edges}", len(lines)
        )
    for a, b, lineno in edge_pairs:
        if a not in tmap.nodes or b not in tmap.nodes:
            raise ParseError("edge references unknown node", lineno)
        tmap.add_edge(a, b)
    if anchor is not None and anchor not in tmap.nodes:
        raise ParseError(f"anchor {anchor} is not a node", 2)
    tmap.last_anchor = anchor
    tmap._next_id = max(tmap.nodes, default=-1) + 1
    return tmap
