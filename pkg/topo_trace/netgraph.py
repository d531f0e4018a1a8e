"""Filamentary networks as centerline graphs, their skeleton rasters, and
patch-window clipping with in-patch connectivity queries.
"""

import enum
import functools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import networkx as nx
import numpy as np
from skimage.draw import line as draw_line
from skimage.morphology import thin

from topo_trace import formats
from topo_trace.errors import (
    DimensionMismatch,
    GraphFormatError,
    GraphInvariantError,
    WindowError,
)

_LOGGER = logging.getLogger("topo-trace.netgraph")

# Global configuration

## Side of the square patch fed to the predictor
DEFAULT_PATCH_SIZE = 64

## The GT square is this much smaller than the patch (58 for 64-px patches)
SQUARE_MARGIN = 6

## A patch center closer than this (Euclidean) to a clipped polyline is "on the network"
CENTER_SNAP_RADIUS = 2.0

# Tolerance used to snap computed crossings onto the square boundary
_BOUNDARY_EPS = 1e-7


class ClassLabel(str, enum.Enum):
    ARTERY = "artery"
    VEIN = "vein"
    ROAD = "road"
    UNLABELED = "unlabeled"

    @classmethod
    def parse(cls, value) -> "ClassLabel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(label.value for label in cls)
            raise ValueError(f"unknown class label {value!r} (expected one of {names})")


VESSEL_LABELS = frozenset({ClassLabel.ARTERY, ClassLabel.VEIN})


def round_half_away(v: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


@dataclass(frozen=True)
class Vertex:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    points: tuple
    label: ClassLabel = ClassLabel.UNLABELED

    def __post_init__(self):
        object.__setattr__(
            self, "points", tuple((float(x), float(y)) for x, y in self.points)
        )
        object.__setattr__(self, "label", ClassLabel.parse(self.label))

    @functools.cached_property
    def length(self) -> float:
        pts = np.asarray(self.points)
        return float(np.hypot(*np.diff(pts, axis=0).T).sum())


@dataclass(frozen=True)
class NetworkGraph:
    """Vertices and polyline edges in pixel coordinates.

    Invariants (checked on construction): edges reference existing vertices,
    polylines start/end exactly on their vertices, every coordinate is inside
    the image, consecutive polyline points are distinct, and road labels are
    never mixed with artery/vein labels.
    """

    width: int
    height: int
    vertices: tuple = ()
    edges: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))
        self.validate()

    def validate(self) -> None:
        if not (isinstance(self.width, int) and isinstance(self.height, int)):
            raise GraphInvariantError("width and height must be integers")
        if self.width <= 0 or self.height <= 0:
            raise GraphInvariantError(
                f"image size must be positive, got {self.width}x{self.height}"
            )
        seen = set()
        for vertex in self.vertices:
            if vertex.id in seen:
                raise GraphInvariantError(f"vertex {vertex.id}: duplicate vertex id")
            seen.add(vertex.id)
            if not self.contains(vertex.x, vertex.y):
                raise GraphInvariantError(
                    f"vertex {vertex.id}: coordinate out of bounds ({vertex.x}, {vertex.y})"
                    f" for a {self.width}x{self.height} image"
                )
        by_id = self.vertex_map
        for i, edge in enumerate(self.edges):
            for end in (edge.u, edge.v):
                if end not in by_id:
                    raise GraphInvariantError(f"edge {i}: unknown vertex id {end}")
            if len(edge.points) < 2:
                raise GraphInvariantError(f"edge {i}: polyline needs at least 2 points")
            for x, y in edge.points:
                if not self.contains(x, y):
                    raise GraphInvariantError(
                        f"edge {i}: coordinate out of bounds ({x}, {y})"
                    )
            for a, b in zip(edge.points, edge.points[1:]):
                if a == b:
                    raise GraphInvariantError(
                        f"edge {i}: repeated consecutive point {a}"
                    )
            u, v = by_id[edge.u], by_id[edge.v]
            if edge.points[0] != (u.x, u.y) or edge.points[-1] != (v.x, v.y):
                raise GraphInvariantError(
                    f"edge {i}: polyline endpoints do not match vertices {edge.u}/{edge.v}"
                )
        labels = self.labels
        if ClassLabel.ROAD in labels and labels & VESSEL_LABELS:
            raise GraphInvariantError("graph mixes road labels with artery/vein labels")

    def contains(self, x: float, y: float) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    @functools.cached_property
    def vertex_map(self) -> dict:
        return {vertex.id: vertex for vertex in self.vertices}

    @property
    def labels(self) -> set:
        return {edge.label for edge in self.edges}

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_networkx(self) -> nx.MultiGraph:
        g = nx.MultiGraph()
        for vertex in self.vertices:
            g.add_node(vertex.id, x=vertex.x, y=vertex.y)
        for i, edge in enumerate(self.edges):
            g.add_edge(edge.u, edge.v, key=i, label=edge.label, points=edge.points)
        return g

    def components(self) -> list[list[int]]:
        """Connected components as sorted vertex id lists, ordered by smallest id."""
        comps = [sorted(c) for c in nx.connected_components(self.to_networkx())]
        return sorted(comps, key=lambda c: c[0])


class GraphBuilder:
    """Incrementally assembles a NetworkGraph; vertices are keyed by position."""

    def __init__(self, width: int, height: int, first_id: int = 0):
        self.width = width
        self.height = height
        self._next_id = first_id
        self._vertices: dict[tuple[float, float], Vertex] = {}
        self._edges: list[Edge] = []
        self._edge_keys: set = set()

    def add_vertex(self, x: float, y: float) -> int:
        key = (float(x), float(y))
        vertex = self._vertices.get(key)
        if vertex is None:
            vertex = Vertex(self._next_id, key[0], key[1])
            self._next_id += 1
            self._vertices[key] = vertex
        return vertex.id

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self._edge_keys

    def add_edge(
        self, u: int, v: int, points, label=ClassLabel.UNLABELED, unique: bool = True
    ) -> bool:
        """Add an edge unless u and v are already linked; returns whether it was added."""
        if unique and (u == v or self.has_edge(u, v)):
            return False
        self._edge_keys.add((min(u, v), max(u, v)))
        self._edges.append(Edge(u, v, tuple(points), label))
        return True

    @property
    def num_vertices(self) -> int:
        return len(self._vertices)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def build(self) -> NetworkGraph:
        vertices = sorted(self._vertices.values(), key=lambda v: v.id)
        return NetworkGraph(self.width, self.height, vertices, self._edges)


@dataclass(frozen=True, eq=False)
class SkeletonRaster:
    """Binary one-pixel-wide rendering; `bits` is indexed [y, x]."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise DimensionMismatch(
                "skeleton raster", (self.width, self.height), bits.shape[::-1]
            )
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, width: int, height: int) -> "SkeletonRaster":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def count(self) -> int:
        return int(self.bits.sum())


def rasterize(
    graph: NetworkGraph, class_filter: Optional[ClassLabel] = None
) -> SkeletonRaster:
    """Render every polyline segment as an 8-connected digital line.

    Where segments meet, pixels that only duplicate a diagonal step are
    thinned away, so the result is a fixed point of thinning.
    """
    bits = np.zeros(graph.shape, dtype=bool)
    if class_filter is not None:
        class_filter = ClassLabel.parse(class_filter)
    for edge in graph.edges:
        if class_filter is not None and edge.label != class_filter:
            continue
        ints = [(round_half_away(x), round_half_away(y)) for x, y in edge.points]
        for (x0, y0), (x1, y1) in zip(ints, ints[1:]):
            rr, cc = draw_line(y0, x0, y1, x1)
            bits[rr, cc] = True
    return SkeletonRaster(graph.width, graph.height, thin(bits))


def read_raster(path) -> SkeletonRaster:
    values = formats.read_graymap(path)
    height, width = values.shape
    return SkeletonRaster(width, height, values >= 0.5)


def write_raster(path, raster: SkeletonRaster) -> None:
    formats.write_graymap8(path, raster.bits)


# Graph documents


def _num(v: float):
    v = float(v)
    return int(v) if v.is_integer() else v


def graph_to_document(graph: NetworkGraph) -> dict:
    return {
        "width": graph.width,
        "height": graph.height,
        "vertices": [
            {"id": v.id, "x": _num(v.x), "y": _num(v.y)} for v in graph.vertices
        ],
        "edges": [
            {
                "u": e.u,
                "v": e.v,
                "label": e.label.value,
                "points": [[_num(x), _num(y)] for x, y in e.points],
            }
            for e in graph.edges
        ],
    }


def dumps_graph(graph: NetworkGraph) -> str:
    return json.dumps(graph_to_document(graph), indent=1) + "\n"


def save_graph(path, graph: NetworkGraph) -> None:
    with formats.atomic_write(path, mode="w") as f:
        f.write(dumps_graph(graph))


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def graph_from_document(doc, path="<document>") -> NetworkGraph:
    def fail(message):
        raise GraphFormatError(path, message)

    if not isinstance(doc, dict):
        fail("top level must be an object")
    for key in ("width", "height", "vertices", "edges"):
        if key not in doc:
            fail(f"missing key {key!r}")
    width, height = doc["width"], doc["height"]
    if not (isinstance(width, int) and isinstance(height, int)) or isinstance(
        width, bool
    ):
        fail("width and height must be integers")
    if not isinstance(doc["vertices"], list) or not isinstance(doc["edges"], list):
        fail("vertices and edges must be arrays")
    vertices = []
    for i, v in enumerate(doc["vertices"]):
        if not isinstance(v, dict) or not {"id", "x", "y"} <= v.keys():
            fail(f"vertex {i}: expected an object with id, x, y")
        if not isinstance(v["id"], int) or isinstance(v["id"], bool):
            fail(f"vertex {i}: id must be an integer")
        if not (_is_number(v["x"]) and _is_number(v["y"])):
            fail(f"vertex {v['id']}: x and y must be numbers")
        vertices.append(Vertex(v["id"], float(v["x"]), float(v["y"])))
    edges = []
    for i, e in enumerate(doc["edges"]):
        if not isinstance(e, dict) or not {"u", "v", "points"} <= e.keys():
            fail(f"edge {i}: expected an object with u, v, points")
        if not all(isinstance(e[k], int) and not isinstance(e[k], bool) for k in "uv"):
            fail(f"edge {i}: u and v must be integers")
        points = e["points"]
        if not isinstance(points, list) or not all(
            isinstance(p, list) and len(p) == 2 and all(_is_number(c) for c in p)
            for p in points
        ):
            fail(f"edge {i}: points must be an array of [x, y] pairs")
        try:
            label = ClassLabel.parse(e.get("label", "unlabeled"))
        except ValueError as err:
            fail(f"edge {i}: {err}")
        edges.append(Edge(e["u"], e["v"], tuple(tuple(p) for p in points), label))
    return NetworkGraph(width, height, vertices, edges)


def loads_graph(text: str, path="<string>") -> NetworkGraph:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise GraphFormatError(path, e.msg, e.lineno, e.colno) from e
    except ValueError as e:
        raise GraphFormatError(path, str(e)) from e
    return graph_from_document(doc, path)


def load_graph(path) -> NetworkGraph:
    """Load and validate a graph document (UTF-8, strict JSON)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    graph = loads_graph(text, path)
    _LOGGER.debug(
        f"Loaded {path}: {len(graph.vertices)} vertices, {len(graph.edges)} edges"
    )
    return graph


# Patch windows


@dataclass(frozen=True)
class PatchWindow:
    """A patch_size x patch_size window around `center`.

    The patch covers [center - patch_size//2, center - patch_size//2 + patch_size)
    on both axes. The GT square of side `square_side` is centered on `center`
    with integer half-side (square_side - 1)//2. `query` is the point playing
    the role of the patch center for connectivity; it differs from `center`
    only when a window has been shifted to fit inside the image.
    """

    center: tuple
    patch_size: int = DEFAULT_PATCH_SIZE
    square_side: Optional[int] = None
    query: Optional[tuple] = None

    def __post_init__(self):
        cx, cy = self.center
        if int(cx) != cx or int(cy) != cy:
            raise WindowError(f"window center must be a pixel, got {self.center}")
        object.__setattr__(self, "center", (int(cx), int(cy)))
        if self.square_side is None:
            object.__setattr__(self, "square_side", self.patch_size - SQUARE_MARGIN)
        if self.patch_size < 3:
            raise WindowError(f"patch size must be at least 3, got {self.patch_size}")
        if not 3 <= self.square_side < self.patch_size:
            raise WindowError(
                f"square side {self.square_side} must be in [3, {self.patch_size})"
            )
        if self.query is None:
            object.__setattr__(self, "query", self.center)
        else:
            object.__setattr__(self, "query", (float(self.query[0]), float(self.query[1])))

    @property
    def origin(self) -> tuple[int, int]:
        half = self.patch_size // 2
        return (self.center[0] - half, self.center[1] - half)

    @property
    def half_side(self) -> int:
        return (self.square_side - 1) // 2

    @property
    def box(self) -> tuple[int, int, int, int]:
        """(xmin, xmax, ymin, ymax) of the GT square, inclusive."""
        h = self.half_side
        cx, cy = self.center
        return (cx - h, cx + h, cy - h, cy + h)

    def fits(self, width: int, height: int) -> bool:
        x0, y0 = self.origin
        return (
            x0 >= 0
            and y0 >= 0
            and x0 + self.patch_size <= width
            and y0 + self.patch_size <= height
        )

    def require_inside(self, width: int, height: int) -> None:
        if not self.fits(width, height):
            raise WindowError(
                f"window of {self.patch_size} px at {self.center} does not fit"
                f" inside a {width}x{height} image"
            )

    def to_local(self, x: float, y: float) -> tuple[float, float]:
        x0, y0 = self.origin
        return (x - x0, y - y0)

    def to_image(self, x: float, y: float) -> tuple[float, float]:
        x0, y0 = self.origin
        return (x + x0, y + y0)

    @classmethod
    def fitted(
        cls,
        query: tuple,
        width: int,
        height: int,
        patch_size: int = DEFAULT_PATCH_SIZE,
        square_side: Optional[int] = None,
    ) -> Optional["PatchWindow"]:
        """The window around `query`, shifted to fit the image; None if the image is too small."""
        half = patch_size // 2
        if width < patch_size or height < patch_size:
            return None
        cx = min(max(round_half_away(query[0]), half), width - patch_size + half)
        cy = min(max(round_half_away(query[1]), half), height - patch_size + half)
        return cls((cx, cy), patch_size, square_side, query=query)


# Clipping


class BorderPoint(NamedTuple):
    """Where a clipped polyline meets the GT square boundary (image coordinates)."""

    x: float
    y: float
    px: int
    py: int
    label: ClassLabel
    component: int
    edge_index: int
    node: tuple

    def local(self, window: PatchWindow) -> tuple[float, float]:
        return window.to_local(self.x, self.y)


class ClippedPiece(NamedTuple):
    edge_index: int
    label: ClassLabel
    points: tuple
    start: tuple
    end: tuple
    arc_start: float


class CenterLocation(NamedTuple):
    piece: int
    distance: float
    arc: float


class PatchReach(enum.Enum):
    CONNECTED = "connected"
    DISCONNECTED = "disconnected"
    NO_CENTER = "no-center"

    def __bool__(self) -> bool:
        return self is PatchReach.CONNECTED


@dataclass(frozen=True, eq=False)
class ClippedSubgraph:
    window: PatchWindow
    pieces: tuple
    border_points: tuple
    graph: nx.MultiGraph = field(repr=False)

    @functools.cached_property
    def center(self) -> Optional[CenterLocation]:
        """The clipped polyline location of the window's query point, if on the network."""
        qx, qy = self.window.query
        best = None
        best_key = None
        for i, piece in enumerate(self.pieces):
            dist, arc = _nearest_on_polyline(piece.points, qx, qy)
            if dist > CENTER_SNAP_RADIUS:
                continue
            key = (round(dist, 9), piece.edge_index, piece.arc_start + arc)
            if best_key is None or key < best_key:
                best_key = key
                best = CenterLocation(i, dist, piece.arc_start + arc)
        return best

    @property
    def center_label(self) -> Optional[ClassLabel]:
        loc = self.center
        return None if loc is None else self.pieces[loc.piece].label

    def reachable_nodes(self, same_class: bool = False) -> frozenset:
        loc = self.center
        if loc is None:
            return frozenset()
        piece = self.pieces[loc.piece]
        view = self.graph
        if same_class:
            label = piece.label
            view = nx.subgraph_view(
                self.graph,
                filter_edge=lambda u, v, k: self.pieces[k].label == label,
            )
        reached = set(nx.node_connected_component(view, piece.start))
        reached |= nx.node_connected_component(view, piece.end)
        return frozenset(reached)


def _nearest_on_polyline(points, qx: float, qy: float) -> tuple[float, float]:
    """Distance from (qx, qy) to a polyline and the arc length of the nearest point."""
    pts = np.asarray(points, dtype=np.float64)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    seg_len2 = (ab**2).sum(axis=1)
    q = np.array([qx, qy])
    t = np.clip(((q - a) * ab).sum(axis=1) / seg_len2, 0.0, 1.0)
    nearest = a + t[:, None] * ab
    dist = np.hypot(*(q - nearest).T)
    i = int(np.argmin(dist))
    seg_len = np.sqrt(seg_len2)
    arc = float(seg_len[:i].sum() + t[i] * seg_len[i])
    return float(dist[i]), arc


def _clip_segment(p, q, box) -> Optional[tuple[float, float]]:
    """Liang-Barsky clip of segment p->q against the closed box; returns (t0, t1)."""
    xmin, xmax, ymin, ymax = box
    dx, dy = q[0] - p[0], q[1] - p[1]
    t0, t1 = 0.0, 1.0
    for pk, qk in (
        (-dx, p[0] - xmin),
        (dx, xmax - p[0]),
        (-dy, p[1] - ymin),
        (dy, ymax - p[1]),
    ):
        if pk == 0:
            if qk < 0:
                return None
            continue
        t = qk / pk
        if pk < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
    if t0 > t1:
        return None
    return t0, t1


def _snap(v: float, lo: int, hi: int) -> float:
    v = min(max(v, lo), hi)
    if abs(v - lo) < _BOUNDARY_EPS:
        return float(lo)
    if abs(v - hi) < _BOUNDARY_EPS:
        return float(hi)
    return v


def _on_boundary(x: float, y: float, box) -> bool:
    xmin, xmax, ymin, ymax = box
    return x in (xmin, xmax) or y in (ymin, ymax)


def _perimeter_position(x: float, y: float, box) -> float:
    """Clockwise position along the square boundary, starting at the top-left corner."""
    xmin, xmax, ymin, ymax = box
    side = xmax - xmin
    if y == ymin:
        return x - xmin
    if x == xmax:
        return side + (y - ymin)
    if y == ymax:
        return 2 * side + (xmax - x)
    return 3 * side + (ymax - y)


def clip_to_window(graph: NetworkGraph, window: PatchWindow) -> ClippedSubgraph:
    """Clip the network to the window's GT square.

    Returns the pieces of polyline inside the square as a small graph whose
    nodes are graph vertices inside the square and boundary crossings, plus
    the crossings ordered clockwise from the top-left corner. Polylines only
    join at shared graph vertices.
    """
    window.require_inside(graph.width, graph.height)
    box = window.box
    xmin, xmax, ymin, ymax = box
    pieces: list[ClippedPiece] = []
    # (x, y, edge_index, label, node) for every border crossing
    crossings: list[tuple] = []
    on_border: set = set()

    def node_at(x, y, edge_index, label, vertex_id=None):
        if vertex_id is not None:
            node = ("v", vertex_id)
        else:
            node = ("b", len(pieces), x, y)
        if _on_boundary(x, y, box) and node not in on_border:
            on_border.add(node)
            crossings.append((x, y, edge_index, label, node))
        return node

    for ei, edge in enumerate(graph.edges):
        pts = edge.points
        last = len(pts) - 2
        current = None
        arc = 0.0
        piece_arc = 0.0
        for si in range(len(pts) - 1):
            p, q = pts[si], pts[si + 1]
            seg_len = math.hypot(q[0] - p[0], q[1] - p[1])
            clipped = _clip_segment(p, q, box)
            if clipped is not None:
                t0, t1 = clipped
                a = (
                    _snap(p[0] + t0 * (q[0] - p[0]), xmin, xmax),
                    _snap(p[1] + t0 * (q[1] - p[1]), ymin, ymax),
                )
                b = (
                    _snap(p[0] + t1 * (q[0] - p[0]), xmin, xmax),
                    _snap(p[1] + t1 * (q[1] - p[1]), ymin, ymax),
                )
                if current is None:
                    current = [a]
                    piece_arc = arc + t0 * seg_len
                    start_vertex = edge.u if si == 0 and t0 == 0 else None
                if b != current[-1]:
                    current.append(b)
                if t1 < 1 or si == last:
                    if len(current) >= 2:
                        start_node = node_at(*current[0], ei, edge.label, start_vertex)
                        end_vertex = edge.v if si == last and t1 == 1 else None
                        end_node = node_at(*b, ei, edge.label, end_vertex)
                        pieces.append(
                            ClippedPiece(
                                ei,
                                edge.label,
                                tuple(current),
                                start_node,
                                end_node,
                                piece_arc,
                            )
                        )
                    current = None
            arc += seg_len

    g = nx.MultiGraph()
    for k, piece in enumerate(pieces):
        g.add_edge(piece.start, piece.end, key=k)

    # Component ids in order of first appearance over pieces
    component_of = {}
    next_component = 0
    for piece in pieces:
        if piece.start not in component_of:
            for node in nx.node_connected_component(g, piece.start):
                component_of[node] = next_component
            next_component += 1

    border = []
    for x, y, ei, label, node in crossings:
        if node not in component_of:
            # Only reachable through zero-length pieces, i.e. a grazing touch
            continue
        border.append(
            BorderPoint(
                x,
                y,
                round_half_away(x),
                round_half_away(y),
                label,
                component_of[node],
                ei,
                node,
            )
        )
    border.sort(key=lambda bp: (_perimeter_position(bp.x, bp.y, box), bp.edge_index))
    _LOGGER.debug(
        f"Clipped window at {window.center}: {len(pieces)} pieces,"
        f" {len(border)} border points"
    )
    return ClippedSubgraph(window, tuple(pieces), tuple(border), g)


def connected_in_patch(
    clipped: ClippedSubgraph, border_point: BorderPoint, same_class: bool = False
) -> PatchReach:
    """Whether `border_point` is reachable from the patch center inside the square.

    With `same_class`, every traversed piece must share the class of the
    piece the center lies on. Returns PatchReach.NO_CENTER when the center is
    farther than CENTER_SNAP_RADIUS from every clipped polyline.
    """
    if clipped.center is None:
        return PatchReach.NO_CENTER
    if border_point.node in clipped.reachable_nodes(same_class):
        return PatchReach.CONNECTED
    return PatchReach.DISCONNECTED


def graph_from_polylines(
    width: int,
    height: int,
    polylines: Iterable[Sequence],
    labels: Optional[Iterable] = None,
) -> NetworkGraph:
    """Build a graph whose vertices are the (shared) polyline endpoints."""
    builder = GraphBuilder(width, height)
    polylines = [tuple((float(x), float(y)) for x, y in pl) for pl in polylines]
    labels = list(labels) if labels is not None else [ClassLabel.UNLABELED] * len(polylines)
    for pl, label in zip(polylines, labels):
        u = builder.add_vertex(*pl[0])
        v = builder.add_vertex(*pl[-1])
        builder.add_edge(u, v, pl, label, unique=False)
    return builder.build()
