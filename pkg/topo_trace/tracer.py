"""Iterative delineation: grow a network from seeds by querying a
local-connectivity predictor, linking each patch center to the border peaks
it predicts and visiting those peaks in turn.
"""

import collections
import dataclasses
import functools
import heapq
import itertools
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from skimage.draw import line as draw_line

from topo_trace import formats
from topo_trace.errors import DimensionMismatch, HeatmapFormatError, TopologyError
from topo_trace.netgraph import (
    DEFAULT_PATCH_SIZE,
    ClassLabel,
    Edge,
    GraphBuilder,
    NetworkGraph,
    PatchWindow,
    SkeletonRaster,
    Vertex,
    rasterize,
    round_half_away,
)
from topo_trace.predictor import (
    DEFAULT_NMS_RADIUS,
    PEAK_POLICIES,
    Predictor,
    extract_peaks,
    greedy_peaks,
)

_LOGGER = logging.getLogger("topo-trace.tracer")

# Global configuration

## Peaks below this score are ignored
DEFAULT_THETA = 0.5

## Chebyshev radius marked visited around each processed center
DEFAULT_VISIT_RADIUS = 3

## Confidence needed for a pixel to become a seed
DEFAULT_SEED_THRESHOLD = 0.5

## Minimum Chebyshev spacing between seeds picked in one pass
DEFAULT_SEED_MIN_DIST = 16

## Iteration cap per patch-sized area of image
ITERATIONS_PER_PATCH_AREA = 50

## Weight of the step length in the in-patch link cost
LINK_EPSILON = 1e-3

FRONTIERS = ("fifo", "lifo", "best_first")


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    """Per-pixel output of a global segmentation model, indexed [y, x]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise HeatmapFormatError(f"confidence map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise HeatmapFormatError("confidence values must be finite")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise HeatmapFormatError("confidence values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, width: int, height: int) -> "ConfidenceMap":
        return cls(np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


def read_confidence(path) -> ConfidenceMap:
    return ConfidenceMap(formats.read_graymap(path))


def write_confidence(path, conf: ConfidenceMap) -> None:
    formats.write_graymap16(path, conf.values)


@dataclass(frozen=True)
class TraceParams:
    patch_size: int = DEFAULT_PATCH_SIZE
    square_side: Optional[int] = None
    theta: float = DEFAULT_THETA
    nms_radius: int = DEFAULT_NMS_RADIUS
    visit_radius: int = DEFAULT_VISIT_RADIUS
    seed_threshold: float = DEFAULT_SEED_THRESHOLD
    seed_min_dist: int = DEFAULT_SEED_MIN_DIST
    # None: ITERATIONS_PER_PATCH_AREA * width * height / patch_size**2
    max_iterations: Optional[int] = None
    snapshot_every: int = 0
    # Class the predictor is asked about and traced edges are labeled with
    label: Optional[ClassLabel] = None
    frontier: str = "fifo"
    # "local_maxima" only accepts one pixel per plateau of regional maxima
    peak_policy: str = "greedy"

    def __post_init__(self):
        if self.visit_radius < 1:
            raise TopologyError(f"visit radius must be at least 1, got {self.visit_radius}")
        if not 0 < self.theta <= 1:
            raise TopologyError(f"theta must be in (0, 1], got {self.theta}")
        if not 0 < self.seed_threshold <= 1:
            raise TopologyError(
                f"seed threshold must be in (0, 1], got {self.seed_threshold}"
            )
        if self.seed_min_dist < 1:
            raise TopologyError(f"seed spacing must be at least 1, got {self.seed_min_dist}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise TopologyError(
                f"max iterations must be at least 1, got {self.max_iterations}"
            )
        if self.snapshot_every < 0:
            raise TopologyError(f"snapshot interval must be >= 0, got {self.snapshot_every}")
        if self.frontier not in FRONTIERS:
            raise TopologyError(
                f"unknown frontier {self.frontier!r} (expected one of {', '.join(FRONTIERS)})"
            )
        if self.peak_policy not in PEAK_POLICIES:
            raise TopologyError(
                f"unknown peak policy {self.peak_policy!r}"
                f" (expected one of {', '.join(PEAK_POLICIES)})"
            )
        if self.label is not None:
            object.__setattr__(self, "label", ClassLabel.parse(self.label))

    def iteration_cap(self, width: int, height: int) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return max(1, ITERATIONS_PER_PATCH_AREA * width * height // self.patch_size**2)


def select_seeds(
    conf: ConfidenceMap,
    seed_threshold: float,
    min_dist: int,
    exclude: Optional[np.ndarray] = None,
) -> list[tuple[int, int]]:
    """Greedy peak picking on the confidence map, skipping `exclude`d pixels."""
    if min_dist < 1:
        raise TopologyError(f"seed spacing must be at least 1, got {min_dist}")
    allowed = None if exclude is None else ~np.asarray(exclude, dtype=bool)
    peaks = greedy_peaks(conf.values, seed_threshold, min_dist, allowed)
    return [(p.x, p.y) for p in peaks]


def seeds_from_graph(graph: NetworkGraph) -> list[tuple[int, int]]:
    """One seed per connected component: its smallest-id vertex."""
    vertices = graph.vertex_map
    seeds = []
    for component in graph.components():
        v = vertices[component[0]]
        seeds.append((round_half_away(v.x), round_half_away(v.y)))
    return seeds


# In-patch linking


@functools.lru_cache(maxsize=8)
def _grid_structure(height: int, width: int):
    """Directed 8-neighbour arcs (source, target, step length) over a grid."""
    idx = np.arange(height * width).reshape(height, width)
    rows, cols, lengths = [], [], []
    for dy, dx in itertools.product((-1, 0, 1), repeat=2):
        if dx == 0 and dy == 0:
            continue
        src = idx[max(0, -dy) : height - max(0, dy), max(0, -dx) : width - max(0, dx)]
        src = src.ravel()
        rows.append(src)
        cols.append(src + dy * width + dx)
        lengths.append(np.full(src.size, np.hypot(dx, dy)))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(lengths)


class GridRoutes:
    """Cheapest 8-connected paths from one start pixel over a grid of confidences.

    Entering pixel v costs (1 - values[v]) + LINK_EPSILON * step_length.
    Coordinates are (x, y) in grid space.
    """

    def __init__(self, values: np.ndarray, start: tuple):
        height, width = values.shape
        rows, cols, lengths = _grid_structure(height, width)
        weights = (1.0 - values.ravel()[cols]) + LINK_EPSILON * lengths
        n = height * width
        graph = csr_matrix((weights, (rows, cols)), shape=(n, n))
        self.width = width
        self.start = start[1] * width + start[0]
        self._dist, self._pred = dijkstra(
            graph, directed=True, indices=self.start, return_predecessors=True
        )

    def cost(self, goal: tuple) -> float:
        return float(self._dist[goal[1] * self.width + goal[0]])

    def path(self, goal: tuple) -> list[tuple[int, int]]:
        path = [goal[1] * self.width + goal[0]]
        while path[-1] != self.start:
            path.append(int(self._pred[path[-1]]))
        path.reverse()
        return [(i % self.width, i // self.width) for i in path]


def grid_path(values: np.ndarray, start: tuple, goal: tuple) -> tuple[list, float]:
    routes = GridRoutes(values, start)
    return routes.path(goal), routes.cost(goal)


def _turning_points(pixels: list) -> list:
    kept = [pixels[0]]
    for prev, here, nxt in zip(pixels, pixels[1:], pixels[2:]):
        if (here[0] - prev[0], here[1] - prev[1]) != (nxt[0] - here[0], nxt[1] - here[1]):
            kept.append(here)
    kept.append(pixels[-1])
    return kept


def window_routes(
    center: tuple, conf: ConfidenceMap, window: PatchWindow
) -> Optional[GridRoutes]:
    """Routes from `center` over the window's confidence; None if center is outside it."""
    window.require_inside(conf.width, conf.height)
    x0, y0 = window.origin
    size = window.patch_size
    lc = (round_half_away(center[0]) - x0, round_half_away(center[1]) - y0)
    if not all(0 <= v < size for v in lc):
        return None
    return GridRoutes(conf.values[y0 : y0 + size, x0 : x0 + size], lc)


def link_path(
    center: tuple,
    peak: tuple,
    conf: Optional[ConfidenceMap],
    window: PatchWindow,
    routes: Optional[GridRoutes] = None,
) -> list[tuple[float, float]]:
    """Polyline from `center` to `peak` (image coordinates) inside the window.

    Without a confidence map, or when an endpoint falls outside the window,
    the link is the straight segment. Otherwise it is the cheapest grid path
    over the window's confidence, reduced to its turning points. `routes`
    may carry precomputed window_routes for the same center.
    """
    c = (round_half_away(center[0]), round_half_away(center[1]))
    q = (round_half_away(peak[0]), round_half_away(peak[1]))
    if c == q:
        raise TopologyError(f"cannot link {c} to itself")
    straight = [(float(c[0]), float(c[1])), (float(q[0]), float(q[1]))]
    if conf is None:
        return straight
    if routes is None:
        routes = window_routes(c, conf, window)
    x0, y0 = window.origin
    lq = (q[0] - x0, q[1] - y0)
    if routes is None or not all(0 <= v < window.patch_size for v in lq):
        return straight
    pixels = routes.path(lq)
    return [(float(x + x0), float(y + y0)) for x, y in _turning_points(pixels)]


# Tracing


class TraceResult(NamedTuple):
    graph: NetworkGraph
    snapshots: list


class _Frontier:
    def __init__(self, discipline: str):
        self.discipline = discipline
        self._queue = collections.deque()
        self._heap = []
        self._order = itertools.count()

    def push(self, point: tuple, vertex: Optional[int], score: float) -> None:
        if self.discipline == "best_first":
            heapq.heappush(self._heap, (-score, next(self._order), point, vertex))
        else:
            self._queue.append((point, vertex))

    def pop(self) -> tuple:
        if self.discipline == "best_first":
            _, _, point, vertex = heapq.heappop(self._heap)
            return point, vertex
        if self.discipline == "lifo":
            return self._queue.pop()
        return self._queue.popleft()

    def __len__(self) -> int:
        return len(self._heap) + len(self._queue)


class Tracer:
    """State of one trace run. Not shareable between workers."""

    def __init__(
        self,
        predictor: Predictor,
        params: TraceParams,
        width: int,
        height: int,
        conf: Optional[ConfidenceMap] = None,
    ):
        if conf is not None and conf.size != (width, height):
            raise DimensionMismatch("confidence map", conf.size, (width, height))
        self.predictor = predictor
        self.params = params
        self.width = width
        self.height = height
        self.conf = conf
        self.label = params.label or ClassLabel.UNLABELED
        self.builder = GraphBuilder(width, height)
        self.visited = np.zeros((height, width), dtype=bool)
        # Vertex owning each pixel within visit_radius of it, -1 if none
        self.anchor = np.full((height, width), -1, dtype=np.int64)
        self.positions: dict[int, tuple[int, int]] = {}
        # Pixels drawn by traced edges
        self.covered = np.zeros((height, width), dtype=bool)
        self.frontier = _Frontier(params.frontier)
        self.seeds: collections.deque = collections.deque()
        self.max_iterations = params.iteration_cap(width, height)
        self.iterations = 0
        self.reseeds = 0
        self.snapshots: list[SkeletonRaster] = []

    def _ball(self, point: tuple) -> tuple[slice, slice]:
        r = self.params.visit_radius
        x, y = point
        return slice(max(0, y - r), y + r + 1), slice(max(0, x - r), x + r + 1)

    def _vertex(self, point: tuple) -> tuple[int, bool]:
        """The vertex for `point`: an existing one within visit_radius, or a new one."""
        owner = int(self.anchor[point[1], point[0]])
        if owner >= 0:
            return owner, False
        vid = self.builder.add_vertex(*point)
        self.positions[vid] = point
        ball = self.anchor[self._ball(point)]
        ball[ball < 0] = vid
        return vid, True

    def seed(self, points) -> None:
        for x, y in points:
            p = (round_half_away(x), round_half_away(y))
            if not (0 <= p[0] < self.width and 0 <= p[1] < self.height):
                raise TopologyError(
                    f"seed {p} lies outside the {self.width}x{self.height} image"
                )
            self.seeds.append(p)

    def _pull_seed(self) -> bool:
        """Move the next seed that is away from traced geometry onto the frontier."""
        while self.seeds:
            p = self.seeds.popleft()
            if self.covered[self._ball(p)].any():
                _LOGGER.debug(f"Dropping seed {p}, already traced")
                continue
            self.frontier.push(p, None, 1.0)
            return True
        return False

    def _draw(self, path) -> None:
        for (x0, y0), (x1, y1) in zip(path, path[1:]):
            rr, cc = draw_line(
                round_half_away(y0),
                round_half_away(x0),
                round_half_away(y1),
                round_half_away(x1),
            )
            self.covered[rr, cc] = True

    def step(self) -> None:
        p, vid = self.frontier.pop()
        if self.visited[p[1], p[0]]:
            return
        self.iterations += 1
        if vid is None:
            vid, _ = self._vertex(p)
        self.visited[self._ball(p)] = True
        origin = self.positions[vid]

        params = self.params
        window = PatchWindow.fitted(
            p, self.width, self.height, params.patch_size, params.square_side
        )
        if window is None:
            _LOGGER.warning(
                f"Image {self.width}x{self.height} is smaller than a"
                f" {params.patch_size} px patch; skipping {p}"
            )
            return
        heatmap = self.predictor(window, params.label)
        if heatmap.side != params.patch_size:
            raise HeatmapFormatError(
                f"predictor returned a {heatmap.side} px heatmap for a"
                f" {params.patch_size} px patch at {window.center}"
            )
        peaks = extract_peaks(heatmap, params.theta, params.nms_radius, params.peak_policy)
        _LOGGER.debug(f"Center {p}: {len(peaks)} peaks")
        routes = None
        if self.conf is not None and len(peaks):
            routes = window_routes(origin, self.conf, window)
        for peak in peaks:
            qx, qy = window.to_image(peak.x, peak.y)
            q = (int(qx), int(qy))
            qid, created = self._vertex(q)
            if qid == vid or self.builder.has_edge(vid, qid):
                continue
            path = link_path(origin, self.positions[qid], self.conf, window, routes)
            self.builder.add_edge(vid, qid, path, self.label)
            self._draw(path)
            if created and not self.visited[q[1], q[0]]:
                self.frontier.push(q, qid, peak.score)
        # Only a center the predictor links onward is extended along the ridge
        if routes is not None:
            for tip in self._dead_ends(origin, window):
                tid, _ = self._vertex(tip)
                if tid == vid or self.builder.has_edge(vid, tid):
                    continue
                _LOGGER.debug(f"Center {p}: closing dead end at {tip}")
                path = link_path(origin, self.positions[tid], self.conf, window, routes)
                self.builder.add_edge(vid, tid, path, self.label)
                self._draw(path)

        if params.snapshot_every and self.iterations % params.snapshot_every == 0:
            self.snapshots.append(rasterize(self.builder.build()))

    def _dead_ends(self, origin: tuple, window: PatchWindow) -> list[tuple[int, int]]:
        """Far ends of untraced confidence ridges next to `origin` that stop inside the square.

        A ridge is an 8-connected piece of the confidence map above
        seed_threshold, minus pixels within visit_radius of traced geometry,
        that comes within visit_radius + 1 of `origin`. Ridges reaching the
        square's boundary are left to the predictor. For the others the crest
        pixel (no brighter 8-neighbour on the ridge) farthest from `origin`
        is returned, ties to smaller y then smaller x.
        """
        r = self.params.visit_radius
        xmin, xmax, ymin, ymax = window.box
        ox, oy = origin[0] - xmin, origin[1] - ymin
        side = xmax - xmin + 1
        if not (0 <= ox < side and 0 <= oy < side):
            return []
        # Dilate over a margin so traced pixels just outside the square still count
        px0, py0 = max(0, xmin - r), max(0, ymin - r)
        px1, py1 = min(self.width, xmax + r + 1), min(self.height, ymax + r + 1)
        near = ndimage.binary_dilation(
            self.covered[py0:py1, px0:px1], structure=np.ones((2 * r + 1, 2 * r + 1), bool)
        )[ymin - py0 : ymax - py0 + 1, xmin - px0 : xmax - px0 + 1]
        conf = self.conf.values[ymin : ymax + 1, xmin : xmax + 1]
        labels, _ = ndimage.label(
            (conf >= self.params.seed_threshold) & ~near, structure=np.ones((3, 3), bool)
        )
        ring = labels[max(0, oy - r - 1) : oy + r + 2, max(0, ox - r - 1) : ox + r + 2]
        ends = []
        for label in np.unique(ring[ring > 0]):
            ridge = labels == label
            if ridge[0].any() or ridge[-1].any() or ridge[:, 0].any() or ridge[:, -1].any():
                continue
            ridge_conf = np.where(ridge, conf, 0.0)
            crest = ridge & (ridge_conf >= ndimage.maximum_filter(ridge_conf, size=3))
            ys, xs = np.nonzero(crest)
            d2 = (xs - ox) ** 2 + (ys - oy) ** 2
            i = np.lexsort((xs, ys, -d2))[0]
            if d2[i] > r * r:
                ends.append((int(xs[i]) + xmin, int(ys[i]) + ymin))
        return ends

    def reseed(self) -> list[tuple[int, int]]:
        """Seeds from the confidence map farther than visit_radius from visited
        pixels and from traced geometry.
        """
        r = self.params.visit_radius
        near = ndimage.binary_dilation(
            self.visited | self.covered, structure=np.ones((2 * r + 1, 2 * r + 1), bool)
        )
        seeds = select_seeds(
            self.conf,
            self.params.seed_threshold,
            self.params.seed_min_dist,
            exclude=near,
        )
        if seeds:
            self.reseeds += 1
            _LOGGER.debug(f"Reseeding with {len(seeds)} points")
        return seeds

    def run(self) -> TraceResult:
        while True:
            while self.iterations < self.max_iterations and (
                self.frontier or self._pull_seed()
            ):
                self.step()
            if self.frontier or self.seeds:
                _LOGGER.warning(
                    f"Stopped after {self.iterations} iterations with"
                    f" {len(self.frontier) + len(self.seeds)} points still queued"
                )
                break
            if self.conf is None:
                break
            seeds = self.reseed()
            if not seeds:
                break
            self.seed(seeds)
        graph = self.builder.build()
        _LOGGER.info(
            f"Traced {len(graph.vertices)} vertices, {len(graph.edges)} edges in"
            f" {self.iterations} iterations ({self.reseeds} reseeds)"
        )
        return TraceResult(graph, self.snapshots)


def trace(
    predictor: Predictor,
    conf: Optional[ConfidenceMap],
    seeds,
    params: TraceParams = TraceParams(),
    image_size: Optional[tuple[int, int]] = None,
) -> TraceResult:
    """Trace a network from `seeds`.

    The image size comes from `conf`, or from `image_size` (width, height)
    when no confidence map is given.
    """
    if conf is not None:
        if image_size is not None and tuple(image_size) != conf.size:
            raise DimensionMismatch("confidence map", conf.size, tuple(image_size))
        width, height = conf.size
    elif image_size is None:
        raise TopologyError("tracing without a confidence map needs the image size")
    else:
        width, height = image_size
    tracer = Tracer(predictor, params, width, height, conf)
    tracer.seed(seeds)
    return tracer.run()


def union_graphs(graphs, width: int, height: int) -> NetworkGraph:
    """Disjoint union; vertex ids of later graphs are shifted past earlier ones."""
    vertices, edges = [], []
    offset = 0
    for graph in graphs:
        for v in graph.vertices:
            vertices.append(Vertex(v.id + offset, v.x, v.y))
        for e in graph.edges:
            edges.append(Edge(e.u + offset, e.v + offset, e.points, e.label))
        if graph.vertices:
            offset += max(v.id for v in graph.vertices) + 1
    return NetworkGraph(width, height, vertices, edges)


def trace_av(
    predictor_av: Predictor,
    conf_artery: ConfidenceMap,
    conf_vein: ConfidenceMap,
    params: TraceParams = TraceParams(),
    seeds_artery=None,
    seeds_vein=None,
) -> NetworkGraph:
    """Trace arteries then veins with the class-constrained predictor.

    Seeds default to the peaks of each class's confidence map.
    """
    if conf_artery.size != conf_vein.size:
        raise DimensionMismatch("artery/vein confidence maps", conf_artery.size, conf_vein.size)
    graphs = []
    for label, conf, seeds in (
        (ClassLabel.ARTERY, conf_artery, seeds_artery),
        (ClassLabel.VEIN, conf_vein, seeds_vein),
    ):
        if seeds is None:
            seeds = select_seeds(conf, params.seed_threshold, params.seed_min_dist)
        run_params = dataclasses.replace(params, label=label)
        graphs.append(trace(predictor_av, conf, seeds, run_params).graph)
    return union_graphs(graphs, conf_artery.width, conf_artery.height)
