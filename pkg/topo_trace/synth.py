"""Deterministic synthetic networks and confidence maps for closed-loop checks."""

import dataclasses
import logging
import math
import multiprocessing
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage
from shapely.geometry import LineString
from shapely.ops import substring

from topo_trace import formats
from topo_trace.errors import PlacementError, TopologyError
from topo_trace.netgraph import (
    ClassLabel,
    GraphBuilder,
    NetworkGraph,
    rasterize,
    save_graph,
)
from topo_trace.tracer import ConfidenceMap, write_confidence

_LOGGER = logging.getLogger("topo-trace.synth")

# Global configuration

## Geometry keeps this many pixels away from the image border
BORDER_MARGIN = 4

## Attempts per tree root (or per lattice) before giving up
MAX_PLACEMENT_ATTEMPTS = 200

## Attempts to branch from one leaf before it is dropped
LEAF_ATTEMPTS = 20

## Whole-network restarts, each from a fresh generator derived from the seed
MAX_RESTARTS = 50

## Sideways bend of a branch's midpoint, as a fraction of its length
MAX_BEND = 0.1

## Siblings only need to separate beyond this many min_separations from their junction
ADJACENT_CLEARANCE = 3

DATASET_MANIFEST = "dataset.txt"

KINDS = ("tree", "grid")


@dataclass(frozen=True)
class SynthParams:
    kind: str = "tree"
    width: int = 256
    height: int = 256
    branches: int = 8
    branch_length: tuple = (30, 60)
    branch_angle_jitter: float = 35.0
    min_separation: float = 8.0
    class_mix: float = 0.5
    trees: int = 1
    deletions: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TopologyError(f"unknown kind {self.kind!r} (expected tree or grid)")
        if self.width < 128 or self.height < 128:
            raise TopologyError(
                f"synthetic images must be at least 128x128, got {self.width}x{self.height}"
            )
        if self.min_separation < 3:
            raise TopologyError(
                f"min separation must be at least 3 px, got {self.min_separation}"
            )
        lo, hi = self.branch_length
        if not 0 < lo <= hi:
            raise TopologyError(f"bad branch length range {self.branch_length}")
        object.__setattr__(self, "branch_length", (lo, hi))
        if self.branches < 0 or self.trees < 1 or self.deletions < 0:
            raise TopologyError("branches and deletions must be >= 0 and trees >= 1")
        if not 0 <= self.class_mix <= 1:
            raise TopologyError(f"class mix must be in [0, 1], got {self.class_mix}")
        if self.rng_seed < 0:
            raise TopologyError(f"rng seed must be non-negative, got {self.rng_seed}")


class _Segment(NamedTuple):
    u: int
    v: int
    points: tuple
    line: LineString
    label: ClassLabel


class _Layout:
    """Accepted polylines and the separation test new ones must pass."""

    def __init__(self, params: SynthParams):
        self.params = params
        self.builder = GraphBuilder(params.width, params.height)
        self.segments: list[_Segment] = []
        # Position of each vertex created so far
        self.positions: dict[int, tuple[int, int]] = {}

    def inside(self, points) -> bool:
        m = BORDER_MARGIN
        return all(
            m <= x <= self.params.width - 1 - m and m <= y <= self.params.height - 1 - m
            for x, y in points
        )

    def separated(self, points, start_vertex: Optional[int]) -> bool:
        """Whether a polyline leaving `start_vertex` keeps clear of accepted ones."""
        sep = self.params.min_separation
        line = LineString(points)
        tail = None
        for seg in self.segments:
            if start_vertex is not None and start_vertex in (seg.u, seg.v):
                if tail is None:
                    clearance = ADJACENT_CLEARANCE * sep
                    if line.length <= clearance:
                        return False
                    tail = substring(line, clearance, line.length)
                if tail.distance(seg.line) < sep:
                    return False
            elif line.distance(seg.line) < sep:
                return False
        return True

    def add(self, points, label: ClassLabel) -> tuple[int, int]:
        u = self.builder.add_vertex(*points[0])
        v = self.builder.add_vertex(*points[-1])
        self.positions[u] = points[0]
        self.positions[v] = points[-1]
        self.builder.add_edge(u, v, points, label, unique=False)
        self.segments.append(_Segment(u, v, tuple(points), LineString(points), label))
        return u, v


def _polyline(rng: np.random.Generator, start, angle: float, length: float) -> tuple:
    """A two-piece polyline from `start` heading `angle` (radians), on integer pixels."""
    dx, dy = math.cos(angle), math.sin(angle)
    bend = rng.uniform(-MAX_BEND, MAX_BEND) * length
    mid = (
        start[0] + 0.5 * length * dx - bend * dy,
        start[1] + 0.5 * length * dy + bend * dx,
    )
    end = (start[0] + length * dx, start[1] + length * dy)
    points = [tuple(start)] + [(int(round(x)), int(round(y))) for x, y in (mid, end)]
    return tuple(points)


def _distinct(points) -> bool:
    return all(a != b for a, b in zip(points, points[1:])) and points[0] != points[-1]


def _tree_label(index: int, trees: int, class_mix: float) -> ClassLabel:
    return ClassLabel.ARTERY if (index + 0.5) / trees <= class_mix else ClassLabel.VEIN


def _generate_trees(params: SynthParams, rng: np.random.Generator) -> NetworkGraph:
    layout = _Layout(params)
    lo, hi = params.branch_length
    jitter = math.radians(params.branch_angle_jitter)
    # (vertex, heading, label) of every tip that may still branch
    leaves = []
    for t in range(params.trees):
        label = _tree_label(t, params.trees, params.class_mix)
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            start = (
                int(rng.integers(params.width // 4, 3 * params.width // 4)),
                int(rng.integers(params.height // 4, 3 * params.height // 4)),
            )
            angle = rng.uniform(0, 2 * math.pi)
            points = _polyline(rng, start, angle, rng.uniform(lo, hi))
            if (
                _distinct(points)
                and layout.inside(points)
                and layout.separated(points, None)
            ):
                break
        else:
            raise PlacementError("could not satisfy separation placing a tree root")
        _, tip = layout.add(points, label)
        leaves.append((tip, angle, label))

    remaining = params.branches
    while remaining > 0:
        k = min(2, remaining)
        placed = None
        # A leaf facing the border or a neighbor is dropped, not retried forever
        while leaves and placed is None:
            i = int(rng.integers(len(leaves)))
            tip, heading, label = leaves[i]
            start = layout.positions[tip]
            for _ in range(LEAF_ATTEMPTS):
                children = []
                for _ in range(k):
                    angle = heading + rng.uniform(-jitter, jitter)
                    children.append((_polyline(rng, start, angle, rng.uniform(lo, hi)), angle))
                if _children_fit(layout, tip, [c for c, _ in children]):
                    placed = children
                    break
            leaves.pop(i)
        if placed is None:
            raise PlacementError(
                f"every leaf is stuck with {remaining} of {params.branches} branches left"
            )
        for points, angle in placed:
            _, end = layout.add(points, label)
            leaves.append((end, angle, label))
        remaining -= k
    return layout.builder.build()


def _children_fit(layout: _Layout, tip: int, children: list) -> bool:
    for points in children:
        if not (_distinct(points) and layout.inside(points)):
            return False
        if not layout.separated(points, tip):
            return False
    if len(children) == 2:
        a, b = (LineString(c) for c in children)
        clearance = ADJACENT_CLEARANCE * layout.params.min_separation
        if a.length <= clearance or b.length <= clearance:
            return False
        if substring(a, clearance, a.length).distance(b) < layout.params.min_separation:
            return False
        if substring(b, clearance, b.length).distance(a) < layout.params.min_separation:
            return False
    return True


def _generate_grid(params: SynthParams, rng: np.random.Generator) -> NetworkGraph:
    lo, hi = params.branch_length
    spacing = (lo + hi) / 2
    wobble = max(1, int(spacing // 6))
    m = BORDER_MARGIN + wobble
    nx_ = max(2, int((params.width - 1 - 2 * m) // spacing) + 1)
    ny_ = max(2, int((params.height - 1 - 2 * m) // spacing) + 1)
    lattice = [((i, j), (i + 1, j)) for j in range(ny_) for i in range(nx_ - 1)]
    lattice += [((i, j), (i, j + 1)) for j in range(ny_ - 1) for i in range(nx_)]
    if params.deletions > len(lattice):
        raise TopologyError(
            f"cannot delete {params.deletions} of {len(lattice)} lattice edges"
        )

    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        nodes = {}
        for j in range(ny_):
            for i in range(nx_):
                ox, oy = rng.integers(-wobble, wobble + 1, size=2)
                nodes[(i, j)] = (
                    int(round(m + i * spacing)) + int(ox),
                    int(round(m + j * spacing)) + int(oy),
                )
        dropped = set(rng.choice(len(lattice), size=params.deletions, replace=False).tolist())
        layout = _Layout(params)
        ok = True
        for k, (a, b) in enumerate(lattice):
            if k in dropped:
                continue
            points = (nodes[a], nodes[b])
            if not (_distinct(points) and layout.inside(points)):
                ok = False
                break
            ends = {points[0], points[1]}
            line = LineString(points)
            if any(
                line.distance(s.line) < params.min_separation
                for s in layout.segments
                if not ends & {s.points[0], s.points[-1]}
            ):
                ok = False
                break
            layout.add(points, ClassLabel.ROAD)
        if ok:
            return layout.builder.build()
    raise PlacementError("could not satisfy separation laying out the grid")


def generate_network(params: SynthParams) -> NetworkGraph:
    """A random network: branching trees (vessels) or a perturbed lattice (roads).

    When placement gets stuck the whole network is redrawn from a generator
    seeded with (rng_seed, restart), so the result still depends only on
    `params`.
    """
    generate = _generate_trees if params.kind == "tree" else _generate_grid
    for restart in range(MAX_RESTARTS):
        seed = params.rng_seed if restart == 0 else [params.rng_seed, restart]
        try:
            graph = generate(params, np.random.default_rng(seed))
            break
        except PlacementError as e:
            _LOGGER.debug(f"Seed {params.rng_seed}, restart {restart}: {e}")
    else:
        raise PlacementError(
            f"seed {params.rng_seed}: placement failed after {MAX_RESTARTS} restarts"
        )
    _LOGGER.debug(
        f"Generated {params.kind} network (seed {params.rng_seed}, restart {restart}):"
        f" {len(graph.vertices)} vertices, {len(graph.edges)} edges"
    )
    return graph


def render_confidence(
    graph: NetworkGraph, line_width: float, noise_sigma: float = 0.0, rng_seed: int = 0
) -> ConfidenceMap:
    """Linear falloff from 1 on the centerlines to 0 at `line_width`, plus clamped noise."""
    if line_width < 1:
        raise TopologyError(f"line width must be at least 1, got {line_width}")
    if noise_sigma < 0:
        raise TopologyError(f"noise sigma must be non-negative, got {noise_sigma}")
    lines = rasterize(graph).bits
    if lines.any():
        distance = ndimage.distance_transform_edt(~lines)
        values = np.clip(1.0 - distance / line_width, 0.0, 1.0)
    else:
        values = np.zeros(graph.shape)
    if noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        values = np.clip(values + rng.normal(0.0, noise_sigma, size=values.shape), 0.0, 1.0)
    return ConfidenceMap(values)


class DatasetItem(NamedTuple):
    graph: Path
    confidence: Path


def _write_item(job) -> DatasetItem:
    directory, params, line_width, noise_sigma = job
    graph = generate_network(params)
    conf = render_confidence(graph, line_width, noise_sigma, params.rng_seed)
    stem = f"{params.kind}_{params.rng_seed:05d}"
    item = DatasetItem(directory / f"{stem}.json", directory / f"{stem}_conf.pgm")
    save_graph(item.graph, graph)
    write_confidence(item.confidence, conf)
    return item


def write_dataset(
    directory,
    params: SynthParams,
    count: int,
    line_width: float = 3.0,
    noise_sigma: float = 0.0,
    jobs: int = 1,
) -> list[DatasetItem]:
    """Write `count` instances seeded params.rng_seed, params.rng_seed + 1, ...

    The dataset manifest lists one "graph.json confidence.pgm" pair per line,
    in seed order.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    batch = [
        (directory, _with_seed(params, params.rng_seed + i), line_width, noise_sigma)
        for i in range(count)
    ]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            items = pool.map(_write_item, batch)
    else:
        items = [_write_item(job) for job in batch]
    with formats.atomic_write(directory / DATASET_MANIFEST, mode="w") as f:
        for item in items:
            f.write(f"{item.graph.name} {item.confidence.name}\n")
    _LOGGER.info(f"Wrote {len(items)} synthetic instances to {directory}")
    return items


def read_dataset(directory) -> list[DatasetItem]:
    directory = Path(directory)
    items = []
    with open(directory / DATASET_MANIFEST, "r", encoding="utf-8") as f:
        for line in f:
            fields = line.split()
            if fields:
                items.append(DatasetItem(directory / fields[0], directory / fields[1]))
    return items


def _with_seed(params: SynthParams, seed: int) -> SynthParams:
    return dataclasses.replace(params, rng_seed=seed)
