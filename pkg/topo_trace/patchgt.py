"""Patch-level ground truth: which border points a patch should light up,
rendered as a heatmap of Gaussian peaks.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from topo_trace import formats
from topo_trace.errors import GtModeError, HeatmapFormatError, TopologyError
from topo_trace.netgraph import (
    DEFAULT_PATCH_SIZE,
    BorderPoint,
    ClassLabel,
    ClippedSubgraph,
    NetworkGraph,
    PatchReach,
    PatchWindow,
    clip_to_window,
    connected_in_patch,
    round_half_away,
)

_LOGGER = logging.getLogger("topo-trace.patchgt")

## Width of the GT Gaussian peaks, in pixels
DEFAULT_SIGMA = 2.0


class GtMode(str, enum.Enum):
    NON_CONNECTIVITY = "non_connectivity"
    CONNECTIVITY = "connectivity"
    CONNECTIVITY_AV = "connectivity_av"

    @classmethod
    def parse(cls, value) -> "GtMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "_"))
        except ValueError:
            names = ", ".join(m.value.replace("_", "-") for m in cls)
            raise ValueError(f"unknown mode {value!r} (expected one of {names})")

    @property
    def cli_name(self) -> str:
        return self.value.replace("_", "-")


@dataclass(frozen=True, eq=False)
class Heatmap:
    """A side x side grid of scores in [0, 1], indexed [y, x] in patch coordinates."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise HeatmapFormatError(f"heatmap must be square, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise HeatmapFormatError("heatmap values must be finite")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise HeatmapFormatError("heatmap values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, side: int) -> "Heatmap":
        return cls(np.zeros((side, side)))

    @property
    def side(self) -> int:
        return self.values.shape[0]


def check_mode(graph: NetworkGraph, mode: GtMode) -> None:
    # Unlabeled geometry is allowed; only road graphs lack vessel classes
    if mode is GtMode.CONNECTIVITY_AV and ClassLabel.ROAD in graph.labels:
        raise GtModeError("connectivity-av does not apply to road graphs")


def gt_points(
    graph: NetworkGraph, window: PatchWindow, mode: GtMode
) -> list[BorderPoint]:
    """Border points of the window's GT square that the given mode keeps.

    non_connectivity keeps every crossing; connectivity keeps those reachable
    from the patch center inside the square; connectivity_av additionally
    requires every traversed piece to share the class of the center's piece.
    A center off the network keeps nothing in the connectivity modes.
    """
    mode = GtMode.parse(mode)
    check_mode(graph, mode)
    return select_gt_points(clip_to_window(graph, window), mode)


def select_gt_points(clipped: ClippedSubgraph, mode: GtMode) -> list[BorderPoint]:
    window = clipped.window
    if mode is GtMode.NON_CONNECTIVITY:
        return list(clipped.border_points)
    same_class = mode is GtMode.CONNECTIVITY_AV
    kept = []
    for bp in clipped.border_points:
        reach = connected_in_patch(clipped, bp, same_class=same_class)
        if reach is PatchReach.NO_CENTER:
            _LOGGER.debug(f"No network under the center of window {window.center}")
            return []
        if reach is PatchReach.CONNECTED:
            kept.append(bp)
    return kept


def make_gt_heatmap(
    points: Iterable[tuple[float, float]],
    patch_size: int = DEFAULT_PATCH_SIZE,
    sigma: float = DEFAULT_SIGMA,
) -> Heatmap:
    """Sum of unit Gaussians at `points` (patch coordinates), clamped to 1.

    The grid is evaluated at pixel centers. Points are summed in sorted order
    so the result does not depend on their order.
    """
    if not sigma > 0:
        raise TopologyError(f"sigma must be positive, got {sigma}")
    pts = sorted((float(x), float(y)) for x, y in points)
    for x, y in pts:
        if not (0 <= x < patch_size and 0 <= y < patch_size):
            raise TopologyError(f"GT point ({x}, {y}) lies outside the {patch_size} px patch")
    values = np.zeros((patch_size, patch_size))
    if not pts:
        return Heatmap(values)
    coords = np.arange(patch_size, dtype=np.float64)
    denom = 2.0 * sigma * sigma
    for x, y in pts:
        gx = np.exp(-((coords - x) ** 2) / denom)
        gy = np.exp(-((coords - y) ** 2) / denom)
        values += np.outer(gy, gx)
    return Heatmap(np.clip(values, 0.0, 1.0))


def local_points(points: Iterable[BorderPoint], window: PatchWindow) -> list[tuple]:
    return [bp.local(window) for bp in points]


def gt_heatmap(
    graph: NetworkGraph,
    window: PatchWindow,
    mode: GtMode,
    sigma: float = DEFAULT_SIGMA,
) -> Heatmap:
    return make_gt_heatmap(
        local_points(gt_points(graph, window, mode), window), window.patch_size, sigma
    )


def sample_training_patches(
    graph: NetworkGraph,
    n: int,
    patch_size: int = DEFAULT_PATCH_SIZE,
    rng_seed: int = 0,
    square_side: Optional[int] = None,
) -> list[PatchWindow]:
    """Draw `n` windows centered on uniformly chosen vertices, with replacement.

    Only vertices whose whole window fits inside the image are eligible.
    """
    eligible = []
    for vertex in sorted(graph.vertices, key=lambda v: v.id):
        center = (round_half_away(vertex.x), round_half_away(vertex.y))
        window = PatchWindow(center, patch_size, square_side)
        if window.fits(graph.width, graph.height):
            eligible.append(window)
    if not eligible:
        raise TopologyError(
            f"no vertex admits a {patch_size} px window inside the"
            f" {graph.width}x{graph.height} image"
        )
    rng = np.random.default_rng(rng_seed)
    picks = rng.integers(0, len(eligible), size=n)
    _LOGGER.info(f"Sampled {n} patches from {len(eligible)} eligible vertices")
    return [eligible[i] for i in picks]


def read_heatmap(path) -> Heatmap:
    return Heatmap(formats.read_graymap(path))


def write_heatmap(path, heatmap: Heatmap) -> None:
    formats.write_graymap16(path, heatmap.values)
