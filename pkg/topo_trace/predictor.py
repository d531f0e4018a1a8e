"""The local-connectivity predictor contract, its implementations, and peak
extraction from heatmaps.

A predictor is any callable `predictor(window, label=None) -> Heatmap`. It is
bound to one image when constructed; `window.query` carries the point that
plays the role of the patch center when the window had to be shifted to fit
the image. Implementations must be deterministic and safe to call from
several threads.
"""

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Protocol

import numpy as np
from scipy import ndimage
from skimage.morphology import local_maxima

from topo_trace import formats
from topo_trace.errors import HeatmapFormatError, PredictorMiss, TopologyError, WindowError
from topo_trace.netgraph import (
    DEFAULT_PATCH_SIZE,
    ClassLabel,
    NetworkGraph,
    PatchWindow,
    clip_to_window,
    round_half_away,
)
from topo_trace.patchgt import (
    DEFAULT_SIGMA,
    GtMode,
    Heatmap,
    check_mode,
    local_points,
    make_gt_heatmap,
    read_heatmap,
    select_gt_points,
    write_heatmap,
)

_LOGGER = logging.getLogger("topo-trace.predictor")

## Side of the Chebyshev ball suppressed around each accepted peak
DEFAULT_NMS_RADIUS = 3

## A stored heatmap answers query points within this distance
STORE_MATCH_RADIUS = 1.0

## Threshold used to recover peak positions from an opaque inner predictor
CORRUPT_PEAK_THRESHOLD = 0.5

## Candidate pixels for peak extraction: all of them, or regional maxima only
PEAK_POLICIES = ("greedy", "local_maxima")


class Predictor(Protocol):
    def __call__(
        self, window: PatchWindow, label: Optional[ClassLabel] = None
    ) -> Heatmap: ...


def theta_from_level(level: float) -> float:
    """Map an 8-bit threshold level (e.g. 20, 25, 30) onto [0, 1]."""
    if not 0 < level <= 255:
        raise TopologyError(f"threshold level must be in (0, 255], got {level}")
    return level / 255.0


class Peak(NamedTuple):
    x: int
    y: int
    score: float


@dataclass(frozen=True)
class PeakSet:
    peaks: tuple
    threshold: float
    nms_radius: int

    def __len__(self) -> int:
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    def coordinates(self) -> set:
        return {(p.x, p.y) for p in self.peaks}


def greedy_peaks(
    values: np.ndarray,
    threshold: float,
    radius: int,
    allowed: Optional[np.ndarray] = None,
) -> list[Peak]:
    """Greedy non-maximum suppression over a grid indexed [y, x].

    Repeatedly takes the largest remaining value >= threshold (ties: smaller
    y, then smaller x) and suppresses the Chebyshev ball of `radius` around it.
    """
    candidates = values >= threshold
    if allowed is not None:
        candidates &= allowed
    ys, xs = np.nonzero(candidates)
    if len(ys) == 0:
        return []
    scores = values[ys, xs]
    order = np.lexsort((xs, ys, -scores))
    suppressed = np.zeros(values.shape, dtype=bool)
    peaks = []
    for i in order:
        y, x = int(ys[i]), int(xs[i])
        if suppressed[y, x]:
            continue
        peaks.append(Peak(x, y, float(scores[i])))
        suppressed[max(0, y - radius) : y + radius + 1, max(0, x - radius) : x + radius + 1] = True
    return peaks


def regional_maxima(values: np.ndarray, threshold: float) -> np.ndarray:
    """One pixel per plateau of local maxima >= threshold.

    The kept pixel is the one nearest the plateau's centroid (ties: smaller
    y, then smaller x), so a clamped run of 1.0 values yields a single peak.
    """
    mask = local_maxima(values, connectivity=2, allow_borders=True) & (values >= threshold)
    keep = np.zeros(values.shape, dtype=bool)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return keep
    centroids = np.array(ndimage.center_of_mass(mask, labels, np.arange(1, n + 1)))
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    cy, cx = centroids[lab - 1].T
    d = (ys - cy) ** 2 + (xs - cx) ** 2
    order = np.lexsort((xs, ys, d, lab))
    first = np.ones(len(order), dtype=bool)
    first[1:] = lab[order][1:] != lab[order][:-1]
    pick = order[first]
    keep[ys[pick], xs[pick]] = True
    return keep


def _check_peak_args(threshold: float, nms_radius: int, policy: str) -> None:
    if not 0 < threshold <= 1:
        raise TopologyError(f"threshold must be in (0, 1], got {threshold}")
    if nms_radius < 1:
        raise TopologyError(f"nms radius must be at least 1, got {nms_radius}")
    if policy not in PEAK_POLICIES:
        raise TopologyError(
            f"unknown peak policy {policy!r} (expected one of {', '.join(PEAK_POLICIES)})"
        )


def extract_peaks(
    h: Heatmap,
    threshold: float,
    nms_radius: int = DEFAULT_NMS_RADIUS,
    policy: str = "greedy",
) -> PeakSet:
    """Greedy NMS over every heatmap pixel >= threshold.

    With policy "local_maxima" only one pixel per plateau of regional maxima
    is a candidate, so the shoulders of two merged peaks are never accepted.
    """
    _check_peak_args(threshold, nms_radius, policy)
    allowed = regional_maxima(h.values, threshold) if policy == "local_maxima" else None
    peaks = greedy_peaks(h.values, threshold, nms_radius, allowed)
    return PeakSet(tuple(peaks), threshold, nms_radius)


# Ground-truth oracle


def oracle_points(
    graph: NetworkGraph,
    window: PatchWindow,
    mode: GtMode,
    label: Optional[ClassLabel] = None,
) -> list[tuple[float, float]]:
    """GT border points in patch coordinates, as the oracle would render them.

    In connectivity-av mode a class-constrained query (`label` given) whose
    center lies on a polyline of another class yields no points.
    """
    mode = GtMode.parse(mode)
    check_mode(graph, mode)
    clipped = clip_to_window(graph, window)
    if mode is GtMode.CONNECTIVITY_AV and label is not None:
        center_label = clipped.center_label
        if center_label is not None and center_label != label:
            return []
    return local_points(select_gt_points(clipped, mode), window)


def oracle_predict(
    graph: NetworkGraph,
    window: PatchWindow,
    mode: GtMode,
    label: Optional[ClassLabel] = None,
    sigma: float = DEFAULT_SIGMA,
) -> Heatmap:
    """The GT heatmap itself; stands in for a trained patch-level model."""
    points = oracle_points(graph, window, mode, label)
    return make_gt_heatmap(points, window.patch_size, sigma)


@dataclass(frozen=True)
class OraclePredictor:
    graph: NetworkGraph
    mode: GtMode = GtMode.CONNECTIVITY
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        object.__setattr__(self, "mode", GtMode.parse(self.mode))
        check_mode(self.graph, self.mode)

    def __call__(
        self, window: PatchWindow, label: Optional[ClassLabel] = None
    ) -> Heatmap:
        return oracle_predict(self.graph, window, self.mode, label, self.sigma)

    def gt_local_points(
        self, window: PatchWindow, label: Optional[ClassLabel] = None
    ) -> list[tuple[float, float]]:
        return oracle_points(self.graph, window, self.mode, label)


# File-backed predictor


class HeatmapStore:
    """A directory of heatmaps indexed by query point through `manifest.txt`.

    Entries are keyed on the point the tracer queried, which differs from the
    window center when a window was shifted to fit inside the image.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.entries = formats.read_manifest(self.directory)
        self._queries = np.array(
            [(e.center_x, e.center_y) for e in self.entries], dtype=np.float64
        ).reshape(-1, 2)
        self._cache: dict[int, Heatmap] = {}
        self._lock = threading.Lock()
        _LOGGER.info(f"Opened heatmap store {self.directory} with {len(self.entries)} entries")

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, query) -> int:
        """Index of the nearest entry within STORE_MATCH_RADIUS (ties: manifest order)."""
        if len(self.entries) == 0:
            raise PredictorMiss(query)
        d = np.hypot(self._queries[:, 0] - query[0], self._queries[:, 1] - query[1])
        i = int(np.argmin(d))
        if d[i] > STORE_MATCH_RADIUS:
            raise PredictorMiss(query)
        return i

    def window(
        self,
        index: int,
        width: int,
        height: int,
        patch_size: int = DEFAULT_PATCH_SIZE,
        square_side: Optional[int] = None,
    ) -> PatchWindow:
        """The window the tracer would have used for entry `index`."""
        entry = self.entries[index]
        window = PatchWindow.fitted(
            (entry.center_x, entry.center_y), width, height, patch_size, square_side
        )
        if window is None:
            raise WindowError(
                f"a {patch_size} px patch does not fit inside a {width}x{height} image"
            )
        return window

    def heatmap(self, index: int) -> Heatmap:
        with self._lock:
            cached = self._cache.get(index)
        if cached is None:
            cached = read_heatmap(self.entries[index].path)
            with self._lock:
                self._cache[index] = cached
        return cached


def file_predict(store: HeatmapStore, window: PatchWindow) -> Heatmap:
    heatmap = store.heatmap(store.lookup(window.query))
    if heatmap.side != window.patch_size:
        raise HeatmapFormatError(
            f"stored heatmap for {window.query} is {heatmap.side} px,"
            f" expected {window.patch_size} px"
        )
    return heatmap


@dataclass(frozen=True)
class FilePredictor:
    store: HeatmapStore

    def __call__(
        self, window: PatchWindow, label: Optional[ClassLabel] = None
    ) -> Heatmap:
        return file_predict(self.store, window)


@dataclass
class RecordingPredictor:
    """Passes queries through and remembers the first heatmap seen per query point."""

    inner: Predictor
    records: dict = field(default_factory=dict)

    def __call__(
        self, window: PatchWindow, label: Optional[ClassLabel] = None
    ) -> Heatmap:
        heatmap = self.inner(window, label)
        self.records.setdefault(window.query, heatmap)
        return heatmap


def write_store(directory, records: dict) -> None:
    """Serialize {query: Heatmap} as a heatmap store readable by HeatmapStore."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (query, heatmap) in enumerate(sorted(records.items())):
        name = f"heatmap_{i:05d}.pgm"
        write_heatmap(directory / name, heatmap)
        entries.append(formats.ManifestEntry(query[0], query[1], Path(name)))
    formats.write_manifest(directory, entries)
    _LOGGER.info(f"Wrote {len(entries)} heatmaps to {directory}")


# Robustness harness


def corrupt_points(
    points,
    rng: np.random.Generator,
    drop_rate: float,
    jitter: int,
    patch_size: int,
) -> list[tuple[float, float]]:
    """Drop each point with probability drop_rate, shift the rest by integer offsets."""
    n = len(points)
    if n == 0:
        return []
    keep = rng.random(n) >= drop_rate
    if jitter > 0:
        offsets = rng.integers(-jitter, jitter + 1, size=(n, 2))
    else:
        offsets = np.zeros((n, 2), dtype=np.int64)
    kept = []
    for (x, y), (ox, oy), k in zip(points, offsets, keep):
        if k:
            kept.append(
                (
                    float(np.clip(x + ox, 0, patch_size - 1)),
                    float(np.clip(y + oy, 0, patch_size - 1)),
                )
            )
    return kept


@dataclass(frozen=True)
class CorruptedPredictor:
    inner: Predictor
    drop_rate: float
    jitter: int
    rng_seed: int
    nms_radius: int = DEFAULT_NMS_RADIUS

    def __post_init__(self):
        if not 0 <= self.drop_rate <= 1:
            raise TopologyError(f"drop rate must be in [0, 1], got {self.drop_rate}")
        if self.jitter < 0:
            raise TopologyError(f"jitter must be non-negative, got {self.jitter}")
        if self.rng_seed < 0:
            raise TopologyError(f"rng seed must be non-negative, got {self.rng_seed}")

    def __call__(
        self, window: PatchWindow, label: Optional[ClassLabel] = None
    ) -> Heatmap:
        sigma = getattr(self.inner, "sigma", DEFAULT_SIGMA)
        if hasattr(self.inner, "gt_local_points"):
            points = self.inner.gt_local_points(window, label)
        else:
            peaks = extract_peaks(
                self.inner(window, label), CORRUPT_PEAK_THRESHOLD, self.nms_radius
            )
            points = [(float(p.x), float(p.y)) for p in peaks]
        # Randomness depends only on (seed, query point), never on call order
        qx, qy = window.query
        rng = np.random.default_rng([self.rng_seed, round_half_away(qx), round_half_away(qy)])
        kept = corrupt_points(points, rng, self.drop_rate, self.jitter, window.patch_size)
        return make_gt_heatmap(kept, window.patch_size, sigma)


def corrupt_oracle(
    inner: Predictor, drop_rate: float, jitter: int, rng_seed: int
) -> CorruptedPredictor:
    return CorruptedPredictor(inner, drop_rate, int(jitter), int(rng_seed))
