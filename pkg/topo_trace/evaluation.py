"""Boundary precision/recall, the connectivity measure C and its F measure,
patch-level detection curves and the morphological-skeleton baseline.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree
from skimage.draw import line as draw_line
from skimage.morphology import thin

from topo_trace.errors import ConnectivityUndefined, DimensionMismatch, TopologyError
from topo_trace.netgraph import (
    ClassLabel,
    NetworkGraph,
    SkeletonRaster,
    rasterize,
    round_half_away,
)
from topo_trace.patchgt import Heatmap
from topo_trace.predictor import DEFAULT_NMS_RADIUS, extract_peaks, theta_from_level
from topo_trace.tracer import ConfidenceMap

_LOGGER = logging.getLogger("topo-trace.evaluation")

## Pixel matching tolerance for boundary precision/recall
DEFAULT_TOLERANCE_PX = 2

## Detections within this distance of a GT border point count as hits
DEFAULT_MATCH_RADIUS = 3

## A GT edge counts as connected when min/max of the route lengths exceeds this
EDGE_MATCH_RATIO = 0.8

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class Matching:
    """One-to-one pairing of predicted and GT skeleton pixels.

    Pixels are stored as (y, x) rows; `pair_pred[i]` and `pair_gt[i]` index
    into `pred_pixels` and `gt_pixels`.
    """

    width: int
    height: int
    pred_pixels: np.ndarray
    gt_pixels: np.ndarray
    pair_pred: np.ndarray
    pair_gt: np.ndarray
    tolerance: float

    @property
    def tp(self) -> int:
        return len(self.pair_pred)

    @property
    def fp(self) -> int:
        return len(self.pred_pixels) - len(self.pair_pred)

    @property
    def fn(self) -> int:
        return len(self.gt_pixels) - len(self.pair_gt)

    @property
    def pairs(self) -> list:
        """((pred_x, pred_y), (gt_x, gt_y)) for every matched pair."""
        out = []
        for i, j in zip(self.pair_pred, self.pair_gt):
            py, px = self.pred_pixels[i]
            gy, gx = self.gt_pixels[j]
            out.append(((int(px), int(py)), (int(gx), int(gy))))
        return out

    def _unmatched(self, pixels: np.ndarray, matched: np.ndarray) -> set:
        mask = np.ones(len(pixels), dtype=bool)
        mask[matched] = False
        return {(int(x), int(y)) for y, x in pixels[mask]}

    @property
    def unmatched_pred(self) -> set:
        return self._unmatched(self.pred_pixels, self.pair_pred)

    @property
    def unmatched_gt(self) -> set:
        return self._unmatched(self.gt_pixels, self.pair_gt)


def _check_same_size(pred: SkeletonRaster, gt: SkeletonRaster) -> None:
    if pred.shape != gt.shape:
        raise DimensionMismatch(
            "prediction vs ground truth", (pred.width, pred.height), (gt.width, gt.height)
        )


def match_skeletons(pred: SkeletonRaster, gt: SkeletonRaster, d: float) -> Matching:
    """Greedy one-to-one matching by increasing distance, up to `d` pixels.

    Ties on distance are broken by the smaller of the two pixels in (y, x)
    order, then the larger one, then the predicted pixel. The order does not
    depend on which raster plays the prediction, so swapping the inputs
    swaps precision and recall exactly.
    """
    _check_same_size(pred, gt)
    pred_pixels = np.argwhere(pred.bits)
    gt_pixels = np.argwhere(gt.bits)
    empty = np.zeros(0, dtype=np.int64)
    if len(pred_pixels) == 0 or len(gt_pixels) == 0:
        return Matching(pred.width, pred.height, pred_pixels, gt_pixels, empty, empty, d)

    candidates = cKDTree(pred_pixels).query_ball_tree(cKDTree(gt_pixels), d + 1e-9)
    ii = np.fromiter(
        (i for i, js in enumerate(candidates) for _ in js), dtype=np.int64
    )
    jj = np.fromiter((j for js in candidates for j in js), dtype=np.int64)
    if len(ii) == 0:
        return Matching(pred.width, pred.height, pred_pixels, gt_pixels, empty, empty, d)
    delta = pred_pixels[ii] - gt_pixels[jj]
    sq = (delta**2).sum(axis=1)
    keep = sq <= d * d + 1e-9
    ii, jj, sq = ii[keep], jj[keep], sq[keep]

    width = pred.width
    lin_p = pred_pixels[ii, 0] * width + pred_pixels[ii, 1]
    lin_g = gt_pixels[jj, 0] * width + gt_pixels[jj, 1]
    order = np.lexsort((lin_p, np.maximum(lin_p, lin_g), np.minimum(lin_p, lin_g), sq))

    used_p = np.zeros(len(pred_pixels), dtype=bool)
    used_g = np.zeros(len(gt_pixels), dtype=bool)
    pair_p, pair_g = [], []
    for k in order:
        i, j = ii[k], jj[k]
        if used_p[i] or used_g[j]:
            continue
        used_p[i] = used_g[j] = True
        pair_p.append(i)
        pair_g.append(j)
    return Matching(
        pred.width,
        pred.height,
        pred_pixels,
        gt_pixels,
        np.array(pair_p, dtype=np.int64),
        np.array(pair_g, dtype=np.int64),
        d,
    )


def f_measure(a: float, b: float) -> float:
    """Harmonic mean; 0 when both are 0."""
    if not (0 <= a <= 1 and 0 <= b <= 1):
        raise TopologyError(f"F measure inputs must lie in [0, 1], got {a}, {b}")
    if a + b == 0:
        return 0.0
    return 2 * a * b / (a + b)


def _ratios(tp: int, fp: int, fn: int) -> tuple[float, float]:
    if tp + fn == 0:
        raise ConnectivityUndefined("ground truth is empty: recall is undefined")
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    return precision, tp / (tp + fn)


def precision_recall(m: Matching) -> tuple[float, float, float]:
    """(P, R, F1_R); an empty prediction has P = 1 by convention."""
    precision, recall = _ratios(m.tp, m.fp, m.fn)
    return precision, recall, f_measure(precision, recall)


def _connectivity_terms(
    m: Matching, pred: SkeletonRaster, gt: SkeletonRaster
) -> tuple[int, int]:
    """(sum of largest matched groups, total GT pixels) over GT components."""
    _check_same_size(pred, gt)
    gt_labels, n_gt = ndimage.label(gt.bits, structure=_EIGHT)
    if n_gt == 0:
        raise ConnectivityUndefined("ground truth is empty: connectivity is undefined")
    total = int(gt.bits.sum())
    if m.tp == 0:
        return 0, total
    pred_labels, n_pred = ndimage.label(pred.bits, structure=_EIGHT)
    gy, gx = m.gt_pixels[m.pair_gt].T
    py, px = m.pred_pixels[m.pair_pred].T
    g = gt_labels[gy, gx]
    p = pred_labels[py, px]
    groups, counts = np.unique(g * (n_pred + 1) + p, return_counts=True)
    largest = np.zeros(n_gt + 1, dtype=np.int64)
    np.maximum.at(largest, groups // (n_pred + 1), counts)
    return int(largest.sum()), total


def connectivity(m: Matching, pred: SkeletonRaster, gt: SkeletonRaster) -> float:
    """Fraction of GT pixels covered, per GT component, by its best single predicted component.

    For each 8-connected GT component the matched pixels are grouped by the
    predicted component of their partners; the largest group counts. The
    result is weighted by component size, so C <= R always.
    """
    covered, total = _connectivity_terms(m, pred, gt)
    return covered / total


@dataclass(frozen=True)
class EvalReport:
    P: float
    R: float
    F1_R: float
    C: float
    F1_C: float
    tp: int
    fp: int
    fn: int
    tolerance_px: float
    # Numerator and denominator of C, kept for aggregation over images
    c_covered: int = 0
    c_total: int = 0
    CRR: Optional[float] = None

    def to_document(self) -> dict:
        doc = {
            "P": self.P,
            "R": self.R,
            "F1R": self.F1_R,
            "C": self.C,
            "F1C": self.F1_C,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tolerance_px": self.tolerance_px,
        }
        if self.CRR is not None:
            doc["CRR"] = self.CRR
        return doc

    def summary(self) -> str:
        """One line, metrics x100 as the tables print them."""
        text = (
            f"P={100 * self.P:.1f} R={100 * self.R:.1f} F1R={100 * self.F1_R:.1f}"
            f" C={100 * self.C:.1f} F1C={100 * self.F1_C:.1f}"
        )
        if self.CRR is not None:
            text += f" CRR={100 * self.CRR:.1f}"
        return text


def _report(tp, fp, fn, covered, total, d, crr=None) -> EvalReport:
    precision, recall = _ratios(tp, fp, fn)
    c = covered / total
    return EvalReport(
        precision,
        recall,
        f_measure(precision, recall),
        c,
        f_measure(precision, c),
        tp,
        fp,
        fn,
        d,
        covered,
        total,
        crr,
    )


def evaluate(
    pred: SkeletonRaster, gt: SkeletonRaster, d: float = DEFAULT_TOLERANCE_PX
) -> EvalReport:
    m = match_skeletons(pred, gt, d)
    covered, total = _connectivity_terms(m, pred, gt)
    report = _report(m.tp, m.fp, m.fn, covered, total, d)
    _LOGGER.debug(f"Evaluated at {d} px: {report.summary()}")
    return report


def combine_reports(reports: Iterable[EvalReport]) -> EvalReport:
    """Pool TP/FP/FN and the C terms over images; the order does not matter."""
    reports = list(reports)
    if not reports:
        raise ConnectivityUndefined("no reports to combine")
    d = reports[0].tolerance_px
    return _report(
        sum(r.tp for r in reports),
        sum(r.fp for r in reports),
        sum(r.fn for r in reports),
        sum(r.c_covered for r in reports),
        sum(r.c_total for r in reports),
        d,
    )


# Connected route ratio


def _pixel_graph(bits: np.ndarray):
    """8-connected adjacency over foreground pixels, and the pixel -> node map."""
    height, width = bits.shape
    node = np.full(bits.shape, -1, dtype=np.int64)
    ys, xs = np.nonzero(bits)
    node[ys, xs] = np.arange(len(ys))
    rows, cols = [], []
    for dy, dx in ((0, 1), (1, -1), (1, 0), (1, 1)):
        ny, nx_ = ys + dy, xs + dx
        ok = (ny < height) & (nx_ >= 0) & (nx_ < width)
        ok[ok] = bits[ny[ok], nx_[ok]]
        rows.append(node[ys[ok], xs[ok]])
        cols.append(node[ny[ok], nx_[ok]])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    n = len(ys)
    adjacency = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    return adjacency, node


def _edge_steps(points) -> tuple[tuple[int, int], tuple[int, int], int]:
    ints = [(round_half_away(x), round_half_away(y)) for x, y in points]
    pixels = set()
    for (x0, y0), (x1, y1) in zip(ints, ints[1:]):
        rr, cc = draw_line(y0, x0, y1, x1)
        pixels.update(zip(cc.tolist(), rr.tolist()))
    return ints[0], ints[-1], len(pixels) - 1


def edge_connectivity(
    pred: SkeletonRaster,
    gt: NetworkGraph,
    ratio: float = EDGE_MATCH_RATIO,
    class_filter: Optional[ClassLabel] = None,
) -> float:
    """Share of GT edges whose endpoints the prediction joins by a route of similar length.

    Each GT edge's end pixels are snapped to the nearest predicted pixel; the
    edge is connected when min/max of the predicted shortest-route length and
    the GT edge's digital length exceeds `ratio`.
    """
    if pred.shape != gt.shape:
        raise DimensionMismatch(
            "prediction vs ground truth", (pred.width, pred.height), (gt.width, gt.height)
        )
    edges = [e for e in gt.edges if class_filter is None or e.label == class_filter]
    if not edges:
        raise ConnectivityUndefined("ground truth has no edges: CRR is undefined")
    if not pred.bits.any():
        return 0.0
    adjacency, node = _pixel_graph(pred.bits)
    _, (near_y, near_x) = ndimage.distance_transform_edt(~pred.bits, return_indices=True)

    def snap(p):
        x, y = p
        return int(node[near_y[y, x], near_x[y, x]])

    connected = 0
    route_cache = {}
    for edge in edges:
        start, end, gt_len = _edge_steps(edge.points)
        s, t = snap(start), snap(end)
        if s not in route_cache:
            route_cache[s] = dijkstra(adjacency, directed=False, indices=s, unweighted=True)
        pred_len = route_cache[s][t]
        if gt_len == 0 and pred_len == 0:
            connected += 1
        elif math.isfinite(pred_len) and min(gt_len, pred_len) / max(gt_len, pred_len) > ratio:
            connected += 1
    return connected / len(edges)


# Overlays


def overlay(m: Matching) -> np.ndarray:
    """RGB rendering: true positives green, false positives blue, false negatives red."""
    rgb = np.zeros((m.height, m.width, 3), dtype=np.uint8)
    fn = np.ones(len(m.gt_pixels), dtype=bool)
    fn[m.pair_gt] = False
    fp = np.ones(len(m.pred_pixels), dtype=bool)
    fp[m.pair_pred] = False
    for pixels, color in (
        (m.gt_pixels[fn], (255, 0, 0)),
        (m.pred_pixels[m.pair_pred], (0, 255, 0)),
        (m.pred_pixels[fp], (0, 0, 255)),
    ):
        if len(pixels):
            rgb[pixels[:, 0], pixels[:, 1]] = color
    return rgb


# Patch-level curves


class CurvePoint(NamedTuple):
    threshold: float
    P: float
    R: float
    F: float


class PrCurve(NamedTuple):
    points: list
    best: CurvePoint

    def lines(self) -> list[str]:
        return [f"{p.threshold:g} {p.P:.6f} {p.R:.6f} {p.F:.6f}" for p in self.points]


def _match_points(detections: list, gt: Sequence, r: float) -> int:
    """Greedy one-to-one matches within r, closest pairs first."""
    if not detections or not len(gt):
        return 0
    det = np.asarray(detections, dtype=np.float64)
    ref = np.asarray(gt, dtype=np.float64)
    dist = np.hypot(det[:, None, 0] - ref[None, :, 0], det[:, None, 1] - ref[None, :, 1])
    ii, jj = np.nonzero(dist <= r + 1e-9)
    order = np.lexsort((jj, ii, dist[ii, jj]))
    used_d, used_g = set(), set()
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        if i in used_d or j in used_g:
            continue
        used_d.add(i)
        used_g.add(j)
    return len(used_d)


def patch_pr_curve(
    heatmaps: Sequence[Heatmap],
    gt_point_sets: Sequence[Sequence],
    match_radius: float = DEFAULT_MATCH_RADIUS,
    thresholds: Sequence[float] = tuple(t / 20 for t in range(1, 20)),
    nms_radius: int = DEFAULT_NMS_RADIUS,
) -> PrCurve:
    """Detection precision/recall of heatmap peaks against GT border points.

    Counts are pooled over all patches. With no detections P = 1, with no
    GT points R = 1. The best point is the first with maximal F.
    """
    if len(heatmaps) != len(gt_point_sets):
        raise TopologyError(
            f"{len(heatmaps)} heatmaps but {len(gt_point_sets)} GT point sets"
        )
    if not thresholds:
        raise TopologyError("at least one threshold is required")
    points = []
    for threshold in thresholds:
        tp = fp = fn = 0
        for heatmap, gt in zip(heatmaps, gt_point_sets):
            detections = [(p.x, p.y) for p in extract_peaks(heatmap, threshold, nms_radius)]
            hits = _match_points(detections, gt, match_radius)
            tp += hits
            fp += len(detections) - hits
            fn += len(gt) - hits
        precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
        recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
        points.append(CurvePoint(threshold, precision, recall, f_measure(precision, recall)))
    best = max(points, key=lambda p: p.F)
    return PrCurve(points, best)


# Morphological baseline


def skeletonize(binary: SkeletonRaster) -> SkeletonRaster:
    """Topology-preserving two-subiteration thinning to a unit-width skeleton."""
    return SkeletonRaster(binary.width, binary.height, thin(binary.bits))


def binarize(conf: ConfidenceMap, level: float) -> SkeletonRaster:
    return SkeletonRaster(conf.width, conf.height, conf.values >= theta_from_level(level))


def baseline_eval(
    conf: ConfidenceMap,
    level: float,
    gt: NetworkGraph,
    d: float = DEFAULT_TOLERANCE_PX,
    class_filter: Optional[ClassLabel] = None,
) -> EvalReport:
    """Skeleton of the confidence map binarized at level/255, scored against `gt`."""
    if conf.size != (gt.width, gt.height):
        raise DimensionMismatch(
            "confidence map vs ground truth", conf.size, (gt.width, gt.height)
        )
    skeleton = skeletonize(binarize(conf, level))
    return evaluate(skeleton, rasterize(gt, class_filter), d)
