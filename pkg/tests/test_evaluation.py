import json
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from topo_trace.errors import ConnectivityUndefined, DimensionMismatch
from topo_trace.evaluation import (
    baseline_eval,
    combine_reports,
    connectivity,
    edge_connectivity,
    evaluate,
    f_measure,
    match_skeletons,
    overlay,
    patch_pr_curve,
    precision_recall,
    skeletonize,
)
from topo_trace.netgraph import ClassLabel, SkeletonRaster, graph_from_polylines, rasterize
from topo_trace.patchgt import Heatmap, make_gt_heatmap
from topo_trace.synth import SynthParams, generate_network, render_confidence
from topo_trace.tracer import ConfidenceMap

PUBLISHED = Path(__file__).parent / "published" / "tables.json"


def raster_of(pixels, width=128, height=128):
    bits = np.zeros((height, width), dtype=bool)
    for x, y in pixels:
        bits[y, x] = True
    return SkeletonRaster(width, height, bits)


def hline(x0, x1, y, **kwargs):
    return raster_of([(x, y) for x in range(x0, x1 + 1)], **kwargs)


def components(raster):
    return ndimage.label(raster.bits, structure=np.ones((3, 3), dtype=bool))[1]


def published_rows():
    with open(PUBLISHED) as f:
        tables = json.load(f)["tables"]
    return [(name, row) for name, rows in tables.items() for row in rows]


def test_identical_skeletons():
    gt = hline(10, 89, 20)
    m = match_skeletons(gt, gt, 2)
    assert m.tp == 80
    assert m.unmatched_pred == set() and m.unmatched_gt == set()
    assert all(p == g for p, g in m.pairs)
    report = evaluate(gt, gt, 2)
    assert (report.P, report.R, report.F1_R, report.C, report.F1_C) == (1, 1, 1, 1, 1)


def test_shift_by_one():
    gt = hline(10, 89, 20)
    pred = hline(11, 90, 20)
    m = match_skeletons(pred, gt, 2)
    assert m.tp == 79
    assert m.unmatched_pred == {(90, 20)}
    assert m.unmatched_gt == {(10, 20)}


def test_shift_beyond_tolerance():
    gt = hline(10, 89, 20)
    pred = hline(10, 89, 25)
    m = match_skeletons(pred, gt, 2)
    assert m.tp == 0
    assert precision_recall(m) == (0.0, 0.0, 0.0)


def test_pairs_within_tolerance():
    rng = np.random.default_rng(3)
    pred = raster_of(set(map(tuple, rng.integers(0, 40, size=(150, 2)).tolist())), 40, 40)
    gt = raster_of(set(map(tuple, rng.integers(0, 40, size=(150, 2)).tolist())), 40, 40)
    m = match_skeletons(pred, gt, 2)
    seen_pred, seen_gt = set(), set()
    for (px, py), (gx, gy) in m.pairs:
        assert (px - gx) ** 2 + (py - gy) ** 2 <= 4
        assert (px, py) not in seen_pred and (gx, gy) not in seen_gt
        seen_pred.add((px, py))
        seen_gt.add((gx, gy))


def test_swap_swaps_precision_and_recall():
    rng = np.random.default_rng(11)
    for _ in range(10):
        a = raster_of(set(map(tuple, rng.integers(0, 50, size=(200, 2)).tolist())), 50, 50)
        b = raster_of(set(map(tuple, rng.integers(0, 50, size=(120, 2)).tolist())), 50, 50)
        p_ab, r_ab, _ = precision_recall(match_skeletons(a, b, 2))
        p_ba, r_ba, _ = precision_recall(match_skeletons(b, a, 2))
        assert p_ab == r_ba
        assert r_ab == p_ba


def test_connectivity_bounded_by_recall():
    rng = np.random.default_rng(12)
    for seed in range(4):
        gt = rasterize(generate_network(SynthParams(rng_seed=seed)))
        keep = rng.random(gt.bits.shape) > 0.3
        pred = SkeletonRaster(gt.width, gt.height, gt.bits & keep)
        report = evaluate(pred, gt, 2)
        assert report.C <= report.R


def test_empty_prediction():
    gt = hline(10, 89, 20)
    report = evaluate(SkeletonRaster.empty(128, 128), gt, 2)
    assert (report.P, report.R, report.C, report.F1_R, report.F1_C) == (1, 0, 0, 0, 0)


def test_empty_ground_truth():
    with pytest.raises(ConnectivityUndefined):
        evaluate(hline(10, 20, 5), SkeletonRaster.empty(128, 128), 2)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch, match="dimension mismatch 64x64 vs 128x128"):
        evaluate(SkeletonRaster.empty(64, 64), hline(10, 20, 5), 2)


def test_fragmented_prediction():
    gt = hline(0, 99, 10)
    pred = raster_of([(x, 10) for x in range(50)] + [(x, 12) for x in range(50, 100)])
    m = match_skeletons(pred, gt, 2)
    assert m.tp == 100
    assert connectivity(m, pred, gt) == 0.5
    assert precision_recall(m)[1] == 1.0


def test_f_measure():
    assert f_measure(0.973, 0.677) == pytest.approx(0.798, abs=5e-4)
    assert f_measure(0.861, 0.849) == pytest.approx(0.855, abs=5e-4)
    assert f_measure(0.4, 0.4) == pytest.approx(0.4)
    assert f_measure(0, 0) == 0


def test_published_f1c():
    for name, row in published_rows():
        got = 100 * f_measure(row["P"] / 100, row["C"] / 100)
        assert abs(got - row["F1C"]) <= 0.15, (name, row["row"])


def test_published_f1r():
    for name, row in published_rows():
        if name != "vessels":
            continue
        got = 100 * f_measure(row["P"] / 100, row["R"] / 100)
        assert abs(got - row["F1R"]) <= 0.3, row["row"]


def test_published_patch_models():
    with open(PUBLISHED) as f:
        models = json.load(f)["patch_models"]
    for model in models:
        got = 100 * f_measure(model["P"] / 100, model["R"] / 100)
        assert abs(got - model["F"]) <= 0.15, model["mode"]


def test_combine_reports():
    gt = hline(10, 89, 20)
    half = hline(10, 49, 20)
    a = evaluate(gt, gt, 2)
    b = evaluate(half, gt, 2)
    pooled = combine_reports([a, b])
    assert (pooled.tp, pooled.fp, pooled.fn) == (120, 0, 40)
    assert pooled.R == pytest.approx(120 / 160)
    assert pooled.C == pytest.approx(120 / 160)
    assert combine_reports([b, a]).to_document() == pooled.to_document()


def test_report_document():
    gt = hline(10, 89, 20)
    doc = evaluate(gt, gt, 2).to_document()
    assert list(doc) == ["P", "R", "F1R", "C", "F1C", "tp", "fp", "fn", "tolerance_px"]
    assert json.loads(json.dumps(doc)) == doc


def test_overlay_colors():
    gt = hline(10, 19, 20)
    pred = raster_of([(x, 20) for x in range(15, 25)])
    rgb = overlay(match_skeletons(pred, gt, 0))
    assert tuple(rgb[20, 12]) == (255, 0, 0)
    assert tuple(rgb[20, 17]) == (0, 255, 0)
    assert tuple(rgb[20, 22]) == (0, 0, 255)
    assert tuple(rgb[0, 0]) == (0, 0, 0)


def test_edge_connectivity_perfect():
    graph = generate_network(SynthParams(rng_seed=5))
    assert edge_connectivity(rasterize(graph), graph) == 1.0


def test_edge_connectivity_gap():
    graph = graph_from_polylines(128, 128, [[(10, 10), (60, 10)], [(60, 10), (60, 90)]])
    bits = rasterize(graph).bits.copy()
    bits[40:45, 60] = False
    assert edge_connectivity(SkeletonRaster(128, 128, bits), graph) == 0.5
    assert edge_connectivity(SkeletonRaster.empty(128, 128), graph) == 0.0


def test_edge_connectivity_class_filter():
    graph = graph_from_polylines(
        128,
        128,
        [[(10, 10), (60, 10)], [(90, 20), (90, 100)]],
        [ClassLabel.ARTERY, ClassLabel.VEIN],
    )
    pred = rasterize(graph, ClassLabel.ARTERY)
    assert edge_connectivity(pred, graph, class_filter=ClassLabel.ARTERY) == 1.0
    assert edge_connectivity(pred, graph) == 0.5


def test_curve_exact_detections():
    gt = [[(10, 10), (40, 50)], [(5, 30)], []]
    heatmaps = [make_gt_heatmap(points, 64, 2.0) for points in gt]
    curve = patch_pr_curve(heatmaps, gt, thresholds=[0.1, 0.5, 0.9])
    for point in curve.points:
        assert (point.P, point.R, point.F) == (1.0, 1.0, 1.0)
    assert curve.best.threshold == 0.1
    assert curve.lines()[0] == "0.1 1.000000 1.000000 1.000000"


def test_curve_no_detections():
    gt = [[(10, 10)], [(20, 20), (40, 40)]]
    curve = patch_pr_curve([Heatmap.zeros(64)] * 2, gt, thresholds=[0.2, 0.6])
    assert all(p.R == 0 and p.P == 1 for p in curve.points)


def test_curve_match_radius():
    heatmaps = [make_gt_heatmap([(10, 10)], 64, 2.0)]
    near = patch_pr_curve(heatmaps, [[(12, 12)]], match_radius=3, thresholds=[0.5])
    far = patch_pr_curve(heatmaps, [[(14, 10)]], match_radius=3, thresholds=[0.5])
    assert near.best.F == 1.0
    assert far.best.F == 0.0


def test_thin_line_unchanged():
    line = rasterize(graph_from_polylines(64, 64, [[(5, 5), (50, 30)]]))
    assert np.array_equal(skeletonize(line).bits, line.bits)


def test_thin_bar():
    bits = np.zeros((20, 30), dtype=bool)
    bits[8:11, 10:21] = True
    skeleton = skeletonize(SkeletonRaster(30, 20, bits))
    ys, xs = np.nonzero(skeleton.bits)
    assert set(ys[(xs > 11) & (xs < 19)].tolist()) == {9}
    assert components(skeleton) == 1


def test_thin_disk():
    yy, xx = np.mgrid[:40, :40]
    disk = (yy - 20) ** 2 + (xx - 20) ** 2 <= 64
    skeleton = skeletonize(SkeletonRaster(40, 40, disk))
    assert skeleton.count() >= 1
    assert components(skeleton) == 1


def test_thinning_properties():
    for seed in range(3):
        graph = generate_network(SynthParams(rng_seed=seed))
        conf = render_confidence(graph, 3)
        binary = SkeletonRaster(graph.width, graph.height, conf.values >= 128 / 255)
        skeleton = skeletonize(binary)
        assert np.array_equal(skeletonize(skeleton).bits, skeleton.bits)
        assert components(skeleton) <= components(binary)


def test_baseline_exact_rendering():
    graph = graph_from_polylines(128, 128, [[(10, 10), (60, 10)], [(60, 10), (100, 50)]])
    conf = ConfidenceMap(rasterize(graph).bits.astype(float))
    report = baseline_eval(conf, 128, graph, 2)
    assert (report.P, report.R, report.C, report.F1_R, report.F1_C) == (1, 1, 1, 1, 1)


def test_baseline_empty_map():
    graph = graph_from_polylines(128, 128, [[(10, 10), (60, 10)]])
    report = baseline_eval(ConfidenceMap.zeros(128, 128), 128, graph, 2)
    assert (report.P, report.R, report.C, report.F1_C) == (1, 0, 0, 0)


def test_baseline_erased_branch():
    branches = [[(20, 64), (64, 64)], [(64, 64), (110, 20)], [(64, 64), (110, 110)]]
    graph = graph_from_polylines(128, 128, branches)
    kept = graph_from_polylines(128, 128, branches[:2])
    report = baseline_eval(render_confidence(kept, 3), 128, graph, 2)
    full = rasterize(graph).count()
    surviving = rasterize(kept).count()
    assert report.R == pytest.approx(surviving / full, abs=0.02)


def test_baseline_rendered_trees():
    for seed in range(5):
        graph = generate_network(SynthParams(rng_seed=seed))
        gt = rasterize(graph)
        assert np.array_equal(skeletonize(gt).bits, gt.bits)
        # At width 2 only centerline pixels clear level 128
        report = baseline_eval(render_confidence(graph, 2), 128, graph, 2)
        for value in (report.P, report.R, report.C, report.F1_R, report.F1_C):
            assert value >= 0.99
