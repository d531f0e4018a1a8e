"""Long-running checks, run by hand: `python tests/manual.py [check ...]`."""

import collections
import functools
import sys
import tempfile
import time

import numpy as np

from topo_trace.evaluation import baseline_eval, evaluate, skeletonize
from topo_trace.netgraph import clip_to_window, graph_from_polylines, rasterize
from topo_trace.patchgt import GtMode, Heatmap, gt_points, make_gt_heatmap, sample_training_patches
from topo_trace.predictor import (
    FilePredictor,
    HeatmapStore,
    OraclePredictor,
    RecordingPredictor,
    corrupt_oracle,
    extract_peaks,
    write_store,
)
from topo_trace.synth import SynthParams, generate_network, render_confidence
from topo_trace.tracer import TraceParams, seeds_from_graph, trace

PARAMS = TraceParams(theta=0.5)


def timed(func):
    @functools.wraps(func)
    def wrapper():
        print(f"{func.__name__} ...")
        start = time.perf_counter()
        func()
        print(f"{func.__name__} ok in {time.perf_counter() - start:.1f}s")

    return wrapper


def trace_graph(graph, predictor):
    conf = render_confidence(graph, 3)
    return trace(predictor, conf, seeds_from_graph(graph), PARAMS).graph


def trace_instance(seed, predictor_fn=None):
    graph = generate_network(SynthParams(rng_seed=seed))
    predictor = OraclePredictor(graph)
    if predictor_fn is not None:
        predictor = predictor_fn(predictor)
    traced = trace_graph(graph, predictor)
    return evaluate(rasterize(traced), rasterize(graph), d=2)


@timed
def closed_loop():
    worst = None
    for seed in range(100):
        report = trace_instance(seed)
        assert report.F1_R >= 0.98, (seed, report)
        assert report.C >= 0.98, (seed, report)
        if worst is None or report.C < worst.C:
            worst = report
    print(f"  worst F1R={worst.F1_R:.4f} C={worst.C:.4f}")


def reached_nodes(clipped, same_class):
    """Breadth-first search over the clipped pieces, starting from the center piece."""
    if clipped.center is None:
        return set()
    start = clipped.pieces[clipped.center.piece]
    neighbors = collections.defaultdict(list)
    for piece in clipped.pieces:
        if same_class and piece.label != start.label:
            continue
        neighbors[piece.start].append(piece.end)
        neighbors[piece.end].append(piece.start)
    seen = {start.start, start.end}
    queue = collections.deque(seen)
    while queue:
        for other in neighbors[queue.popleft()]:
            if other not in seen:
                seen.add(other)
                queue.append(other)
    return seen


@timed
def nested_modes():
    checked = 0
    seed = 0
    while checked < 1000:
        graph = generate_network(SynthParams(rng_seed=seed, class_mix=0.5, trees=2))
        for window in sample_training_patches(graph, 50, rng_seed=seed):
            clipped = clip_to_window(graph, window)
            every = {bp.node for bp in clipped.border_points}
            conn = reached_nodes(clipped, False) & every
            av = reached_nodes(clipped, True) & every
            for mode, want in (
                (GtMode.NON_CONNECTIVITY, every),
                (GtMode.CONNECTIVITY, conn),
                (GtMode.CONNECTIVITY_AV, av),
            ):
                got = {bp.node for bp in gt_points(graph, window, mode)}
                assert got == want, (seed, window, mode, got ^ want)
            assert av <= conn <= every, (seed, window)
            checked += 1
        seed += 1


@timed
def degradation():
    previous = None
    for drop_rate in (0.0, 0.2, 0.4, 0.6, 0.8):
        reports = [
            trace_instance(seed, lambda p, s=seed, r=drop_rate: corrupt_oracle(p, r, 0, s))
            for seed in range(50)
        ]
        mean_p = np.mean([r.P for r in reports])
        mean_c = np.mean([r.C for r in reports])
        print(f"  drop {drop_rate:.1f}: P={mean_p:.4f} C={mean_c:.4f}")
        assert mean_p >= 0.95, drop_rate
        if previous is not None:
            assert mean_c < previous, drop_rate
        previous = mean_c


@timed
def baseline():
    for seed in range(50):
        graph = generate_network(SynthParams(rng_seed=seed))
        gt = rasterize(graph)
        assert np.array_equal(skeletonize(gt).bits, gt.bits), seed
        report = baseline_eval(render_confidence(graph, 2), 128, graph, 2)
        for value in (report.P, report.R, report.C, report.F1_R, report.F1_C):
            assert value >= 0.99, (seed, report)


def exhaustive_peaks(values, threshold, radius):
    ys, xs = np.nonzero(values >= threshold)
    order = sorted(zip(ys.tolist(), xs.tolist()), key=lambda p: (-values[p], p[0], p[1]))
    accepted = []
    for y, x in order:
        if all(max(abs(x - ax), abs(y - ay)) > radius for ax, ay in accepted):
            accepted.append((x, y))
    return accepted


@timed
def nms_oracle():
    rng = np.random.default_rng(0)
    for i in range(10_000):
        if i % 2:
            values = rng.random((64, 64)) ** 4
        else:
            points = rng.uniform(0, 63, size=(int(rng.integers(1, 12)), 2))
            values = make_gt_heatmap(points, 64, 2.0).values
        got = [(p.x, p.y) for p in extract_peaks(Heatmap(values), 0.5, 3)]
        assert got == exhaustive_peaks(values, 0.5, 3), i


def near_border_network():
    return graph_from_polylines(
        160, 128, [[(0, 2), (80, 2)], [(80, 2), (159, 2)], [(80, 2), (80, 125)]]
    )


@timed
def store_round_trip():
    graphs = [generate_network(SynthParams(rng_seed=seed)) for seed in range(20)]
    graphs.append(near_border_network())
    for graph in graphs:
        recorder = RecordingPredictor(OraclePredictor(graph))
        first = trace_graph(graph, recorder)
        with tempfile.TemporaryDirectory() as d:
            write_store(d, recorder.records)
            second = trace_graph(graph, FilePredictor(HeatmapStore(d)))
        assert second == first
        gt = rasterize(graph)
        want = evaluate(rasterize(first), gt, d=2)
        got = evaluate(rasterize(second), gt, d=2)
        assert (got.P, got.R, got.C) == (want.P, want.R, want.C)


CHECKS = [closed_loop, nested_modes, degradation, baseline, nms_oracle, store_round_trip]


if __name__ == "__main__":
    names = set(sys.argv[1:])
    for check in CHECKS:
        if not names or check.__name__ in names:
            check()
