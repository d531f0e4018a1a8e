"""Command line entry point: `topo-trace <command> ...`."""

import argparse
import dataclasses
import functools
import json
import logging
import multiprocessing
import pdb
import sys
from pathlib import Path

from topo_trace import (
    GRAPH_FORMAT_VERSION,
    HEATMAP_FORMAT_VERSION,
    RASTER_FORMAT_VERSION,
    __version__,
    formats,
)
from topo_trace.errors import TopologyError
from topo_trace.evaluation import (
    DEFAULT_MATCH_RADIUS,
    DEFAULT_TOLERANCE_PX,
    baseline_eval,
    binarize,
    combine_reports,
    edge_connectivity,
    evaluate,
    match_skeletons,
    overlay,
    patch_pr_curve,
    skeletonize,
)
from topo_trace.netgraph import (
    DEFAULT_PATCH_SIZE,
    ClassLabel,
    load_graph,
    rasterize,
    read_raster,
    save_graph,
    write_raster,
)
from topo_trace.patchgt import (
    DEFAULT_SIGMA,
    GtMode,
    gt_heatmap,
    gt_points,
    local_points,
    sample_training_patches,
    write_heatmap,
)
from topo_trace.predictor import (
    DEFAULT_NMS_RADIUS,
    PEAK_POLICIES,
    FilePredictor,
    HeatmapStore,
    OraclePredictor,
    RecordingPredictor,
    corrupt_oracle,
    theta_from_level,
    write_store,
)
from topo_trace.synth import SynthParams, write_dataset
from topo_trace.tracer import (
    DEFAULT_SEED_MIN_DIST,
    DEFAULT_SEED_THRESHOLD,
    DEFAULT_THETA,
    DEFAULT_VISIT_RADIUS,
    FRONTIERS,
    TraceParams,
    read_confidence,
    select_seeds,
    seeds_from_graph,
    trace,
    trace_av,
)

_LOGGER = logging.getLogger("topo-trace.cli")

PROG = "topo-trace"


# Argument types; they run before any work starts


def existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {value}")
    return path


def existing_dir(value: str) -> Path:
    path = Path(value)
    if not path.is_dir():
        raise argparse.ArgumentTypeError(f"no such directory: {value}")
    return path


def output_file(value: str) -> Path:
    path = Path(value)
    if not path.parent.is_dir():
        raise argparse.ArgumentTypeError(f"output directory does not exist: {path.parent}")
    return path


def output_dir(value: str) -> Path:
    path = Path(value)
    if path.exists() and not path.is_dir():
        raise argparse.ArgumentTypeError(f"not a directory: {value}")
    if not path.parent.is_dir():
        raise argparse.ArgumentTypeError(f"parent directory does not exist: {path.parent}")
    return path


def unit_interval(value: str) -> float:
    v = float(value)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {value}")
    return v


def level_255(value: str) -> float:
    v = float(value)
    if not 0 < v <= 255:
        raise argparse.ArgumentTypeError(f"must be an 8-bit level in (0, 255], got {value}")
    return v


def positive_int(value: str) -> int:
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return v


def gt_mode(value: str) -> GtMode:
    try:
        return GtMode.parse(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def class_label(value: str) -> ClassLabel:
    try:
        return ClassLabel.parse(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _version_text() -> str:
    return (
        f"{PROG} {__version__} (graph format {GRAPH_FORMAT_VERSION},"
        f" heatmap format {HEATMAP_FORMAT_VERSION}, raster format {RASTER_FORMAT_VERSION})"
    )


def _add_window_flags(parser):
    parser.add_argument("--patch-size", type=positive_int, default=DEFAULT_PATCH_SIZE)
    parser.add_argument(
        "--square-side", type=positive_int, default=None, help="default: patch size - 6"
    )


def _add_theta_flags(parser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--theta", type=unit_interval, default=None)
    group.add_argument(
        "--theta-255", type=level_255, default=None, help="threshold as an 8-bit level"
    )


def _theta(args) -> float:
    if args.theta_255 is not None:
        return theta_from_level(args.theta_255)
    return DEFAULT_THETA if args.theta is None else args.theta


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Iterative topology extraction of filamentary networks.",
    )
    parser.add_argument("--version", action="version", version=_version_text())
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug"
    )
    parser.add_argument(
        "--pdb", action="store_true", help="open a post-mortem debugger on failure"
    )
    parser.add_argument(
        "--jobs", type=positive_int, default=1, help="worker processes across items"
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = commands.add_parser("synth", help="generate synthetic networks and confidence maps")
    p.add_argument("--kind", choices=("tree", "grid"), default="tree")
    p.add_argument("--n", type=positive_int, default=1, help="number of instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--branches", type=int, default=8)
    p.add_argument("--branch-length", type=float, nargs=2, default=(30, 60), metavar=("LO", "HI"))
    p.add_argument("--angle-jitter", type=float, default=35.0, help="degrees")
    p.add_argument("--min-separation", type=float, default=8.0)
    p.add_argument("--class-mix", type=float, default=0.5)
    p.add_argument("--trees", type=positive_int, default=1)
    p.add_argument("--deletions", type=int, default=0)
    p.add_argument("--line-width", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=0.0, help="confidence noise sigma")
    p.add_argument("--out", type=output_dir, required=True)
    p.set_defaults(func=cmd_synth)

    p = commands.add_parser("gen-gt", help="sample patches and write GT heatmaps")
    p.add_argument("--graph", type=existing_file, required=True)
    p.add_argument("--mode", type=gt_mode, default=GtMode.CONNECTIVITY)
    p.add_argument("--n", type=positive_int, default=50, help="patches to sample")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    _add_window_flags(p)
    p.add_argument("--out", type=output_dir, required=True)
    p.set_defaults(func=cmd_gen_gt)

    p = commands.add_parser("trace", help="trace a network with a patch-level predictor")
    p.add_argument("--graph", type=existing_file, help="GT graph (oracle predictor, seeds)")
    p.add_argument("--predictor", choices=("oracle", "store"), default="oracle")
    p.add_argument("--store", type=existing_dir, help="heatmap store directory")
    p.add_argument("--mode", type=gt_mode, default=GtMode.CONNECTIVITY)
    p.add_argument("--conf", type=existing_file, help="confidence map (P5)")
    p.add_argument("--conf-vein", type=existing_file, help="vein confidence map for --av")
    p.add_argument("--av", action="store_true", help="trace arteries then veins")
    p.add_argument("--size", type=positive_int, nargs=2, metavar=("W", "H"))
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seed-from-graph", action="store_true")
    seeds.add_argument("--seed", type=int, nargs=2, action="append", metavar=("X", "Y"))
    _add_theta_flags(p)
    _add_window_flags(p)
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    p.add_argument("--nms", type=positive_int, default=DEFAULT_NMS_RADIUS)
    p.add_argument("--visit-radius", type=positive_int, default=DEFAULT_VISIT_RADIUS)
    p.add_argument("--seed-threshold", type=unit_interval, default=DEFAULT_SEED_THRESHOLD)
    p.add_argument("--seed-min-dist", type=positive_int, default=DEFAULT_SEED_MIN_DIST)
    p.add_argument("--max-iterations", type=positive_int, default=None)
    p.add_argument("--frontier", choices=FRONTIERS, default="fifo")
    p.add_argument(
        "--peak-policy",
        choices=PEAK_POLICIES,
        default="greedy",
        help="local_maxima accepts one pixel per plateau of regional maxima",
    )
    p.add_argument("--drop-rate", type=float, default=None, help="corrupt the predictor")
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--corrupt-seed", type=int, default=0)
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--snapshots", type=output_dir, help="directory for snapshot rasters")
    p.add_argument("--record-store", type=output_dir, help="save queried heatmaps here")
    p.add_argument("--out", type=output_file, required=True)
    p.set_defaults(func=cmd_trace)

    p = commands.add_parser(
        "skeleton-baseline", help="binarize a confidence map and thin it"
    )
    p.add_argument("--conf", type=existing_file, required=True)
    p.add_argument("--level", type=level_255, default=128, help="8-bit threshold")
    p.add_argument("--out", type=output_file, required=True)
    p.add_argument("--gt", type=existing_file, help="also score against this graph")
    p.add_argument("--tolerance-px", type=float, default=DEFAULT_TOLERANCE_PX)
    p.add_argument("--class", dest="class_filter", type=class_label, default=None)
    p.add_argument("--report", type=output_file, help="write the report here")
    p.set_defaults(func=cmd_skeleton_baseline)

    p = commands.add_parser("eval", help="score predicted skeletons against GT graphs")
    p.add_argument("--pred", type=existing_file, nargs="+", required=True)
    p.add_argument("--gt", type=existing_file, nargs="+", required=True)
    p.add_argument("--tolerance-px", type=float, default=DEFAULT_TOLERANCE_PX)
    p.add_argument("--class", dest="class_filter", type=class_label, default=None)
    p.add_argument("--edge-connectivity", action="store_true", help="also report CRR")
    p.add_argument("--overlay", type=output_file, help="P6 overlay (single pair only)")
    p.add_argument("--out", type=output_file, help="write the report here")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("curve", help="patch-level precision-recall curve")
    p.add_argument("--store", type=existing_dir, required=True)
    p.add_argument("--graph", type=existing_file, required=True)
    p.add_argument("--mode", type=gt_mode, default=GtMode.CONNECTIVITY)
    p.add_argument("--match-radius", type=float, default=DEFAULT_MATCH_RADIUS)
    p.add_argument("--nms", type=positive_int, default=DEFAULT_NMS_RADIUS)
    p.add_argument(
        "--thresholds",
        type=unit_interval,
        nargs="+",
        default=[t / 20 for t in range(1, 20)],
    )
    _add_window_flags(p)
    p.add_argument("--out", type=output_file, help="write the curve here")
    p.set_defaults(func=cmd_curve)
    return parser


def _map(func, items, jobs: int) -> list:
    """Map in input order, across worker processes when jobs > 1."""
    if jobs > 1 and len(items) > 1:
        with multiprocessing.Pool(jobs) as pool:
            return pool.map(func, items)
    return [func(item) for item in items]


def _write_json(path, doc) -> None:
    text = json.dumps(doc, indent=1) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    with formats.atomic_write(path, mode="w") as f:
        f.write(text)


# Commands


def cmd_synth(args) -> None:
    params = SynthParams(
        kind=args.kind,
        width=args.width,
        height=args.height,
        branches=args.branches,
        branch_length=tuple(args.branch_length),
        branch_angle_jitter=args.angle_jitter,
        min_separation=args.min_separation,
        class_mix=args.class_mix,
        trees=args.trees,
        deletions=args.deletions,
        rng_seed=args.seed,
    )
    items = write_dataset(args.out, params, args.n, args.line_width, args.noise, args.jobs)
    for item in items:
        print(f"{item.graph} {item.confidence}")


def cmd_gen_gt(args) -> None:
    graph = load_graph(args.graph)
    windows = sample_training_patches(
        graph, args.n, args.patch_size, args.seed, args.square_side
    )
    render = functools.partial(gt_heatmap, graph, mode=args.mode, sigma=args.sigma)
    heatmaps = _map(render, windows, args.jobs)
    args.out.mkdir(exist_ok=True)
    entries = []
    for i, (window, heatmap) in enumerate(zip(windows, heatmaps)):
        name = f"gt_{i:05d}.pgm"
        write_heatmap(args.out / name, heatmap)
        entries.append(
            formats.ManifestEntry(
                window.center[0], window.center[1], Path(name), args.mode.cli_name
            )
        )
    formats.write_manifest(args.out, entries)
    print(f"wrote {len(entries)} {args.mode.cli_name} heatmaps to {args.out}")


def _trace_predictor(args, graph):
    if args.predictor == "store":
        if args.store is None:
            raise TopologyError("--predictor store needs --store DIR")
        predictor = FilePredictor(HeatmapStore(args.store))
    else:
        if graph is None:
            raise TopologyError("--predictor oracle needs --graph")
        mode = GtMode.CONNECTIVITY_AV if args.av else args.mode
        predictor = OraclePredictor(graph, mode, args.sigma)
    if args.drop_rate is not None:
        predictor = corrupt_oracle(predictor, args.drop_rate, args.jitter, args.corrupt_seed)
    return predictor


def cmd_trace(args) -> None:
    graph = load_graph(args.graph) if args.graph else None
    conf = read_confidence(args.conf) if args.conf else None
    predictor = _trace_predictor(args, graph)
    recorder = None
    if args.record_store is not None:
        predictor = recorder = RecordingPredictor(predictor)
    params = TraceParams(
        patch_size=args.patch_size,
        square_side=args.square_side,
        theta=_theta(args),
        nms_radius=args.nms,
        visit_radius=args.visit_radius,
        seed_threshold=args.seed_threshold,
        seed_min_dist=args.seed_min_dist,
        max_iterations=args.max_iterations,
        snapshot_every=args.snapshot_every,
        frontier=args.frontier,
        peak_policy=args.peak_policy,
    )

    if args.av:
        if conf is None or args.conf_vein is None:
            raise TopologyError("--av needs --conf (arteries) and --conf-vein")
        traced = trace_av(predictor, conf, read_confidence(args.conf_vein), params)
        snapshots = []
    else:
        if args.seed_from_graph:
            if graph is None:
                raise TopologyError("--seed-from-graph needs --graph")
            seeds = seeds_from_graph(graph)
        elif args.seed:
            seeds = [tuple(s) for s in args.seed]
        elif conf is not None:
            seeds = select_seeds(conf, params.seed_threshold, params.seed_min_dist)
        else:
            raise TopologyError("no seeds: pass --seed, --seed-from-graph or --conf")
        size = tuple(args.size) if args.size else None
        if size is None and conf is None:
            if graph is None:
                raise TopologyError("image size unknown: pass --size, --conf or --graph")
            size = (graph.width, graph.height)
        traced, snapshots = trace(predictor, conf, seeds, params, image_size=size)

    save_graph(args.out, traced)
    if args.snapshots is not None:
        args.snapshots.mkdir(exist_ok=True)
        for i, raster in enumerate(snapshots):
            write_raster(args.snapshots / f"snapshot_{i:04d}.pgm", raster)
    if recorder is not None:
        write_store(args.record_store, recorder.records)
    print(f"traced {len(traced.vertices)} vertices, {len(traced.edges)} edges -> {args.out}")


def cmd_skeleton_baseline(args) -> None:
    conf = read_confidence(args.conf)
    skeleton = skeletonize(binarize(conf, args.level))
    write_raster(args.out, skeleton)
    if args.gt is not None:
        report = baseline_eval(
            conf, args.level, load_graph(args.gt), args.tolerance_px, args.class_filter
        )
        _write_json(args.report, report.to_document())


def _load_skeleton(path: Path, class_filter):
    if path.suffix == ".json":
        return rasterize(load_graph(path), class_filter)
    return read_raster(path)


def _eval_pair(job):
    pred_path, gt_path, tolerance, class_filter, with_crr = job
    gt_graph = load_graph(gt_path)
    pred = _load_skeleton(pred_path, class_filter)
    report = evaluate(pred, rasterize(gt_graph, class_filter), tolerance)
    if with_crr:
        crr = edge_connectivity(pred, gt_graph, class_filter=class_filter)
        report = dataclasses.replace(report, CRR=crr)
    return report


def cmd_eval(args) -> None:
    if len(args.pred) != len(args.gt):
        raise TopologyError(
            f"{len(args.pred)} predictions but {len(args.gt)} ground-truth graphs"
        )
    if args.overlay is not None and len(args.pred) != 1:
        raise TopologyError("--overlay needs exactly one --pred/--gt pair")
    jobs = [
        (p, g, args.tolerance_px, args.class_filter, args.edge_connectivity)
        for p, g in zip(args.pred, args.gt)
    ]
    reports = _map(_eval_pair, jobs, args.jobs)
    if len(reports) == 1:
        doc = reports[0].to_document()
    else:
        doc = combine_reports(reports).to_document()
        if args.edge_connectivity:
            doc["CRR"] = sum(r.CRR for r in reports) / len(reports)
        doc["images"] = [r.to_document() for r in reports]
    if args.overlay is not None:
        gt = rasterize(load_graph(args.gt[0]), args.class_filter)
        pred = _load_skeleton(args.pred[0], args.class_filter)
        formats.write_pixmap(args.overlay, overlay(match_skeletons(pred, gt, args.tolerance_px)))
    _write_json(args.out, doc)


def cmd_curve(args) -> None:
    graph = load_graph(args.graph)
    store = HeatmapStore(args.store)
    heatmaps, gt_sets = [], []
    for i in range(len(store)):
        window = store.window(i, graph.width, graph.height, args.patch_size, args.square_side)
        heatmaps.append(store.heatmap(i))
        gt_sets.append(local_points(gt_points(graph, window, args.mode), window))
    curve = patch_pr_curve(heatmaps, gt_sets, args.match_radius, args.thresholds, args.nms)
    text = "".join(line + "\n" for line in curve.lines())
    if args.out is None:
        sys.stdout.write(text)
    else:
        with formats.atomic_write(args.out, mode="w") as f:
            f.write(text)
    best = curve.best
    print(f"best F={best.F:.4f} P={best.P:.4f} R={best.R:.4f} at threshold {best.threshold:g}")


def _configure_logging(verbosity: int) -> None:
    level = logging.WARN
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.getLogger("topo-trace").setLevel(level)


def _post_mortem(command: str, e: BaseException) -> None:
    print(">")
    print(f"> {command}: {e!r}")
    print(">")
    pdb.post_mortem(e.__traceback__)


def run(argv=None) -> int:
    """Run one command; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code is None else int(e.code)
    _configure_logging(args.verbose)
    try:
        args.func(args)
    except (TopologyError, OSError) as e:
        if args.pdb:
            _post_mortem(args.command, e)
        message = " ".join(str(e).split())
        print(f"{PROG}: error: {message}", file=sys.stderr)
        return 1
    except Exception as e:
        if args.pdb:
            _post_mortem(args.command, e)
            return 1
        raise
    return 0


def main() -> int:
    return run(sys.argv[1:])


__all__ = ["build_parser", "main", "run"]
