import json

import numpy as np
import pytest
from skimage.morphology import thin

from topo_trace.errors import GraphFormatError, GraphInvariantError, TopologyError, WindowError
from topo_trace.netgraph import (
    ClassLabel,
    Edge,
    GraphBuilder,
    NetworkGraph,
    PatchReach,
    PatchWindow,
    Vertex,
    clip_to_window,
    connected_in_patch,
    dumps_graph,
    graph_from_polylines,
    load_graph,
    loads_graph,
    rasterize,
    read_raster,
    round_half_away,
    save_graph,
    write_raster,
)
from topo_trace.synth import SynthParams, generate_network

MINIMAL = """{
 "width": 8, "height": 4,
 "vertices": [{"id": 0, "x": 0, "y": 0}, {"id": 1, "x": 3, "y": 0}],
 "edges": [{"u": 0, "v": 1, "label": "road", "points": [[0, 0], [3, 0]]}]
}"""


def pixels(raster):
    ys, xs = np.nonzero(raster.bits)
    return set(zip(xs.tolist(), ys.tolist()))


def line_graph(*polylines, labels=None, size=128):
    return graph_from_polylines(size, size, polylines, labels)


def test_round_half_away():
    assert round_half_away(0.5) == 1
    assert round_half_away(1.5) == 2
    assert round_half_away(2.4) == 2
    assert round_half_away(-0.5) == -1


def test_load_minimal(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(MINIMAL)
    graph = load_graph(path)
    assert len(graph.vertices) == 2
    assert len(graph.edges) == 1
    assert graph.edges[0].label is ClassLabel.ROAD
    assert json.loads(dumps_graph(graph)) == json.loads(MINIMAL)


def test_save_load(tmp_path):
    graph = line_graph([(10, 10), (40, 12), (60, 60)], [(60, 60), (90, 20)])
    path = tmp_path / "g.json"
    save_graph(path, graph)
    again = load_graph(path)
    assert again == graph
    assert path.read_text() == dumps_graph(graph)


def test_unknown_vertex():
    doc = json.loads(MINIMAL)
    doc["edges"][0]["v"] = 99
    with pytest.raises(TopologyError, match="unknown vertex id"):
        loads_graph(json.dumps(doc))


def test_out_of_bounds():
    doc = json.loads(MINIMAL)
    doc["vertices"][1]["x"] = 8
    doc["edges"][0]["points"][1][0] = 8
    with pytest.raises(GraphInvariantError, match="coordinate out of bounds"):
        loads_graph(json.dumps(doc))


def test_parse_error_position():
    with pytest.raises(GraphFormatError) as err:
        loads_graph('{"width": 8,\n "height": }', path="broken.json")
    assert err.value.lineno == 2
    assert str(err.value).startswith("broken.json:2:")


def test_non_finite_rejected():
    with pytest.raises(GraphFormatError):
        loads_graph(MINIMAL.replace('"x": 3', '"x": NaN'))


def test_polyline_must_meet_vertices():
    with pytest.raises(GraphInvariantError, match="endpoints"):
        NetworkGraph(
            8, 4, [Vertex(0, 0, 0), Vertex(1, 3, 0)], [Edge(0, 1, ((0, 0), (2, 0)))]
        )


def test_repeated_point_rejected():
    with pytest.raises(GraphInvariantError, match="repeated"):
        NetworkGraph(
            8,
            4,
            [Vertex(0, 0, 0), Vertex(1, 3, 0)],
            [Edge(0, 1, ((0, 0), (1, 0), (1, 0), (3, 0)))],
        )


def test_road_and_vessels_do_not_mix():
    with pytest.raises(GraphInvariantError, match="mixes"):
        line_graph(
            [(10, 10), (20, 10)],
            [(10, 20), (20, 20)],
            labels=[ClassLabel.ROAD, ClassLabel.ARTERY],
        )


def test_unknown_label():
    with pytest.raises(GraphFormatError, match="unknown class label"):
        loads_graph(MINIMAL.replace('"road"', '"river"'))


def test_builder_dedupes():
    builder = GraphBuilder(32, 32)
    a = builder.add_vertex(1, 1)
    b = builder.add_vertex(5, 1)
    assert builder.add_vertex(1.0, 1.0) == a
    assert builder.add_edge(a, b, [(1, 1), (5, 1)])
    assert not builder.add_edge(b, a, [(5, 1), (1, 1)])
    assert not builder.add_edge(a, a, [(1, 1), (1, 1)])
    graph = builder.build()
    assert (builder.num_vertices, builder.num_edges) == (2, 1)
    assert [v.id for v in graph.vertices] == [0, 1]


def test_components():
    graph = line_graph(
        [(10, 10), (20, 10)], [(20, 10), (30, 30)], [(80, 80), (90, 90)]
    )
    assert graph.components() == [[0, 1, 2], [3, 4]]


def test_rasterize_horizontal():
    graph = line_graph([(0, 0), (3, 0)], size=8)
    assert pixels(rasterize(graph)) == {(0, 0), (1, 0), (2, 0), (3, 0)}


def test_rasterize_empty():
    raster = rasterize(NetworkGraph(16, 9))
    assert raster.shape == (9, 16)
    assert raster.count() == 0


def test_rasterize_sloped_matches_digital_line():
    got = pixels(rasterize(line_graph([(0, 0), (4, 2)], size=8)))
    # One pixel per column, each within half a pixel of the ideal line
    assert sorted(x for x, _ in got) == [0, 1, 2, 3, 4]
    for x, y in got:
        assert abs(y - x / 2) <= 0.5
    ordered = sorted(got)
    for (x0, y0), (x1, y1) in zip(ordered, ordered[1:]):
        assert max(abs(x1 - x0), abs(y1 - y0)) == 1


def test_rasterize_corner_is_thin():
    got = pixels(rasterize(line_graph([(10, 10), (20, 10), (20, 20)], size=32)))
    # The corner pixel only duplicates the diagonal step past it
    assert got == {(x, 10) for x in range(10, 20)} | {(20, y) for y in range(11, 21)}


def test_rasters_are_thinning_fixed_points():
    for seed in range(5):
        raster = rasterize(generate_network(SynthParams(rng_seed=seed)))
        assert np.array_equal(thin(raster.bits), raster.bits)


def test_rasterize_class_filter():
    graph = line_graph(
        [(10, 10), (40, 10)],
        [(10, 50), (40, 50)],
        labels=[ClassLabel.ARTERY, ClassLabel.VEIN],
    )
    veins = pixels(rasterize(graph, ClassLabel.VEIN))
    assert veins == {(x, 50) for x in range(10, 41)}


def test_raster_file(tmp_path):
    raster = rasterize(line_graph([(3, 3), (60, 20), (10, 50)], size=64))
    write_raster(tmp_path / "r.pgm", raster)
    again = read_raster(tmp_path / "r.pgm")
    assert np.array_equal(again.bits, raster.bits)


def test_window_geometry():
    window = PatchWindow((64, 64))
    assert window.square_side == 58
    assert window.half_side == 28
    assert window.origin == (32, 32)
    assert window.box == (36, 92, 36, 92)
    assert window.to_local(36, 64) == (4, 32)
    assert window.fits(128, 128)
    assert not window.fits(95, 128)


def test_window_square_must_be_smaller():
    with pytest.raises(WindowError):
        PatchWindow((64, 64), patch_size=64, square_side=64)


def test_window_inside_is_required():
    graph = line_graph([(0, 64), (127, 64)])
    with pytest.raises(WindowError, match="does not fit"):
        clip_to_window(graph, PatchWindow((10, 64)))


def test_fitted_window():
    window = PatchWindow.fitted((5, 120), 128, 128)
    assert window.center == (32, 96)
    assert window.query == (5.0, 120.0)
    assert window.fits(128, 128)
    assert PatchWindow.fitted((5, 5), 40, 40) is None


def test_clip_horizontal_line():
    graph = line_graph([(0, 64), (127, 64)])
    clipped = clip_to_window(graph, PatchWindow((64, 64)))
    border = clipped.border_points
    assert [(bp.px, bp.py) for bp in border] == [(92, 64), (36, 64)]
    assert border[0].component == border[1].component
    assert all(connected_in_patch(clipped, bp) for bp in border)


def test_clip_same_edge_twice():
    graph = line_graph([(50, 20), (55, 50), (60, 20)])
    clipped = clip_to_window(graph, PatchWindow((64, 64)))
    border = clipped.border_points
    assert len(border) == 2
    assert all(bp.y == 36 for bp in border)
    assert [bp.x for bp in border] == pytest.approx([50 + 5 * 16 / 30, 55 + 5 * 14 / 30])
    assert border[0].component == border[1].component


def test_clip_nothing_inside():
    graph = line_graph([(2, 2), (20, 2)])
    clipped = clip_to_window(graph, PatchWindow((64, 64)))
    assert clipped.pieces == ()
    assert clipped.border_points == ()
    assert clipped.center is None


def test_parallel_lines_disconnected():
    graph = line_graph([(0, 64), (127, 64)], [(0, 80), (127, 80)])
    clipped = clip_to_window(graph, PatchWindow((64, 64)))
    reach = {(bp.px, bp.py): connected_in_patch(clipped, bp) for bp in clipped.border_points}
    assert reach == {
        (36, 64): PatchReach.CONNECTED,
        (92, 64): PatchReach.CONNECTED,
        (36, 80): PatchReach.DISCONNECTED,
        (92, 80): PatchReach.DISCONNECTED,
    }


def test_center_off_network():
    graph = line_graph([(0, 80), (127, 80)])
    clipped = clip_to_window(graph, PatchWindow((64, 64)))
    assert len(clipped.border_points) == 2
    assert connected_in_patch(clipped, clipped.border_points[0]) is PatchReach.NO_CENTER


def test_crossing_without_shared_vertex():
    # Polylines that cross geometrically join only at shared vertices
    graph = line_graph([(0, 64), (127, 64)], [(70, 0), (70, 127)])
    clipped = clip_to_window(graph, PatchWindow((64, 64)))
    connected = {(bp.px, bp.py) for bp in clipped.border_points if connected_in_patch(clipped, bp)}
    assert connected == {(36, 64), (92, 64)}


def test_same_class_reach():
    graph = line_graph(
        [(20, 64), (70, 64)],
        [(70, 64), (108, 64)],
        [(70, 20), (70, 64)],
        [(70, 64), (70, 108)],
        labels=[ClassLabel.ARTERY] * 2 + [ClassLabel.VEIN] * 2,
    )
    clipped = clip_to_window(graph, PatchWindow((64, 64)))
    assert clipped.center_label is ClassLabel.ARTERY
    any_class = {(bp.px, bp.py) for bp in clipped.border_points if connected_in_patch(clipped, bp)}
    artery = {
        (bp.px, bp.py)
        for bp in clipped.border_points
        if connected_in_patch(clipped, bp, same_class=True)
    }
    assert any_class == {(36, 64), (92, 64), (70, 36), (70, 92)}
    assert artery == {(36, 64), (92, 64)}


def test_polylines_share_endpoints():
    graph = line_graph([(10, 10), (30, 10)], [(30, 10), (30, 40)], [(30, 40), (10, 10)])
    assert len(graph.vertices) == 3
    assert len(graph.edges) == 3
    assert graph.components() == [[0, 1, 2]]
