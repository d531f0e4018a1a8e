import numpy as np
import pytest
from shapely.geometry import LineString

from topo_trace.errors import TopologyError
from topo_trace.netgraph import ClassLabel, NetworkGraph, load_graph
from topo_trace.synth import (
    BORDER_MARGIN,
    SynthParams,
    generate_network,
    read_dataset,
    render_confidence,
    write_dataset,
)
from topo_trace.tracer import read_confidence


def non_adjacent_pairs(graph):
    for i, a in enumerate(graph.edges):
        for b in graph.edges[i + 1 :]:
            if not {a.u, a.v} & {b.u, b.v}:
                yield a, b


def test_same_seed_same_network():
    a = generate_network(SynthParams(rng_seed=12))
    b = generate_network(SynthParams(rng_seed=12))
    c = generate_network(SynthParams(rng_seed=13))
    assert a == b
    assert a != c


def test_tree_shape():
    graph = generate_network(SynthParams(branches=8, rng_seed=3))
    assert len(graph.edges) == 9
    assert len(graph.components()) == 1
    assert graph.labels <= {ClassLabel.ARTERY, ClassLabel.VEIN}
    for v in graph.vertices:
        assert BORDER_MARGIN <= v.x <= graph.width - 1 - BORDER_MARGIN
        assert BORDER_MARGIN <= v.y <= graph.height - 1 - BORDER_MARGIN


def test_tree_separation():
    params = SynthParams(rng_seed=4, trees=2)
    graph = generate_network(params)
    for a, b in non_adjacent_pairs(graph):
        assert LineString(a.points).distance(LineString(b.points)) >= params.min_separation


def test_class_mix():
    graph = generate_network(SynthParams(trees=4, branches=4, class_mix=0.5, rng_seed=1))
    assert len(graph.components()) == 4
    assert graph.labels == {ClassLabel.ARTERY, ClassLabel.VEIN}
    arteries = generate_network(SynthParams(trees=2, class_mix=1.0, rng_seed=1))
    assert arteries.labels == {ClassLabel.ARTERY}


def test_grid():
    graph = generate_network(SynthParams(kind="grid", rng_seed=2))
    assert graph.labels == {ClassLabel.ROAD}
    assert len(graph.components()) == 1
    degrees = {}
    for e in graph.edges:
        degrees[e.u] = degrees.get(e.u, 0) + 1
        degrees[e.v] = degrees.get(e.v, 0) + 1
    assert max(degrees.values()) == 4


def test_grid_deletions():
    full = generate_network(SynthParams(kind="grid", rng_seed=2))
    holey = generate_network(SynthParams(kind="grid", deletions=3, rng_seed=2))
    assert len(holey.edges) == len(full.edges) - 3


def test_params_checked():
    with pytest.raises(TopologyError):
        SynthParams(width=64)
    with pytest.raises(TopologyError):
        SynthParams(kind="river")
    with pytest.raises(TopologyError):
        SynthParams(branch_length=(50, 20))
    with pytest.raises(TopologyError):
        SynthParams(min_separation=1)


def test_confidence_rendering():
    graph = generate_network(SynthParams(rng_seed=0))
    conf = render_confidence(graph, 3)
    assert conf.size == (graph.width, graph.height)
    for e in graph.edges:
        x, y = e.points[0]
        assert conf.values[int(y), int(x)] == 1.0
    assert conf.values[0, 0] == 0.0


def test_confidence_of_empty_graph():
    conf = render_confidence(NetworkGraph(128, 128), 3)
    assert not conf.values.any()


def test_confidence_noise():
    conf = render_confidence(NetworkGraph(256, 256), 3, noise_sigma=0.1, rng_seed=4)
    assert 0.0 <= conf.values.min() and conf.values.max() <= 1.0
    # Clamping keeps only the positive half of the noise on a zero background
    assert conf.values.mean() == pytest.approx(0.1 / np.sqrt(2 * np.pi), rel=0.05)
    again = render_confidence(NetworkGraph(256, 256), 3, noise_sigma=0.1, rng_seed=4)
    assert np.array_equal(conf.values, again.values)


def test_dataset(tmp_path):
    items = write_dataset(tmp_path, SynthParams(rng_seed=20), 3)
    assert [i.graph.name for i in items] == [
        "tree_00020.json",
        "tree_00021.json",
        "tree_00022.json",
    ]
    assert read_dataset(tmp_path) == items
    for k, item in enumerate(items):
        graph = load_graph(item.graph)
        assert graph == generate_network(SynthParams(rng_seed=20 + k))
        conf = read_confidence(item.confidence)
        expected = render_confidence(graph, 3).values
        assert np.abs(conf.values - expected).max() <= 0.5 / 65535 + 1e-12


def test_every_seed_places_all_branches():
    for seed in range(500):
        graph = generate_network(SynthParams(branches=8, rng_seed=seed))
        assert len(graph.edges) == 9, seed
        assert len(graph.components()) == 1, seed
