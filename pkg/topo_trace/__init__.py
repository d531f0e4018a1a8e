"""Extract the topology of filamentary networks by iterating a local patch-connectivity predictor.

Basic usage:

from topo_trace import synth, tracer, predictor

See README.md for more detailed usage instructions.
"""

__version__ = "0.3.0"

# On-disk format versions, reported by `topo-trace --version`
GRAPH_FORMAT_VERSION = 1
HEATMAP_FORMAT_VERSION = 1
RASTER_FORMAT_VERSION = 1

import logging
import sys

_LOGGER = logging.getLogger("topo-trace")
handler = logging.StreamHandler(sys.stderr)
formatter = logging.Formatter("%(levelname)s (%(name)s): %(message)s")
handler.setFormatter(formatter)
_LOGGER.addHandler(handler)
_LOGGER.setLevel(logging.WARN)

from topo_trace.errors import TopologyError  # noqa: E402
from topo_trace.netgraph import (  # noqa: E402
    ClassLabel,
    NetworkGraph,
    PatchWindow,
    SkeletonRaster,
    load_graph,
    rasterize,
    save_graph,
)
from topo_trace.patchgt import GtMode, Heatmap  # noqa: E402

__all__ = [
    "ClassLabel",
    "GtMode",
    "Heatmap",
    "NetworkGraph",
    "PatchWindow",
    "SkeletonRaster",
    "TopologyError",
    "load_graph",
    "rasterize",
    "save_graph",
]
