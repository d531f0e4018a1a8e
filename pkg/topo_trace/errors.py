"""Exceptions raised by topo_trace.

Library code raises these; only the command line turns them into exit codes.
"""


class TopologyError(ValueError):
    """Base class for domain errors (exit status 1 on the command line)."""

    pass


class GraphFormatError(TopologyError):
    """A graph document could not be parsed."""

    def __init__(self, path, message: str, lineno: int = 0, colno: int = 0):
        self.path = str(path)
        self.lineno = lineno
        self.colno = colno
        where = f"{self.path}:{lineno}:{colno}" if lineno else self.path
        super().__init__(f"{where}: {message}")


class GraphInvariantError(TopologyError):
    """A graph violates a data model invariant."""

    pass


class WindowError(TopologyError):
    """A patch window does not fit the image or has inconsistent sizes."""

    pass


class GtModeError(TopologyError):
    """A ground-truth mode was requested on a graph that cannot support it."""

    pass


class PredictorMiss(TopologyError):
    """A file-backed predictor has no heatmap for the queried center."""

    def __init__(self, center):
        self.center = tuple(center)
        super().__init__(
            f"predictor miss: no stored heatmap within 1 px of center {self.center}"
        )


class DimensionMismatch(TopologyError):
    """Two rasters (or a raster and a graph) disagree on their dimensions."""

    def __init__(self, what: str, size_a, size_b):
        self.size_a = tuple(size_a)
        self.size_b = tuple(size_b)
        super().__init__(
            f"{what}: dimension mismatch "
            f"{self.size_a[0]}x{self.size_a[1]} vs {self.size_b[0]}x{self.size_b[1]}"
        )


class ConnectivityUndefined(TopologyError):
    """Recall and connectivity are undefined for an empty ground truth."""

    pass


class PlacementError(TopologyError):
    """A synthetic network could not be placed under its constraints."""

    pass


class HeatmapFormatError(TopologyError):
    """A heatmap, confidence map or store manifest is malformed."""

    pass
