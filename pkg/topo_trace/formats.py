"""On-disk formats: portable graymaps/pixmaps, manifests and atomic writes.

Coordinate convention for every format: x grows rightward, y grows downward,
the origin is the center of the top-left pixel.
"""

import contextlib
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np
from PIL import Image

from topo_trace.errors import HeatmapFormatError

_LOGGER = logging.getLogger("topo-trace.formats")

MANIFEST_NAME = "manifest.txt"


@contextlib.contextmanager
def atomic_write(path, mode: str = "wb") -> Iterator:
    """Write to a temporary file next to `path`, then rename it into place.

    Readers never observe a half-written output; on error the temporary file
    is removed and `path` is left untouched.
    """
    path = Path(path)
    tmp = tempfile.NamedTemporaryFile(
        mode=mode,
        encoding=None if "b" in mode else "utf-8",
        dir=path.parent,
        prefix=f".{path.name}.",
        suffix=".tmp",
        delete=False,
    )
    try:
        with tmp:
            yield tmp
        os.replace(tmp.name, path)
    except BaseException:
        _LOGGER.debug(f"Discarding partial output {tmp.name}")
        with contextlib.suppress(OSError):
            os.unlink(tmp.name)
        raise


def read_graymap(path) -> np.ndarray:
    """Read a P5 graymap (maxval 255 or 65535) normalized to floats in [0, 1]."""
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            raw = np.asarray(img)
    except (OSError, SyntaxError, ValueError) as e:
        raise HeatmapFormatError(f"{path}: not a readable graymap: {e}") from e
    if mode == "L":
        scale = 255.0
    elif mode in ("I", "I;16", "I;16B"):
        scale = 65535.0
    else:
        raise HeatmapFormatError(f"{path}: expected a single-channel graymap, got {mode}")
    return raw.astype(np.float64) / scale


def write_graymap16(path, values: np.ndarray) -> None:
    """Write values in [0, 1] as a big-endian P5 graymap with maxval 65535."""
    levels = np.floor(np.clip(values, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)
    with atomic_write(path) as f:
        Image.fromarray(levels).save(f, format="PPM")


def write_graymap8(path, bits: np.ndarray) -> None:
    """Write a binary grid as a P5 graymap: 0 background, 255 foreground."""
    levels = np.where(np.asarray(bits, dtype=bool), 255, 0).astype(np.uint8)
    with atomic_write(path) as f:
        Image.fromarray(levels).save(f, format="PPM")


def write_pixmap(path, rgb: np.ndarray) -> None:
    """Write an (height, width, 3) uint8 array as a P6 pixmap."""
    with atomic_write(path) as f:
        Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(f, format="PPM")


class ManifestEntry(NamedTuple):
    center_x: float
    center_y: float
    path: Path
    mode: Optional[str] = None


def read_manifest(directory) -> list[ManifestEntry]:
    """Read `manifest.txt` in `directory`.

    Lines are "center_x center_y relative/path.pgm" (heatmap stores) or
    "center_x center_y mode relative/path.pgm" (ground-truth batches); blank
    lines and lines starting with '#' are ignored. Paths are resolved against
    `directory`.
    """
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    entries = []
    with open(manifest, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) not in (3, 4):
                raise HeatmapFormatError(
                    f"{manifest}:{lineno}: expected 3 or 4 fields, got {len(fields)}"
                )
            try:
                cx, cy = float(fields[0]), float(fields[1])
            except ValueError as e:
                raise HeatmapFormatError(f"{manifest}:{lineno}: bad center: {e}") from e
            mode = fields[2] if len(fields) == 4 else None
            entries.append(ManifestEntry(cx, cy, directory / fields[-1], mode))
    return entries


def write_manifest(directory, entries: Iterable[ManifestEntry]) -> None:
    directory = Path(directory)
    lines = []
    for entry in entries:
        rel = Path(entry.path)
        if rel.is_absolute():
            rel = rel.relative_to(directory)
        fields = [_fmt(entry.center_x), _fmt(entry.center_y)]
        if entry.mode is not None:
            fields.append(entry.mode)
        fields.append(rel.as_posix())
        lines.append(" ".join(fields) + "\n")
    with atomic_write(directory / MANIFEST_NAME, mode="w") as f:
        f.writelines(lines)


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)
