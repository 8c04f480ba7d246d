"""Fixed-grid tile slicing, image/label pairing and mosaic reassembly."""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .raster_model import (ClassScheme, GeoTransform, ImageRaster, LabelRaster,
                           RasterError, read_image, read_labels, write_image,
                           write_labels)

DEFAULT_TILE_SIZE = 256


class TilingError(RasterError):
    pass


@dataclass(frozen=True)
class Tile:
    grid_col: int
    grid_row: int
    pixel_origin: tuple[int, int]  # (col, row) in the parent raster
    payload: ImageRaster | LabelRaster
    pad_mask: np.ndarray  # True where the payload lies outside the parent

    @property
    def tile_size(self) -> int:
        return self.payload.width

    @property
    def index(self) -> tuple[int, int]:
        return self.grid_row, self.grid_col

    @property
    def is_labels(self) -> bool:
        return isinstance(self.payload, LabelRaster)


@dataclass(frozen=True)
class TilePair:
    image_tile: Tile
    label_tile: Tile


def tile_grid_shape(width: int, height: int, tile_size: int) -> tuple[int, int]:
    """(rows, cols) of the tile grid covering a width x height raster."""
    return math.ceil(height / tile_size), math.ceil(width / tile_size)


def tile_raster(raster: ImageRaster | LabelRaster, tile_size: int = DEFAULT_TILE_SIZE) -> list[Tile]:
    """Slice into tile_size x tile_size tiles in row-major order.

    Edge tiles are padded (zeros for images, ``masked_id`` for labels) and
    carry a ``pad_mask`` marking the padded pixels.
    """
    if tile_size < 1:
        raise TilingError(f"tile size must be >= 1, got {tile_size}")
    if raster.width == 0 or raster.height == 0:
        raise TilingError("cannot tile an empty raster")
    is_labels = isinstance(raster, LabelRaster)
    data = raster.labels if is_labels else raster.samples
    fill = raster.scheme.masked_id if is_labels else 0
    n_rows, n_cols = tile_grid_shape(raster.width, raster.height, tile_size)
    tiles = []
    for gr in range(n_rows):
        for gc in range(n_cols):
            r0, c0 = gr * tile_size, gc * tile_size
            chunk = data[r0:r0 + tile_size, c0:c0 + tile_size]
            h, w = chunk.shape[:2]
            pad = np.ones((tile_size, tile_size), dtype=bool)
            pad[:h, :w] = False
            if h == tile_size and w == tile_size:
                buf = chunk
            else:
                buf = np.full((tile_size, tile_size) + data.shape[2:], fill, dtype=data.dtype)
                buf[:h, :w] = chunk
            geo = raster.geo.shifted(c0, r0)
            payload = (LabelRaster(buf, raster.scheme, geo) if is_labels
                       else ImageRaster(buf, geo))
            pad.flags.writeable = False
            tiles.append(Tile(gc, gr, (c0, r0), payload, pad))
    return tiles


def pair_tiles(image_tiles: Sequence[Tile], label_tiles: Sequence[Tile]) -> list[TilePair]:
    """Match image and label tiles by grid index, keeping the image tiles' order."""
    if len(image_tiles) != len(label_tiles):
        raise TilingError(
            f"tile count mismatch: {len(image_tiles)} image vs {len(label_tiles)} label tiles")
    by_index = {}
    for t in label_tiles:
        by_index[t.index] = t
    pairs = []
    for it in image_tiles:
        lt = by_index.get(it.index)
        if lt is None:
            raise TilingError(f"no label tile for grid index (row={it.grid_row}, col={it.grid_col})")
        if it.tile_size != lt.tile_size:
            raise TilingError(f"tile size mismatch: {it.tile_size} vs {lt.tile_size}")
        if it.pixel_origin != lt.pixel_origin or it.payload.geo != lt.payload.geo:
            raise TilingError(f"tile geometry mismatch at grid index {it.index}")
        if not np.array_equal(it.pad_mask, lt.pad_mask):
            raise TilingError(f"padding mismatch at grid index {it.index}")
        pairs.append(TilePair(it, lt))
    return pairs


def mosaic_tiles(tiles: Iterable[Tile], parent_width: int, parent_height: int):
    """Write every non-padding tile pixel back into a parent-sized raster.

    The result does not depend on tile order. Raises if a tile is missing,
    duplicated or lies outside the parent grid.
    """
    tiles = list(tiles)
    if not tiles:
        raise TilingError("no tiles to mosaic")
    ts = tiles[0].tile_size
    n_rows, n_cols = tile_grid_shape(parent_width, parent_height, ts)
    first = tiles[0]
    is_labels = first.is_labels
    seen: dict[tuple[int, int], Tile] = {}
    for t in tiles:
        if t.tile_size != ts or t.is_labels != is_labels:
            raise TilingError(f"inconsistent tile at grid index {t.index}")
        if not (0 <= t.grid_row < n_rows and 0 <= t.grid_col < n_cols):
            raise TilingError(f"tile (row={t.grid_row}, col={t.grid_col}) is outside the "
                              f"{n_rows}x{n_cols} grid")
        if t.pixel_origin != (t.grid_col * ts, t.grid_row * ts):
            raise TilingError(f"tile {t.index} has inconsistent pixel origin {t.pixel_origin}")
        if t.index in seen:
            raise TilingError(f"overlapping tiles at grid index (row={t.grid_row}, col={t.grid_col})")
        seen[t.index] = t
    missing = [(r, c) for r in range(n_rows) for c in range(n_cols) if (r, c) not in seen]
    if missing:
        r, c = missing[0]
        raise TilingError(f"missing tile at grid index (row={r}, col={c})"
                          + (f" and {len(missing) - 1} more" if len(missing) > 1 else ""))

    c0, r0 = first.pixel_origin
    geo = first.payload.geo.shifted(-c0, -r0)
    if is_labels:
        out = np.empty((parent_height, parent_width), dtype=first.payload.labels.dtype)
    else:
        out = np.empty((parent_height, parent_width, first.payload.bands), dtype=np.uint8)
    for (r, c), t in seen.items():
        data = t.payload.labels if is_labels else t.payload.samples
        h = min(ts, parent_height - r * ts)
        w = min(ts, parent_width - c * ts)
        out[r * ts:r * ts + h, c * ts:c * ts + w] = data[:h, :w]
    if is_labels:
        return LabelRaster(out, first.payload.scheme, geo)
    return ImageRaster(out, geo)


# --- tile-set persistence -------------------------------------------------

MANIFEST = "manifest.txt"
_TILE_NAME = re.compile(r"tile_(\d+)_(\d+)\.png$")


def save_tiles(directory: str | os.PathLike, tiles: Sequence[Tile],
               parent_width: int, parent_height: int) -> Path:
    """Write ``tile_{row}_{col}.png`` files plus a ``manifest.txt``."""
    if not tiles:
        raise TilingError("no tiles to save")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    first = tiles[0]
    c0, r0 = first.pixel_origin
    geo = first.payload.geo.shifted(-c0, -r0)
    manifest = [
        "tileset v1",
        f"kind {'labels' if first.is_labels else 'image'}",
        f"parent_width {parent_width}",
        f"parent_height {parent_height}",
        f"tile_size {first.tile_size}",
        f"origin_x {geo.origin_x!r}",
        f"origin_y {geo.origin_y!r}",
        f"pixel_size_x {geo.pixel_size_x!r}",
        f"pixel_size_y {geo.pixel_size_y!r}",
    ]
    (d / MANIFEST).write_text("\n".join(manifest) + "\n")
    for t in tiles:
        path = d / f"tile_{t.grid_row}_{t.grid_col}.png"
        if t.is_labels:
            write_labels(path, t.payload, raw=True)
        else:
            write_image(path, t.payload)
    return d / MANIFEST


def read_manifest(directory: str | os.PathLike) -> dict:
    path = Path(directory) / MANIFEST
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise TilingError(f"{path}: cannot read manifest ({exc.strerror})") from None
    if not lines or lines[0].strip() != "tileset v1":
        raise TilingError(f"{path}: not a tileset v1 manifest")
    info = {}
    for line in lines[1:]:
        if line.strip():
            key, _, value = line.partition(" ")
            info[key] = value.strip()
    for key in ("parent_width", "parent_height", "tile_size"):
        info[key] = int(info[key])
    info["geo"] = GeoTransform(float(info.pop("origin_x")), float(info.pop("origin_y")),
                               float(info.pop("pixel_size_x")), float(info.pop("pixel_size_y")))
    return info


def load_tiles(directory: str | os.PathLike,
               scheme: ClassScheme | None = None) -> tuple[list[Tile], dict]:
    """Read a saved tile set; returns (tiles in row-major order, manifest)."""
    d = Path(directory)
    info = read_manifest(d)
    ts, pw, ph, geo = info["tile_size"], info["parent_width"], info["parent_height"], info["geo"]
    is_labels = info["kind"] == "labels"
    if is_labels and scheme is None:
        raise TilingError("a class scheme is needed to load label tiles")
    found = {}
    for p in d.iterdir():
        m = _TILE_NAME.match(p.name)
        if m:
            found[(int(m.group(1)), int(m.group(2)))] = p
    tiles = []
    for (r, c) in sorted(found):
        tgeo = geo.shifted(c * ts, r * ts)
        payload = (read_labels(found[(r, c)], scheme, tgeo) if is_labels
                   else read_image(found[(r, c)], tgeo))
        if payload.width != ts or payload.height != ts:
            raise TilingError(f"{found[(r, c)]}: expected {ts}x{ts} tile")
        pad = np.ones((ts, ts), dtype=bool)
        pad[:max(0, min(ts, ph - r * ts)), :max(0, min(ts, pw - c * ts))] = False
        pad.flags.writeable = False
        tiles.append(Tile(c, r, (c * ts, r * ts), payload, pad))
    return tiles, info
