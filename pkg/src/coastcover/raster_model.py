"""Georeferenced image/label grids, class schemes and color <-> label conversion.

Rasters are stored as numpy arrays in (row, col[, band]) order. Arrays held by
the dataclasses below are flagged read-only, so values can be shared freely
between threads.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

DEFAULT_MASKED_ID = 255
DEFAULT_MASK_COLOR = (0, 0, 0, 0)


class RasterError(ValueError):
    """Raised for malformed rasters, schemes or raster files."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class GeoTransform:
    """North-up affine transform; ``pixel_size_y`` is stored positive."""

    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size_x: float = 1.0
    pixel_size_y: float = 1.0

    def __post_init__(self):
        if not (self.pixel_size_x > 0 and self.pixel_size_y > 0):
            raise RasterError(
                f"pixel sizes must be positive, got {self.pixel_size_x}, {self.pixel_size_y}")

    @property
    def pixel_area_m2(self) -> float:
        return self.pixel_size_x * self.pixel_size_y

    def pixel_to_map(self, col: float, row: float) -> tuple[float, float]:
        """Map coordinates of the center of pixel (col, row)."""
        return (self.origin_x + (col + 0.5) * self.pixel_size_x,
                self.origin_y - (row + 0.5) * self.pixel_size_y)

    def map_to_pixel(self, x: float, y: float) -> tuple[int, int]:
        """Integer (col, row) of the pixel containing map point (x, y)."""
        col = math.floor((x - self.origin_x) / self.pixel_size_x)
        row = math.floor((self.origin_y - y) / self.pixel_size_y)
        return col, row

    def shifted(self, col: int, row: int) -> "GeoTransform":
        """Transform of a sub-grid whose top-left pixel is (col, row) of this grid."""
        return GeoTransform(self.origin_x + col * self.pixel_size_x,
                            self.origin_y - row * self.pixel_size_y,
                            self.pixel_size_x, self.pixel_size_y)

    def with_resolution(self, resolution: float) -> "GeoTransform":
        return GeoTransform(self.origin_x, self.origin_y, resolution, resolution)

    # ESRI world file: A, D, B, E, C, F with C/F at the top-left pixel *center*.
    def to_world_file(self) -> str:
        cx, cy = self.pixel_to_map(0, 0)
        values = [self.pixel_size_x, 0.0, 0.0, -self.pixel_size_y, cx, cy]
        return "\n".join(repr(float(v)) for v in values) + "\n"

    @classmethod
    def from_world_file(cls, text: str) -> "GeoTransform":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if len(lines) != 6:
            raise RasterError(f"world file must have 6 lines, found {len(lines)}")
        try:
            a, d, b, e, c, f = (float(v) for v in lines)
        except ValueError as exc:
            raise RasterError(f"world file has a non-numeric line: {exc}") from None
        if d != 0.0 or b != 0.0:
            raise RasterError("rotated world files are not supported")
        if e >= 0:
            raise RasterError("world file must describe a north-up grid (negative E term)")
        psx, psy = a, -e
        return cls(c - 0.5 * psx, f + 0.5 * psy, psx, psy)


@dataclass(frozen=True)
class ImageRaster:
    """8-bit multi-band image, ``samples`` shaped (height, width, bands)."""

    samples: np.ndarray
    geo: GeoTransform = field(default_factory=GeoTransform)

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise RasterError(f"image samples must be 2-D or 3-D, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise RasterError("image samples must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "samples", _frozen(arr))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def bands(self) -> int:
        return self.samples.shape[2]

    @property
    def has_alpha(self) -> bool:
        return self.bands == 4

    @property
    def rgb(self) -> np.ndarray:
        return self.samples[:, :, :3]


@dataclass(frozen=True)
class ClassDef:
    class_id: int
    name: str
    color: tuple[int, int, int]


@dataclass(frozen=True)
class ClassScheme:
    """Ordered land-cover classes, their display colors and merge groups."""

    classes: tuple[ClassDef, ...]
    merge_groups: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    masked_id: int = DEFAULT_MASKED_ID
    unclassified_id: int | None = None
    mask_color: tuple[int, int, int, int] = DEFAULT_MASK_COLOR

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise RasterError("class scheme is empty")
        ids = [c.class_id for c in classes]
        if ids != list(range(len(ids))):
            raise RasterError(f"class ids must be contiguous from 0 in order, got {ids}")
        colors = [tuple(c.color) for c in classes]
        if len(set(colors)) != len(colors):
            raise RasterError("class colors must be pairwise distinct")
        for col in colors:
            if len(col) != 3 or any(not 0 <= v <= 255 for v in col):
                raise RasterError(f"invalid RGB color {col}")
        if self.masked_id in ids or not 0 <= self.masked_id <= 255:
            raise RasterError(f"masked_id {self.masked_id} must be an unused id in [0, 255]")
        groups = {}
        for name, members in dict(self.merge_groups).items():
            members = tuple(int(m) for m in members)
            if not members:
                raise RasterError(f"merge group {name!r} is empty")
            for m in members:
                if m == self.masked_id:
                    raise RasterError(f"masked_id cannot belong to merge group {name!r}")
                if m not in ids:
                    raise RasterError(f"merge group {name!r} has unknown class id {m}")
            groups[name] = members
        unclassified = self.unclassified_id
        if unclassified is None:
            for c in classes:
                if c.name.lower().replace(" ", "_").replace("-", "_") in (
                        "not_classified", "unclassified"):
                    unclassified = c.class_id
        elif unclassified not in ids:
            raise RasterError(f"unclassified id {unclassified} is not a class")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "merge_groups", groups)
        object.__setattr__(self, "unclassified_id", unclassified)
        object.__setattr__(self, "mask_color", tuple(int(v) for v in self.mask_color))

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(c.class_id for c in self.classes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    @property
    def palette(self) -> np.ndarray:
        return np.array([c.color for c in self.classes], dtype=np.uint8)

    def id_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.class_id
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"{c.class_id},{c.name},{c.color[0]},{c.color[1]},{c.color[2]}"
                 for c in self.classes]
        for name, members in self.merge_groups.items():
            lines.append("merge," + name + "," + ",".join(str(m) for m in members))
        lines.append(f"masked,{self.masked_id}")
        if self.unclassified_id is not None:
            lines.append(f"unclassified,{self.unclassified_id}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ClassScheme":
        """Parse ``id,name,R,G,B`` and ``merge,<group>,<id>,...`` records.

        ``masked,<id>`` and ``unclassified,<id>`` records are also accepted.
        Blank lines and ``#`` comments are ignored.
        """
        classes, groups = [], {}
        masked, unclassified = DEFAULT_MASKED_ID, None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                if parts[0] == "merge":
                    groups[parts[1]] = tuple(int(p) for p in parts[2:])
                elif parts[0] == "masked":
                    masked = int(parts[1])
                elif parts[0] == "unclassified":
                    unclassified = int(parts[1])
                else:
                    if len(parts) != 5:
                        raise ValueError("expected id,name,R,G,B")
                    r, g, b = (int(p) for p in parts[2:])
                    classes.append(ClassDef(int(parts[0]), parts[1], (r, g, b)))
            except (ValueError, IndexError) as exc:
                raise RasterError(f"scheme line {lineno}: {raw!r}: {exc}") from None
        classes.sort(key=lambda c: c.class_id)
        return cls(tuple(classes), groups, masked, unclassified)


def default_scheme() -> ClassScheme:
    return ClassScheme(
        (ClassDef(0, "sand", (210, 180, 140)),
         ClassDef(1, "dense_vegetation", (0, 100, 0)),
         ClassDef(2, "sparse_vegetation", (144, 238, 144)),
         ClassDef(3, "oyster_raft", (139, 69, 19)),
         ClassDef(4, "debris", (255, 0, 0)),
         ClassDef(5, "not_classified", (0, 0, 255))),
        merge_groups={"total_vegetation": (1, 2)},
    )


@dataclass(frozen=True)
class LabelRaster:
    """Per-pixel class ids, ``labels`` shaped (height, width)."""

    labels: np.ndarray
    scheme: ClassScheme
    geo: GeoTransform = field(default_factory=GeoTransform)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise RasterError(f"labels must be 2-D, got shape {arr.shape}")
        allowed = np.array(list(self.scheme.ids) + [self.scheme.masked_id])
        if arr.size:
            present = np.unique(arr)
            bad = present[~np.isin(present, allowed)]
            if bad.size:
                raise RasterError(f"labels outside scheme: {bad.tolist()}")
        object.__setattr__(self, "labels", _frozen(arr.astype(np.uint8, copy=False)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.labels != self.scheme.masked_id


@dataclass(frozen=True)
class MaskRaster:
    valid: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.valid, dtype=bool)
        if arr.ndim != 2:
            raise RasterError(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "valid", _frozen(arr))

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    def __and__(self, other: "MaskRaster") -> "MaskRaster":
        check_same_grid(self, other)
        return MaskRaster(self.valid & other.valid)


def check_same_grid(a, b) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise RasterError(
            f"grid mismatch: {a.width}x{a.height} vs {b.width}x{b.height}")


def nearest_color_ids(rgb: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Index of the nearest palette color (Euclidean RGB, ties to lowest index)."""
    flat = rgb.reshape(-1, 3).astype(np.int64)
    packed = (flat[:, 0] << 16) | (flat[:, 1] << 8) | flat[:, 2]
    uniq, inverse = np.unique(packed, return_inverse=True)
    ucol = np.stack([(uniq >> 16) & 255, (uniq >> 8) & 255, uniq & 255], axis=1)
    pal = palette.astype(np.int64)
    d2 = ((ucol[:, None, :] - pal[None, :, :]) ** 2).sum(axis=2)
    # argmin returns the first minimum, which is the lowest class id
    return d2.argmin(axis=1)[inverse.reshape(-1)].reshape(rgb.shape[:-1])


def decode_labels(image: ImageRaster, scheme: ClassScheme,
                  mask: MaskRaster | None = None) -> LabelRaster:
    """Assign every pixel the class whose scheme color is nearest in RGB."""
    if len(scheme) == 0:
        raise RasterError("class scheme is empty")
    if image.width == 0 or image.height == 0:
        raise RasterError("cannot decode a zero-sized image")
    if image.bands < 3:
        raise RasterError(f"decoding needs an RGB image, got {image.bands} band(s)")
    ids = np.asarray(scheme.ids, dtype=np.uint8)[nearest_color_ids(image.rgb, scheme.palette)]
    invalid = np.zeros(ids.shape, dtype=bool)
    if image.has_alpha:
        invalid |= image.samples[:, :, 3] == 0
    if mask is not None:
        check_same_grid(image, mask)
        invalid |= ~mask.valid
    ids[invalid] = scheme.masked_id
    return LabelRaster(ids, scheme, image.geo)


def encode_labels(labels: LabelRaster, scheme: ClassScheme | None = None) -> ImageRaster:
    """Paint each class in its scheme color; masked pixels get ``scheme.mask_color``.

    The result is always RGBA so that masked pixels survive a decode round trip.
    """
    scheme = scheme or labels.scheme
    lut = np.zeros((256, 4), dtype=np.uint8)
    lut[:, :] = scheme.mask_color
    known = np.zeros(256, dtype=bool)
    for c in scheme.classes:
        lut[c.class_id, :3] = c.color
        lut[c.class_id, 3] = 255
        known[c.class_id] = True
    known[scheme.masked_id] = True
    present = np.unique(labels.labels)
    bad = present[~known[present]]
    if bad.size:
        raise RasterError(f"labels outside scheme: {bad.tolist()}")
    return ImageRaster(lut[labels.labels], labels.geo)


# --- file IO ---------------------------------------------------------------

def world_file_path(path: str | os.PathLike) -> Path:
    """Sidecar name: ``.png`` -> ``.pgw``, ``.ppm`` -> ``.pmw``."""
    p = Path(path)
    ext = p.suffix.lstrip(".")
    if len(ext) >= 2:
        return p.with_suffix("." + ext[0] + ext[-1] + "w")
    return p.with_suffix(p.suffix + "w")


def read_geo(path: str | os.PathLike) -> GeoTransform | None:
    for candidate in (world_file_path(path), Path(path).with_suffix(".wld")):
        if candidate.exists():
            return GeoTransform.from_world_file(candidate.read_text())
    return None


def write_geo(path: str | os.PathLike, geo: GeoTransform) -> None:
    world_file_path(path).write_text(geo.to_world_file())


def _open_image(path: str | os.PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
            elif im.mode not in ("L", "RGB", "RGBA"):
                im = im.convert("RGBA" if "A" in im.mode else "RGB")
            return np.asarray(im)
    except (OSError, ValueError) as exc:
        raise RasterError(f"{path}: cannot read image ({exc})") from None


def read_image(path: str | os.PathLike, geo: GeoTransform | None = None) -> ImageRaster:
    arr = _open_image(path)
    return ImageRaster(arr, geo or read_geo(path) or GeoTransform())


def write_image(path: str | os.PathLike, image: ImageRaster, world_file: bool = True) -> None:
    arr = image.samples
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    suffix = Path(path).suffix.lower()
    if suffix in (".ppm", ".pnm") and arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    Image.fromarray(np.ascontiguousarray(arr)).save(path)
    if world_file:
        write_geo(path, image.geo)


def read_labels(path: str | os.PathLike, scheme: ClassScheme,
                geo: GeoTransform | None = None) -> LabelRaster:
    """Single-channel files hold raw class ids; color files are decoded by nearest color."""
    arr = _open_image(path)
    geo = geo or read_geo(path) or GeoTransform()
    if arr.ndim == 2:
        return LabelRaster(arr, scheme, geo)
    return decode_labels(ImageRaster(arr, geo), scheme)


def write_labels(path: str | os.PathLike, labels: LabelRaster, raw: bool = False) -> None:
    if raw:
        Image.fromarray(np.ascontiguousarray(labels.labels)).save(path)
        write_geo(path, labels.geo)
    else:
        write_image(path, encode_labels(labels))


def read_mask(path: str | os.PathLike) -> MaskRaster:
    arr = _open_image(path)
    if arr.ndim == 3:
        arr = arr[:, :, -1] if arr.shape[2] == 4 else arr.max(axis=2)
    return MaskRaster(arr > 0)


def write_mask(path: str | os.PathLike, mask: MaskRaster) -> None:
    Image.fromarray(mask.valid.astype(np.uint8) * 255).save(path)


def read_scheme(path: str | os.PathLike) -> ClassScheme:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise RasterError(f"{path}: cannot read scheme ({exc.strerror})") from None
    return ClassScheme.from_text(text)


def parse_rgb(text: str | Sequence[int] | None) -> tuple[int, int, int] | None:
    """Parse an ``R,G,B`` value."""
    if text is None:
        return None
    if not isinstance(text, str):
        vals = list(text)
    else:
        vals = [v.strip() for v in text.split(",")]
    try:
        rgb = tuple(int(v) for v in vals)
    except ValueError:
        raise RasterError(f"invalid color {text!r}, expected R,G,B") from None
    if len(rgb) != 3 or any(not 0 <= v <= 255 for v in rgb):
        raise RasterError(f"invalid color {text!r}, expected R,G,B in [0, 255]")
    return rgb

