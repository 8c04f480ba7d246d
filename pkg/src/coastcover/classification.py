"""Segmentation backends: a native nearest-centroid baseline, import of labels
produced by external models, confidence handling and majority-filter cleanup.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .raster_model import (ClassScheme, ImageRaster, LabelRaster, MaskRaster,
                           RasterError, check_same_grid, decode_labels, read_image)
from .tiling import DEFAULT_TILE_SIZE, Tile, TilePair, mosaic_tiles, tile_raster

SPREAD_FLOOR = 3.0  # intensity units; keeps near-flat features from dominating distances
MODEL_HEADER = "baseline-model v1"
FEATURE_NAMES = ("r", "g", "b", "mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b")


class ClassificationError(RasterError):
    pass


@dataclass(frozen=True)
class ScoreMap:
    """Per-pixel class scores, ``scores`` shaped (height, width, n_classes).

    ``invalid`` marks pixels with no imagery (tile padding or alpha 0); their
    scores are uniform and downstream labelling maps them to ``masked_id``.
    """

    scores: np.ndarray
    class_ids: tuple[int, ...]
    invalid: np.ndarray

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class BaselineModel:
    class_ids: tuple[int, ...]
    centroids: np.ndarray  # (n_classes, n_features)
    spreads: np.ndarray  # (n_classes, n_features), all >= SPREAD_FLOOR
    window: int = 9

    def to_text(self) -> str:
        lines = [MODEL_HEADER, f"window {self.window}",
                 "features " + " ".join(FEATURE_NAMES)]
        for cid, c, s in zip(self.class_ids, self.centroids, self.spreads):
            lines.append(f"class {cid} centroid " + " ".join(repr(float(v)) for v in c)
                         + " spread " + " ".join(repr(float(v)) for v in s))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BaselineModel":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != MODEL_HEADER:
            raise ClassificationError(f"not a {MODEL_HEADER} file")
        window, ids, cents, spreads = None, [], [], []
        n = len(FEATURE_NAMES)
        try:
            for line in lines[1:]:
                parts = line.split()
                if parts[0] == "window":
                    window = int(parts[1])
                elif parts[0] == "class":
                    ids.append(int(parts[1]))
                    cents.append([float(v) for v in parts[3:3 + n]])
                    spreads.append([float(v) for v in parts[4 + n:4 + 2 * n]])
                    if parts[2] != "centroid" or parts[3 + n] != "spread" or len(parts) != 4 + 2 * n:
                        raise ValueError(f"malformed class line: {line!r}")
        except (ValueError, IndexError) as exc:
            raise ClassificationError(f"bad model file: {exc}") from None
        if window is None or not ids:
            raise ClassificationError("model file lacks a window or classes")
        return cls(tuple(ids), np.array(cents), np.array(spreads), window)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "BaselineModel":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise ClassificationError(f"{path}: cannot read model ({exc.strerror})") from None


def _check_window(window: int) -> None:
    if window < 1 or window % 2 == 0:
        raise ClassificationError(f"window must be odd and >= 1, got {window}")


def pixel_features(image: ImageRaster, valid: np.ndarray, window: int) -> np.ndarray:
    """RGB plus windowed mean and standard deviation per band, shape (h, w, 9).

    Window statistics are taken over valid pixels only, so tile padding and
    transparent pixels do not bleed into their neighbours.
    """
    rgb = image.rgb.astype(np.float64)
    w = valid.astype(np.float64)
    count = ndimage.uniform_filter(w, window, mode="constant", cval=0.0)
    count = np.where(count > 0, count, 1.0)
    feats = np.empty(rgb.shape[:2] + (9,), dtype=np.float64)
    feats[:, :, :3] = rgb
    for b in range(3):
        # centre on the band median to limit cancellation in E[x^2] - E[x]^2
        shift = float(np.median(rgb[:, :, b][valid])) if valid.any() else 0.0
        band = rgb[:, :, b] - shift
        x = band * w
        mean = ndimage.uniform_filter(x, window, mode="constant", cval=0.0) / count
        sq = ndimage.uniform_filter(x * band, window, mode="constant", cval=0.0) / count
        feats[:, :, 3 + b] = mean + shift
        feats[:, :, 6 + b] = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    return feats


def _tile_valid(tile: Tile) -> np.ndarray:
    valid = ~tile.pad_mask
    if tile.payload.has_alpha:
        valid = valid & (tile.payload.samples[:, :, 3] != 0)
    return valid


def train_baseline(pairs: Sequence[TilePair], window: int = 9) -> BaselineModel:
    """Per-class feature centroids and spreads over all labelled, unpadded pixels."""
    _check_window(window)
    if not pairs:
        raise ClassificationError("no training tiles")
    scheme = pairs[0].label_tile.payload.scheme
    k = len(scheme)
    n = np.zeros(k, dtype=np.int64)
    s1 = np.zeros((k, 9))
    s2 = np.zeros((k, 9))
    # per-tile partial moments summed in tile order: deterministic for any partition
    for pair in pairs:
        img, lab = pair.image_tile, pair.label_tile
        valid = _tile_valid(img)
        feats = pixel_features(img.payload, valid, window)
        labels = lab.payload.labels
        use = valid & ~lab.pad_mask & (labels != scheme.masked_id)
        f = feats[use]
        ids = labels[use].astype(np.int64)
        n += np.bincount(ids, minlength=k)
        for j in range(9):
            s1[:, j] += np.bincount(ids, weights=f[:, j], minlength=k)
            s2[:, j] += np.bincount(ids, weights=f[:, j] ** 2, minlength=k)
    trained = np.flatnonzero(n)
    if trained.size == 0:
        raise ClassificationError("no usable labelled pixels in training tiles")
    cnt = n[trained, None].astype(np.float64)
    mean = s1[trained] / cnt
    var = np.maximum(s2[trained] / cnt - mean ** 2, 0.0)
    spread = np.maximum(np.sqrt(var), SPREAD_FLOOR)
    return BaselineModel(tuple(int(i) for i in trained), mean, spread, window)


def normalized_sq_distances(model: BaselineModel, feats: np.ndarray) -> np.ndarray:
    """Squared spread-normalised distance of each pixel to each class centroid."""
    d2 = np.empty(feats.shape[:2] + (len(model.class_ids),))
    for i, (c, s) in enumerate(zip(model.centroids, model.spreads)):
        d2[:, :, i] = (((feats - c) / s) ** 2).sum(axis=2)
    return d2


def predict_tile(model: BaselineModel | None, tile: Tile) -> ScoreMap:
    """Softmax of ``-d2 / 2`` over classes; invalid pixels get uniform scores."""
    if model is None or not model.class_ids:
        raise ClassificationError("model is not trained")
    if tile.is_labels:
        raise ClassificationError("predict_tile needs an image tile")
    valid = _tile_valid(tile)
    feats = pixel_features(tile.payload, valid, model.window)
    logits = -0.5 * normalized_sq_distances(model, feats)
    logits -= logits.max(axis=2, keepdims=True)
    e = np.exp(logits)
    scores = e / e.sum(axis=2, keepdims=True)
    scores[~valid] = 1.0 / len(model.class_ids)
    return ScoreMap(scores, model.class_ids, ~valid)


def scores_to_labels(scores: ScoreMap, scheme: ClassScheme, confidence_floor: float = 0.0,
                     geo=None) -> LabelRaster:
    """Per-pixel argmax (ties to the lowest class id).

    Pixels whose best score is below ``confidence_floor`` become the scheme's
    not-classified class.
    """
    if not 0.0 <= confidence_floor < 1.0:
        raise ClassificationError(f"confidence floor must be in [0, 1), got {confidence_floor}")
    if scores.scores.shape[2] != len(scores.class_ids):
        raise ClassificationError("score vector length does not match class count")
    unknown = [c for c in scores.class_ids if c not in scheme.ids]
    if unknown:
        raise ClassificationError(f"score classes {unknown} not in scheme")
    order = np.argsort(scores.class_ids, kind="stable")
    ids = np.asarray(scores.class_ids)[order]
    s = scores.scores[:, :, order]
    best = s.argmax(axis=2)
    labels = ids[best].astype(np.uint8)
    if confidence_floor > 0.0:
        if scheme.unclassified_id is None:
            raise ClassificationError("confidence floor set but the scheme has no not-classified class")
        low = s.max(axis=2) < confidence_floor
        labels[low] = scheme.unclassified_id
    labels[scores.invalid] = scheme.masked_id
    if geo is None:
        return LabelRaster(labels, scheme)
    return LabelRaster(labels, scheme, geo)


def classify_raster(model: BaselineModel, image: ImageRaster, scheme: ClassScheme,
                    mask: MaskRaster | None = None, tile_size: int = DEFAULT_TILE_SIZE,
                    floor: float = 0.0, threads: int = 1) -> LabelRaster:
    """Tile, predict each tile, label it, and mosaic back to the full grid."""
    if mask is not None:
        check_same_grid(image, mask)
    tiles = tile_raster(image, tile_size)

    def run(tile: Tile) -> Tile:
        sm = predict_tile(model, tile)
        lab = scores_to_labels(sm, scheme, floor, tile.payload.geo)
        return Tile(tile.grid_col, tile.grid_row, tile.pixel_origin, lab, tile.pad_mask)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            label_tiles = list(pool.map(run, tiles))
    else:
        label_tiles = [run(t) for t in tiles]
    result = mosaic_tiles(label_tiles, image.width, image.height)
    if mask is not None and not mask.valid.all():
        labels = np.array(result.labels)
        labels[~mask.valid] = scheme.masked_id
        result = LabelRaster(labels, scheme, result.geo)
    return result


def import_external_labels(path: str | os.PathLike, scheme: ClassScheme,
                           expected_dims: tuple[int, int] | None = None,
                           mask: MaskRaster | None = None) -> LabelRaster:
    """Load a colored label map made by an external model and snap it to the scheme.

    Off-palette colors (e.g. generator noise) go to the nearest class color.
    ``expected_dims`` is (width, height).
    """
    image = read_image(path)
    if expected_dims is not None and (image.width, image.height) != tuple(expected_dims):
        raise ClassificationError(
            f"{path}: size {image.width}x{image.height} does not match expected "
            f"{expected_dims[0]}x{expected_dims[1]}")
    if image.bands < 3:
        arr = np.array(image.samples[:, :, 0])
        if mask is not None:
            check_same_grid(image, mask)
            arr[~mask.valid] = scheme.masked_id
        return LabelRaster(arr, scheme, image.geo)
    return decode_labels(image, scheme, mask)


def majority_filter(labels: LabelRaster, radius: int = 1, iterations: int = 1) -> LabelRaster:
    """Replace each unmasked pixel by the modal class of its (2r+1)^2 window.

    Masked pixels are left alone and not counted. When the mode is not
    unique the pixel keeps its label.
    """
    if radius < 1:
        raise ClassificationError(f"radius must be >= 1, got {radius}")
    if iterations < 1:
        raise ClassificationError(f"iterations must be >= 1, got {iterations}")
    scheme = labels.scheme
    current = np.array(labels.labels)
    valid = current != scheme.masked_id
    kernel = np.ones((2 * radius + 1, 2 * radius + 1), dtype=np.int32)
    for _ in range(iterations):
        present = [c for c in scheme.ids if np.any(current == c)]
        if len(present) < 2:
            break
        counts = np.stack([
            ndimage.correlate((current == c).astype(np.int32), kernel, mode="constant", cval=0)
            for c in present])
        top = counts.max(axis=0)
        n_top = (counts == top).sum(axis=0)
        winner = np.asarray(present, dtype=np.uint8)[counts.argmax(axis=0)]
        update = valid & (n_top == 1)
        nxt = current.copy()
        nxt[update] = winner[update]
        if np.array_equal(nxt, current):
            break
        current = nxt
    return LabelRaster(current, scheme, labels.geo)
