"""Synthetic coastal scenes with known class geometry.

Used as test fixtures in place of real aerial imagery: a sand flat with
water channels, dense seagrass beds inside sparse fringes, sparse patches,
oyster-raft rows, optional debris, and a transparent border.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster_model import (ClassScheme, GeoTransform, ImageRaster, LabelRaster,
                           default_scheme, encode_labels)

SAND, DENSE, SPARSE, RAFT, DEBRIS, WATER = range(6)

# mean color and per-pixel noise for each class texture
_TEXTURE = {
    SAND: ((208, 182, 140), 6.0),
    DENSE: ((35, 75, 40), 18.0),
    WATER: ((45, 80, 125), 5.0),
    RAFT: ((95, 90, 85), 6.0),
    DEBRIS: ((190, 70, 65), 10.0),
}
_SPARSE_SHOOT = ((70, 125, 70), 12.0)
_SPARSE_COVER = 0.4


@dataclass(frozen=True)
class Blob:
    row: float
    col: float
    r_row: float
    r_col: float


@dataclass
class SceneLayout:
    size: int
    channels: list[tuple[int, int]]  # water channels as (col0, width), full height
    dense: list[Blob]
    sparse: list[Blob]
    rafts: list[tuple[int, int, int, int]]  # row0, col0, height, width
    debris: list[tuple[int, int, int, int]]
    border: int


def _ellipse(shape, blob: Blob, scale: float = 1.0) -> np.ndarray:
    rr, cc = np.ogrid[:shape[0], :shape[1]]
    return (((rr - blob.row) / (blob.r_row * scale)) ** 2
            + ((cc - blob.col) / (blob.r_col * scale)) ** 2) <= 1.0


def random_layout(size: int = 2048, seed: int = 0, border: int = 24,
                  n_debris: int = 0) -> SceneLayout:
    """Feature placement repeated in each quadrant.

    Each half of the scene has a full-height water channel carrying rows of
    rafts; seagrass beds sit on the sand flat beside it.
    """
    rng = np.random.default_rng(seed)
    scale = size / 2048
    half = size // 2
    ch_col, ch_width = int(540 * scale), int(300 * scale)
    channels = [(c0 + ch_col, ch_width) for c0 in (0, half)]

    rafts = []
    h, w = max(2, int(24 * scale)), max(4, int(56 * scale))
    for col0, _ in channels:
        for c in (col0 + int(20 * scale), col0 + int(96 * scale)):
            for r in range(border + int(40 * scale), size - border - h, int(52 * scale)):
                rafts.append((r, c, h, w))

    dense, sparse = [], []
    for q in range(4):
        r0, c0 = (q // 2) * half, (q % 2) * half
        rows = np.linspace(r0 + 0.22 * half, r0 + 0.78 * half, 3)
        for i, row in enumerate(rng.permutation(rows)):
            rmax = 100 * scale
            rr, rc = rng.uniform(60 * scale, rmax, size=2)
            fringe = 1.4 * rmax
            col = c0 + rng.uniform(fringe, ch_col - fringe)
            row = row + rng.uniform(-20, 20) * scale
            (sparse if i == 0 else dense).append(Blob(row, col, rr, rc))

    debris = []
    for _ in range(n_debris):
        s = int(rng.integers(24, 40) * scale) or 1
        debris.append((int(rng.integers(border, size - border - s)),
                       int(rng.integers(border, size - border - s)), s, s))
    return SceneLayout(size, channels, dense, sparse, rafts, debris, border)


def rasterize(layout: SceneLayout, dense_scale: float = 1.0, water_scale: float = 1.0,
              raft_keep: float = 1.0, debris_keep: float = 1.0, seed: int = 0) -> np.ndarray:
    """Class-id grid for a layout; later features paint over earlier ones.

    Every dense bed sits inside a fixed sparse fringe, so shrinking
    ``dense_scale`` thins beds to sparse cover without moving their outline.
    ``water_scale`` narrows channels from their far bank only.
    """
    n = layout.size
    shape = (n, n)
    rng = np.random.default_rng(seed)
    labels = np.full(shape, SAND, dtype=np.uint8)
    for col0, width in layout.channels:
        labels[:, col0:col0 + int(round(width * water_scale))] = WATER
    keep = rng.random(len(layout.rafts)) < raft_keep
    for k, (r, c, h, w) in zip(keep, layout.rafts):
        if k:
            labels[r:r + h, c:c + w] = RAFT
    for b in layout.sparse:
        labels[_ellipse(shape, b)] = SPARSE
    for b in layout.dense:
        labels[_ellipse(shape, b, 1.4)] = SPARSE
    for b in layout.dense:
        labels[_ellipse(shape, b, dense_scale)] = DENSE
    keep = rng.random(len(layout.debris)) < debris_keep
    for k, (r, c, h, w) in zip(keep, layout.debris):
        if k:
            labels[r:r + h, c:c + w] = DEBRIS
    return labels


def render(labels: np.ndarray, seed: int = 0, border: int = 0,
           masked_id: int = 255) -> np.ndarray:
    """RGBA texture for a class grid; pixels with ``masked_id`` (and the border) are transparent."""
    rng = np.random.default_rng(seed)
    h, w = labels.shape
    rgb = np.zeros((h, w, 3), dtype=np.float64)
    noise = rng.standard_normal((h, w, 3))
    for cid, (color, sigma) in _TEXTURE.items():
        m = labels == cid
        rgb[m] = np.asarray(color, dtype=np.float64) + sigma * noise[m]
    m = labels == SPARSE
    shoots = m & (rng.random((h, w)) < _SPARSE_COVER)
    sand_color, sand_sigma = _TEXTURE[SAND]
    shoot_color, shoot_sigma = _SPARSE_SHOOT
    rgb[m] = np.asarray(sand_color) + sand_sigma * noise[m]
    rgb[shoots] = np.asarray(shoot_color) + shoot_sigma * noise[shoots]
    out = np.empty((h, w, 4), dtype=np.uint8)
    out[:, :, :3] = np.clip(np.rint(rgb), 0, 255)
    out[:, :, 3] = 255
    if border:
        out[:border, :, 3] = 0
        out[-border:, :, 3] = 0
        out[:, :border, 3] = 0
        out[:, -border:, 3] = 0
    out[labels == masked_id, 3] = 0
    out[out[:, :, 3] == 0, :3] = 0
    return out


def apply_border(labels: np.ndarray, border: int, masked_id: int) -> np.ndarray:
    out = labels.copy()
    if border:
        out[:border, :] = masked_id
        out[-border:, :] = masked_id
        out[:, :border] = masked_id
        out[:, -border:] = masked_id
    return out


@dataclass
class Epoch:
    image: ImageRaster
    truth: LabelRaster


BEFORE = {"dense_scale": 1.0, "water_scale": 1.0, "raft_keep": 1.0, "debris_keep": 0.4}
AFTER = {"dense_scale": 0.5, "water_scale": 0.7, "raft_keep": 0.4, "debris_keep": 1.0}


def make_epoch_pair(size: int = 2048, seed: int = 0, resolution: float = 0.4,
                    scheme: ClassScheme | None = None, n_debris: int = 0
                    ) -> tuple[Epoch, Epoch]:
    """Before/after epochs sharing one layout.

    The second epoch has thinner dense beds, receded water (more sand) and
    fewer rafts.
    """
    scheme = scheme or default_scheme()
    layout = random_layout(size, seed, n_debris=n_debris)
    geo = GeoTransform(0.0, size * resolution, resolution, resolution)
    epochs = []
    for i, params in enumerate((BEFORE, AFTER)):
        grid = rasterize(layout, seed=seed + 101, **params)
        grid = apply_border(grid, layout.border, scheme.masked_id)
        img = render(grid, seed=seed * 7919 + i, border=layout.border, masked_id=scheme.masked_id)
        epochs.append(Epoch(ImageRaster(img, geo), LabelRaster(grid, scheme, geo)))
    return epochs[0], epochs[1]


def noisy_color_map(labels: LabelRaster, sigma: float, seed: int = 0) -> ImageRaster:
    """Class colors plus Gaussian color noise, mimicking generator output."""
    rng = np.random.default_rng(seed)
    img = encode_labels(labels).samples.astype(np.float64)
    img[:, :, :3] += sigma * rng.standard_normal(img.shape[:2] + (3,))
    out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    out[:, :, 3] = np.where(labels.valid, 255, 0)
    return ImageRaster(out, labels.geo)
