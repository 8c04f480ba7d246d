"""Bring imagery from two epochs onto a common grid and color level."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .raster_model import (ImageRaster, LabelRaster, MaskRaster, RasterError,
                           check_same_grid)


def _output_size(n_pixels: int, pixel_size: float, resolution: float) -> int:
    # round away float noise such as 1000*0.2/0.4 = 500.00000000000006
    return max(1, math.ceil(round(n_pixels * pixel_size / resolution, 9)))


def resample(raster: ImageRaster | LabelRaster, target_resolution: float):
    """Resample onto a square grid of ``target_resolution`` m/pixel, same origin.

    Images are interpolated bilinearly; label rasters use nearest neighbour so
    no new class ids can appear.
    """
    if not target_resolution > 0:
        raise RasterError(f"target resolution must be positive, got {target_resolution}")
    geo = raster.geo
    if geo.pixel_size_x == target_resolution and geo.pixel_size_y == target_resolution:
        return raster
    out_w = _output_size(raster.width, geo.pixel_size_x, target_resolution)
    out_h = _output_size(raster.height, geo.pixel_size_y, target_resolution)
    new_geo = geo.with_resolution(target_resolution)
    # source pixel coordinates of output pixel centers
    cols = (np.arange(out_w) + 0.5) * (target_resolution / geo.pixel_size_x) - 0.5
    rows = (np.arange(out_h) + 0.5) * (target_resolution / geo.pixel_size_y) - 0.5

    if isinstance(raster, LabelRaster):
        ci = np.clip(np.floor(cols + 0.5).astype(np.int64), 0, raster.width - 1)
        ri = np.clip(np.floor(rows + 0.5).astype(np.int64), 0, raster.height - 1)
        return LabelRaster(raster.labels[np.ix_(ri, ci)], raster.scheme, new_geo)

    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = np.empty((out_h, out_w, raster.bands), dtype=np.uint8)
    for b in range(raster.bands):
        band = raster.samples[:, :, b].astype(np.float64)
        vals = ndimage.map_coordinates(band, [rr, cc], order=1, mode="nearest")
        out[:, :, b] = np.clip(np.rint(vals), 0, 255)
    return ImageRaster(out, new_geo)


def build_mask(image: ImageRaster, nodata_color: tuple[int, int, int] | None = None) -> MaskRaster:
    """Valid unless alpha is 0 or the RGB sample equals ``nodata_color``."""
    valid = np.ones((image.height, image.width), dtype=bool)
    if image.has_alpha:
        valid &= image.samples[:, :, 3] != 0
    if nodata_color is not None:
        nodata = np.asarray(nodata_color, dtype=np.uint8)
        bands = min(image.bands, 3)
        valid &= ~np.all(image.samples[:, :, :bands] == nodata[:bands], axis=2)
    return MaskRaster(valid)


def _cdf(values: np.ndarray) -> np.ndarray:
    hist = np.bincount(values, minlength=256).astype(np.float64)
    return np.cumsum(hist) / hist.sum()


def matching_lut(source_values: np.ndarray, reference_values: np.ndarray) -> np.ndarray:
    """256-entry monotone lookup mapping source levels onto reference levels.

    Each source level v goes to the smallest reference level whose CDF
    reaches the source CDF at v.
    """
    src_cdf = _cdf(source_values)
    ref_cdf = _cdf(reference_values)
    # guard the top end against cumulative round-off
    ref_cdf[-1] = 1.0
    lut = np.searchsorted(ref_cdf, src_cdf - 1e-12, side="left")
    return np.clip(lut, 0, 255).astype(np.uint8)


def color_matching_luts(source: ImageRaster, reference: ImageRaster,
                        source_mask: MaskRaster | None = None,
                        reference_mask: MaskRaster | None = None) -> list[np.ndarray]:
    """Per-band lookups for the color bands (alpha is never remapped)."""
    if source.bands != reference.bands:
        raise RasterError(
            f"band count mismatch: source {source.bands}, reference {reference.bands}")
    src_valid = build_mask(source).valid
    ref_valid = build_mask(reference).valid
    if source_mask is not None:
        check_same_grid(source, source_mask)
        src_valid = src_valid & source_mask.valid
    if reference_mask is not None:
        check_same_grid(reference, reference_mask)
        ref_valid = ref_valid & reference_mask.valid
    if not ref_valid.any():
        raise RasterError("reference image has no valid pixels")
    n_color = 3 if source.has_alpha else source.bands
    luts = []
    for b in range(n_color):
        src_vals = source.samples[:, :, b][src_valid]
        if src_vals.size == 0:
            luts.append(np.arange(256, dtype=np.uint8))
            continue
        luts.append(matching_lut(src_vals, reference.samples[:, :, b][ref_valid]))
    return luts


def match_color_levels(source: ImageRaster, reference: ImageRaster,
                       source_mask: MaskRaster | None = None,
                       reference_mask: MaskRaster | None = None) -> ImageRaster:
    """Histogram-match each color band of ``source`` to ``reference``.

    Only valid pixels (alpha != 0 and inside the optional masks) enter the
    histograms or get remapped, so masked pixels keep their exact values.
    """
    luts = color_matching_luts(source, reference, source_mask, reference_mask)
    valid = build_mask(source).valid
    if source_mask is not None:
        valid = valid & source_mask.valid
    out = np.array(source.samples)
    for b, lut in enumerate(luts):
        band = out[:, :, b]
        band[valid] = lut[band[valid]]
    return ImageRaster(out, source.geo)


def prepare_epoch(image: ImageRaster, reference: ImageRaster | None, resolution: float,
                  nodata_color: tuple[int, int, int] | None = None
                  ) -> tuple[ImageRaster, MaskRaster]:
    """Resample, mask and (optionally) color-match one epoch."""
    image = resample(image, resolution)
    mask = build_mask(image, nodata_color)
    if reference is not None:
        reference = resample(reference, resolution)
        ref_mask = build_mask(reference, nodata_color)
        image = match_color_levels(image, reference, mask, ref_mask)
    return image, mask

