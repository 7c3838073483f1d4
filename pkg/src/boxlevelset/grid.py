"""Image representation, normalization and region geometry.

Images are float64 arrays of shape (channels, height, width). Loading keeps
8-bit values as floats in [0, 255]; :func:`normalize_image` maps each channel
onto [0, 1]. Boxes use half-open integer pixel coordinates
[x_min, x_max) x [y_min, y_max) with x indexing columns and y indexing rows,
so widths and areas are plain differences.

All types here are immutable after construction and safe to share across
threads.
"""

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

__all__ = [
    "AnnotationError",
    "BoxAnnotation",
    "EnlargedRegion",
    "load_image",
    "normalize_image",
    "enlarge_box",
    "crop_region",
]


class AnnotationError(ValueError):
    """Raised for malformed boxes or annotation records."""


@dataclass(frozen=True)
class BoxAnnotation:
    """Axis-aligned box [x_min, x_max) x [y_min, y_max) with a class label."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    class_id: int = 0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise AnnotationError(
                "degenerate box (%r, %r, %r, %r)"
                % (self.x_min, self.y_min, self.x_max, self.y_max)
            )

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min


@dataclass(frozen=True)
class EnlargedRegion:
    """Integer pixel window around a box, clipped to the image bounds."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    factor: float = 1.0

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def shape(self):
        return (self.height, self.width)


def load_image(path):
    """Load a PNG or JPEG as a (channels, height, width) float array.

    Grayscale files give one channel, everything else is converted to RGB.
    Values stay in [0, 255]; call :func:`normalize_image` afterwards.
    """
    with Image.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float64)[None, :, :]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
            arr = np.moveaxis(arr, -1, 0)
    return arr


def normalize_image(raw):
    """Map each channel affinely onto [0, 1].

    Parameters
    ----------
    raw : ndarray, shape (C, H, W)
        Image in any numeric range.

    Returns
    -------
    ndarray, shape (C, H, W)
        Per-channel (v - min) / (max - min). A constant channel maps to all
        zeros. Normalization is global over the image, not per region, so
        overlapping instances see consistent intensities.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3:
        raise ValueError("expected (channels, height, width), got shape %r" % (raw.shape,))
    out = np.empty_like(raw)
    for c in range(raw.shape[0]):
        lo = raw[c].min()
        hi = raw[c].max()
        if hi > lo:
            out[c] = (raw[c] - lo) / (hi - lo)
        else:
            out[c] = 0.0
    return out


def enlarge_box(box, factor, width, height):
    """Scale a box about its center and clip to the image.

    The scaled window is rounded outward (floor on the low edge, ceil on the
    high edge) so the result always contains the scaled box, then clipped to
    [0, width) x [0, height).

    Raises :class:`AnnotationError` if the box does not intersect the image
    or factor < 1.
    """
    if factor < 1.0:
        raise AnnotationError("enlargement factor must be >= 1, got %r" % (factor,))
    if box.x_max <= 0 or box.y_max <= 0 or box.x_min >= width or box.y_min >= height:
        raise AnnotationError(
            "box (%d, %d, %d, %d) lies outside a %dx%d image"
            % (box.x_min, box.y_min, box.x_max, box.y_max, width, height)
        )
    cx = 0.5 * (box.x_min + box.x_max)
    cy = 0.5 * (box.y_min + box.y_max)
    hw = 0.5 * factor * box.width
    hh = 0.5 * factor * box.height
    x0 = max(0, math.floor(cx - hw))
    y0 = max(0, math.floor(cy - hh))
    x1 = min(width, math.ceil(cx + hw))
    y1 = min(height, math.ceil(cy + hh))
    return EnlargedRegion(x0, y0, x1, y1, factor=float(factor))


def crop_region(img, region):
    """Return the sub-grid of `img` covering `region` (a view, not a copy).

    Accepts (C, H, W) images or (H, W) scalar fields; energies in the other
    modules run entirely over this sub-grid.
    """
    if img.ndim == 3:
        return img[:, region.y_min : region.y_max, region.x_min : region.x_max]
    return img[region.y_min : region.y_max, region.x_min : region.x_max]


def resolve_path(path, root=None):
    """Join a possibly relative annotation path against a root directory."""
    if root is not None and not os.path.isabs(path):
        return os.path.join(root, path)
    return path
