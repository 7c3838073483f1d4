"""Box projection and background constraints on the soft mask.

The evolving mask m = sigma(k phi) is tied to its annotated box through two
dice terms computed over the enlarged region grid:

  * projection: the per-axis max of m must match the per-axis max of the
    box indicator (a max along rows and a max along columns, one dice loss
    each),
  * background: 1 - m must match the indicator of the region outside the
    box.

Everything outside the enlarged region is background for the instance by
construction, so the constraints never need the full image.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BinaryRegionMasks",
    "binary_region_masks",
    "dice_loss",
    "dice_gradient",
    "box_projection_constraint",
    "background_constraint",
    "constraint_loss",
    "constraint_gradient",
]

SMOOTH = 1e-6  # dice smoothing; also makes both-empty inputs give loss 0


@dataclass(frozen=True)
class BinaryRegionMasks:
    """Foreground (box) and background indicators over a region grid."""

    foreground: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        f = self.foreground
        b = self.background
        if f.shape != b.shape:
            raise ValueError("foreground %r vs background %r" % (f.shape, b.shape))
        if not np.array_equal(f + b, np.ones_like(f)):
            raise ValueError("foreground and background must partition the region")


def binary_region_masks(region, box):
    """Build the box / outside-box indicator pair for a region window."""
    f = np.zeros(region.shape, dtype=np.float64)
    x0 = max(box.x_min, region.x_min) - region.x_min
    x1 = min(box.x_max, region.x_max) - region.x_min
    y0 = max(box.y_min, region.y_min) - region.y_min
    y1 = min(box.y_max, region.y_max) - region.y_min
    if x1 > x0 and y1 > y0:
        f[y0:y1, x0:x1] = 1.0
    return BinaryRegionMasks(f, 1.0 - f)


def dice_loss(pred, target):
    """Soft dice loss with a squared denominator.

    1 - (2 sum(p t) + s) / (sum(p^2) + sum(t^2) + s), s = 1e-6. Symmetric in
    its arguments; two empty inputs give exactly 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("dice shapes differ: %r vs %r" % (pred.shape, target.shape))
    num = 2.0 * (pred * target).sum() + SMOOTH
    den = (pred * pred).sum() + (target * target).sum() + SMOOTH
    return float(1.0 - num / den)


def dice_gradient(pred, target):
    """d(dice_loss)/d(pred), with target treated as constant."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("dice shapes differ: %r vs %r" % (pred.shape, target.shape))
    num = 2.0 * (pred * target).sum() + SMOOTH
    den = (pred * pred).sum() + (target * target).sum() + SMOOTH
    # quotient rule of 1 - num/den
    return (2.0 * num * pred - 2.0 * den * target) / (den * den)


def box_projection_constraint(m, b_f):
    """Dice of the axis max-projections of m against those of the box."""
    m = np.asarray(m, dtype=np.float64)
    b_f = np.asarray(b_f, dtype=np.float64)
    if m.shape != b_f.shape:
        raise ValueError("projection shapes differ: %r vs %r" % (m.shape, b_f.shape))
    lx = dice_loss(m.max(axis=0), b_f.max(axis=0))
    ly = dice_loss(m.max(axis=1), b_f.max(axis=1))
    return lx + ly


def background_constraint(m, b_b):
    """Dice of the predicted background 1 - m against the outside-box mask."""
    return dice_loss(1.0 - np.asarray(m, dtype=np.float64), b_b)


def constraint_loss(m, masks):
    """Total constraint value, projections plus background. Range [0, 3]."""
    return box_projection_constraint(m, masks.foreground) + background_constraint(
        m, masks.background
    )


def constraint_gradient(m, masks):
    """Analytical d(constraint_loss)/dm.

    The max projections are handled by subgradient: each projected entry
    routes its dice gradient to the first arg-max pixel of its row or
    column (numpy argmax picks the first on ties, which keeps the routing
    deterministic).
    """
    m = np.asarray(m, dtype=np.float64)
    b_f = masks.foreground
    grad = np.zeros_like(m)

    px = m.max(axis=0)
    gx = dice_gradient(px, b_f.max(axis=0))
    rows = m.argmax(axis=0)
    grad[rows, np.arange(m.shape[1])] += gx

    py = m.max(axis=1)
    gy = dice_gradient(py, b_f.max(axis=1))
    cols = m.argmax(axis=1)
    grad[np.arange(m.shape[0]), cols] += gy

    # background term: d/dm dice(1 - m, b_b) = -dice_gradient(1 - m, b_b)
    grad -= dice_gradient(1.0 - m, masks.background)
    return grad
