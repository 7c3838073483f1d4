import numpy as np
import pytest

from boxlevelset import (
    BinaryRegionMasks,
    BoxAnnotation,
    background_constraint,
    binary_region_masks,
    box_projection_constraint,
    constraint_gradient,
    constraint_loss,
    dice_loss,
    enlarge_box,
)


def center_case():
    """3x3 region, box on the center pixel, m = 0.9 center else 0.1."""
    m = np.full((3, 3), 0.1)
    m[1, 1] = 0.9
    b_f = np.zeros((3, 3))
    b_f[1, 1] = 1.0
    return m, BinaryRegionMasks(b_f, 1.0 - b_f)


def test_dice_perfect_overlap():
    t = np.array([1.0, 0.0, 1.0, 1.0])
    assert dice_loss(t, t) < 1e-9


def test_dice_disjoint_near_one():
    assert dice_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0])) > 1 - 1e-5


def test_dice_hand_value():
    got = dice_loss(np.array([1.0, 1.0, 0.0, 0.0]), np.array([1.0, 0.0, 1.0, 0.0]))
    assert abs(got - 0.5) < 1e-6


def test_dice_both_empty_is_zero():
    assert dice_loss(np.zeros(5), np.zeros(5)) == 0.0


def test_dice_symmetry():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.uniform(0, 1, 12)
        b = rng.uniform(0, 1, 12)
        assert abs(dice_loss(a, b) - dice_loss(b, a)) < 1e-15


def test_dice_shape_mismatch():
    with pytest.raises(ValueError):
        dice_loss(np.zeros(3), np.zeros(4))


def test_region_masks_partition():
    region = enlarge_box(BoxAnnotation(4, 4, 8, 8), 2.0, 20, 20)
    masks = binary_region_masks(region, BoxAnnotation(4, 4, 8, 8))
    assert masks.foreground.sum() == 16
    assert np.array_equal(masks.foreground + masks.background, np.ones(region.shape))
    with pytest.raises(ValueError):
        BinaryRegionMasks(masks.foreground, masks.foreground)


def test_projection_of_exact_box_is_zero():
    _, masks = center_case()
    assert box_projection_constraint(masks.foreground, masks.foreground) < 1e-6


def test_projection_of_empty_mask_near_two():
    _, masks = center_case()
    m = np.full((3, 3), 1e-9)
    assert box_projection_constraint(m, masks.foreground) > 2 - 1e-3


def test_projection_frozen_center_case():
    # frozen values from an independent evaluation of the projected dice
    m, masks = center_case()
    got = box_projection_constraint(m, masks.foreground)
    assert abs(got - 0.032786867329581) < 1e-12


def test_background_of_exact_box_is_zero():
    _, masks = center_case()
    assert background_constraint(masks.foreground, masks.background) < 1e-6


def test_background_of_all_foreground_near_one():
    _, masks = center_case()
    assert background_constraint(np.full((3, 3), 1 - 1e-9), masks.background) > 1 - 1e-3


def test_background_frozen_center_case():
    m, masks = center_case()
    assert abs(background_constraint(m, masks.background) - 0.006211179695571) < 1e-12


def test_constraint_loss_composition():
    m, masks = center_case()
    total = constraint_loss(m, masks)
    assert abs(total - 0.038998047025151) < 1e-12
    assert abs(total - box_projection_constraint(m, masks.foreground)
               - background_constraint(m, masks.background)) < 1e-15


def test_constraint_loss_zero_iff_box():
    _, masks = center_case()
    assert constraint_loss(masks.foreground, masks) < 1e-6


def test_constraint_loss_near_empty_mask():
    _, masks = center_case()
    m = np.full((3, 3), 1e-9)
    expected_bg = dice_loss(1.0 - m, masks.background)
    assert abs(constraint_loss(m, masks) - (2.0 + expected_bg)) < 1e-3


def test_shrinking_inside_box_raises_projection():
    region = enlarge_box(BoxAnnotation(2, 2, 8, 8), 1.0, 10, 10)
    masks = binary_region_masks(region, BoxAnnotation(2, 2, 8, 8))
    full = masks.foreground.copy()
    shrunk = np.zeros_like(full)
    shrunk[1:-1, 1:-1] = full[1:-1, 1:-1]  # peel the outer ring off the box
    assert (box_projection_constraint(shrunk, masks.foreground)
            > box_projection_constraint(full, masks.foreground))


def test_constraint_values_bounded():
    rng = np.random.default_rng(7)
    _, masks = center_case()
    for _ in range(50):
        m = rng.uniform(1e-6, 1 - 1e-6, (3, 3))
        v = constraint_loss(m, masks)
        assert 0.0 <= v <= 3.0


def test_gradient_zero_at_exact_box_off_argmax():
    _, masks = center_case()
    g = constraint_gradient(masks.foreground, masks)
    rows = masks.foreground.argmax(axis=0)
    cols = masks.foreground.argmax(axis=1)
    offmax = np.ones((3, 3), dtype=bool)
    offmax[rows, np.arange(3)] = False
    offmax[np.arange(3), cols] = False
    assert np.max(np.abs(g[offmax])) == 0.0


def test_gradient_routes_to_single_argmax():
    # uniform mask with one bumped pixel per row: only arg-max pixels and
    # background-term pixels move under the projection part
    m = np.full((4, 4), 0.2)
    m[np.arange(4), [2, 0, 3, 1]] += 0.1
    b_f = np.zeros((4, 4))
    b_f[1:3, 1:3] = 1.0
    masks = BinaryRegionMasks(b_f, 1.0 - b_f)
    g = constraint_gradient(m, masks)
    g_bg = -1.0 * _dice_grad_reference(1.0 - m, masks.background)
    proj_part = g - g_bg
    nonzero = np.abs(proj_part) > 1e-15
    assert nonzero.sum() <= 8  # at most one pixel per row plus one per column


def _dice_grad_reference(p, t):
    s = 1e-6
    num = 2.0 * (p * t).sum() + s
    den = (p * p).sum() + (t * t).sum() + s
    return (2.0 * num * p - 2.0 * den * t) / den**2


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    _, _ = center_case()
    worst = 0.0
    trials = 0
    while trials < 20:
        m = rng.uniform(0.05, 0.95, (5, 5))
        # skip configurations with near-ties, where the max subgradient jumps
        sorted_rows = np.sort(m, axis=0)
        sorted_cols = np.sort(m, axis=1)
        if (sorted_rows[-1] - sorted_rows[-2]).min() < 1e-3:
            continue
        if (sorted_cols[:, -1] - sorted_cols[:, -2]).min() < 1e-3:
            continue
        b_f = np.zeros((5, 5))
        b_f[1:4, 2:4] = 1.0
        masks = BinaryRegionMasks(b_f, 1.0 - b_f)
        g = constraint_gradient(m, masks)
        fd = np.zeros_like(m)
        h = 1e-7
        for idx in np.ndindex(m.shape):
            hi = m.copy()
            hi[idx] += h
            lo = m.copy()
            lo[idx] -= h
            fd[idx] = (constraint_loss(hi, masks) - constraint_loss(lo, masks)) / (2 * h)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-30)
        worst = max(worst, rel)
        trials += 1
    assert worst < 1e-4, worst
