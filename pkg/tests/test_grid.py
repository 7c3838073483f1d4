import numpy as np
import pytest
from PIL import Image

from boxlevelset import (
    AnnotationError,
    BoxAnnotation,
    crop_region,
    enlarge_box,
    load_image,
    normalize_image,
)


def test_normalize_constant_channel_is_zero():
    img = np.full((1, 4, 4), 7.5)
    assert np.array_equal(normalize_image(img), np.zeros((1, 4, 4)))


def test_normalize_endpoints():
    img = np.zeros((1, 2, 2))
    img[0, 0, 0] = 255.0
    out = normalize_image(img)
    assert out.max() == 1.0 and out.min() == 0.0


def test_normalize_affine_map():
    img = np.array([[[10.0, 20.0], [30.0, 40.0]]])
    expected = np.array([[[0.0, 1.0 / 3.0], [2.0 / 3.0, 1.0]]])
    assert np.allclose(normalize_image(img), expected, rtol=0, atol=1e-15)


def test_normalize_is_idempotent():
    rng = np.random.default_rng(3)
    img = rng.uniform(-40, 200, (3, 9, 7))
    once = normalize_image(img)
    twice = normalize_image(once)
    assert np.allclose(once, twice, rtol=0, atol=1e-12)


def test_normalize_per_channel_independent():
    img = np.stack([np.linspace(0, 1, 16).reshape(4, 4),
                    np.linspace(5, 9, 16).reshape(4, 4)])
    out = normalize_image(img)
    assert np.allclose(out[0], out[1], atol=1e-12)


def test_normalize_rejects_wrong_rank():
    with pytest.raises(ValueError):
        normalize_image(np.zeros((4, 4)))


def test_load_image_rgb_and_gray(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, (5, 6, 3), dtype=np.uint8)
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "c.png")
    arr = load_image(tmp_path / "c.png")
    assert arr.shape == (3, 5, 6)
    assert np.array_equal(arr, np.moveaxis(rgb.astype(float), -1, 0))

    gray = rng.integers(0, 256, (4, 7), dtype=np.uint8)
    Image.fromarray(gray, mode="L").save(tmp_path / "g.png")
    arr = load_image(tmp_path / "g.png")
    assert arr.shape == (1, 4, 7)
    assert np.array_equal(arr[0], gray.astype(float))


def test_box_rejects_degenerate():
    with pytest.raises(AnnotationError):
        BoxAnnotation(5, 2, 5, 9)
    with pytest.raises(AnnotationError):
        BoxAnnotation(1, 9, 4, 9)


def test_enlarge_identity_factor():
    box = BoxAnnotation(3, 4, 9, 11)
    region = enlarge_box(box, 1.0, 50, 50)
    assert (region.x_min, region.y_min, region.x_max, region.y_max) == (3, 4, 9, 11)


def test_enlarge_center_preserving():
    region = enlarge_box(BoxAnnotation(10, 10, 20, 20), 2.0, 100, 100)
    assert (region.x_min, region.y_min, region.x_max, region.y_max) == (5, 5, 25, 25)


def test_enlarge_clips_at_border():
    region = enlarge_box(BoxAnnotation(0, 0, 10, 10), 2.0, 100, 100)
    assert (region.x_min, region.y_min, region.x_max, region.y_max) == (0, 0, 15, 15)


def test_enlarge_rejects_outside_box_and_small_factor():
    with pytest.raises(AnnotationError):
        enlarge_box(BoxAnnotation(120, 5, 130, 15), 2.0, 100, 100)
    with pytest.raises(AnnotationError):
        enlarge_box(BoxAnnotation(1, 1, 5, 5), 0.5, 100, 100)


def test_enlarge_area_bound():
    rng = np.random.default_rng(11)
    for _ in range(50):
        x0, y0 = rng.integers(0, 60, 2)
        w, h = rng.integers(1, 30, 2)
        factor = rng.uniform(1.0, 3.0)
        box = BoxAnnotation(int(x0), int(y0), int(x0 + w), int(y0 + h))
        region = enlarge_box(box, factor, 200, 200)
        # scaled box plus at most a one pixel ring from outward rounding
        assert region.width <= factor * box.width + 2
        assert region.height <= factor * box.height + 2
        # always contains the box's intersection with the image
        assert region.x_min <= box.x_min and region.x_max >= box.x_max
        assert region.y_min <= box.y_min and region.y_max >= box.y_max


def test_crop_region_shapes_and_view():
    img = np.arange(3 * 100 * 100, dtype=float).reshape(3, 100, 100)
    full = enlarge_box(BoxAnnotation(0, 0, 100, 100), 1.0, 100, 100)
    assert crop_region(img, full).shape == (3, 100, 100)
    single = enlarge_box(BoxAnnotation(7, 8, 8, 9), 1.0, 100, 100)
    assert crop_region(img, single).shape == (3, 1, 1)
    win = enlarge_box(BoxAnnotation(10, 10, 20, 20), 2.0, 100, 100)
    view = crop_region(img, win)
    assert view.shape == (3, 20, 20)
    assert np.shares_memory(view, img)
    # 2d fields crop the same way
    assert crop_region(img[0], win).shape == (20, 20)
