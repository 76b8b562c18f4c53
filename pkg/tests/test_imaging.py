import numpy as np
import pytest

from dataset_utils.imaging import bilinear_resize, from_model_range, resize_square_crop, to_model_range
from errors import ContractViolation
from models import ImageRGB


def checkerboard(width, height):
    y, x = np.indices((height, width))
    values = np.where((x + y) % 2 == 0, 255, 0)
    return ImageRGB.from_array(np.repeat(values[..., None], 3, axis=2))


def test_portrait_scaled_then_cropped():
    img = ImageRGB.from_array(np.zeros((1200, 796, 3), dtype=np.uint8))
    out = resize_square_crop(img, 398)
    assert (out.width, out.height) == (398, 398)


def test_square_of_same_side_is_identity(rng):
    img = ImageRGB.from_array(rng.integers(0, 256, size=(9, 9, 3)))
    np.testing.assert_array_equal(resize_square_crop(img, 9).pixels, img.pixels)


def test_wide_checkerboard_is_center_cropped():
    img = checkerboard(4, 2)
    out = resize_square_crop(img, 2)
    np.testing.assert_array_equal(out.pixels, img.pixels[:, 1:3])


def test_halving_averages_two_by_two_blocks():
    # half-pixel centres land between source pixels, so each output averages 0 and 255
    out = bilinear_resize(checkerboard(4, 4), 2, 2)
    assert np.all(out.pixels == 128)


@pytest.mark.parametrize("shape", [(3, 5), (8, 2), (13, 13)])
def test_output_is_exactly_side(rng, shape):
    img = ImageRGB.from_array(rng.integers(0, 256, size=shape + (3,)))
    out = resize_square_crop(img, 4)
    assert out.pixels.shape == (4, 4, 3)


def test_side_must_be_positive(rng):
    with pytest.raises(ContractViolation):
        resize_square_crop(ImageRGB.from_array(rng.integers(0, 256, size=(4, 4, 3))), 0)


def test_model_range_values():
    img = ImageRGB.from_array(np.array([[[0, 255, 127], [191, 0, 0]]], dtype=np.uint8))
    values = to_model_range(img).numpy()
    assert values[0, 0, 0] == -1.0
    assert values[0, 0, 1] == 1.0
    assert values[0, 0, 2] == pytest.approx(-0.0039216, abs=1e-6)
    assert values[0, 1, 0] == pytest.approx(0.4980392, abs=1e-6)


def test_model_range_inverts_exactly():
    all_values = np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2)
    img = ImageRGB.from_array(all_values)
    np.testing.assert_array_equal(from_model_range(to_model_range(img).numpy()), all_values)
