import numpy as np
import pytest

from dataset_utils.ppm import decode_ppm, encode_ppm, read_ppm, write_ppm
from errors import FormatError, PPMDecodeError
from models import ImageRGB


def test_decode_two_by_one():
    img = decode_ppm(b"P6 2 1 255 " + bytes([1, 2, 3, 4, 5, 6]))
    assert (img.width, img.height) == (2, 1)
    assert img.pixels.tolist() == [[[1, 2, 3], [4, 5, 6]]]


def test_decode_skips_comments():
    img = decode_ppm(b"P6\n# made by hand\n1 1\n# maxval next\n255\n" + bytes([9, 8, 7]))
    assert img.pixels.tolist() == [[[9, 8, 7]]]


def test_truncated_payload_names_byte_counts():
    with pytest.raises(PPMDecodeError, match="expected 6 bytes, got 4") as info:
        decode_ppm(b"P6 2 1 255 " + bytes(4))
    assert info.value.offset == 11


def test_maxval_other_than_255_rejected():
    with pytest.raises(PPMDecodeError, match="maxval") as info:
        decode_ppm(b"P6 1 1 65535 " + bytes(6))
    assert info.value.offset == 7


@pytest.mark.parametrize("data", [b"P3 1 1 255 000", b"P61 1 255 ", b"P6 x 1 255 ", b"P6 1", b"P6 0 1 255 "])
def test_malformed_header(data):
    with pytest.raises(PPMDecodeError):
        decode_ppm(data)


def test_decode_errors_are_format_errors():
    assert issubclass(PPMDecodeError, FormatError)


def test_encode_decode_round_trip(rng, tmp_path):
    img = ImageRGB.from_array(rng.integers(0, 256, size=(5, 7, 3)))
    decoded = decode_ppm(encode_ppm(img))
    np.testing.assert_array_equal(decoded.pixels, img.pixels)

    path = tmp_path / "img.ppm"
    write_ppm(path, img)
    assert path.read_bytes()[:11] == b"P6\n7 5\n255\n"
    np.testing.assert_array_equal(read_ppm(path).pixels, img.pixels)
