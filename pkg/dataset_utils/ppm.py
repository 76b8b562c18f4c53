"""
Binary PPM (P6, maxval 255) reading and writing.

The header is whitespace-separated `P6 width height maxval` with `#` comments running to
end of line, followed by exactly one whitespace byte and width*height*3 payload bytes.
"""
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from errors import PPMDecodeError
from models import ImageRGB

WHITESPACE = b" \t\n\r\x0b\x0c"


def _next_token(data: bytes, pos: int) -> Tuple[bytes, int, int]:
    """Return (token, token start, position after token), skipping whitespace and comments."""
    n = len(data)
    while pos < n:
        if data[pos] in WHITESPACE:
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PPMDecodeError("header ended early", start)
    return data[start:pos], start, pos


def _positive_int(token: bytes, offset: int, what: str) -> int:
    if not token.isdigit():
        raise PPMDecodeError(f"{what} {token!r} is not a decimal number", offset)
    value = int(token)
    if value < 1:
        raise PPMDecodeError(f"{what} must be positive, got {value}", offset)
    return value


def decode_ppm(data: bytes) -> ImageRGB:
    """
    Read a PNM header and payload, return the image with exactly the stored pixel values.
    """
    if data[:2] != b"P6" or (len(data) > 2 and data[2] not in WHITESPACE):
        raise PPMDecodeError(f"bad magic {data[:2]!r}, expected b'P6'", 0)
    pos = 2
    token, start, pos = _next_token(data, pos)
    width = _positive_int(token, start, "width")
    token, start, pos = _next_token(data, pos)
    height = _positive_int(token, start, "height")
    token, start, pos = _next_token(data, pos)
    if token != b"255":
        raise PPMDecodeError(f"maxval {token.decode(errors='replace')} not supported, only 255", start)
    if pos >= len(data) or data[pos] not in WHITESPACE:
        raise PPMDecodeError("missing whitespace byte after maxval", pos)
    pos += 1

    expected = width * height * 3
    actual = len(data) - pos
    if actual < expected:
        raise PPMDecodeError(f"truncated payload: expected {expected} bytes, got {actual}", pos)
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pos).reshape(height, width, 3)
    return ImageRGB(width=width, height=height, pixels=pixels.copy())


def encode_ppm(img: ImageRGB) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def read_ppm(path: Union[str, Path]) -> ImageRGB:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path: Union[str, Path], img: ImageRGB) -> None:
    Path(path).write_bytes(encode_ppm(img))
