import numpy as np

from errors import ContractViolation
from models import ImageRGB
from tensor_utils.tensor import Tensor


def _axis_samples(src: int, dst: int):
    """Half-pixel-centre bilinear sample positions along one axis."""
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def bilinear_resize(img: ImageRGB, width: int, height: int) -> ImageRGB:
    if width < 1 or height < 1:
        raise ContractViolation(f"cannot resize to {width}x{height}")
    if (width, height) == (img.width, img.height):
        return img
    src = img.pixels.astype(np.float64)
    y0, y1, wy = _axis_samples(img.height, height)
    x0, x1, wx = _axis_samples(img.width, width)
    wx = wx[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    wy = wy[:, None, None]
    out = top * (1 - wy) + bottom * wy
    return ImageRGB.from_array(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def center_crop(img: ImageRGB, side: int) -> ImageRGB:
    top = (img.height - side) // 2
    left = (img.width - side) // 2
    return ImageRGB.from_array(img.pixels[top:top + side, left:left + side])


def resize_square_crop(img: ImageRGB, side: int) -> ImageRGB:
    """
    Scale so the shorter side equals `side` (bilinear), then center-crop to side x side.
    """
    if side < 1:
        raise ContractViolation(f"side must be >= 1, got {side}")
    if img.width < 1 or img.height < 1 or img.pixels.size == 0:
        raise ContractViolation("cannot resize an empty image")
    scale = side / min(img.width, img.height)
    if img.width <= img.height:
        width, height = side, max(side, int(round(img.height * scale)))
    else:
        width, height = max(side, int(round(img.width * scale))), side
    return center_crop(bilinear_resize(img, width, height), side)


def to_model_range(img: ImageRGB) -> Tensor:
    """v -> v / 127.5 - 1, as an [H, W, 3] tensor in [-1, 1]."""
    return Tensor(img.pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0))


def from_model_range(values: np.ndarray) -> np.ndarray:
    """Inverse of `to_model_range`, back to uint8."""
    return np.clip(np.rint((np.asarray(values, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)
