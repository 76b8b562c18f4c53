"""
Analytic image corpora for desk-scale experiments.

- gradient: red ramps along a random direction u, green along its perpendicular, constant
  blue. The mean colour difference of two fragments determines their displacement.
- checker: checkerboards with random period, phase and two random colours.
- blobs: Gaussian colour blobs composited over a random background.
"""
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from dataset_utils.dataset_dao import ImageFolderDAO
from frag_constants import IMAGE_SUFFIX
from log_utils import get_logger
from models import DatasetManifest, ImageRGB, SyntheticSpec
from sampler import NEIGHBOR_CELLS, image_rng

logger = get_logger(__name__)

RAMP_AMPLITUDE = 127.0


def _centered_grid(side: int) -> Tuple[np.ndarray, np.ndarray]:
    coords = np.arange(side, dtype=np.float64) - (side - 1) / 2.0
    return np.meshgrid(coords, coords, indexing="ij")


def ramp_image(side: int, theta: float, blue: int = 128) -> ImageRGB:
    """
    Red increases along (cos theta, sin theta) in (x, y) pixel coordinates and green along
    (-sin theta, cos theta); both span [0.5, 254.5] over the frame before rounding.
    """
    y, x = _centered_grid(side)
    radius = max((side - 1) / np.sqrt(2.0), 1.0)
    u = (x * np.cos(theta) + y * np.sin(theta)) / radius
    v = (-x * np.sin(theta) + y * np.cos(theta)) / radius
    pixels = np.empty((side, side, 3), dtype=np.float64)
    pixels[..., 0] = 127.5 + RAMP_AMPLITUDE * u
    pixels[..., 1] = 127.5 + RAMP_AMPLITUDE * v
    pixels[..., 2] = blue
    return ImageRGB.from_array(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))


def checker_image(side: int, rng: np.random.Generator) -> ImageRGB:
    period = int(rng.integers(4, max(side // 4, 5)))
    phase_y, phase_x = rng.integers(0, 2 * period, size=2)
    colors = rng.integers(0, 256, size=(2, 3))
    y, x = np.indices((side, side))
    parity = ((y + phase_y) // period + (x + phase_x) // period) % 2
    return ImageRGB.from_array(colors[parity].astype(np.uint8))


def blobs_image(side: int, rng: np.random.Generator) -> ImageRGB:
    pixels = np.broadcast_to(rng.uniform(0, 255, size=3), (side, side, 3)).copy()
    y, x = np.indices((side, side), dtype=np.float64)
    for _ in range(int(rng.integers(3, 8))):
        cy, cx = rng.uniform(0, side, size=2)
        sigma = rng.uniform(side / 16.0, side / 4.0)
        alpha = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2.0 * sigma ** 2))[..., None]
        pixels = (1.0 - alpha) * pixels + alpha * rng.uniform(0, 255, size=3)
    return ImageRGB.from_array(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))


def generate_one(spec: SyntheticSpec, index: int) -> ImageRGB:
    rng = image_rng(spec.seed, index)
    if spec.kind == "gradient":
        return ramp_image(spec.frame_side, float(rng.uniform(0, 2 * np.pi)), int(rng.integers(0, 256)))
    if spec.kind == "checker":
        return checker_image(spec.frame_side, rng)
    return blobs_image(spec.frame_side, rng)


def generate(spec: SyntheticSpec) -> List[ImageRGB]:
    return [generate_one(spec, i) for i in range(spec.count)]


_OFFSETS = np.array([(c - 1, r - 1) for r, c in NEIGHBOR_CELLS], dtype=np.float64)
_OFFSETS /= np.linalg.norm(_OFFSETS, axis=1, keepdims=True)


def mean_color_baseline(central: np.ndarray, neighbor: np.ndarray) -> np.ndarray:
    """
    Closed-form relative-position classifier for gradient images. The red and green
    gradients measured inside the central fragment give a 2x2 system mapping a pixel
    displacement (dx, dy) to a change of mean colour; solving it for the neighbour's mean
    colour change gives the displacement, and the nearest of the 8 directions is the class.
    Inputs are batches [N, side, side, 3] (or single fragments) in any affine colour range.
    """
    central = np.asarray(central, dtype=np.float64)
    neighbor = np.asarray(neighbor, dtype=np.float64)
    single = central.ndim == 3
    if single:
        central, neighbor = central[None], neighbor[None]

    rg = central[..., :2]
    grad_x = np.diff(rg, axis=2).mean(axis=(1, 2))
    grad_y = np.diff(rg, axis=1).mean(axis=(1, 2))
    # rows: red, green; columns: d/dx, d/dy
    jacobian = np.stack([grad_x, grad_y], axis=-1)
    delta = (neighbor[..., :2] - rg).mean(axis=(1, 2))

    displacement = np.zeros_like(delta)
    solvable = np.abs(np.linalg.det(jacobian)) > 1e-12
    if np.any(solvable):
        displacement[solvable] = np.linalg.solve(jacobian[solvable], delta[solvable][..., None])[..., 0]
    labels = np.argmax(displacement @ _OFFSETS.T, axis=1)
    return labels[0] if single else labels


def write_corpus(spec: SyntheticSpec, out_dir: Union[str, Path]) -> Tuple[DatasetManifest, DatasetManifest]:
    """Write the corpus as PPM files plus train/validation manifests split under `spec.seed`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with ImageFolderDAO(str(out_dir)) as dao:
        for index in range(spec.count):
            dao.write_image(f"{spec.kind}_{index:05d}{IMAGE_SUFFIX}", generate_one(spec, index))
        train, validation = dao.build_manifests(spec.seed)
        dao.write_manifest(train)
        dao.write_manifest(validation)
    logger.info(f"Wrote {spec.count} {spec.kind} images to {out_dir}: "
                f"{len(train.entries)} train, {len(validation.entries)} validation")
    return train, validation
