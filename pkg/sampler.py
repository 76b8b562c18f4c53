"""
Randomized-grid fragment extraction.

The frame is divided into a 3x3 grid of `fragment_side` squares separated by `gap` pixels
and centred in the frame. Each fragment is displaced by an independent integer jitter in
[-jitter, +jitter] per axis (the central fragment included).

Relative-position classes number the 8 non-centre cells row-major:

    0 1 2
    3 . 4
    5 6 7
"""
from typing import List, Tuple

import numpy as np

from dataset_utils.imaging import to_model_range
from errors import ContractViolation
from models import Cell, Fragment, ImageRGB, PairSample, SamplerConfig

CENTER: Cell = (1, 1)
CELLS: List[Cell] = [(r, c) for r in range(3) for c in range(3)]
NEIGHBOR_CELLS: List[Cell] = [cell for cell in CELLS if cell != CENTER]

LABEL_NAMES = ["up-left", "up", "up-right", "left", "right", "down-left", "down", "down-right"]


def label_of(cell: Cell) -> int:
    if cell == CENTER or cell not in CELLS:
        raise ContractViolation(f"cell {cell} has no relative-position label")
    return NEIGHBOR_CELLS.index(tuple(cell))


def cell_of(label: int) -> Cell:
    if not 0 <= label < len(NEIGHBOR_CELLS):
        raise ContractViolation(f"label {label} out of range [0, 8)")
    return NEIGHBOR_CELLS[label]


def margin(cfg: SamplerConfig) -> int:
    return (cfg.frame_side - (3 * cfg.fragment_side + 2 * cfg.gap)) // 2


def base_origin(cfg: SamplerConfig, cell: Cell) -> Tuple[int, int]:
    row, col = cell
    if not (0 <= row <= 2 and 0 <= col <= 2):
        raise ContractViolation(f"cell {cell} outside the 3x3 grid")
    step = cfg.fragment_side + cfg.gap
    m = margin(cfg)
    return m + row * step, m + col * step


def _check_frame(cfg: SamplerConfig, img: ImageRGB) -> None:
    if (img.width, img.height) != (cfg.frame_side, cfg.frame_side):
        raise ContractViolation(
            f"frame must be {cfg.frame_side}x{cfg.frame_side}, got {img.width}x{img.height}"
        )


def crop_fragment(cfg: SamplerConfig, img: ImageRGB, cell: Cell, origin: Tuple[int, int]) -> Fragment:
    y, x = origin
    side = cfg.fragment_side
    if y < 0 or x < 0 or y + side > img.height or x + side > img.width:
        raise ContractViolation(f"fragment at {origin} leaves the {img.width}x{img.height} frame")
    crop = ImageRGB.from_array(img.pixels[y:y + side, x:x + side])
    return Fragment(cell=cell, origin=origin, pixels=to_model_range(crop))


def _jittered(cfg: SamplerConfig, cell: Cell, rng: np.random.Generator) -> Tuple[int, int]:
    y, x = base_origin(cfg, cell)
    dy, dx = rng.integers(-cfg.jitter, cfg.jitter + 1, size=2)
    return y + int(dy), x + int(dx)


def sample_pair(cfg: SamplerConfig, img: ImageRGB, rng: np.random.Generator) -> PairSample:
    """Centre fragment plus one uniformly chosen neighbour, labelled by its position."""
    _check_frame(cfg, img)
    label = int(rng.integers(0, len(NEIGHBOR_CELLS)))
    cell = cell_of(label)
    central = crop_fragment(cfg, img, CENTER, _jittered(cfg, CENTER, rng))
    neighbor = crop_fragment(cfg, img, cell, _jittered(cfg, cell, rng))
    return PairSample(central=central, neighbor=neighbor, label=label)


def sample_grid(cfg: SamplerConfig, img: ImageRGB, rng: np.random.Generator) -> List[Fragment]:
    """All nine fragments in row-major cell order, each with independent jitter."""
    _check_frame(cfg, img)
    return [crop_fragment(cfg, img, cell, _jittered(cfg, cell, rng)) for cell in CELLS]


def image_rng(seed: int, image_index: int) -> np.random.Generator:
    """Per-image generator for parallel sampling: seed xor image index."""
    return np.random.default_rng(seed ^ image_index)


def gap_mask(cfg: SamplerConfig, img: ImageRGB) -> ImageRGB:
    """The frame with everything outside the nine un-jittered fragment boxes set to black."""
    _check_frame(cfg, img)
    out = np.zeros_like(img.pixels)
    side = cfg.fragment_side
    for cell in CELLS:
        y, x = base_origin(cfg, cell)
        out[y:y + side, x:x + side] = img.pixels[y:y + side, x:x + side]
    return ImageRGB.from_array(out)
