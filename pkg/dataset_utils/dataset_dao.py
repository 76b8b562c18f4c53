from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from dataset_utils.imaging import resize_square_crop
from dataset_utils.ppm import read_ppm, write_ppm
from errors import EmptyDatasetError, ManifestError
from frag_constants import IMAGE_SUFFIX, SPLIT_TRAIN, SPLIT_VALIDATION, TRAIN_MANIFEST, VALIDATION_MANIFEST
from log_utils import get_logger
from models import DatasetManifest, ImageRGB

logger = get_logger(__name__)

MANIFEST_FILES = {"train": TRAIN_MANIFEST, "validation": VALIDATION_MANIFEST}
HEADER_KEYS = ("root", "seed", "split")


def split_entries(entries: List[str], seed: int) -> Tuple[List[str], List[str]]:
    """
    Deterministic 10:4 train/validation split: shuffle the sorted paths under `seed`.
    Both splits keep at least one image once there are two or more.
    """
    ordered = sorted(set(entries))
    n = len(ordered)
    if n == 0:
        return [], []
    n_train = int(round(n * SPLIT_TRAIN / (SPLIT_TRAIN + SPLIT_VALIDATION)))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = sorted(ordered[i] for i in order[:n_train])
    validation = sorted(ordered[i] for i in order[n_train:])
    return train, validation


def format_manifest(manifest: DatasetManifest) -> str:
    lines = [f"root={manifest.root}", f"seed={manifest.seed}", f"split={manifest.split}"]
    lines.extend(manifest.entries)
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> DatasetManifest:
    header: Dict[str, str] = {}
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    index = 0
    while index < len(lines) and len(header) < len(HEADER_KEYS):
        key, sep, value = lines[index].partition("=")
        if not sep or key not in HEADER_KEYS or key in header:
            raise ManifestError(f"line {index + 1}: expected a {'/'.join(HEADER_KEYS)} header, got {lines[index]!r}")
        header[key] = value
        index += 1
    if len(header) < len(HEADER_KEYS):
        raise ManifestError(f"manifest header incomplete, have {sorted(header)}")
    entries = lines[index:]
    if entries != sorted(entries):
        raise ManifestError("manifest entries are not sorted")
    try:
        return DatasetManifest(root=header["root"], seed=int(header["seed"]), split=header["split"], entries=entries)
    except ValueError as error:
        raise ManifestError(str(error)) from error


class ImageFolderDAO:
    """
    Data Access Object for a local folder of PPM images and its train/validation manifests
    """

    def __init__(self, root: str):
        self.root = Path(root)
        self._frames: Dict[Tuple[str, int], ImageRGB] = {}
        self.connect()

    def __enter__(self):
        """Context manager entry"""
        self.connect()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Context manager exit"""
        self.disconnect()

    def connect(self) -> bool:
        """Check the folder exists (creating nothing)"""
        if not self.root.is_dir():
            logger.error(f"Image folder {self.root} does not exist")
            raise FileNotFoundError(f"image folder {self.root} does not exist")
        logger.info(f"Opened image folder {self.root} at {datetime.now().isoformat()}")
        return True

    def disconnect(self):
        """Drop cached frames"""
        self._frames.clear()

    def get_all_images(self) -> List[str]:
        """
        Get all image paths under the root
        Returns:
            List[str]: sorted POSIX paths relative to the root
        """
        paths = sorted(p.relative_to(self.root).as_posix() for p in self.root.rglob(f"*{IMAGE_SUFFIX}") if p.is_file())
        logger.info(f"Found {len(paths)} images in {self.root}")
        return paths

    def load_image(self, relative_path: str) -> ImageRGB:
        try:
            return read_ppm(self.root / relative_path)
        except Exception as error:
            logger.error(f"Loading {relative_path} failed: {error}")
            raise error

    def load_frame(self, relative_path: str, side: int) -> ImageRGB:
        """Load an image resized and square-cropped to side x side (cached)."""
        key = (relative_path, side)
        if key not in self._frames:
            self._frames[key] = resize_square_crop(self.load_image(relative_path), side)
        return self._frames[key]

    def load_frames(self, manifest: DatasetManifest, side: int) -> List[ImageRGB]:
        if not manifest.entries:
            raise EmptyDatasetError(f"empty dataset: {manifest.split} split of {self.root} has no images")
        return [self.load_frame(entry, side) for entry in manifest.entries]

    def write_image(self, relative_path: str, img: ImageRGB) -> None:
        path = self.root / relative_path
        path.parent.mkdir(parents=True, exist_ok=True)
        write_ppm(path, img)

    def build_manifests(self, seed: int, entries: Optional[List[str]] = None) -> Tuple[DatasetManifest, DatasetManifest]:
        """Split the scanned folder (or `entries`) 10:4 under `seed`."""
        train, validation = split_entries(self.get_all_images() if entries is None else entries, seed)
        root = self.root.as_posix()
        return (DatasetManifest(root=root, split="train", entries=train, seed=seed),
                DatasetManifest(root=root, split="validation", entries=validation, seed=seed))

    def write_manifest(self, manifest: DatasetManifest) -> Path:
        path = self.root / MANIFEST_FILES[manifest.split]
        path.write_text(format_manifest(manifest), encoding="utf-8", newline="\n")
        logger.info(f"Wrote {manifest.split} manifest with {len(manifest.entries)} entries to {path}")
        return path

    def read_manifest(self, split: str) -> Optional[DatasetManifest]:
        path = self.root / MANIFEST_FILES[split]
        if not path.exists():
            return None
        try:
            text = path.read_text(encoding="utf-8")
        except UnicodeDecodeError as error:
            raise ManifestError(f"{path} is not UTF-8: {error}") from error
        manifest = parse_manifest(text)
        if manifest.split != split:
            raise ManifestError(f"{path} declares split {manifest.split!r}")
        return manifest

    def manifests(self, seed: int) -> Tuple[DatasetManifest, DatasetManifest]:
        """
        Stored manifests when they cover exactly the scanned images, otherwise a fresh split
        written over them. An empty folder writes nothing.
        """
        scanned = self.get_all_images()
        if not scanned:
            raise EmptyDatasetError(f"empty dataset: {self.root} has no {IMAGE_SUFFIX} images")
        train = self.read_manifest("train")
        validation = self.read_manifest("validation")
        if train is not None and validation is not None:
            overlap = set(train.entries) & set(validation.entries)
            if overlap:
                raise ManifestError(f"splits overlap on {sorted(overlap)[:3]}")
            if set(train.entries) | set(validation.entries) == set(scanned):
                return train, validation
            logger.warning(f"Manifests in {self.root} do not match the {len(scanned)} scanned images, rebuilding")
        train, validation = self.build_manifests(seed, scanned)
        self.write_manifest(train)
        self.write_manifest(validation)
        return train, validation
