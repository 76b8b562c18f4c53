import numpy as np
import pytest

from dataset_utils.dataset_dao import ImageFolderDAO, format_manifest, parse_manifest, split_entries
from errors import EmptyDatasetError, ManifestError
from models import DatasetManifest, ImageRGB


@pytest.fixture
def folder(tmp_path, rng):
    with ImageFolderDAO(str(tmp_path)) as dao:
        for i in range(14):
            dao.write_image(f"sub/img_{i:02d}.ppm", ImageRGB.from_array(rng.integers(0, 256, size=(10, 12, 3))))
    (tmp_path / "notes.txt").write_text("not an image")
    return tmp_path


def test_split_is_ten_to_four_disjoint_and_complete():
    entries = [f"{i}.ppm" for i in range(14)]
    train, validation = split_entries(entries, seed=7)
    assert (len(train), len(validation)) == (10, 4)
    assert not set(train) & set(validation)
    assert sorted(train + validation) == sorted(entries)
    assert split_entries(entries, seed=7) == (train, validation)


def test_split_keeps_both_sides_non_empty():
    train, validation = split_entries(["a.ppm", "b.ppm"], seed=0)
    assert len(train) == 1 and len(validation) == 1


def test_manifest_text_round_trip():
    manifest = DatasetManifest(root="data", split="train", entries=["b.ppm", "a.ppm"], seed=3)
    text = format_manifest(manifest)
    assert text == "root=data\nseed=3\nsplit=train\na.ppm\nb.ppm\n"
    assert parse_manifest(text) == manifest


@pytest.mark.parametrize("text", [
    "seed=3\nsplit=train\na.ppm\n",
    "root=data\nseed=3\nsplit=train\nb.ppm\na.ppm\n",
    "root=data\nseed=3\nsplit=test\na.ppm\n",
    "root=data\nseed=x\nsplit=train\n",
])
def test_bad_manifests(text):
    with pytest.raises(ManifestError):
        parse_manifest(text)


def test_manifest_rejects_duplicates():
    with pytest.raises(ValueError):
        DatasetManifest(root="r", split="train", entries=["a", "a"], seed=0)


def test_dao_scans_only_ppm(folder):
    with ImageFolderDAO(str(folder)) as dao:
        paths = dao.get_all_images()
    assert len(paths) == 14
    assert all(p.startswith("sub/") and p.endswith(".ppm") for p in paths)


def test_dao_writes_then_reuses_manifests(folder):
    with ImageFolderDAO(str(folder)) as dao:
        train, validation = dao.manifests(seed=11)
        assert (folder / "train.manifest").exists()
        again = ImageFolderDAO(str(folder)).manifests(seed=99)
    assert again == (train, validation)
    assert set(train.entries) | set(validation.entries) == set(dao.get_all_images())


def test_dao_loads_square_frames(folder):
    with ImageFolderDAO(str(folder)) as dao:
        train, _ = dao.manifests(seed=0)
        frames = dao.load_frames(train, side=8)
    assert len(frames) == 10
    assert all(f.pixels.shape == (8, 8, 3) for f in frames)


def test_empty_folder_is_an_empty_dataset(tmp_path):
    with ImageFolderDAO(str(tmp_path)) as dao:
        with pytest.raises(EmptyDatasetError, match="empty dataset"):
            dao.manifests(seed=0)
    assert not (tmp_path / "train.manifest").exists()
    assert not (tmp_path / "validation.manifest").exists()


def test_images_added_after_an_empty_run_are_picked_up(tmp_path, rng):
    with ImageFolderDAO(str(tmp_path)) as dao:
        with pytest.raises(EmptyDatasetError):
            dao.manifests(seed=0)
        for i in range(5):
            dao.write_image(f"img_{i}.ppm", ImageRGB.from_array(rng.integers(0, 256, size=(6, 6, 3))))
        train, validation = dao.manifests(seed=0)
    assert len(train.entries) + len(validation.entries) == 5
    assert train.entries and validation.entries


def test_stale_manifests_are_rebuilt(folder, rng):
    with ImageFolderDAO(str(folder)) as dao:
        dao.manifests(seed=11)
        dao.write_image("sub/img_new.ppm", ImageRGB.from_array(rng.integers(0, 256, size=(6, 6, 3))))
        train, validation = dao.manifests(seed=11)
        assert set(train.entries) | set(validation.entries) == set(dao.get_all_images())
        assert "sub/img_new.ppm" in train.entries + validation.entries
        assert dao.read_manifest("train") == train


def test_undecodable_manifest_is_a_manifest_error(folder):
    with ImageFolderDAO(str(folder)) as dao:
        dao.manifests(seed=0)
        (folder / "train.manifest").write_bytes(b"root=\xff\xfe\n")
        with pytest.raises(ManifestError):
            dao.manifests(seed=0)


def test_missing_folder(tmp_path):
    with pytest.raises(FileNotFoundError):
        ImageFolderDAO(str(tmp_path / "nope"))
