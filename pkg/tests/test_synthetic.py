import numpy as np
import pytest

from dataset_utils.dataset_dao import ImageFolderDAO
from dataset_utils.imaging import to_model_range
from models import ImageRGB, SyntheticSpec
from sampler import sample_pair
from synthetic import generate, generate_one, mean_color_baseline, ramp_image, write_corpus
from trainer import evaluate

TINY_FRAME = 36


def test_red_increases_along_the_ramp():
    along_x = ramp_image(TINY_FRAME, 0.0).pixels.astype(float)
    assert np.all(np.diff(along_x[..., 0].mean(axis=0)) > 0)
    assert np.all(np.diff(along_x[..., 1].mean(axis=1)) > 0)

    along_y = ramp_image(TINY_FRAME, np.pi / 2).pixels.astype(float)
    assert np.all(np.diff(along_y[..., 0].mean(axis=1)) > 0)


def test_ramp_stays_in_byte_range():
    img = ramp_image(136, np.pi / 4, blue=7)
    assert img.pixels.dtype == np.uint8
    assert np.all(img.pixels[..., 2] == 7)
    assert 0 < img.pixels[..., 0].min() and img.pixels[..., 0].max() < 255


def test_same_seed_same_corpus():
    spec = SyntheticSpec(kind="gradient", frame_side=TINY_FRAME, count=5, seed=8)
    for a, b in zip(generate(spec), generate(spec)):
        np.testing.assert_array_equal(a.pixels, b.pixels)
    other = generate(spec.model_copy(update={"seed": 9}))
    assert not np.array_equal(other[0].pixels, generate(spec)[0].pixels)


@pytest.mark.parametrize("kind", ["checker", "blobs"])
def test_other_families(kind):
    images = generate(SyntheticSpec(kind=kind, frame_side=40, count=3, seed=1))
    assert all(img.pixels.shape == (40, 40, 3) for img in images)
    assert len({img.pixels.tobytes() for img in images}) == 3


def test_mean_color_baseline_on_gradient_corpus(tiny_sampler):
    images = generate(SyntheticSpec(kind="gradient", frame_side=TINY_FRAME, count=200, seed=6))
    score = evaluate(mean_color_baseline, tiny_sampler, images, seed=0)
    assert score >= 0.95


def test_mean_color_baseline_single_pair(tiny_sampler, gradient_images, rng):
    pair = sample_pair(tiny_sampler, gradient_images[0], rng)
    label = mean_color_baseline(pair.central.pixels.numpy(), pair.neighbor.pixels.numpy())
    assert 0 <= int(label) < 8


def test_mean_color_baseline_in_byte_range():
    img = ramp_image(TINY_FRAME, 0.3)
    central = img.pixels[12:20, 12:20]
    right = img.pixels[12:20, 24:32]
    down_left = img.pixels[24:32, 0:8]
    assert mean_color_baseline(central, right) == 4
    assert mean_color_baseline(central, down_left) == 5
    assert mean_color_baseline(to_model_range(ImageRGB.from_array(central)).numpy(),
                               to_model_range(ImageRGB.from_array(right)).numpy()) == 4


def test_write_corpus(tmp_path):
    spec = SyntheticSpec(kind="gradient", frame_side=TINY_FRAME, count=14, seed=2)
    train, validation = write_corpus(spec, tmp_path / "corpus")
    assert (len(train.entries), len(validation.entries)) == (10, 4)
    assert not set(train.entries) & set(validation.entries)

    with ImageFolderDAO(str(tmp_path / "corpus")) as dao:
        assert dao.get_all_images()[0] == "gradient_00000.ppm"
        assert dao.read_manifest("train").entries == train.entries
        np.testing.assert_array_equal(dao.load_image("gradient_00003.ppm").pixels, generate_one(spec, 3).pixels)
