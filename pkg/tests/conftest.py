import numpy as np
import pytest

from models import FenConfig, FusionConfig, ImageRGB, SamplerConfig, SyntheticSpec, TrainConfig
from synthetic import generate

# 3*8 + 2*4 + 2*1 = 34 <= 36
TINY_FRAME = 36
TINY_FRAGMENT = 8


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_sampler():
    return SamplerConfig(frame_side=TINY_FRAME, fragment_side=TINY_FRAGMENT, gap=4, jitter=1)


@pytest.fixture
def tiny_fen():
    return FenConfig(input_side=TINY_FRAGMENT, block_channels=[4, 8], feature_dim=16)


@pytest.fixture
def tiny_fusion():
    return FusionConfig(kind="kronecker", feature_dim=16, hidden_dims=[16])


@pytest.fixture
def tiny_train_config(tiny_sampler, tiny_fen, tiny_fusion):
    return TrainConfig(learning_rate=0.1, batch_size=8, epochs=1, seed=3,
                       sampler=tiny_sampler, fen=tiny_fen, fusion=tiny_fusion)


@pytest.fixture
def gradient_images():
    return generate(SyntheticSpec(kind="gradient", frame_side=TINY_FRAME, count=24, seed=5))


@pytest.fixture
def noise_image(rng):
    return ImageRGB.from_array(rng.integers(0, 256, size=(TINY_FRAME, TINY_FRAME, 3)))
