import struct

import numpy as np
import pytest

from checkpoint import (
    checkpoint_from_bytes,
    checkpoint_from_net,
    checkpoint_to_bytes,
    load_checkpoint,
    net_from_checkpoint,
    rng_from_checkpoint,
    save_checkpoint,
    transfer_parameters,
)
from errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    FormatError,
)
from models import FusionConfig
from network import RelativePositionNet
from tensor_utils.tensor import Tensor
from trainer import fit


@pytest.fixture
def tiny_net(tiny_fen, tiny_fusion):
    return RelativePositionNet(tiny_fen, tiny_fusion, seed=7)


def test_round_trip_is_bit_exact(tmp_path, tiny_net, tiny_sampler):
    rng = np.random.default_rng(5)
    ckpt = checkpoint_from_net(tiny_net, tiny_sampler, epoch=12, rng=rng)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)

    assert loaded.fen == ckpt.fen and loaded.fusion == ckpt.fusion and loaded.sampler == ckpt.sampler
    assert loaded.epoch == 12
    assert sorted(loaded.tensors) == sorted(ckpt.tensors)
    for name, array in ckpt.tensors.items():
        assert loaded.tensors[name].tobytes() == array.tobytes(), name
    assert checkpoint_to_bytes(loaded) == path.read_bytes()
    assert rng_from_checkpoint(loaded, seed=0).integers(1 << 30) == rng.integers(1 << 30)


def test_restored_net_predicts_identically(rng, tiny_net, tiny_sampler):
    restored = net_from_checkpoint(checkpoint_from_bytes(checkpoint_to_bytes(checkpoint_from_net(tiny_net, tiny_sampler))))
    central = Tensor(rng.uniform(-1, 1, size=(4, 8, 8, 3)))
    neighbor = Tensor(rng.uniform(-1, 1, size=(4, 8, 8, 3)))
    np.testing.assert_array_equal(restored.predict_proba(central, neighbor), tiny_net.predict_proba(central, neighbor))


def test_file_layout_header(tiny_net, tiny_sampler):
    data = checkpoint_to_bytes(checkpoint_from_net(tiny_net, tiny_sampler))
    assert data[:4] == b"FRAG"
    assert struct.unpack("<I", data[4:8])[0] == 1


def test_bad_magic(tiny_net, tiny_sampler):
    data = checkpoint_to_bytes(checkpoint_from_net(tiny_net, tiny_sampler))
    with pytest.raises(CheckpointMagicError):
        checkpoint_from_bytes(b"GARF" + data[4:])


def test_unsupported_version(tiny_net, tiny_sampler):
    data = checkpoint_to_bytes(checkpoint_from_net(tiny_net, tiny_sampler))
    with pytest.raises(CheckpointVersionError):
        checkpoint_from_bytes(data[:4] + struct.pack("<I", 2) + data[8:])


def test_truncated_file(tiny_net, tiny_sampler):
    data = checkpoint_to_bytes(checkpoint_from_net(tiny_net, tiny_sampler))
    with pytest.raises(CheckpointTruncatedError, match="truncated"):
        checkpoint_from_bytes(data[:-3])


def test_shape_mismatch_names_tensor(tiny_net, tiny_sampler):
    ckpt = checkpoint_from_net(tiny_net, tiny_sampler)
    ckpt.tensors["fen.fc.bias"] = np.zeros(5, dtype=np.float32)
    with pytest.raises(CheckpointShapeError, match="fen.fc.bias"):
        checkpoint_from_bytes(checkpoint_to_bytes(ckpt))


def test_checkpoint_errors_are_format_errors(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(FormatError) as info:
        load_checkpoint(path)
    assert info.value.exit_code == 2


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_checkpoint("/nonexistent/net.ckpt")


def test_transfer_keeps_head_for_same_fusion(tiny_net, tiny_sampler, tiny_fusion):
    ckpt = checkpoint_from_net(tiny_net, tiny_sampler)
    net, reuse_head = transfer_parameters(ckpt, tiny_fusion, seed=99)
    assert reuse_head
    for name, array in net.params.named_arrays().items():
        np.testing.assert_array_equal(array, ckpt.tensors[name], err_msg=name)


def test_transfer_reinitializes_head_for_new_fusion(tiny_net, tiny_sampler):
    ckpt = checkpoint_from_net(tiny_net, tiny_sampler)
    concat = FusionConfig(kind="concat", feature_dim=16, hidden_dims=[16])
    net, reuse_head = transfer_parameters(ckpt, concat, seed=99)
    assert not reuse_head
    arrays = net.params.named_arrays()
    for name in arrays:
        if name.startswith("fen."):
            np.testing.assert_array_equal(arrays[name], ckpt.tensors[name], err_msg=name)
    assert arrays["head.hidden0.weight"].shape == (32, 16)


def test_identical_runs_write_identical_files(tiny_train_config, gradient_images):
    blobs = []
    for _ in range(2):
        net = RelativePositionNet(tiny_train_config.fen, tiny_train_config.fusion, seed=tiny_train_config.seed)
        rng = np.random.default_rng(tiny_train_config.seed)
        history = fit(tiny_train_config, net, gradient_images[:16], gradient_images[16:], rng=rng)
        ckpt = checkpoint_from_net(net, tiny_train_config.sampler, epoch=history[-1].epoch, rng=rng)
        blobs.append(checkpoint_to_bytes(ckpt))
    assert blobs[0] == blobs[1]


def _first_tensor_offset(data: bytes) -> int:
    return 12 + struct.unpack("<I", data[8:12])[0]


def test_non_utf8_tensor_name_is_a_format_error(tiny_net, tiny_sampler):
    data = bytearray(checkpoint_to_bytes(checkpoint_from_net(tiny_net, tiny_sampler)))
    data[_first_tensor_offset(data) + 4] = 0xFF
    with pytest.raises(CheckpointError, match="not UTF-8"):
        checkpoint_from_bytes(bytes(data))


def test_absurd_extents_are_truncation(tiny_net, tiny_sampler):
    data = bytearray(checkpoint_to_bytes(checkpoint_from_net(tiny_net, tiny_sampler)))
    start = _first_tensor_offset(data)
    name_length = struct.unpack("<I", data[start:start + 4])[0]
    extents = start + 4 + name_length + 4
    data[extents:extents + 8] = struct.pack("<Q", 2 ** 63)
    with pytest.raises(CheckpointTruncatedError):
        checkpoint_from_bytes(bytes(data))


def test_absurd_rank_is_truncation(tiny_net, tiny_sampler):
    data = bytearray(checkpoint_to_bytes(checkpoint_from_net(tiny_net, tiny_sampler)))
    start = _first_tensor_offset(data)
    name_length = struct.unpack("<I", data[start:start + 4])[0]
    rank = start + 4 + name_length
    data[rank:rank + 4] = struct.pack("<I", 2 ** 31)
    with pytest.raises(CheckpointTruncatedError):
        checkpoint_from_bytes(bytes(data))
