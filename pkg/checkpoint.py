"""
Checkpoint file layout (all integers little-endian):

    b"FRAG" | u32 version | u32 n | n bytes UTF-8 JSON config
    then per tensor: u32 n | n bytes UTF-8 name | u32 rank | rank x u64 extents | float32 payload

The JSON config holds the FEN, fusion and sampler configs, the epoch counter and the
numpy bit-generator state, with sorted keys so equal checkpoints are equal bytes.
"""
import json
import math
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from fen import fen_parameter_shapes, fen_state_features
from frag_constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from fusion import head_parameter_shapes, head_state_features
from log_utils import get_logger
from models import Checkpoint, FenConfig, FusionConfig, SamplerConfig
from network import RelativePositionNet

logger = get_logger(__name__)


def expected_shapes(fen: FenConfig, fusion: FusionConfig) -> Dict[str, Tuple[int, ...]]:
    shapes = dict(fen_parameter_shapes(fen))
    shapes.update(head_parameter_shapes(fusion))
    for name, features in {**fen_state_features(fen), **head_state_features(fusion)}.items():
        shapes[f"{name}.running_mean"] = (features,)
        shapes[f"{name}.running_var"] = (features,)
    return shapes


def validate_shapes(ckpt: Checkpoint) -> None:
    expected = expected_shapes(ckpt.fen, ckpt.fusion)
    missing = sorted(set(expected) - set(ckpt.tensors))
    extra = sorted(set(ckpt.tensors) - set(expected))
    if missing or extra:
        raise CheckpointShapeError(f"tensor names do not match config: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, shape in expected.items():
        if ckpt.tensors[name].shape != shape:
            raise CheckpointShapeError(f"{name}: config implies {shape}, file holds {ckpt.tensors[name].shape}")


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    config = {
        "fen": ckpt.fen.model_dump(mode="json"),
        "fusion": ckpt.fusion.model_dump(mode="json"),
        "sampler": ckpt.sampler.model_dump(mode="json"),
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
    }
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, _u32(ckpt.version), _u32(len(blob)), blob]
    for name, array in ckpt.tensors.items():
        encoded = name.encode("utf-8")
        parts += [_u32(len(encoded)), encoded, _u32(array.ndim)]
        parts += [struct.pack("<Q", extent) for extent in array.shape]
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"truncated while reading {what}: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    @property
    def done(self) -> bool:
        return self.pos == len(self.data)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    magic = reader.take(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    blob = reader.take(reader.u32("config length"), "config")
    try:
        config = json.loads(blob.decode("utf-8"))
        fen = FenConfig(**config["fen"])
        fusion = FusionConfig(**config["fusion"])
        sampler = SamplerConfig(**config["sampler"])
    except (ValueError, KeyError, TypeError) as error:
        raise CheckpointError(f"unreadable config blob: {error}") from error

    tensors: Dict[str, np.ndarray] = {}
    while not reader.done:
        raw_name = reader.take(reader.u32("name length"), "name")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as error:
            raise CheckpointError(f"tensor name at offset {reader.pos - len(raw_name)} is not UTF-8: {error}") from error
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        rank = reader.u32(f"{name} rank")
        if 8 * rank > reader.remaining:
            raise CheckpointTruncatedError(f"{name}: rank {rank} needs {8 * rank} bytes of extents, "
                                           f"file has {reader.remaining} left")
        shape = tuple(reader.u64(f"{name} extent") for _ in range(rank))
        count = math.prod(shape)
        if 4 * count > reader.remaining:
            raise CheckpointTruncatedError(f"{name}: shape {shape} needs {4 * count} payload bytes, "
                                           f"file has {reader.remaining} left")
        payload = reader.take(4 * count, f"{name} payload")
        try:
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        except ValueError as error:
            raise CheckpointShapeError(f"{name}: cannot hold shape {shape}: {error}") from error

    try:
        ckpt = Checkpoint(version=version, fen=fen, fusion=fusion, sampler=sampler, tensors=tensors,
                          epoch=int(config.get("epoch", 0)), rng_state=config.get("rng_state"))
    except (ValueError, TypeError) as error:
        raise CheckpointError(f"unreadable checkpoint header: {error}") from error
    validate_shapes(ckpt)
    return ckpt


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    validate_shapes(ckpt)
    Path(path).write_bytes(checkpoint_to_bytes(ckpt))
    logger.info(f"Saved checkpoint {path} (epoch {ckpt.epoch}, {len(ckpt.tensors)} tensors)")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        ckpt = checkpoint_from_bytes(Path(path).read_bytes())
    except CheckpointError as error:
        logger.error(f"Loading checkpoint {path} failed: {error}")
        raise error
    logger.info(f"Loaded checkpoint {path} (epoch {ckpt.epoch})")
    return ckpt


def checkpoint_from_net(net: RelativePositionNet, sampler: SamplerConfig, epoch: int = 0,
                        rng: Optional[np.random.Generator] = None) -> Checkpoint:
    return Checkpoint(
        version=CHECKPOINT_VERSION,
        fen=net.fen_cfg,
        fusion=net.fusion_cfg,
        sampler=sampler,
        tensors={name: np.array(a, dtype=np.float32) for name, a in net.params.named_arrays().items()},
        epoch=epoch,
        rng_state=rng.bit_generator.state if rng is not None else None,
    )


def net_from_checkpoint(ckpt: Checkpoint) -> RelativePositionNet:
    net = RelativePositionNet(ckpt.fen, ckpt.fusion)
    net.params.load_arrays(ckpt.tensors)
    return net


def rng_from_checkpoint(ckpt: Checkpoint, seed: int) -> np.random.Generator:
    rng = np.random.default_rng(seed)
    if ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
    return rng


def transfer_parameters(ckpt: Checkpoint, fusion: FusionConfig, seed: int) -> Tuple[RelativePositionNet, bool]:
    """
    Start a fine-tuning run from a checkpoint. FEN weights and running statistics always
    carry over; the head carries over only when the fusion config is unchanged, otherwise
    it is freshly initialized. Returns the network and whether the head was reused.
    """
    net = RelativePositionNet(ckpt.fen, fusion, params=None, seed=seed)
    net.params.load_arrays(ckpt.tensors, prefix="fen.")
    reuse_head = fusion == ckpt.fusion
    if reuse_head:
        net.params.load_arrays(ckpt.tensors, prefix="head.")
    else:
        logger.warning(f"Fusion config changed ({ckpt.fusion.kind} -> {fusion.kind}); "
                       f"head reinitialized, only FEN weights transferred")
    return net, reuse_head
