"""
Feature Extraction Network: blocks of conv3x3 + batchnorm + ReLU + maxpool, then a fully
connected layer with batchnorm and no activation. The flatten keeps the spatial layout of
the last block (no global pooling).
"""
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import ShapeError
from models import FenConfig, LayerRow
from tensor_utils import ops
from tensor_utils.parameters import ParameterSet
from tensor_utils.tensor import Tensor, get_dtype

FeatureVector = Tensor

Trace = List[Tuple[str, Tuple[int, ...]]]


def fen_parameter_shapes(cfg: FenConfig) -> Dict[str, Tuple[int, ...]]:
    """Trainable parameter shapes. Convs carry no bias: the following batchnorm's beta covers it."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    channels = cfg.input_channels
    for i, out_channels in enumerate(cfg.block_channels):
        shapes[f"fen.block{i}.conv.weight"] = (3, 3, channels, out_channels)
        shapes[f"fen.block{i}.bn.gamma"] = (out_channels,)
        shapes[f"fen.block{i}.bn.beta"] = (out_channels,)
        channels = out_channels
    shapes["fen.fc.weight"] = (cfg.flat_dim, cfg.feature_dim)
    shapes["fen.fc.bias"] = (cfg.feature_dim,)
    shapes["fen.fc_bn.gamma"] = (cfg.feature_dim,)
    shapes["fen.fc_bn.beta"] = (cfg.feature_dim,)
    return shapes


def fen_state_features(cfg: FenConfig) -> Dict[str, int]:
    states = {f"fen.block{i}.bn": c for i, c in enumerate(cfg.block_channels)}
    states["fen.fc_bn"] = cfg.feature_dim
    return states


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(get_dtype())


def init_parameter(name: str, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """He-style uniform for weights, ones for gamma, zeros for beta and bias."""
    if name.endswith(".gamma"):
        return np.ones(shape, dtype=get_dtype())
    if name.endswith(".beta") or name.endswith(".bias"):
        return np.zeros(shape, dtype=get_dtype())
    fan_in = int(np.prod(shape[:-1]))
    return he_uniform(rng, shape, fan_in)


def init_fen_params(cfg: FenConfig, rng: np.random.Generator, params: Optional[ParameterSet] = None) -> ParameterSet:
    params = params if params is not None else ParameterSet()
    for name, shape in fen_parameter_shapes(cfg).items():
        params.add(name, init_parameter(name, shape, rng))
    for name, features in fen_state_features(cfg).items():
        params.add_state(name, features)
    return params


def fen_forward(cfg: FenConfig, params: ParameterSet, fragment: Tensor, mode: str = ops.INFER,
                trace: Optional[Trace] = None) -> FeatureVector:
    """
    Map fragments [side, side, 3] (or a batch [N, side, side, 3]) in model range to feature
    vectors [feature_dim] (or [N, feature_dim]).
    """
    single = fragment.ndim == 3
    x = ops.reshape(fragment, (1,) + fragment.shape) if single else fragment
    expected = (cfg.input_side, cfg.input_side, cfg.input_channels)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError(f"fragment shape {fragment.shape} does not match FEN input {expected}")

    def record(layer: str, t: Tensor) -> None:
        if trace is not None:
            trace.append((layer, t.shape[1:]))

    record("input", x)
    for i in range(len(cfg.block_channels)):
        block = f"fen.block{i}"
        x = ops.conv3x3(x, params[f"{block}.conv.weight"])
        x = ops.batchnorm(x, params[f"{block}.bn.gamma"], params[f"{block}.bn.beta"],
                          params.state(f"{block}.bn"), mode)
        x = ops.relu(x)
        record(f"conv{i}", x)
        x = ops.maxpool2(x)
        record(f"pool{i}", x)

    x = ops.reshape(x, (x.shape[0], cfg.flat_dim))
    x = ops.dense(x, params["fen.fc.weight"], params["fen.fc.bias"])
    x = ops.batchnorm(x, params["fen.fc_bn.gamma"], params["fen.fc_bn.beta"], params.state("fen.fc_bn"), mode)
    record("fc", x)
    return ops.reshape(x, (cfg.feature_dim,)) if single else x


def fen_shared_apply(cfg: FenConfig, params: ParameterSet, f1: Tensor, f2: Tensor,
                     mode: str = ops.INFER) -> Tuple[FeatureVector, FeatureVector]:
    """
    Run both fragments through the same parameter set. In train mode each branch
    normalizes with its own batch statistics and updates the running state in turn.
    """
    return fen_forward(cfg, params, f1, mode), fen_forward(cfg, params, f2, mode)


def parameter_report(cfg: FenConfig) -> List[LayerRow]:
    """
    Architecture table: per layer the output shape and parameter count, where a batchnorm
    counts gamma, beta and both running statistics.
    """
    rows = [LayerRow(layer="Input", shape=(cfg.input_side, cfg.input_side, cfg.input_channels), parameters=0)]
    side = cfg.input_side
    channels = cfg.input_channels
    for out_channels in cfg.block_channels:
        rows.append(LayerRow(layer="Conv+BN+ReLU", shape=(side, side, out_channels),
                             parameters=9 * channels * out_channels + 4 * out_channels))
        side //= 2
        channels = out_channels
        rows.append(LayerRow(layer="Maxpooling", shape=(side, side, channels), parameters=0))
    rows.append(LayerRow(layer="Fully Connected+BN", shape=(cfg.feature_dim,),
                         parameters=cfg.flat_dim * cfg.feature_dim + cfg.feature_dim + 4 * cfg.feature_dim))
    return rows
