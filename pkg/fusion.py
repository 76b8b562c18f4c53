"""
Combination layer and classification head.

`concat` feeds [phi1 | phi2] to the first dense layer, so each hidden unit is a linear
function of each fragment's features. `kronecker` feeds the flattened outer product
phi1 (x) phi2, so each hidden unit is a bilinear form sum_{m,n} a_{i,m,n} phi1_m phi2_n.
"""
from typing import Dict, Optional, Tuple

import numpy as np

from errors import ShapeError
from fen import FeatureVector, init_parameter
from models import FusionConfig
from tensor_utils import ops
from tensor_utils.parameters import ParameterSet
from tensor_utils.tensor import Tensor, get_dtype

LocationDistribution = Tensor


def _pair(phi1: FeatureVector, phi2: FeatureVector) -> Tuple[Tensor, Tensor, bool]:
    if phi1.shape != phi2.shape:
        raise ShapeError(f"feature dims differ: {phi1.shape} vs {phi2.shape}")
    if phi1.ndim == 1:
        return ops.reshape(phi1, (1,) + phi1.shape), ops.reshape(phi2, (1,) + phi2.shape), True
    if phi1.ndim != 2:
        raise ShapeError(f"features must be [D] or [N, D], got {phi1.shape}")
    return phi1, phi2, False


def combine_concat(phi1: FeatureVector, phi2: FeatureVector) -> Tensor:
    a, b, single = _pair(phi1, phi2)
    out = ops.concat(a, b)
    return ops.reshape(out, out.shape[1:]) if single else out


def combine_kronecker(phi1: FeatureVector, phi2: FeatureVector) -> Tensor:
    """out[m * D + n] = phi1[m] * phi2[n]"""
    a, b, single = _pair(phi1, phi2)
    out = ops.outer(a, b)
    return ops.reshape(out, out.shape[1:]) if single else out


def combine(cfg: FusionConfig, phi1: FeatureVector, phi2: FeatureVector) -> Tensor:
    if cfg.kind == "concat":
        return combine_concat(phi1, phi2)
    return combine_kronecker(phi1, phi2)


def head_parameter_shapes(cfg: FusionConfig) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {}
    width = cfg.combined_dim
    for i, hidden in enumerate(cfg.hidden_dims):
        shapes[f"head.hidden{i}.weight"] = (width, hidden)
        shapes[f"head.hidden{i}.bias"] = (hidden,)
        shapes[f"head.hidden{i}.bn.gamma"] = (hidden,)
        shapes[f"head.hidden{i}.bn.beta"] = (hidden,)
        width = hidden
    shapes["head.out.weight"] = (width, cfg.num_classes)
    shapes["head.out.bias"] = (cfg.num_classes,)
    return shapes


def head_state_features(cfg: FusionConfig) -> Dict[str, int]:
    return {f"head.hidden{i}.bn": hidden for i, hidden in enumerate(cfg.hidden_dims)}


def init_head_params(cfg: FusionConfig, rng: np.random.Generator, params: Optional[ParameterSet] = None) -> ParameterSet:
    params = params if params is not None else ParameterSet()
    for name, shape in head_parameter_shapes(cfg).items():
        if name == "head.out.weight" and cfg.zero_init_output:
            params.add(name, np.zeros(shape, dtype=get_dtype()))
        else:
            params.add(name, init_parameter(name, shape, rng))
    for name, features in head_state_features(cfg).items():
        params.add_state(name, features)
    return params


def head_logits(cfg: FusionConfig, params: ParameterSet, combined: Tensor, mode: str = ops.INFER) -> Tensor:
    """Dense + BN + ReLU per hidden layer, then the dense layer with 8 outputs."""
    single = combined.ndim == 1
    x = ops.reshape(combined, (1,) + combined.shape) if single else combined
    if x.ndim != 2 or x.shape[1] != cfg.combined_dim:
        raise ShapeError(f"{cfg.kind} head expects combined dim {cfg.combined_dim}, got {combined.shape}")
    for i in range(len(cfg.hidden_dims)):
        layer = f"head.hidden{i}"
        x = ops.dense(x, params[f"{layer}.weight"], params[f"{layer}.bias"])
        x = ops.batchnorm(x, params[f"{layer}.bn.gamma"], params[f"{layer}.bn.beta"], params.state(f"{layer}.bn"), mode)
        x = ops.relu(x)
    x = ops.dense(x, params["head.out.weight"], params["head.out.bias"])
    return ops.reshape(x, (cfg.num_classes,)) if single else x


def classify(cfg: FusionConfig, params: ParameterSet, combined: Tensor, mode: str = ops.INFER) -> LocationDistribution:
    return ops.softmax(head_logits(cfg, params, combined, mode))
