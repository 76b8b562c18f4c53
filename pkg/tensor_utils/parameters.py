from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from errors import ContractViolation, ShapeError
from frag_constants import BN_EPSILON, BN_MOMENTUM
from tensor_utils.tensor import Tensor, get_dtype


class BatchNormState:
    """Running statistics of one batchnorm layer."""

    def __init__(self, features: int, momentum: float = BN_MOMENTUM, epsilon: float = BN_EPSILON):
        self.momentum = momentum
        self.epsilon = epsilon
        self.running_mean = np.zeros(features, dtype=get_dtype())
        self.running_var = np.ones(features, dtype=get_dtype())

    @property
    def features(self) -> int:
        return int(self.running_mean.shape[0])

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = self.momentum
        self.running_mean = (m * self.running_mean + (1.0 - m) * batch_mean).astype(self.running_mean.dtype)
        self.running_var = (m * self.running_var + (1.0 - m) * batch_var).astype(self.running_var.dtype)


class ParameterSet:
    """
    Named trainable tensors plus named batchnorm states, in insertion order.

    Names are unique across both maps; the checkpoint format stores a state `bn` as the two
    arrays `bn.running_mean` and `bn.running_var`.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._states: Dict[str, BatchNormState] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractViolation(f"duplicate parameter name {name!r}")
        tensor = Tensor(data, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def add_state(self, name: str, features: int) -> BatchNormState:
        if name in self._states:
            raise ContractViolation(f"duplicate batchnorm state {name!r}")
        state = BatchNormState(features)
        self._states[name] = state
        return state

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def state(self, name: str) -> BatchNormState:
        return self._states[name]

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def states(self) -> Iterator[Tuple[str, BatchNormState]]:
        return iter(self._states.items())

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    def num_trainable(self) -> int:
        return sum(t.size for t in self._params.values())

    def num_stored(self) -> int:
        """Trainable values plus running statistics."""
        return self.num_trainable() + sum(2 * s.features for s in self._states.values())

    def named_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {name: t.data for name, t in self._params.items()}
        for name, state in self._states.items():
            arrays[f"{name}.running_mean"] = state.running_mean
            arrays[f"{name}.running_var"] = state.running_var
        return arrays

    def load_arrays(self, arrays: Mapping[str, np.ndarray], prefix: Optional[str] = None) -> int:
        """
        Copy matching arrays in, optionally only names under `prefix`. Returns how many
        arrays were loaded.
        """
        loaded = 0
        for name, target in self.named_arrays().items():
            if prefix is not None and not name.startswith(prefix):
                continue
            if name not in arrays:
                raise ContractViolation(f"missing array {name!r}")
            source = np.asarray(arrays[name])
            if source.shape != target.shape:
                raise ShapeError(f"{name}: expected shape {target.shape}, got {source.shape}")
            loaded += 1
            if name in self._params:
                self._params[name].assign(source)
            else:
                state_name, _, field = name.rpartition(".")
                setattr(self._states[state_name], field, source.astype(target.dtype).copy())
        return loaded
