from tensor_utils.tensor import Tape, Tensor, backward, float64_precision, get_dtype
from tensor_utils.parameters import BatchNormState, ParameterSet

__all__ = [
    "BatchNormState",
    "ParameterSet",
    "Tape",
    "Tensor",
    "backward",
    "float64_precision",
    "get_dtype",
]
