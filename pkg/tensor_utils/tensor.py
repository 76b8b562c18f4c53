from abc import abstractmethod
from contextlib import contextmanager
from typing import Any, ClassVar, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractViolation, NonFiniteError, ShapeError

_dtype = np.float32


def get_dtype():
    return _dtype


@contextmanager
def float64_precision() -> Iterator[None]:
    """
    Create tensors in float64 while active. Only the finite-difference checker uses this;
    the network itself always runs in float32.
    """
    global _dtype
    previous = _dtype
    _dtype = np.float64
    try:
        yield
    finally:
        _dtype = previous


class Tensor:
    """
    Dense n-dimensional array of floats with optional participation in a gradient tape.

    The data buffer is read-only once created. Only `assign` (used by optimizers and the
    gradient checker) rebinds it, so every recorded operation keeps seeing the values it
    was computed from.
    """

    def __init__(
        self,
        data: Union[np.ndarray, float, int, Sequence[Any]],
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data = self._freeze(data)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.creator: Optional["Function"] = None

    @staticmethod
    def _freeze(data: Any) -> np.ndarray:
        arr = np.asarray(data, dtype=_dtype)
        if arr is data or (isinstance(data, np.ndarray) and np.may_share_memory(arr, data)):
            arr = arr.copy()
        if any(extent < 1 for extent in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor of shape {arr.shape} holds NaN or Inf")
        arr.flags.writeable = False
        return arr

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def assign(self, data: Union[np.ndarray, float]) -> None:
        """Replace the buffer with new values of the same shape."""
        arr = self._freeze(data)
        if arr.shape != self.shape:
            raise ShapeError(f"cannot assign shape {arr.shape} to tensor of shape {self.shape}")
        self.data = arr

    def zero_grad(self) -> None:
        self.grad = np.zeros(self.shape, dtype=self.data.dtype)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.shape:
            raise ShapeError(f"gradient shape {grad.shape} != tensor shape {self.shape}")
        grad = grad.astype(self.data.dtype, copy=False)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"


class Function:
    """
    Base class for differentiable operations.

    `forward` receives the raw arrays of the input tensors and returns the output array;
    `backward` receives dL/d[output] and returns dL/d[input] for each tensor input
    (None where no gradient flows).
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.output: Optional[Tensor] = None
        self.tape: Optional["Tape"] = None

    @abstractmethod
    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    @abstractmethod
    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    def signature(self) -> Optional[bytes]:
        """Piecewise-linear ops return the branch pattern taken by the last forward."""
        return None

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        func = cls(*inputs)
        out = Tensor(func.forward(*(t.data for t in inputs), **kwargs))
        out.requires_grad = any(t.requires_grad for t in inputs)
        tape = Tape.current()
        if tape is not None and out.requires_grad:
            func.output = out
            func.tape = tape
            out.creator = func
            tape.record(func)
        return out


class Tape:
    """
    Ordered record of the operations executed while the tape is active.

    Recording order is a topological order, since an operation can only consume tensors
    that already exist. `backward` walks the record in reverse, visiting each operation once.
    """

    _active: ClassVar[List["Tape"]] = []

    def __init__(self):
        self.records: List[Function] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        Tape._active.remove(self)

    @classmethod
    def current(cls) -> Optional["Tape"]:
        return cls._active[-1] if cls._active else None

    def record(self, func: Function) -> None:
        self.records.append(func)

    def signatures(self) -> Tuple[Optional[bytes], ...]:
        return tuple(func.signature() for func in self.records)

    def backward(self, loss: Tensor) -> None:
        """
        Accumulate d(loss)/d(leaf) into `.grad` of every leaf tensor that requires grad.
        """
        if loss.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.creator is None or loss.creator.tape is not self:
            raise ContractViolation("loss was not produced through this tape")

        pending = {id(loss): np.ones(loss.shape, dtype=loss.data.dtype)}
        for func in reversed(self.records):
            grad = pending.pop(id(func.output), None)
            if grad is None:
                continue
            input_grads = func.backward(grad)
            for tensor, input_grad in zip(func.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if input_grad.shape != tensor.shape:
                    raise ShapeError(
                        f"{type(func).__name__} produced gradient {input_grad.shape} for input {tensor.shape}"
                    )
                if tensor.creator is None:
                    tensor.accumulate_grad(input_grad)
                elif id(tensor) in pending:
                    pending[id(tensor)] = pending[id(tensor)] + input_grad
                else:
                    pending[id(tensor)] = input_grad


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss through the tape that produced it."""
    if loss.creator is None or loss.creator.tape is None:
        raise ContractViolation("loss was not produced through a tape")
    loss.creator.tape.backward(loss)
