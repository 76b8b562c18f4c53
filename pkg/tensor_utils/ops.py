"""
Differentiable operations on NHWC image batches and NF feature batches.

Every op is a `Function` subclass with its forward/backward rule, wrapped by a lower-case
function that checks shapes and raises `ShapeError` / `ContractViolation` before touching
any data. No broadcasting: element-wise ops require identical shapes.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ContractViolation, ShapeError
from frag_constants import BN_EPSILON, BN_MOMENTUM
from tensor_utils.parameters import BatchNormState
from tensor_utils.tensor import Function, Tensor

Mode = str
TRAIN = "train"
INFER = "infer"


def _check_mode(mode: Mode) -> None:
    if mode not in (TRAIN, INFER):
        raise ContractViolation(f"mode must be 'train' or 'infer', got {mode!r}")


def _as_batch(x: Tensor, rank: int) -> Tuple[Tensor, bool]:
    """Promote a single sample to a batch of one."""
    if x.ndim == rank - 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != rank:
        raise ShapeError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


class Conv3x3(Function):
    """3x3 convolution, stride 1, zero same-padding. Input NHWC, weight [3,3,Cin,Cout]."""

    def forward(self, x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
        n, h, wd, cin = x.shape
        self.x_shape = x.shape
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # [N,H,W,Cin,3,3] -> [N,H,W,3,3,Cin] to match the weight layout
        windows = sliding_window_view(padded, (3, 3), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
        self.cols = windows.reshape(n, h, wd, 9 * cin)
        self.w_mat = w.reshape(9 * cin, -1)
        out = self.cols @ self.w_mat
        if b is not None:
            out = out + b
        return out

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        n, h, wd, cin = self.x_shape
        cout = grad.shape[-1]
        g2 = grad.reshape(-1, cout)
        dw = (self.cols.reshape(-1, 9 * cin).T @ g2).reshape(3, 3, cin, cout)
        dcols = (g2 @ self.w_mat.T).reshape(n, h, wd, 3, 3, cin)
        dpadded = np.zeros((n, h + 2, wd + 2, cin), dtype=grad.dtype)
        for dy in range(3):
            for dx in range(3):
                dpadded[:, dy:dy + h, dx:dx + wd, :] += dcols[:, :, :, dy, dx, :]
        dx_ = dpadded[:, 1:-1, 1:-1, :]
        if len(self.inputs) == 3:
            return dx_, dw, grad.sum(axis=(0, 1, 2))
        return dx_, dw


def conv3x3(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    x, single = _as_batch(input, 4)
    if weight.ndim != 4 or weight.shape[:2] != (3, 3):
        raise ShapeError(f"weight must be [3,3,Cin,Cout], got {weight.shape}")
    if x.shape[-1] != weight.shape[2]:
        raise ShapeError(
            f"input channels (last axis) = {x.shape[-1]} but weight expects Cin = {weight.shape[2]}"
        )
    if bias is not None and bias.shape != (weight.shape[3],):
        raise ShapeError(f"bias must have shape ({weight.shape[3]},) for Cout, got {bias.shape}")
    inputs = (x, weight) if bias is None else (x, weight, bias)
    out = Conv3x3.apply(*inputs)
    return reshape(out, out.shape[1:]) if single else out


class MaxPool2(Function):
    """2x2 max pooling, stride 2. Gradient goes to the first maximum in row-major order."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        self.x_shape = x.shape
        windows = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
        self.argmax = windows.argmax(axis=-1)
        return np.take_along_axis(windows, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        n, h, w, c = self.x_shape
        routed = np.zeros(grad.shape + (4,), dtype=grad.dtype)
        np.put_along_axis(routed, self.argmax[..., None], grad[..., None], axis=-1)
        return (routed.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c),)

    def signature(self) -> bytes:
        return self.argmax.astype(np.uint8).tobytes()


def maxpool2(input: Tensor) -> Tensor:
    x, single = _as_batch(input, 4)
    _, h, w, _ = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even height and width, got {h}x{w}")
    out = MaxPool2.apply(x)
    return reshape(out, out.shape[1:]) if single else out


class Upsample2(Function):
    """Nearest-neighbour 2x upsampling by duplication."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.repeat(2, axis=1).repeat(2, axis=2)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        n, h, w, c = grad.shape
        return (grad.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4)),)


def upsample2(input: Tensor) -> Tensor:
    x, single = _as_batch(input, 4)
    out = Upsample2.apply(x)
    return reshape(out, out.shape[1:]) if single else out


class BatchNorm(Function):
    """
    Batch normalization over every axis but the last (per feature, or per channel over N*H*W).
    Train mode normalizes with batch statistics and updates the running state; infer mode
    normalizes with the running state.
    """

    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                state: BatchNormState = None, mode: Mode = TRAIN) -> np.ndarray:
        features = x.shape[-1]
        rows = x.reshape(-1, features)
        self.x_shape = x.shape
        self.mode = mode
        self.gamma = gamma
        if mode == TRAIN:
            mean = rows.mean(axis=0)
            var = rows.var(axis=0)
            state.update(mean, var)
        else:
            mean = state.running_mean
            var = state.running_var
        self.inv_std = 1.0 / np.sqrt(var + state.epsilon)
        self.x_hat = (rows - mean) * self.inv_std
        return (gamma * self.x_hat + beta).reshape(x.shape)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        features = self.x_shape[-1]
        g = grad.reshape(-1, features)
        dgamma = (g * self.x_hat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dx_hat = g * self.gamma
        if self.mode == TRAIN:
            m = g.shape[0]
            dx = (self.inv_std / m) * (
                m * dx_hat - dx_hat.sum(axis=0) - self.x_hat * (dx_hat * self.x_hat).sum(axis=0)
            )
        else:
            dx = dx_hat * self.inv_std
        return dx.reshape(self.x_shape), dgamma, dbeta


def batchnorm(input: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: Mode = TRAIN) -> Tensor:
    _check_mode(mode)
    features = input.shape[-1]
    if gamma.shape != (features,) or beta.shape != (features,):
        raise ShapeError(f"gamma/beta must have shape ({features},), got {gamma.shape} / {beta.shape}")
    if state.features != features:
        raise ShapeError(f"batchnorm state tracks {state.features} features, input has {features}")
    if mode == TRAIN and (input.ndim < 2 or input.shape[0] < 2):
        raise ContractViolation(f"train-mode batchnorm needs a batch of at least 2, got shape {input.shape}")
    return BatchNorm.apply(input, gamma, beta, state=state, mode=mode)


class Dense(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.x = x
        self.w = w
        return x @ w + b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return grad @ self.w.T, self.x.T @ grad, grad.sum(axis=0)


def dense(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if input.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"dense needs [N,F] input and [F,G] weight, got {input.shape} and {weight.shape}")
    if input.shape[1] != weight.shape[0]:
        raise ShapeError(f"input features F = {input.shape[1]} but weight expects F = {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"bias must have shape ({weight.shape[1]},) for G, got {bias.shape}")
    return Dense.apply(input, weight, bias)


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.mask,)

    def signature(self) -> bytes:
        return np.packbits(self.mask).tobytes()


def relu(input: Tensor) -> Tensor:
    return ReLU.apply(input)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Function):
    """Softmax along the last axis."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.p = _softmax(x)
        return self.p

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (self.p * (grad - (grad * self.p).sum(axis=-1, keepdims=True)),)


def softmax(input: Tensor) -> Tensor:
    return Softmax.apply(input)


def _check_labels(labels: Union[int, Sequence[int], np.ndarray], rows: int, classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape != (rows,) or not np.issubdtype(labels.dtype, np.integer):
        raise ContractViolation(f"need {rows} integer labels, got {labels!r}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ContractViolation(f"label out of range [0, {classes}): {labels.tolist()}")
    return labels.astype(np.int64)


def _as_rows(x: Tensor) -> Tensor:
    if x.ndim == 1:
        return reshape(x, (1,) + x.shape)
    if x.ndim != 2:
        raise ShapeError(f"expected [K] or [N,K], got {x.shape}")
    return x


class CrossEntropy(Function):
    """Mean over the batch of -ln p[label]; takes probabilities."""

    def forward(self, p: np.ndarray, labels: np.ndarray = None) -> np.ndarray:
        self.labels = labels
        self.p = p
        rows = np.arange(p.shape[0])
        return np.asarray(-np.log(p[rows, labels]).mean())

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        n = self.p.shape[0]
        rows = np.arange(n)
        dp = np.zeros_like(self.p)
        dp[rows, self.labels] = -grad / (n * self.p[rows, self.labels])
        return (dp,)


def cross_entropy(probs: Tensor, labels: Union[int, Sequence[int], np.ndarray]) -> Tensor:
    probs = _as_rows(probs)
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    return CrossEntropy.apply(probs, labels=labels)


class SoftmaxCrossEntropy(Function):
    """Fused softmax + cross-entropy on logits: gradient (p - onehot) / N."""

    def forward(self, z: np.ndarray, labels: np.ndarray = None) -> np.ndarray:
        self.labels = labels
        shifted = z - z.max(axis=-1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=-1))
        self.p = np.exp(shifted - log_norm[:, None])
        rows = np.arange(z.shape[0])
        return np.asarray((log_norm - shifted[rows, labels]).mean())

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        n = self.p.shape[0]
        d = self.p.copy()
        d[np.arange(n), self.labels] -= 1.0
        return (d * (grad / n),)


def softmax_cross_entropy(logits: Tensor, labels: Union[int, Sequence[int], np.ndarray]) -> Tensor:
    logits = _as_rows(logits)
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    return SoftmaxCrossEntropy.apply(logits, labels=labels)


class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...] = None) -> np.ndarray:
        self.x_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad.reshape(self.x_shape),)


def reshape(input: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    known = [s for s in shape if s != -1]
    target = int(np.prod(known)) if known else 1
    if shape.count(-1) > 1 or (-1 not in shape and target != input.size) or (-1 in shape and input.size % target):
        raise ShapeError(f"cannot reshape {input.shape} to {shape}")
    return Reshape.apply(input, shape=shape)


class Concat(Function):
    """Concatenate two tensors along the last axis."""

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.split = a.shape[-1]
        return np.concatenate([a, b], axis=-1)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return grad[..., :self.split], grad[..., self.split:]


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat needs matching leading axes, got {a.shape} and {b.shape}")
    return Concat.apply(a, b)


class Outer(Function):
    """Row-wise outer product flattened row-major: out[n, i*E + j] = a[n, i] * b[n, j]."""

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a = a
        self.b = b
        n, d = a.shape
        return (a[:, :, None] * b[:, None, :]).reshape(n, d * b.shape[1])

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n, d = self.a.shape
        g = grad.reshape(n, d, self.b.shape[1])
        return (g * self.b[:, None, :]).sum(axis=2), (g * self.a[:, :, None]).sum(axis=1)


def outer(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"outer needs [N,D] and [N,E], got {a.shape} and {b.shape}")
    return Outer.apply(a, b)


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return grad, grad


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a = a
        self.b = b
        return a * b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return grad * self.b, grad * self.a


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} needs identical shapes (no broadcasting), got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return Add.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return Mul.apply(a, b)


class SumAll(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x_shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (np.full(self.x_shape, grad, dtype=grad.dtype),)


def sum_all(input: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    return SumAll.apply(input)
