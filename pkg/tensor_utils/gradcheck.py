"""
Central finite-difference checks of the analytic gradients.

Checks run in float64 (`float64_precision`) so the difference quotient is not swamped by
float32 rounding. An entry whose +h / -h evaluation flips a ReLU mask or a maxpool argmax
is skipped: the function is not differentiable across that step.
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from log_utils import get_logger
from tensor_utils import ops
from tensor_utils.parameters import BatchNormState
from tensor_utils.tensor import Tape, Tensor, float64_precision

logger = get_logger(__name__)

STEP = 1e-3
RTOL = 1e-3
ATOL = 1e-5

Entry = Tuple[str, int]


class GradCheckResult(BaseModel):
    name: str
    seed: int
    checked: int
    skipped: int
    max_abs_error: float
    max_rel_error: float
    passed: bool


def _evaluate(build: Callable[[], Tensor], projection: Optional[np.ndarray]) -> Tuple[float, tuple, Tape, Tensor]:
    with Tape() as tape:
        out = build()
        if projection is not None:
            out = ops.sum_all(ops.mul(out, Tensor(projection)))
    return out.item(), tape.signatures(), tape, out


def check_gradients(
    name: str,
    build: Callable[[], Tensor],
    inputs: Dict[str, Tensor],
    seed: int = 0,
    entries: Optional[Sequence[Entry]] = None,
    step: float = STEP,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> GradCheckResult:
    """
    Compare analytic and numerical gradients of `build()` w.r.t. `inputs`.

    Non-scalar outputs are reduced with a fixed random projection so every output element
    contributes. `entries` limits the check to (input name, flat index) pairs; by default every
    element of every input is checked.
    """
    rng = np.random.default_rng(seed)
    first = build()
    projection = None if first.size == 1 else rng.uniform(0.5, 1.5, size=first.shape)

    for tensor in inputs.values():
        tensor.grad = None
    _, base_signature, tape, loss = _evaluate(build, projection)
    tape.backward(loss)
    analytic = {key: (t.grad if t.grad is not None else np.zeros(t.shape)) for key, t in inputs.items()}

    if entries is None:
        entries = [(key, i) for key, t in inputs.items() for i in range(t.size)]

    checked = skipped = 0
    max_abs = max_rel = 0.0
    passed = True
    for key, index in entries:
        tensor = inputs[key]
        original = tensor.data.copy()
        values = []
        crossed = False
        for delta in (step, -step):
            shifted = original.copy()
            shifted.reshape(-1)[index] += delta
            tensor.assign(shifted)
            value, signature, _, _ = _evaluate(build, projection)
            crossed = crossed or signature != base_signature
            values.append(value)
        tensor.assign(original)
        if crossed:
            skipped += 1
            continue
        numeric = (values[0] - values[1]) / (2 * step)
        exact = float(analytic[key].reshape(-1)[index])
        abs_err = abs(exact - numeric)
        scale = max(abs(exact), abs(numeric))
        rel_err = abs_err / scale if scale > 0 else 0.0
        max_abs = max(max_abs, abs_err)
        if abs_err > atol:
            max_rel = max(max_rel, rel_err)
        if abs_err > atol + rtol * scale:
            passed = False
            logger.error(f"{name}[{key}:{index}] analytic={exact:.6g} numeric={numeric:.6g}")
        checked += 1

    passed = passed and checked > 0
    return GradCheckResult(name=name, seed=seed, checked=checked, skipped=skipped,
                           max_abs_error=max_abs, max_rel_error=max_rel, passed=passed)


def _spaced(rng: np.random.Generator, shape: Tuple[int, ...], spacing: float = 0.05) -> np.ndarray:
    """Distinct values at least `spacing` apart, so no pooling window holds near-ties."""
    n = int(np.prod(shape))
    return (rng.permutation(n) - n / 2).reshape(shape) * spacing


def _away_from_zero(rng: np.random.Generator, shape: Tuple[int, ...], margin: float = 0.05) -> np.ndarray:
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def op_cases(rng: np.random.Generator) -> List[Tuple[str, Callable[[], Tensor], Dict[str, Tensor]]]:
    """Small random instances of every differentiable op (each input has at most 64 elements)."""
    def leaf(data):
        return Tensor(data, requires_grad=True)

    cases = []

    x = leaf(rng.normal(size=(1, 4, 4, 2)))
    w = leaf(rng.normal(size=(3, 3, 2, 2)))
    b = leaf(rng.normal(size=(2,)))
    cases.append(("conv3x3", lambda x=x, w=w, b=b: ops.conv3x3(x, w, b), {"input": x, "weight": w, "bias": b}))

    x = leaf(_spaced(rng, (1, 4, 4, 2)))
    cases.append(("maxpool2", lambda x=x: ops.maxpool2(x), {"input": x}))

    x = leaf(rng.normal(size=(1, 2, 2, 3)))
    cases.append(("upsample2", lambda x=x: ops.upsample2(x), {"input": x}))

    for label, shape in (("batchnorm_train", (4, 3)), ("batchnorm_spatial", (2, 2, 2, 3))):
        x = leaf(rng.normal(size=shape))
        g = leaf(rng.uniform(0.5, 1.5, size=(3,)))
        be = leaf(rng.normal(size=(3,)))
        state = BatchNormState(3)
        cases.append((label, lambda x=x, g=g, be=be, s=state: ops.batchnorm(x, g, be, s, ops.TRAIN),
                      {"input": x, "gamma": g, "beta": be}))

    x = leaf(rng.normal(size=(4, 3)))
    g = leaf(rng.uniform(0.5, 1.5, size=(3,)))
    be = leaf(rng.normal(size=(3,)))
    state = BatchNormState(3)
    state.running_mean = rng.normal(size=3)
    state.running_var = rng.uniform(0.5, 2.0, size=3)
    cases.append(("batchnorm_infer", lambda x=x, g=g, be=be, s=state: ops.batchnorm(x, g, be, s, ops.INFER),
                  {"input": x, "gamma": g, "beta": be}))

    x = leaf(rng.normal(size=(3, 4)))
    w = leaf(rng.normal(size=(4, 5)))
    b = leaf(rng.normal(size=(5,)))
    cases.append(("dense", lambda x=x, w=w, b=b: ops.dense(x, w, b), {"input": x, "weight": w, "bias": b}))

    x = leaf(_away_from_zero(rng, (4, 6)))
    cases.append(("relu", lambda x=x: ops.relu(x), {"input": x}))

    x = leaf(rng.normal(size=(3, 8)))
    cases.append(("softmax", lambda x=x: ops.softmax(x), {"input": x}))

    p = leaf(ops._softmax(rng.normal(scale=0.3, size=(3, 8))))
    labels = rng.integers(0, 8, size=3)
    cases.append(("cross_entropy", lambda p=p, y=labels: ops.cross_entropy(p, y), {"probs": p}))

    z = leaf(rng.normal(size=(3, 8)))
    labels = rng.integers(0, 8, size=3)
    cases.append(("softmax_cross_entropy", lambda z=z, y=labels: ops.softmax_cross_entropy(z, y), {"logits": z}))

    a = leaf(rng.normal(size=(2, 5)))
    b = leaf(rng.normal(size=(2, 3)))
    cases.append(("concat", lambda a=a, b=b: ops.concat(a, b), {"a": a, "b": b}))

    a = leaf(rng.normal(size=(2, 4)))
    b = leaf(rng.normal(size=(2, 4)))
    cases.append(("outer", lambda a=a, b=b: ops.outer(a, b), {"a": a, "b": b}))

    x = leaf(rng.normal(size=(2, 3, 4)))
    cases.append(("reshape", lambda x=x: ops.reshape(x, (4, 6)), {"input": x}))

    a = leaf(rng.normal(size=(3, 4)))
    b = leaf(rng.normal(size=(3, 4)))
    cases.append(("add", lambda a=a, b=b: ops.add(a, b), {"a": a, "b": b}))
    cases.append(("mul", lambda a=a, b=b: ops.mul(a, b), {"a": a, "b": b}))

    x = leaf(rng.normal(size=(5, 3)))
    cases.append(("sum_all", lambda x=x: ops.sum_all(x), {"input": x}))
    return cases


def run_op_suite(seed: int, n_seeds: int = 10) -> List[GradCheckResult]:
    """Finite-difference check of every op for seeds seed .. seed + n_seeds - 1."""
    results = []
    with float64_precision():
        for s in range(seed, seed + n_seeds):
            rng = np.random.default_rng(s)
            for name, build, inputs in op_cases(rng):
                result = check_gradients(name, build, inputs, seed=s)
                logger.info(f"gradcheck {name} seed={s} checked={result.checked} "
                            f"skipped={result.skipped} max_rel={result.max_rel_error:.2e} passed={result.passed}")
                results.append(result)
    return results
