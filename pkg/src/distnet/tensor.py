"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records an op node linking output to inputs;
``backward`` on a scalar output traces the graph into a ComputationTape
(topologically ordered op list) and accumulates gradients additively into
every ``requires_grad`` leaf. Tensors are immutable after creation; only
leaf ``.grad`` buffers are mutated, and only inside a backward run.

Broadcasting is deliberately restricted to scalar-with-tensor: hand-rolled
backward passes are much easier to audit when shapes must match exactly.
"""

from __future__ import annotations

import numbers
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError, NumericError

SELU_ALPHA = 1.67326
SELU_LAMBDA = 1.0507


class _OpNode:
    """One executed primitive: inputs and the gradient rule for them."""

    __slots__ = ("inputs", "output", "grad_fn", "name")

    def __init__(self, name, inputs, output, grad_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn


class Tensor:
    """N-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor created from non-finite data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op: _OpNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all semantics live in the module-level op functions
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def abs(self):
        return abs_(self)

    def reshape(self, shape):
        return reshape(self, shape)


class ComputationTape:
    """Topologically ordered record of the ops reachable from a root tensor.

    Built on demand by tracing the op graph; a single backward traversal
    walks it in reverse, accumulating into leaf ``.grad`` buffers.
    """

    def __init__(self, ops: list[_OpNode]):
        self.ops = ops

    @classmethod
    def trace(cls, root: Tensor) -> "ComputationTape":
        ops: list[_OpNode] = []
        seen: set[int] = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            op = node._op
            if op is None:
                continue
            if expanded:
                ops.append(op)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in op.inputs:
                stack.append((parent, False))
        return cls(ops)

    def run_backward(self, root: Tensor) -> None:
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for op in reversed(self.ops):
            out_grad = grads.pop(id(op.output), None)
            if out_grad is None:
                continue
            for parent, g in zip(op.inputs, op.grad_fn(out_grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent._op is None:
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += g
                else:
                    acc = grads.get(id(parent))
                    if acc is None:
                        grads[id(parent)] = np.array(g, dtype=np.float64, copy=True)
                    else:
                        acc += g


def backward(output: Tensor) -> None:
    """Populate gradients of every requires_grad leaf under a scalar root."""
    if output.data.size != 1:
        raise ContractError(
            f"backward requires a scalar root, got shape {output.shape}"
        )
    ComputationTape.trace(output).run_backward(output)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")
    return arr


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _check_finite(np.asarray(data, dtype=np.float64), op)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    out._op = _OpNode(op, inputs, out, grad_fn) if out.requires_grad else None
    return out


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, numbers.Real):
        return Tensor(float(x))
    if isinstance(x, np.ndarray):
        return Tensor(x)
    raise ContractError(f"cannot treat {type(x).__name__} as a tensor")


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # exact match, or one side a scalar (shape () broadcasts everywhere)
    if a.shape == b.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # undoes the scalar-with-tensor broadcast
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "add")
    return _make(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "sub")
    return _make(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "mul")
    return _make(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "div")
    return _make(
        "div",
        a.data / b.data,
        (a, b),
        lambda g: (
            _reduce_to(g / b.data, a.shape),
            _reduce_to(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split form avoids exp overflow for large |x|
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def selu(a: Tensor) -> Tensor:
    x = a.data
    neg = SELU_ALPHA * np.expm1(np.minimum(x, 0.0))
    out = SELU_LAMBDA * np.where(x >= 0, x, neg)

    def grad_fn(g):
        slope = np.where(x >= 0, SELU_LAMBDA, SELU_LAMBDA * (neg + SELU_ALPHA))
        return (g * slope,)

    return _make("selu", out, (a,), grad_fn)


def abs_(a: Tensor) -> Tensor:
    x = a.data
    # subgradient 0 at x == 0: keeps the SMAPE loss gradient zero at a
    # perfect prediction instead of an arbitrary +-1
    return _make("abs", np.abs(x), (a,), lambda g: (g * np.sign(x),))


def maximum_scalar(a: Tensor, floor: float) -> Tensor:
    x = a.data
    out = np.maximum(x, floor)
    return _make("maximum_scalar", out, (a,),
                 lambda g: (g * (x >= floor).astype(np.float64),))


def sum_all(a: Tensor) -> Tensor:
    return _make("sum", np.sum(a.data), (a,),
                 lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _make("mean", np.sum(a.data) / n, (a,),
                 lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    return _make("reshape", a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _make("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise DimensionError(f"matmul: expects vectors/matrices, got {a.shape} @ {b.shape}")
    a2 = a.data if a.data.ndim == 2 else a.data.reshape(1, -1)
    b2 = b.data if b.data.ndim == 2 else b.data.reshape(-1, 1)
    if a2.shape[1] != b2.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out2 = a2 @ b2
    out_shape = []
    if a.data.ndim == 2:
        out_shape.append(out2.shape[0])
    if b.data.ndim == 2:
        out_shape.append(out2.shape[1])

    def grad_fn(g):
        g2 = g.reshape(out2.shape)
        ga = (g2 @ b2.T).reshape(a.shape)
        gb = (a2.T @ g2).reshape(b.shape)
        return ga, gb

    return _make("matmul", out2.reshape(tuple(out_shape)), (a, b), grad_fn)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ContractError("concat of zero parts")
    ndim = parts[0].data.ndim
    if axis < 0 or axis >= ndim:
        raise DimensionError(f"concat: axis {axis} out of range for ndim {ndim}")
    ref = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != ndim or other[:axis] != ref[:axis] or other[axis + 1:] != ref[axis + 1:]:
            raise DimensionError(
                f"concat: side extents differ, {parts[0].shape} vs {p.shape} on axis {axis}"
            )
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def grad_fn(g):
        grads = []
        index = [slice(None)] * ndim
        for i in range(len(parts)):
            index[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(index)])
        return tuple(grads)

    return _make("concat", out, tuple(parts), grad_fn)


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack T equal-length vectors into a (T, d) matrix."""
    rows = [reshape(v, (1, v.data.size)) for v in vectors]
    return concat(rows, axis=0)


def slice_spot(grid: Tensor, row: int, col: int) -> Tensor:
    if grid.data.ndim != 3:
        raise DimensionError(f"slice_spot expects (M, N, C), got {grid.shape}")
    m, n, _ = grid.shape
    if not (0 <= row < m and 0 <= col < n):
        raise ContractError(f"slice_spot: cell ({row}, {col}) outside {m}x{n} grid")

    def grad_fn(g):
        full = np.zeros_like(grid.data)
        full[row, col, :] = g
        return (full,)

    return _make("slice_spot", grid.data[row, col, :].copy(), (grid,), grad_fn)


def embed_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    if table.data.ndim != 2:
        raise DimensionError(f"embed_rows expects (vocab, dim) table, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise ContractError(f"embedding id out of range for vocab {vocab}")

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make("embed_rows", table.data[idx], (table,), grad_fn)


def conv2d(inp: Tensor, kernels: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """2-D cross-correlation, stride 1, channels-last.

    ``same`` zero-pads to preserve H and W (odd kernels only); ``valid``
    shrinks by k - 1. Dispatches to the compiled kernel when available.
    """
    if inp.data.ndim != 3 or kernels.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects input (H, W, Cin) and kernels (k, k, Cin, Cout), "
            f"got {inp.shape} and {kernels.shape}"
        )
    k1, k2, c_in, c_out = kernels.shape
    if k1 != k2:
        raise DimensionError(f"conv2d kernels must be square, got {kernels.shape}")
    if inp.shape[2] != c_in:
        raise DimensionError(
            f"conv2d: input channels {inp.shape[2]} != kernel Cin {c_in}"
        )
    if bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    if padding == "same":
        if k1 % 2 == 0:
            raise DimensionError(f"same padding requires odd kernels, got k={k1}")
        pad = (k1 - 1) // 2
    elif padding == "valid":
        pad = 0
    else:
        raise ContractError(f"unknown padding mode {padding!r}")
    if k1 > inp.shape[0] + 2 * pad or k1 > inp.shape[1] + 2 * pad:
        raise DimensionError(
            f"conv2d: kernel {k1}x{k1} larger than padded input "
            f"{inp.shape[0] + 2 * pad}x{inp.shape[1] + 2 * pad}"
        )

    out, padded = _kernels.conv2d_forward(inp.data, kernels.data, bias.data, pad)

    def grad_fn(g):
        return _kernels.conv2d_backward(
            np.ascontiguousarray(g), padded, kernels.data, pad, inp.shape
        )

    return _make("conv2d", out, (inp, kernels, bias), grad_fn)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float | None = None) -> float:
    """Max relative error between backward() and central differences.

    The step adapts to each component's magnitude unless ``h`` is forced.
    Diagnostic only; never raises on mismatch.
    """
    x_work = Tensor(x.data.copy(), requires_grad=True)
    out = f(x_work)
    backward(out)
    analytic = (
        np.zeros_like(x_work.data) if x_work.grad is None else x_work.grad.copy()
    )

    flat = x_work.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        step = h if h is not None else 6e-6 * max(abs(flat[i]), 1.0)
        orig = flat[i]
        flat[i] = orig + step
        up = f(Tensor(x_work.data.copy())).item()
        flat[i] = orig - step
        down = f(Tensor(x_work.data.copy())).item()
        flat[i] = orig
        numeric[i] = (up - down) / (2.0 * step)
    numeric = numeric.reshape(x_work.data.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)
