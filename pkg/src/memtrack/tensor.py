"""Dense tensors with reverse-mode differentiation.

Every tensor wraps a numpy array. Operations record their parents and a
backward closure on the output tensor; :meth:`Tensor.backward` walks the
recorded graph once in reverse topological order.

Shapes are explicit. Elementwise ops between two tensors require equal
shapes; the only broadcast is the per-channel bias inside :func:`conv2d`.
Python scalars may be mixed into arithmetic freely.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class InvalidArgumentError(ValueError):
    """Raised on shape or argument contract violations."""


class NonFiniteError(FloatingPointError):
    """Raised when debug mode finds NaN/Inf in an op output."""


_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def get_default_dtype() -> np.dtype:
    return np.dtype(_get("dtype", np.float32))


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise InvalidArgumentError(f"unsupported dtype {dtype}")
    _state.dtype = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default float precision (e.g. ``"float64"`` for oracle runs)."""
    old = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    old = _get("grad_enabled", True)
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def is_grad_enabled() -> bool:
    return _get("grad_enabled", True)


def set_debug(flag: bool) -> None:
    """When on, every op output is checked for NaN/Inf."""
    _state.debug = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or get_default_dtype())
        if any(n < 1 for n in arr.shape):
            raise InvalidArgumentError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise InvalidArgumentError("backward() without grad needs a single-element tensor")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise InvalidArgumentError(f"grad shape {grad.shape} != tensor shape {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise InvalidArgumentError("tensor / tensor is not supported; use mul with a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _raise_item(t: Tensor):
    raise InvalidArgumentError(f"item() needs a single-element tensor, got shape {t.shape}")


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and (p.requires_grad or p._parents):
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _get("debug", False) and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values after {op}")
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(float(b))
        return _make(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) without overflow for large |x|."""
    xd = x.data
    y = -np.logaddexp(0, -xd).astype(xd.dtype)
    s = _sigmoid(-xd)
    return _make(y, (x,), lambda g: (g * s,), "log_sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    _same_shape(a, b, "minimum")
    pick_a = a.data <= b.data
    return _make(np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a), "minimum")


def sum_all(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype
    return _make(
        np.asarray(x.data.sum(), dtype=dtype),
        (x,),
        lambda g: (np.broadcast_to(g, shape).astype(dtype),),
        "sum",
    )


def mean_all(x: Tensor) -> Tensor:
    return mul(sum_all(x), 1.0 / x.size)


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise InvalidArgumentError(f"cannot reshape {x.shape} into {shape}")
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise InvalidArgumentError(f"transpose expects a matrix, got shape {x.shape}")
    return _make(np.ascontiguousarray(x.data.T), (x,), lambda g: (np.ascontiguousarray(g.T),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing; the result is copied."""
    src, dtype = x.shape, x.dtype
    out = np.array(x.data[index], dtype=dtype, copy=True)

    def backward(g):
        full = np.zeros(src, dtype=dtype)
        full[index] = g
        return (full,)

    return _make(out, (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise InvalidArgumentError("concat of an empty list")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise InvalidArgumentError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack C1xHxW and C2xHxW into (C1+C2)xHxW."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise InvalidArgumentError(f"concat_channels expects CxHxW inputs, got {a.shape} and {b.shape}")
    if a.shape[1:] != b.shape[1:]:
        raise InvalidArgumentError(f"concat_channels: spatial mismatch {a.shape[1:]} vs {b.shape[1:]}")
    return concat([a, b], axis=0)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise InvalidArgumentError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise InvalidArgumentError(f"matmul: inner dimension mismatch {a.shape[1]} vs {b.shape[0]}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def softmax_columns(logits: Tensor, scale: float = 1.0) -> Tensor:
    """Column-wise softmax of ``logits / scale`` with per-column max subtraction."""
    if scale <= 0:
        raise InvalidArgumentError(f"softmax scale must be positive, got {scale}")
    if logits.data.ndim != 2:
        raise InvalidArgumentError(f"softmax_columns expects a matrix, got {logits.shape}")
    z = logits.data / logits.dtype.type(scale)
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        dz = y * (g - (g * y).sum(axis=0, keepdims=True))
        return (dz / logits.dtype.type(scale),)

    return _make(y, (logits,), backward, "softmax_columns")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    c = x.shape[0]
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    return cols, ho, wo


def _col2im(cols: np.ndarray, shape, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    c, h, w = shape
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, i, j]
    if pad:
        out = out[:, pad:-pad, pad:-pad]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of a CinxHxW input with a CoutxCinxkxk kernel."""
    if x.data.ndim != 3:
        raise InvalidArgumentError(f"conv2d input must be CxHxW, got shape {x.shape}")
    if weight.data.ndim != 4:
        raise InvalidArgumentError(f"conv2d kernel must be CoutxCinxkxk, got shape {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if kh != kw:
        raise InvalidArgumentError(f"conv2d kernel must be square, got {kh}x{kw}")
    if cin != x.shape[0]:
        raise InvalidArgumentError(f"conv2d: input channels {x.shape[0]} != kernel channels {cin}")
    if bias is not None and bias.shape != (cout,):
        raise InvalidArgumentError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    k = kh
    if k < 1 or stride < 1 or pad < 0:
        raise InvalidArgumentError(f"conv2d: need k>=1, stride>=1, pad>=0 (k={k}, stride={stride}, pad={pad})")
    _, h, w = x.shape
    if h + 2 * pad < k:
        raise InvalidArgumentError(f"conv2d: height {h} + 2*{pad} smaller than kernel {k}")
    if w + 2 * pad < k:
        raise InvalidArgumentError(f"conv2d: width {w} + 2*{pad} smaller than kernel {k}")

    cols, ho, wo = _im2col(x.data, k, stride, pad)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(cout, ho, wo)
    xshape = x.shape

    def backward(g):
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = _col2im(wmat.T @ g2, xshape, k, stride, pad, ho, wo) if x.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward, "conv2d")
