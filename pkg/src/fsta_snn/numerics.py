"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation produces a fresh :class:`Tensor` and, when any
input requires a gradient, a :class:`Record` that holds the saved forward
values and the backward rule. :func:`backward` orders the records reachable
from a scalar root into a :class:`Tape` and sweeps it in reverse.

Data lives in numpy arrays. Double precision is the default; call
:func:`set_default_dtype` with ``np.float32`` for faster training runs.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported default dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@dataclass(eq=False)
class Record:
    """One recorded operation: kind, inputs, saved values and its backward rule."""

    op: str
    inputs: tuple["Tensor", ...]
    saved: tuple
    backward: Callable[..., tuple]
    # Weak, so a finished graph is freed by refcounting instead of the cycle collector.
    output_ref: "weakref.ref | None" = None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_record", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind in "biu" or (arr.dtype.kind == "f" and arr.dtype not in (np.float32, np.float64)):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._record: Record | None = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)

    # --------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axes=None, keepdims=False):
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce("mean", self, axes, keepdims)

    def max(self, axes=None, keepdims=False):
        return reduce("max", self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


@dataclass
class Tape:
    """Records reachable from a root, in topological (forward) order."""

    records: list[Record] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Record] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            rec = t._record
            if rec is None:
                continue
            if expanded:
                order.append(rec)
                continue
            if id(rec) in seen:
                continue
            seen.add(id(rec))
            stack.append((t, True))
            for inp in rec.inputs:
                if inp._record is not None and id(inp._record) not in seen:
                    stack.append((inp, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.records)


def backward(root: Tensor, tape: Tape | None = None) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    Returns a map from each requires-grad leaf to its gradient for this call.
    """
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if tape is None:
        tape = Tape.from_root(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    if root.is_leaf and root.requires_grad:
        leaves[id(root)] = root
    for rec in reversed(tape.records):
        out = rec.output_ref()
        g = grads.pop(id(out), None) if out is not None else None
        if g is None:
            continue
        in_grads = rec.backward(g, *rec.saved)
        for inp, ig in zip(rec.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.shape:
                ig = _unbroadcast(ig, inp.shape)
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
            if inp.is_leaf:
                leaves[key] = inp
    result = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = np.asarray(g, dtype=leaf.data.dtype)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result


# ---------------------------------------------------------------- internals
def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def make_result(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn, saved: tuple = ()) -> Tensor:
    """Wrap ``data`` as the output of ``op``; records it only when a gradient is needed."""
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._record = Record(op, tuple(inputs), saved, backward_fn, weakref.ref(out))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def broadcast_shape(*shapes: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(*shapes))
    except ValueError:
        raise ShapeError(f"shapes {' and '.join(map(str, shapes))} are not broadcastable") from None


# ------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return make_result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return make_result(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return make_result(a.data * b.data, "mul", (a, b), lambda g, x, y: (g * y, g * x), (a.data, b.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)

    def _bw(g, x, y):
        return g / y, -g * x / (y * y)

    return make_result(a.data / b.data, "div", (a, b), _bw, (a.data, b.data))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, "neg", (a,), lambda g: (-g,))


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_result(a.data * c, "scalar_mul", (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return make_result(s, "sigmoid", (a,), lambda g, s: (g * s * (1.0 - s),), (s,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return make_result(y, "exp", (a,), lambda g, y: (g * y,), (y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), "log", (a,), lambda g, x: (g / x,), (a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return make_result(y, "sqrt", (a,), lambda g, y: (g * 0.5 / y,), (y,))


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch by name: add, sub, mul, sigmoid, scalar_mul."""
    table = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "scalar_mul": scalar_mul, "div": div}
    try:
        fn = table[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands)


# --------------------------------------------------------------- reductions
def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(out))


def reduce(kind: str, a, axes=None, keepdims: bool = False) -> Tensor:
    """Sum, mean or max over ``axes``. An empty axes set is the identity."""
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    if not axes:
        return make_result(a.data.copy(), "identity", (a,), lambda g: (g,))
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
    if kind == "sum":
        y = a.data.sum(axis=axes, keepdims=keepdims)
        return make_result(y, "sum", (a,), lambda g: (np.broadcast_to(g.reshape(kept), a.shape),))
    if kind == "mean":
        count = int(np.prod([a.shape[i] for i in axes]))
        y = a.data.sum(axis=axes, keepdims=keepdims) / count
        return make_result(y, "mean", (a,), lambda g: (np.broadcast_to(g.reshape(kept) / count, a.shape),))
    if kind == "max":
        y = a.data.max(axis=axes, keepdims=keepdims)
        rest = [i for i in range(a.ndim) if i not in axes]
        perm = rest + list(axes)

        def _bw(g, x):
            xt = x.transpose(perm)
            flat = xt.reshape(xt.shape[: len(rest)] + (-1,))
            idx = flat.argmax(axis=-1)  # first occurrence on ties
            mask = np.zeros_like(flat)
            np.put_along_axis(mask, idx[..., None], 1.0, axis=-1)
            mask = mask.reshape(xt.shape).transpose(np.argsort(perm))
            return (mask * g.reshape(kept),)

        return make_result(y, "max", (a,), _bw, (a.data,))
    raise ValueError(f"unknown reduction {kind!r}")


# ----------------------------------------------------------------- shaping
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return make_result(y, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_result(a.data.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if broadcast_shape(a.shape, shape) != shape:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}")
    return make_result(np.broadcast_to(a.data, shape), "broadcast_to", (a,), lambda g: (g,))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_result(a.data[index], "getitem", (a,), _bw)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    y = np.stack([t.data for t in ts], axis=axis)

    def _bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_result(y, "stack", ts, _bw)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    y = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return make_result(y, "concat", ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


# ------------------------------------------------------------ linear maps
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects [...,n,k] @ [k,m], got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def _bw(g, x, w):
        gx = g @ w.T
        gw = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return make_result(a.data @ b.data, "matmul", (a, b), _bw, (a.data, b.data))


def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2:
        raise ShapeError(f"linear weight must be [Dout, Din], got {weight.shape}")
    if x.ndim < 1 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear input last extent {x.shape[-1:]} does not match Din={weight.shape[1]}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear bias must be [{weight.shape[0]}], got {bias.shape}")
    lead = x.shape[:-1]
    xd = x.data.reshape(-1, x.shape[-1])
    y = xd @ weight.data.T
    if bias is not None:
        y = y + bias.data
    y = y.reshape(lead + (weight.shape[0],))

    def _bw(g, xd, w):
        g2 = g.reshape(-1, w.shape[0])
        gx = (g2 @ w).reshape(lead + (w.shape[1],))
        gw = g2.T @ xd
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, "linear", inputs, _bw, (xd, weight.data))


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation with zero padding, ``x[N,Cin,H,W] * kernel[Cout,Cin,kh,kw]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input has Cin={cin}, kernel expects {kcin}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]  # n,cin,ho,wo,kh,kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    wmat = kernel.data.reshape(cout, -1)
    y = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)

    def _bw(g, cols, wmat):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(cout, cin, kh, kw)
        gcols = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw

    return make_result(y, "conv2d", (x, kernel), _bw, (cols, wmat))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def _bw(g, y):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return make_result(y, "log_softmax", (a,), _bw, (y,))


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    y = np.where(cond, a.data, b.data)
    return make_result(y, "where", (a, b), lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)))
