"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor`. When at least one input
requires a gradient the result keeps references to its inputs together with
a backward rule, so the graph is rebuilt on every forward pass
(define-by-run). :func:`backward` walks that graph in reverse topological
order and accumulates gradients into leaf tensors.

Broadcasting is deliberately absent: binary ops accept either two tensors of
identical shape or a tensor and a Python scalar. Per-channel bias addition has
its own explicit op, :func:`add_bias`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "zeros_like",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "spmm",
    "conv2d",
    "add_bias",
    "relu",
    "sum",
    "mean",
    "mse",
    "reshape",
    "permute",
    "channel_split",
    "channel_concat",
    "upsample_nearest2x",
    "stop_gradient",
    "gather_rows",
    "slice_rows",
    "backward",
]

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """An n-dimensional float64 array that can take part in autodiff.

    Attributes:
        data: the value, always a C-contiguous ``float64`` ndarray.
        requires_grad: whether gradients should be tracked for this tensor.
        grad: accumulated gradient (same shape as ``data``) or ``None`` if no
            backward pass has reached this tensor since the last reset.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        self.data = np.asarray(arr, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple["Tensor", ...],
                backward_fn: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64, order="C")
        out.grad = None
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros_like(x.data))


def _check_same(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def _is_scalar(v) -> bool:
    return isinstance(v, (int, float, np.floating, np.integer))


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: "Tensor | float") -> Tensor:
    if _is_scalar(b):
        c = float(b)
        return Tensor._result(a.data + c, (a,), lambda g: (g,), "add_scalar")
    _check_same(a, b, "add")
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: "Tensor | float") -> Tensor:
    if _is_scalar(b):
        c = float(b)
        return Tensor._result(a.data - c, (a,), lambda g: (g,), "sub_scalar")
    _check_same(a, b, "sub")
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: "Tensor | float") -> Tensor:
    if _is_scalar(b):
        return scale(a, b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor._result(a.data * s, (a,), lambda g: (g * s,), "scale")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return Tensor._result(ad @ bd, (a, b), _bw, "matmul")


def spmm(a_const, h: Tensor) -> Tensor:
    """Multiply a constant (dense or scipy.sparse) matrix by a tensor.

    The constant never receives a gradient; ``h`` receives ``a.T @ g``.
    """
    if a_const.shape[1] != h.shape[0]:
        raise ShapeError(f"spmm: inner dimensions differ, {a_const.shape} @ {h.shape}")
    at = a_const.T
    out = np.asarray(a_const @ h.data)
    return Tensor._result(out, (h,), lambda g: (np.asarray(at @ g),), "spmm")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D cross-correlation, NCHW input and OIHW kernel.

    Output size is ``(H + 2 * padding - k) // stride + 1`` per spatial axis.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape}, {w.shape}")
    bsz, c_in, h, wd = x.shape
    c_out, c_in_k, kh, kw = w.shape
    if c_in != c_in_k:
        raise ShapeError(f"conv2d: input has {c_in} channels, kernel expects {c_in_k}")
    if kh != kw:
        raise ShapeError(f"conv2d: only square kernels are supported, got {kh}x{kw}")
    k = kh
    span_h = h + 2 * padding - k
    span_w = wd + 2 * padding - k
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} or padding={padding}")
    if span_h < 0 or span_w < 0:
        raise ShapeError(
            f"conv2d: kernel {k} larger than padded input {h}x{wd} (padding={padding})")
    # floor semantics: trailing rows/columns that do not fill a window are dropped
    ho, wo = span_h // stride + 1, span_w // stride + 1
    if stride == 1:
        return _conv2d_shifted(x, w, padding, ho, wo)

    # channel-major im2col: cols[(c, i, j), (b, oh, ow)] = xp[b, c, i + s*oh, j + s*ow]
    xpt = x.data.transpose(1, 0, 2, 3)
    if padding:
        xpt = np.pad(xpt, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c_in, k, k, bsz, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xpt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(c_in * k * k, bsz * ho * wo)
    wmat = w.data.reshape(c_out, -1)
    out = (wmat @ cols).reshape(c_out, bsz, ho, wo).transpose(1, 0, 2, 3)

    def _bw(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(c_out, -1)
        gw = (gt @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gt).reshape(c_in, k, k, bsz, ho, wo)
            dxpt = np.zeros((c_in, bsz, h + 2 * padding, wd + 2 * padding))
            for i in range(k):
                for j in range(k):
                    dxpt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            if padding:
                dxpt = dxpt[:, :, padding:padding + h, padding:padding + wd]
            gx = dxpt.transpose(1, 0, 2, 3)
        return gx, gw

    return Tensor._result(out, (x, w), _bw, "conv2d")


def _conv2d_shifted(x: Tensor, w: Tensor, padding: int, ho: int, wo: int) -> Tensor:
    """Stride-1 convolution as one GEMM per kernel offset.

    On the flattened padded input, offset (i, j) is a constant shift of
    ``i * Wp + j``, so each term reads a contiguous column range instead of
    materializing an im2col buffer. Rows that wrap past an image edge land in
    the padded margin of the output grid and are cropped.
    """
    bsz, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    xpt = x.data.transpose(1, 0, 2, 3)
    if padding:
        xpt = np.pad(xpt, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xflat = np.ascontiguousarray(xpt).reshape(c_in, bsz * hp * wp)
    span = bsz * hp * wp - ((k - 1) * wp + (k - 1))
    offsets = [(i, j, i * wp + j) for i in range(k) for j in range(k)]
    # (k, k, O, C) so every per-offset weight slice is contiguous for BLAS
    wk = np.ascontiguousarray(w.data.transpose(2, 3, 0, 1))
    full = np.zeros((c_out, bsz * hp * wp))
    acc = full[:, :span]
    for i, j, off in offsets:
        acc += wk[i, j] @ xflat[:, off:off + span]
    out = full.reshape(c_out, bsz, hp, wp)[:, :, :ho, :wo].transpose(1, 0, 2, 3)

    def _bw(g):
        gfull = np.zeros((c_out, bsz, hp, wp))
        gfull[:, :, :ho, :wo] = g.transpose(1, 0, 2, 3)
        gflat = gfull.reshape(c_out, -1)[:, :span]
        gw = None
        if w.requires_grad:
            gwk = np.empty_like(wk)
            for i, j, off in offsets:
                gwk[i, j] = gflat @ xflat[:, off:off + span].T
            gw = gwk.transpose(2, 3, 0, 1)
        gx = None
        if x.requires_grad:
            dx = np.zeros((c_in, bsz * hp * wp))
            for i, j, off in offsets:
                dx[:, off:off + span] += wk[i, j].T @ gflat
            dx = dx.reshape(c_in, bsz, hp, wp)
            if padding:
                dx = dx[:, :, padding:padding + h, padding:padding + wd]
            gx = dx.transpose(1, 0, 2, 3)
        return gx, gw

    return Tensor._result(out, (x, w), _bw, "conv2d")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias along axis 1 (columns of a matrix, channels of NCHW)."""
    if b.data.ndim != 1 or x.data.ndim < 2 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match axis 1 of {x.shape}")
    view = (1, -1) + (1,) * (x.data.ndim - 2)
    reduce_axes = (0,) + tuple(range(2, x.data.ndim))
    return Tensor._result(x.data + b.data.reshape(view), (x, b),
                          lambda g: (g, g.sum(axis=reduce_axes)), "add_bias")


# ---------------------------------------------------------------------------
# Nonlinearities and reductions
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return Tensor._result(np.array(x.data.sum()), (x,),
                          lambda g: (np.full(shape, g.item()),), "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return Tensor._result(np.array(x.data.mean()), (x,),
                          lambda g: (np.full(shape, g.item() / n),), "mean")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of ``(a - b) ** 2``."""
    _check_same(a, b, "mse")
    diff = a.data - b.data
    n = diff.size

    def _bw(g):
        d = (2.0 * g.item() / n) * diff
        return (d if a.requires_grad else None, -d if b.requires_grad else None)

    return Tensor._result(np.array(np.mean(diff * diff)), (a, b), _bw, "mse")


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return Tensor._result(out, (x,), lambda g: (g.reshape(old),), "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(x.data.transpose(axes), (x,),
                          lambda g: (g.transpose(inverse),), "permute")


def channel_split(x: Tensor) -> tuple[Tensor, Tensor]:
    """Split an NCHW tensor into two halves along the channel axis."""
    if x.data.ndim < 2:
        raise ShapeError(f"channel_split: need at least 2 dims, got {x.shape}")
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"channel_split: channel count must be even, got {c}")
    half = c // 2
    return _channel_slice(x, 0, half), _channel_slice(x, half, c)


def _channel_slice(x: Tensor, lo: int, hi: int) -> Tensor:
    shape = x.shape

    def _bw(g):
        full = np.zeros(shape)
        full[:, lo:hi] = g
        return (full,)

    return Tensor._result(x.data[:, lo:hi], (x,), _bw, "channel_slice")


def channel_concat(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != b.data.ndim or a.shape[:1] != b.shape[:1] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"channel_concat: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    return Tensor._result(np.concatenate([a.data, b.data], axis=1), (a, b),
                          lambda g: (g[:, :ca], g[:, ca:]), "channel_concat")


def upsample_nearest2x(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest2x expects NCHW, got {x.shape}")
    b, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return Tensor._result(out, (x,),
                          lambda g: (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),),
                          "upsample_nearest2x")


def stop_gradient(x: Tensor) -> Tensor:
    """Identity in the forward pass; severs the graph in the backward pass."""
    out = Tensor(x.data)
    out.op = "stop_gradient"
    return out


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows ``table[indices]``; the backward pass scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D table, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {table.shape[0]} rows")
    shape = table.shape

    def _bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(table.data[idx], (table,), _bw, "gather_rows")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def _bw(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return Tensor._result(x.data[start:stop], (x,), _bw, "slice_rows")


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Repeated calls without resetting gradients accumulate.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
