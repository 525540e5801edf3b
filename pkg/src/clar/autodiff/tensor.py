"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it
whenever at least one operand requires a gradient. ``tape.backward(loss)``
replays the record in reverse and accumulates gradients into every leaf
tensor that asked for one. A tape may be replayed only once.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "TapeError",
    "ShapeError",
    "backward",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "relu",
    "tanh",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concatenate",
    "take",
    "l2_normalize",
    "logsumexp",
    "conv1d",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + ", ".join(str(s) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TapeError(RuntimeError):
    pass


_ACTIVE: list["Tape"] = []


class Tensor:
    """Immutable n-d array of float64 values, optionally tracked for gradients."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None
        self.name = name
        # set for tensors produced by a recorded op
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A trainable leaf tensor; its gradient buffer always exists."""

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)

    def assign(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ShapeError("assign", self.data.shape, value.shape)
        # fresh array: arrays captured by earlier tapes stay untouched
        self.data = value.copy()


class _Node:
    __slots__ = ("op", "out", "parents", "backward_fn")

    def __init__(self, op: str, out: Tensor, parents: tuple, backward_fn: Callable):
        self.op = op
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager::

        with Tape() as tape:
            loss = model(x)
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: _Node) -> None:
        if self.consumed:
            raise TapeError("cannot record on a tape that was already replayed")
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> list[str]:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

        Returns the op names in the order they were visited.
        """
        if self.consumed:
            raise TapeError("backward already ran on this tape; re-run the forward pass")
        if loss.data.size != 1:
            raise ShapeError("backward", loss.shape, detail="loss must be a scalar")
        self.consumed = True
        visited: list[str] = []
        if loss._node is None:
            # constant loss or a bare leaf
            if loss.requires_grad and loss.grad is not None:
                loss.grad = loss.grad + np.ones_like(loss.data)
            return visited
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            visited.append(node.op)
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    pg = _unbroadcast(pg, parent.shape)
                if parent._node is None:
                    parent.grad = parent.grad + pg
                else:
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
        return visited


def backward(tape: Tape, loss: Tensor) -> list[str]:
    return tape.backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*xs) -> bool:
    return any(isinstance(x, Tensor) and x.requires_grad for x in xs)


def _make(op: str, data: np.ndarray, parents: tuple, backward_fn: Callable) -> Tensor:
    if _ACTIVE and _tracked(*parents):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = True
        out.grad = None
        out.name = None
        node = _Node(op, out, parents, backward_fn)
        out._node = node
        _ACTIVE[-1].record(node)
        return out
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.name = None
    out._node = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make("div", out, (a, b), lambda g: (g / bd, -g * out / bd))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("log", np.log(ad), (a,), lambda g: (g / ad,))


# ------------------------------------------------------------------ reductions


def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    return _make(
        "sum",
        np.asarray(a.data.sum(axis=axis, keepdims=keepdims)),
        (a,),
        lambda g: (_expand(g, shape, axis, keepdims),),
    )


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([shape[ax] for ax in axes]))
    return _make(
        "mean",
        np.asarray(a.data.mean(axis=axis, keepdims=keepdims)),
        (a,),
        lambda g: (_expand(g, shape, axis, keepdims) / n,),
    )


def logsumexp(a, axis: int = -1, where: np.ndarray | None = None) -> Tensor:
    """log(sum(exp(a))) along ``axis``; entries where ``where`` is False are excluded."""
    a = as_tensor(a)
    x = a.data
    if where is not None:
        where = np.broadcast_to(np.asarray(where, dtype=bool), x.shape)
        if not where.any(axis=axis).all():
            raise ShapeError("logsumexp", x.shape, detail="a reduced slice has no included entries")
        x_masked = np.where(where, x, -np.inf)
    else:
        x_masked = x
    m = np.max(x_masked, axis=axis, keepdims=True)
    e = np.exp(x_masked - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s

    def back(g):
        return (np.expand_dims(g, axis) * soft,)

    return _make("logsumexp", out, (a,), back)


# ------------------------------------------------------------------ structural


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make("transpose", out, (a,), lambda g: (np.transpose(g, inv),))


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concatenate", detail="no operands")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concatenate", *(t.shape for t in ts)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concatenate", out, tuple(ts), back)


def take(a, index) -> Tensor:
    """Basic or integer-array indexing (``a[index]``)."""
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as e:
        raise ShapeError("slice", a.shape, detail=str(e)) from None
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make("slice", np.array(out, dtype=np.float64), (a,), back)


def l2_normalize(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise ValueError("l2_normalize: zero vector cannot be normalized")
    y = x / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _make("l2_normalize", y, (a,), back)


def conv1d(x, w, b=None, stride: int = 1) -> Tensor:
    """Valid 1-D convolution (cross-correlation).

    x: (batch, in_ch, length); w: (out_ch, in_ch, kernel); b: (out_ch,).
    Returns (batch, out_ch, (length - kernel) // stride + 1).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1] or x.shape[2] < w.shape[2]:
        raise ShapeError("conv1d", x.shape, w.shape)
    bsz, cin, n = x.shape
    cout, _, k = w.shape
    n_out = (n - k) // stride + 1
    xd, wd = x.data, w.data
    # cols[b, t, c, j] = x[b, c, t*stride + j]
    s0, s1, s2 = xd.strides
    cols = np.lib.stride_tricks.as_strided(
        xd, shape=(bsz, n_out, cin, k), strides=(s0, s2 * stride, s1, s2), writeable=False
    ).reshape(bsz, n_out, cin * k)
    wmat = wd.reshape(cout, cin * k)
    out = cols @ wmat.T  # (bsz, n_out, cout)
    parents: tuple = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError("conv1d", x.shape, w.shape, b.shape, detail="bias")
        out = out + b.data
        parents = (x, w, b)
    out = np.ascontiguousarray(out.transpose(0, 2, 1))

    def back(g):
        gt = g.transpose(0, 2, 1)  # (bsz, n_out, cout)
        gw = (gt.reshape(-1, cout).T @ cols.reshape(-1, cin * k)).reshape(cout, cin, k)
        gcols = (gt @ wmat).reshape(bsz, n_out, cin, k)
        gx = np.zeros_like(xd)
        stop = stride * (n_out - 1) + 1
        for j in range(k):
            gx[:, :, j : j + stop : stride] += gcols[:, :, :, j].transpose(0, 2, 1)
        grads = [gx, gw]
        if b is not None:
            grads.append(gt.sum(axis=(0, 1)))
        return tuple(grads)

    return _make("conv1d", out, parents, back)
