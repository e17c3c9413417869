"""Reverse-mode automatic differentiation over numpy arrays.

Every operation records its parents and a vjp closure on the implicit tape
(the graph of `Tensor` nodes). Crucially, the vjp closures are themselves
written in terms of these primitive operations, so a backward pass executed
with ``create_graph=True`` builds a new differentiable graph - this is what
lets the gradient-penalty loss backpropagate through an input gradient.

All values are float64. Piecewise-linear ops (leaky_relu, abs) use their
almost-everywhere derivative in second-order passes.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "backward",
    "grad",
    "input_gradient",
    "concat",
    "matmul",
    "leaky_relu",
    "silu",
    "unfold1d",
    "fold1d",
    "gather_rows",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array with optional derivative tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: Tensor | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self.op = "leaf"

    # ---- construction -----------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], vjp, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    def requires_grad_(self, flag: bool = True) -> "Tensor":
        if self._vjp is not None:
            raise ValueError("only leaf tensors can change requires_grad")
        self.requires_grad = bool(flag)
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # ---- basic introspection ----------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        grad_tag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self.op}{grad_tag})"

    # ---- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        a, b = self, _as_tensor(other)
        data = a.data + b.data
        return Tensor._result(data, (a, b), lambda g: (
            _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, _as_tensor(other)
        data = a.data - b.data
        return Tensor._result(data, (a, b), lambda g: (
            _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)), "sub")

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        a, b = self, _as_tensor(other)
        data = a.data * b.data
        return Tensor._result(data, (a, b), lambda g: (
            _unbroadcast(g * b, a.data.shape), _unbroadcast(g * a, b.data.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _as_tensor(other)
        data = a.data / b.data
        out = Tensor._result(data, (a, b), None, "div")
        out._vjp = lambda g: (
            _unbroadcast(g / b, a.data.shape),
            _unbroadcast(-(g * out) / b, b.data.shape))
        return out

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only constant exponents are supported")
        a = self
        data = a.data ** p
        return Tensor._result(
            data, (a,), lambda g: (g * (p * a ** (p - 1.0)),), "pow")

    # ---- elementwise functions ----------------------------------------------

    def exp(self):
        out = Tensor._result(np.exp(self.data), (self,), None, "exp")
        out._vjp = lambda g: (g * out,)
        return out

    def log(self):
        a = self
        return Tensor._result(np.log(a.data), (a,), lambda g: (g / a,), "log")

    def sqrt(self):
        out = Tensor._result(np.sqrt(self.data), (self,), None, "sqrt")
        out._vjp = lambda g: (g / (out * 2.0),)
        return out

    def tanh(self):
        out = Tensor._result(np.tanh(self.data), (self,), None, "tanh")
        out._vjp = lambda g: (g * (1.0 - out * out),)
        return out

    def sigmoid(self):
        out = Tensor._result(1.0 / (1.0 + np.exp(-self.data)), (self,), None, "sigmoid")
        out._vjp = lambda g: (g * (out * (1.0 - out)),)
        return out

    def abs(self):
        # a.e. derivative: sign(x), with sign(0) = 0
        a = self
        sign = Tensor(np.sign(a.data))
        return Tensor._result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")

    # ---- reductions / shape ---------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = np.sum(a.data, axis=axis, keepdims=keepdims)

        def vjp(g):
            gd = g
            if not keepdims and axis is not None:
                axes = axis if isinstance(axis, tuple) else (axis,)
                shape = list(g.data.shape)
                for ax in sorted(a_mod(ax, a.data.ndim) for ax in axes):
                    shape.insert(ax, 1)
                gd = gd.reshape(tuple(shape))
            elif not keepdims and axis is None:
                gd = gd.reshape((1,) * a.data.ndim)
            return (gd.broadcast_to(a.data.shape),)

        return Tensor._result(np.asarray(data), (a,), vjp, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a_mod(ax, self.data.ndim)]
             for ax in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, shape):
        a = self
        return Tensor._result(a.data.reshape(shape), (a,),
                              lambda g: (g.reshape(a.data.shape),), "reshape")

    def swapaxes(self, a1: int, a2: int):
        a = self
        return Tensor._result(np.ascontiguousarray(a.data.swapaxes(a1, a2)), (a,),
                              lambda g: (g.swapaxes(a1, a2),), "swapaxes")

    def broadcast_to(self, shape):
        a = self
        if a.data.shape == tuple(shape):
            return a
        data = np.ascontiguousarray(np.broadcast_to(a.data, shape))
        return Tensor._result(data, (a,),
                              lambda g: (_unbroadcast(g, a.data.shape),), "broadcast")

    def narrow(self, axis: int, start: int, length: int):
        """Contiguous slice [start, start+length) along one axis."""
        a = self
        axis = a_mod(axis, a.data.ndim)
        total = a.data.shape[axis]
        if not (0 <= start and start + length <= total):
            raise ValueError(f"narrow [{start}, {start + length}) outside axis of size {total}")
        idx = tuple(slice(None) if i != axis else slice(start, start + length)
                    for i in range(a.data.ndim))
        data = np.ascontiguousarray(a.data[idx])
        return Tensor._result(
            data, (a,),
            lambda g: (g.pad_axis(axis, start, total - start - length),), "narrow")

    def pad_axis(self, axis: int, before: int, after: int):
        """Zero-pad along one axis."""
        a = self
        axis = a_mod(axis, a.data.ndim)
        width = [(0, 0)] * a.data.ndim
        width[axis] = (before, after)
        data = np.pad(a.data, width)
        length = a.data.shape[axis]
        return Tensor._result(
            data, (a,), lambda g: (g.narrow(axis, before, length),), "pad")


def a_mod(axis: int, ndim: int) -> int:
    return axis % ndim


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.data.shape == shape:
        return g
    extra = g.data.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.data.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---- n-ary / structural primitives -------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """numpy ``@`` semantics for stacks of matrices (ndim >= 2 on both sides)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires ndim >= 2 on both operands")
    data = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(matmul(g, b.swapaxes(-1, -2)), a.data.shape)
        gb = _unbroadcast(matmul(a.swapaxes(-1, -2), g), b.data.shape)
        return ga, gb

    return Tensor._result(data, (a, b), vjp, "matmul")


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    ax = a_mod(axis, tensors[0].data.ndim)
    sizes = [t.data.shape[ax] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def vjp(g):
        return tuple(g.narrow(ax, int(offsets[i]), sizes[i]) for i in range(len(tensors)))

    return Tensor._result(data, tuple(tensors), vjp, "concat")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    mask = Tensor(np.where(x.data >= 0.0, 1.0, slope))
    return Tensor._result(x.data * mask.data, (x,), lambda g: (g * mask,), "leaky_relu")


def silu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return x * x.sigmoid()


def unfold1d(x: Tensor, size: int, stride: int) -> Tensor:
    """Extract sliding frames: (B, C, L) -> (B, C*size, F), F = (L-size)//stride + 1.

    Row index is c*size + k, so frame f holds x[b, c, f*stride + k].
    """
    if x.ndim != 3:
        raise ValueError(f"unfold1d expects (B, C, L), got {x.shape}")
    b, c, length = x.data.shape
    if size > length:
        raise ValueError(f"frame size {size} exceeds length {length}")
    view = np.lib.stride_tricks.sliding_window_view(x.data, size, axis=2)
    frames = np.ascontiguousarray(view[:, :, ::stride, :].transpose(0, 1, 3, 2))
    data = frames.reshape(b, c * size, frames.shape[3])
    return Tensor._result(data, (x,),
                          lambda g: (fold1d(g, length, size, stride),), "unfold1d")


def fold1d(cols: Tensor, out_len: int, size: int, stride: int) -> Tensor:
    """Adjoint of :func:`unfold1d`: scatter-add frames back onto the time axis."""
    if cols.ndim != 3:
        raise ValueError(f"fold1d expects (B, C*size, F), got {cols.shape}")
    b, rows, f = cols.data.shape
    if rows % size != 0:
        raise ValueError(f"row count {rows} not divisible by frame size {size}")
    c = rows // size
    frames = cols.data.reshape(b, c, size, f)
    out = np.zeros((b, c, out_len))
    for k in range(size):
        out[:, :, k : k + stride * (f - 1) + 1 : stride] += frames[:, :, k, :]
    return Tensor._result(out, (cols,),
                          lambda g: (unfold1d(g, size, stride),), "fold1d")


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup table[idx] for an integer index array (embedding forward)."""
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise TypeError("gather_rows needs integer indices")
    data = table.data[idx]
    return Tensor._result(data, (table,),
                          lambda g: (_scatter_rows(g, idx, table.data.shape[0]),), "gather")


def _scatter_rows(g: Tensor, idx: np.ndarray, num_rows: int) -> Tensor:
    out = np.zeros((num_rows,) + g.data.shape[len(idx.shape):])
    np.add.at(out, idx, g.data)
    return Tensor._result(out, (g,), lambda g2: (gather_rows(g2, idx),), "scatter")


# ---- backward machinery -------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order  # parents precede consumers


def _backprop(root: Tensor, create_graph: bool) -> dict[int, Tensor]:
    if root.data.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return {}
    order = _topo_order(root)
    grads: dict[int, Tensor] = {id(root): Tensor(np.ones_like(root.data))}

    def run():
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                held = grads.get(id(parent))
                grads[id(parent)] = pg if held is None else held + pg

    if create_graph:
        run()
    else:
        with no_grad():
            run()
    return grads


def backward(loss: Tensor, create_graph: bool = False) -> None:
    """Backpropagate from a scalar loss, accumulating ``.grad`` on leaf tensors."""
    grads = _backprop(loss, create_graph)
    order = _topo_order(loss)
    for node in order:
        if node._vjp is None and node.requires_grad:
            g = grads.get(id(node))
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g


def grad(output: Tensor, inputs: list[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar output w.r.t. ``inputs`` (zeros for untouched ones)."""
    grads = _backprop(output, create_graph)
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return out


def input_gradient(f, x: Tensor) -> Tensor:
    """Gradient of scalar-valued ``f`` w.r.t. its input, kept differentiable.

    The returned tensor carries its own graph, so scalars built from it (such
    as a gradient-norm penalty) backpropagate into the parameters of ``f``.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if not x.requires_grad:
        x = Tensor(x.data, requires_grad=True)
    y = f(x)
    (gx,) = grad(y, [x], create_graph=True)
    return gx
