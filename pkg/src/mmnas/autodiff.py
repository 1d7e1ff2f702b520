"""Reverse-mode automatic differentiation over dense float64 tensors.

Define-by-run tape: every operation whose inputs touch a live ``Tape``
records one node (op name, parent node ids, backward closure). A tape is
rebuilt for every forward pass and owned by a single thread; tensors are
immutable values and safe to share.

Primitives: matmul, transpose, add, subtract, elementwise multiply/divide,
relu, sigmoid, tanh, softmax over an axis, concat over an axis, mean, sum,
scalar multiply, L2 norm, log, exp, basic slicing. Elementwise ops follow
numpy broadcasting; the backward pass sum-reduces gradients over broadcast
axes. Every op validates that its output is finite and names itself in the
error when it is not.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "AutodiffError",
    "NonFiniteError",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "concat",
    "mean",
    "tsum",
    "scale",
    "l2norm",
    "log",
    "exp",
    "getitem",
    "constant",
]


class AutodiffError(ValueError):
    """Raised for structural misuse: shape mismatch, bad root, mixed tapes."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf; message names the op."""


def _asarray(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """Dense float64 value, optionally attached to a gradient tape.

    ``data`` is row-major float64; ``node_id`` is the handle into the tape
    that produced this value (None for plain constants).
    """

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None):
        self.data = _asarray(data)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("tensor literal contains NaN or Inf")
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, on_tape={self.tape is not None})"

    # operator sugar; every method delegates to the module-level primitive
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

    def __getitem__(self, key):
        return getitem(self, key)


def constant(value) -> Tensor:
    """Wrap a value as an off-tape constant (no gradient flows into it)."""
    return Tensor(value)


class _Node:
    __slots__ = ("op", "parents", "backward_fn", "shape")

    def __init__(self, op, parents, backward_fn, shape):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.shape = shape


class Gradients:
    """Result of ``Tape.backward``: node id -> gradient array.

    Leaves the root never reached get an all-zero gradient of their shape.
    """

    def __init__(self, grads: dict, tape: "Tape"):
        self._grads = grads
        self._tape = tape

    def of(self, tensor: Tensor) -> np.ndarray:
        if tensor.tape is not self._tape or tensor.node_id is None:
            raise AutodiffError("tensor is not on the tape these gradients came from")
        g = self._grads.get(tensor.node_id)
        if g is None:
            return np.zeros(tensor.data.shape, dtype=np.float64)
        return g


class Tape:
    """Ordered op recording; inputs always precede their consumers."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self):
        return len(self._nodes)

    def _record(self, op: str, parents: tuple, backward_fn, value: np.ndarray) -> Tensor:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{op}: non-finite output")
        node_id = len(self._nodes)
        self._nodes.append(_Node(op, parents, backward_fn, value.shape))
        return Tensor(value, tape=self, node_id=node_id)

    def leaf(self, value, name: str | None = None) -> Tensor:
        """Register a differentiable leaf (a parameter) on the tape."""
        arr = _asarray(value)
        return self._record(f"leaf:{name}" if name else "leaf", (), None, arr)

    def backward(self, root: Tensor) -> Gradients:
        """Accumulate d(root)/d(node) for every node reachable from root."""
        if root.tape is not self or root.node_id is None:
            raise AutodiffError("backward root is not on this tape")
        if root.data.size != 1:
            raise AutodiffError(f"backward root must be scalar, got shape {root.data.shape}")
        grads: dict[int, np.ndarray] = {
            root.node_id: np.ones(root.data.shape, dtype=np.float64)
        }
        for node_id in range(root.node_id, -1, -1):
            g = grads.get(node_id)
            if g is None:
                continue
            node = self._nodes[node_id]
            if node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                acc = grads.get(pid)
                grads[pid] = pg if acc is None else acc + pg
        return Gradients(grads, self)


def _coerce(args) -> tuple[list[Tensor], Tape | None]:
    """Wrap raw operands as constants and find the single live tape."""
    tensors = []
    tape = None
    for a in args:
        t = a if isinstance(a, Tensor) else Tensor(a)
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise AutodiffError("operands live on different tapes")
        tensors.append(t)
    return tensors, tape


def _emit(op, tape, parents, backward_fn, value) -> Tensor:
    """Record on the tape when any parent is on it, else return a constant."""
    if tape is None:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{op}: non-finite output")
        return Tensor(value)
    ids = tuple(p.node_id for p in parents if p.node_id is not None)
    on_tape = [p.node_id is not None for p in parents]

    def bwd(g):
        full = backward_fn(g)
        return [fg for fg, keep in zip(full, on_tape) if keep]

    live = tuple(i for i in ids)
    return tape._record(op, live, bwd, value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a gradient over the axes numpy broadcast during forward."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    (ta, tb), tape = _coerce((a, b))
    try:
        out = ta.data + tb.data
    except ValueError as e:
        raise AutodiffError(f"add: shape mismatch {ta.shape} + {tb.shape}") from e
    return _emit(
        "add",
        tape,
        (ta, tb),
        lambda g: (_unbroadcast(g, ta.data.shape), _unbroadcast(g, tb.data.shape)),
        out,
    )


def sub(a, b) -> Tensor:
    (ta, tb), tape = _coerce((a, b))
    try:
        out = ta.data - tb.data
    except ValueError as e:
        raise AutodiffError(f"sub: shape mismatch {ta.shape} - {tb.shape}") from e
    return _emit(
        "sub",
        tape,
        (ta, tb),
        lambda g: (_unbroadcast(g, ta.data.shape), _unbroadcast(-g, tb.data.shape)),
        out,
    )


def mul(a, b) -> Tensor:
    (ta, tb), tape = _coerce((a, b))
    try:
        out = ta.data * tb.data
    except ValueError as e:
        raise AutodiffError(f"mul: shape mismatch {ta.shape} * {tb.shape}") from e
    return _emit(
        "mul",
        tape,
        (ta, tb),
        lambda g: (
            _unbroadcast(g * tb.data, ta.data.shape),
            _unbroadcast(g * ta.data, tb.data.shape),
        ),
        out,
    )


def div(a, b) -> Tensor:
    (ta, tb), tape = _coerce((a, b))
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = ta.data / tb.data
    except ValueError as e:
        raise AutodiffError(f"div: shape mismatch {ta.shape} / {tb.shape}") from e
    return _emit(
        "div",
        tape,
        (ta, tb),
        lambda g: (
            _unbroadcast(g / tb.data, ta.data.shape),
            _unbroadcast(-g * ta.data / (tb.data * tb.data), tb.data.shape),
        ),
        out,
    )


def neg(a) -> Tensor:
    (ta,), tape = _coerce((a,))
    return _emit("neg", tape, (ta,), lambda g: (-g,), -ta.data)


def scale(a, c: float) -> Tensor:
    """Multiply by a plain python scalar (not differentiable w.r.t. c)."""
    (ta,), tape = _coerce((a,))
    c = float(c)
    return _emit("scale", tape, (ta,), lambda g: (g * c,), ta.data * c)


def matmul(a, b) -> Tensor:
    (ta, tb), tape = _coerce((a, b))
    if ta.data.ndim != 2 or tb.data.ndim != 2:
        raise AutodiffError(
            f"matmul: expects 2-D operands, got {ta.shape} @ {tb.shape}"
        )
    if ta.data.shape[1] != tb.data.shape[0]:
        raise AutodiffError(f"matmul: inner dims differ {ta.shape} @ {tb.shape}")
    out = ta.data @ tb.data
    return _emit(
        "matmul",
        tape,
        (ta, tb),
        lambda g: (g @ tb.data.T, ta.data.T @ g),
        out,
    )


def transpose(a) -> Tensor:
    (ta,), tape = _coerce((a,))
    if ta.data.ndim != 2:
        raise AutodiffError(f"transpose: expects 2-D, got {ta.shape}")
    return _emit("transpose", tape, (ta,), lambda g: (g.T,), ta.data.T.copy())


def relu(a) -> Tensor:
    (ta,), tape = _coerce((a,))
    mask = ta.data > 0.0
    return _emit("relu", tape, (ta,), lambda g: (g * mask,), ta.data * mask)


def sigmoid(a) -> Tensor:
    (ta,), tape = _coerce((a,))
    # stable in both tails
    out = np.where(
        ta.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(ta.data))),
        np.exp(-np.abs(ta.data)) / (1.0 + np.exp(-np.abs(ta.data))),
    )
    return _emit("sigmoid", tape, (ta,), lambda g: (g * out * (1.0 - out),), out)


def tanh(a) -> Tensor:
    (ta,), tape = _coerce((a,))
    out = np.tanh(ta.data)
    return _emit("tanh", tape, (ta,), lambda g: (g * (1.0 - out * out),), out)


def softmax(a, axis: int = -1) -> Tensor:
    (ta,), tape = _coerce((a,))
    if ta.data.ndim == 0:
        raise AutodiffError("softmax: scalar input has no axis")
    try:
        shifted = ta.data - np.max(ta.data, axis=axis, keepdims=True)
    except np.exceptions.AxisError as e:
        raise AutodiffError(f"softmax: invalid axis {axis} for shape {ta.shape}") from e
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _emit("softmax", tape, (ta,), bwd, out)


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise AutodiffError("concat: empty input list")
    tensors, tape = _coerce(parts)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise AutodiffError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(idx)])
        return tuple(pieces)

    return _emit("concat", tape, tuple(tensors), bwd, out)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    (ta,), tape = _coerce((a,))
    out = np.sum(ta.data, axis=axis, keepdims=keepdims)
    shape = ta.data.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _emit("sum", tape, (ta,), bwd, np.asarray(out, dtype=np.float64))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    (ta,), tape = _coerce((a,))
    out = np.mean(ta.data, axis=axis, keepdims=keepdims)
    shape = ta.data.shape
    count = ta.data.size if axis is None else shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, shape).copy(),)

    return _emit("mean", tape, (ta,), bwd, np.asarray(out, dtype=np.float64))


def l2norm(a, axis=None, keepdims: bool = False) -> Tensor:
    (ta,), tape = _coerce((a,))
    out = np.sqrt(np.sum(ta.data * ta.data, axis=axis, keepdims=keepdims))

    def bwd(g):
        n = out if keepdims or axis is None else np.expand_dims(out, axis)
        gg = g if keepdims or axis is None else np.expand_dims(g, axis)
        return (gg * ta.data / n,)

    return _emit("l2norm", tape, (ta,), bwd, np.asarray(out, dtype=np.float64))


def log(a) -> Tensor:
    (ta,), tape = _coerce((a,))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ta.data)
    return _emit("log", tape, (ta,), lambda g: (g / ta.data,), out)


def exp(a) -> Tensor:
    (ta,), tape = _coerce((a,))
    with np.errstate(over="ignore"):
        out = np.exp(ta.data)
    return _emit("exp", tape, (ta,), lambda g: (g * out,), out)


def getitem(a, key) -> Tensor:
    """Basic (non-fancy) slicing; backward scatters into a zero array."""
    (ta,), tape = _coerce((a,))
    out = ta.data[key]
    shape = ta.data.shape

    def bwd(g):
        full = np.zeros(shape, dtype=np.float64)
        full[key] = g
        return (full,)

    return _emit("slice", tape, (ta,), bwd, np.asarray(out, dtype=np.float64))
