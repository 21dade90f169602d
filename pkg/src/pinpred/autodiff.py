"""Reverse-mode automatic differentiation over a closed operator catalog.

Graphs are recorded define-by-run: every operation returns a Tensor holding
references to its parents and a closure that routes the upstream gradient
to them. `backward` walks the recorded graph once in reverse topological
order. There is no global tape, so independent graphs can live on separate
threads.

The catalog is deliberately small - exactly the operations the networks
and losses need - so every adjoint is covered by the finite-difference
check in `grad_check`. Elementwise binaries accept operands of one shape,
or a scalar on either side (that is the "scalar broadcast" in the catalog);
anything else is a shape error naming the op.

Convention: float32 is the working precision, float64 the checking
precision. Operands of mixed precision are rejected rather than promoted.
Gradients accumulate into leaf tensors until cleared, so calling backward
on two losses built from the same leaves sums their gradients.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from ._kernels.fallback import _fold_edge_pad

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def is_leaf(self):
        return not self._parents

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def _result(data, op, parents, backward_fn):
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _coerce(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_dtypes(op, *tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ValueError(f"{op}: mixed dtypes {dt} and {t.dtype}")


def _binary_mode(op, a, b):
    """'same', 'a_scalar' or 'b_scalar'; anything else is a shape error."""
    if a.shape == b.shape:
        return "same"
    if b.data.size == 1:
        return "b_scalar"
    if a.data.size == 1:
        return "a_scalar"
    raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise

def add(a, b):
    b = _coerce(b, a)
    _check_dtypes("add", a, b)
    _binary_mode("add", a, b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _reduce_to(g, b.shape))

    return _result(data, "add", (a, b), backward)


def sub(a, b):
    b = _coerce(b, a)
    _check_dtypes("sub", a, b)
    _binary_mode("sub", a, b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(g, a.shape))
        if b.requires_grad:
            _accumulate(b, -_reduce_to(g, b.shape))

    return _result(data, "sub", (a, b), backward)


def mul(a, b):
    b = _coerce(b, a)
    _check_dtypes("mul", a, b)
    _binary_mode("mul", a, b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _result(data, "mul", (a, b), backward)


def neg(a):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _result(-a.data, "neg", (a,), backward)


def relu(a):
    data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * (a.data > 0))

    return _result(data, "relu", (a,), backward)


def exp(a):
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * data)

    return _result(data, "exp", (a,), backward)


def square(a):
    data = a.data * a.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * (2 * a.data))

    return _result(data, "square", (a,), backward)


def max_const(a, c):
    """Elementwise max(a, c) for a Python constant c; gradient passes where a > c."""
    cval = float(c)
    data = np.maximum(a.data, np.asarray(cval, dtype=a.dtype))

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * (a.data > cval))

    return _result(data, "max_const", (a,), backward)


# ---------------------------------------------------------------------------
# reductions (always to a scalar)

def sum_all(a):
    data = np.asarray(a.data.sum(), dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    return _result(data, "sum", (a,), backward)


def mean_all(a):
    n = a.data.size
    data = np.asarray(a.data.mean(), dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=False))

    return _result(data, "mean", (a,), backward)


# ---------------------------------------------------------------------------
# shape ops on NCHW tensors

def _need_nchw(op, t):
    if t.data.ndim != 4:
        raise ValueError(f"{op}: expected a 4D NCHW tensor, got shape {t.shape}")


def concat_channels(tensors):
    if not tensors:
        raise ValueError("concat_channels: need at least one tensor")
    for t in tensors:
        _need_nchw("concat_channels", t)
    _check_dtypes("concat_channels", *tensors)
    base = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (base[0], base[2], base[3]):
            raise ValueError(f"concat_channels: incompatible shapes {base} and {t.shape}")
    data = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            if t.requires_grad:
                _accumulate(t, piece)

    return _result(data, "concat_channels", tuple(tensors), backward)


def slice_channels(a, start, stop):
    _need_nchw("slice_channels", a)
    if not (0 <= start < stop <= a.shape[1]):
        raise ValueError(f"slice_channels: bad range [{start}, {stop}) for {a.shape[1]} channels")
    data = np.ascontiguousarray(a.data[:, start:stop])

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[:, start:stop] = g
            _accumulate(a, buf)

    return _result(data, "slice_channels", (a,), backward)


def pad_replicate(a, pad):
    _need_nchw("pad_replicate", a)
    if pad < 1:
        raise ValueError(f"pad_replicate: pad must be >= 1, got {pad}")
    data = np.pad(a.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _fold_edge_pad(g, pad, pad))

    return _result(data, "pad_replicate", (a,), backward)


def upsample_nearest2(a):
    _need_nchw("upsample_nearest2", a)
    data = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        if a.requires_grad:
            n, c, h2, w2 = g.shape
            _accumulate(a, g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _result(data, "upsample_nearest2", (a,), backward)


# ---------------------------------------------------------------------------
# convolution

def conv2d(x, w, b=None, stride=1):
    """NCHW convolution; stride 1 keeps size (replicate pad), stride 2 halves it."""
    _need_nchw("conv2d", x)
    _need_nchw("conv2d", w)
    _check_dtypes("conv2d", x, w)
    if b is not None:
        _check_dtypes("conv2d", x, b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"conv2d: bias shape {b.shape} does not match {w.shape[0]} filters")
    data = _kernels.conv2d_forward(x.data, w.data, stride)
    if b is not None:
        data = data + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)
    kh, kw = w.shape[2], w.shape[3]

    def backward(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            _accumulate(x, _kernels.conv2d_backward_input(g, w.data, stride))
        if w.requires_grad:
            _accumulate(w, _kernels.conv2d_backward_weight(g, x.data, kh, kw, stride))
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2, 3)))

    return _result(data, "conv2d", parents, backward)


# ---------------------------------------------------------------------------
# graph traversal

def backward(loss):
    """Populate gradients of every leaf reachable from a scalar loss.

    Interior-node gradients are rebuilt from scratch on each call; leaf
    gradients accumulate until cleared by the caller.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    for node in topo:
        if not node.is_leaf():
            node.grad = np.zeros_like(node.data)
    if loss.is_leaf():
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def grad_check(builder, inputs, step=1e-5):
    """Max discrepancy between backward and central differences, float64.

    `builder` maps a list of leaf Tensors to a scalar Tensor and is called
    repeatedly while leaves are perturbed in place. Inputs may be arrays or
    existing float64 leaf Tensors (so a network's own parameters can be
    checked in place). The discrepancy is |ad - fd| / max(|ad|, |fd|, 1),
    i.e. relative for large gradients with an absolute floor for small ones.
    """
    leaves = []
    for a in inputs:
        if isinstance(a, Tensor):
            if a.dtype != np.float64 or not a.requires_grad or not a.is_leaf():
                raise ValueError("tensor inputs to grad_check must be float64 leaves requiring grad")
            a.grad = None
            leaves.append(a)
        else:
            leaves.append(Tensor(np.asarray(a, dtype=np.float64), requires_grad=True))
    loss = builder(leaves)
    backward(loss)
    # snapshot before the FD sweeps: builder may touch grads when re-called
    grads = [g.grad.copy() if g.grad is not None else np.zeros_like(g.data) for g in leaves]
    worst = 0.0
    for leaf, ad in zip(leaves, grads):
        it = np.nditer(leaf.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = leaf.data[idx]
            leaf.data[idx] = orig + step
            f_plus = builder(leaves).data.item()
            leaf.data[idx] = orig - step
            f_minus = builder(leaves).data.item()
            leaf.data[idx] = orig
            fd = (f_plus - f_minus) / (2 * step)
            err = abs(ad[idx] - fd) / max(abs(ad[idx]), abs(fd), 1.0)
            worst = max(worst, err)
    return worst
