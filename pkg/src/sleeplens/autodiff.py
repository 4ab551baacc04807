"""Dense float64 tensors with reverse-mode automatic differentiation.

The tape is define-by-run: every operation that touches a tensor with
``requires_grad=True`` records its parents and a backward closure on the
result. ``backward(root)`` topologically sorts the recorded graph and
propagates gradients once per node. Tensors created from plain data are
constants and never accumulate gradients.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError

ACTIVATION_KINDS = ("sigmoid", "tanh", "relu")


class Tensor:
    """A dense multi-dimensional value with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"item() requires a scalar tensor, got shape {self.data.shape}")

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}{flag}, op={self._op})"

    # Operator sugar; all dispatch to the module-level ops below.
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data, parents, backward_fn, op):
    """Create an op result; prune the tape when no parent needs gradients."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class ComputeGraph:
    """Topologically ordered record of the operations reachable from a root."""

    def __init__(self, root, nodes):
        self.root = root
        self.nodes = nodes  # parents precede children

    @classmethod
    def from_root(cls, root):
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(root, order)


def backward(root):
    """Populate ``grad`` on every requires_grad tensor reachable from ``root``.

    ``root`` must be scalar. Repeated calls accumulate into existing grads;
    callers reset between optimization steps.
    """
    root = as_tensor(root)
    if root.data.size != 1:
        raise ContractError(f"backward requires a scalar root, got shape {root.data.shape}")
    if not root.requires_grad:
        return
    graph = ComputeGraph.from_root(root)
    _accumulate(root, np.ones_like(root.data))
    for node in reversed(graph.nodes):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _result(data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), bw, "mul")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product with the gradient rules d/da = g.b^T and d/db = a^T.g.

    Supports 2-D x 2-D plus the vector variants numpy.matmul allows; ``a``
    may carry one leading batch axis when ``b`` is 2-D.
    """
    a, b = as_tensor(a), as_tensor(b)
    inner_a = a.data.shape[-1] if a.ndim >= 1 else None
    inner_b = b.data.shape[-2] if b.ndim >= 2 else (b.data.shape[0] if b.ndim == 1 else None)
    if a.ndim == 0 or b.ndim == 0 or inner_a != inner_b:
        raise DimensionError(
            f"matmul: incompatible shapes {tuple(a.data.shape)} x {tuple(b.data.shape)}"
        )
    data = np.matmul(a.data, b.data)

    def bw(g):
        g = np.asarray(g)
        if b.ndim == 2:
            if a.ndim == 1:
                _accumulate(a, g @ b.data.T)
                _accumulate(b, np.outer(a.data, g))
            else:
                _accumulate(a, g @ b.data.T)
                k = a.data.shape[-1]
                n = b.data.shape[-1]
                _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
        else:  # b is 1-D
            if a.ndim == 1:
                _accumulate(a, g * b.data)
                _accumulate(b, g * a.data)
            else:
                _accumulate(a, g[..., None] * b.data)
                k = a.data.shape[-1]
                _accumulate(b, (a.data * g[..., None]).reshape(-1, k).sum(axis=0))

    return _result(data, (a, b), bw, "matmul")


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {tuple(a.data.shape)}")
    return _result(a.data.T, (a,), lambda g: _accumulate(a, g.T), "transpose")


def conv1d_dilated(x, w, dilation, bias):
    """Causal dilated convolution over the time axis.

    ``x`` is [T, C_in] (or [B, T, C_in]), ``w`` is [k, C_in, C_out], ``bias``
    is [C_out]. The input is left-padded with (k-1)*dilation zeros so
    output[t] depends only on x[t'] with t' <= t and the length is preserved.
    """
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ContractError(f"dilation must be a positive integer, got {dilation!r}")
    if w.ndim != 3:
        raise DimensionError(f"kernel must be [k, C_in, C_out], got shape {tuple(w.data.shape)}")
    if x.ndim not in (2, 3):
        raise DimensionError(f"input must be [T, C] or [B, T, C], got shape {tuple(x.data.shape)}")
    k, c_in, c_out = w.data.shape
    if k < 1:
        raise ContractError("kernel width must be >= 1")
    if x.data.shape[-1] != c_in:
        raise DimensionError(
            f"channel mismatch: input {tuple(x.data.shape)} vs kernel {tuple(w.data.shape)}"
        )
    if bias.data.shape != (c_out,):
        raise DimensionError(
            f"bias shape {tuple(bias.data.shape)} does not match C_out={c_out}"
        )

    t_len = x.data.shape[-2]
    pad = (k - 1) * dilation
    pad_width = [(0, 0)] * x.ndim
    pad_width[-2] = (pad, 0)
    xp = np.pad(x.data, pad_width)
    out = np.broadcast_to(bias.data, x.data.shape[:-1] + (c_out,)).copy()
    for j in range(k):
        out += np.matmul(xp[..., j * dilation : j * dilation + t_len, :], w.data[j])

    def bw(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(bias, g.sum(axis=reduce_axes))
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for j in range(k):
                xs = xp[..., j * dilation : j * dilation + t_len, :]
                dw[j] = np.einsum("ti,to->io", xs.reshape(-1, c_in), g.reshape(-1, c_out))
            _accumulate(w, dw)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[..., j * dilation : j * dilation + t_len, :] += np.matmul(g, w.data[j].T)
            _accumulate(x, dxp[..., pad:, :])

    return _result(out, (x, w, bias), bw, "conv1d_dilated")


# ---------------------------------------------------------------------------
# shape manipulation


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        g = np.moveaxis(g, axis, 0)
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _accumulate(t, np.moveaxis(g[lo:hi], 0, axis))

    return _result(data, tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _result(data, tuple(tensors), bw, "stack")


def getitem(a, idx):
    a = as_tensor(a)
    data = a.data[idx]

    def bw(g):
        buf = np.zeros_like(a.data)
        buf[idx] += g
        _accumulate(a, buf)

    return _result(data, (a,), bw, "getitem")


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bw(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _result(data, (a,), bw, "reshape")


# ---------------------------------------------------------------------------
# reductions


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            g_exp = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g_exp, a.data.shape).copy())

    return _result(data, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities and losses


def activation(x, kind):
    """Elementwise sigmoid / tanh / relu with the standard gradient rules."""
    x = as_tensor(x)
    if kind == "sigmoid":
        out_data = expit(x.data)  # numerically stable on both tails

        def bw(g, out_data=out_data):
            _accumulate(x, g * out_data * (1.0 - out_data))

    elif kind == "tanh":
        out_data = np.tanh(x.data)

        def bw(g, out_data=out_data):
            _accumulate(x, g * (1.0 - out_data * out_data))

    elif kind == "relu":
        out_data = np.maximum(0.0, x.data)

        def bw(g):
            _accumulate(x, g * (x.data > 0.0))

    else:
        raise ContractError(f"unknown activation kind {kind!r}, expected one of {ACTIVATION_KINDS}")
    return _result(out_data, (x,), bw, kind)


def sigmoid(x):
    return activation(x, "sigmoid")


def tanh(x):
    return activation(x, "tanh")


def relu(x):
    return activation(x, "relu")


def softmax(x, axis=-1):
    """Shift-invariant softmax along ``axis``; outputs sum to 1."""
    x = as_tensor(x)
    if x.data.shape == () or x.data.shape[axis] < 1:
        raise ContractError("softmax requires at least one element along the axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        _accumulate(x, s * (g - inner))

    return _result(s, (x,), bw, "softmax")


def cross_entropy(logits, target):
    """Negative log softmax probability of the target class.

    1-D logits with an int target give the per-instance loss; 2-D logits
    [B, n] with a length-B target vector give the batch mean. The gradient
    is softmax(logits) - onehot(target) (scaled by 1/B for the mean).
    """
    logits = as_tensor(logits)
    if logits.ndim == 1:
        n = logits.data.shape[0]
        t = int(target)
        if not 0 <= t < n:
            raise IndexError(f"target {t} out of range for {n} classes")
        m = logits.data.max()
        lse = m + np.log(np.exp(logits.data - m).sum())
        loss = lse - logits.data[t]

        def bw(g):
            p = np.exp(logits.data - lse)
            p[t] -= 1.0
            _accumulate(logits, g * p)

        return _result(loss, (logits,), bw, "cross_entropy")

    if logits.ndim == 2:
        b, n = logits.data.shape
        targets = np.asarray(target, dtype=np.int64)
        if targets.shape != (b,):
            raise DimensionError(f"targets shape {targets.shape} does not match batch {b}")
        if targets.min() < 0 or targets.max() >= n:
            raise IndexError(f"target out of range for {n} classes")
        m = logits.data.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits.data - m).sum(axis=1))
        losses = lse - logits.data[np.arange(b), targets]
        loss = losses.mean()

        def bw(g):
            p = np.exp(logits.data - lse[:, None])
            p[np.arange(b), targets] -= 1.0
            _accumulate(logits, (g / b) * p)

        return _result(loss, (logits,), bw, "cross_entropy")

    raise DimensionError(f"logits must be 1-D or 2-D, got shape {tuple(logits.data.shape)}")
