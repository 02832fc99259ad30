"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array plus an optional backward closure; calling
``backward()`` on a scalar output walks the recorded graph in reverse
topological order and accumulates gradients into the leaf tensors that
were created with ``requires_grad=True``. Gradient accumulation follows
one deterministic order (the reverse of construction order), so repeated
runs produce bit-identical gradients.

The primitive set is deliberately small; layers compose it. Gradients of
every primitive are validated against central finite differences in the
test suite.
"""

from __future__ import annotations

import numpy as np

from .. import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        # Iterative post-order DFS; recursion would overflow on deep graphs.
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p.requires_grad or p._parents):
                    stack.append((p, False))
        flowing = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not (parent.requires_grad or parent._parents):
                    continue
                acc = flowing.get(id(parent))
                flowing[id(parent)] = pg if acc is None else acc + pg

    # operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, vjp) -> Tensor:
    needs = any(p.requires_grad or p._parents for p in parents)
    return Tensor(data, False, parents, vjp) if needs else Tensor(data)


# primitives -------------------------------------------------------------

def add(a, b):
    a, b = _t(a), _t(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def mul(a, b):
    a, b = _t(a), _t(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a, b):
    a, b = _t(a), _t(b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def matmul(a, b):
    a, b = _t(a), _t(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul is 2-D only; reshape batched operands first")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a):
    a = _t(a)
    return _make(a.data.T, (a,), lambda g: (np.asarray(g).T,))


def permute(a, axes):
    a = _t(a)
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape):
    a = _t(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (np.asarray(g).reshape(a.data.shape),))


def concat(tensors, axis=0):
    ts = [_t(x) for x in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(np.asarray(g), splits, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), vjp)


def tensor_sum(a, axis=None, keepdims=False):
    a = _t(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % a.data.ndim for ax in axes)
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(data, (a,), vjp)


def exp(a):
    a = _t(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = _t(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a, p: float):
    a = _t(a)
    p = float(p)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def sigmoid(a):
    a = _t(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a, slope: float = 0.2):
    a = _t(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def elu_plus_one(a):
    """elu(x) + 1: the positive feature map used by kernelized attention."""
    a = _t(a)
    neg = np.exp(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data + 1.0, neg)
    deriv = np.where(a.data > 0, 1.0, neg)
    return _make(out, (a,), lambda g: (g * deriv,))


def clip(a, lo: float, hi: float):
    a = _t(a)
    inside = ((a.data > lo) & (a.data < hi)).astype(np.float64)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def take_flat(a, idx):
    """Gather from the flattened input; index -1 reads a zero (padding)."""
    a = _t(a)
    idx = np.asarray(idx, dtype=np.int64)
    flat = a.data.ravel()
    safe = np.clip(idx, 0, flat.size - 1)
    data = np.where(idx >= 0, flat[safe], 0.0)

    def vjp(g):
        ga = np.zeros(a.data.size, dtype=np.float64)
        valid = idx >= 0
        np.add.at(ga, idx[valid], np.asarray(g)[valid])
        return (ga.reshape(a.data.shape),)

    return _make(data, (a,), vjp)


def conv_cols(x, kernel: int = 3):
    """Sliding-window columns for a valid convolution over (M, C, H, W).

    Returns (M*OH*OW, C*kernel*kernel) with the same column layout as an
    im2col gather; the backward pass scatters through kernel*kernel shifted
    adds instead of an indexed scatter, which is what makes it fast.
    """
    x = _t(x)
    m, c, h, w = x.data.shape
    oh, ow = h - kernel + 1, w - kernel + 1
    windows = np.empty((m, oh, ow, c, kernel, kernel), dtype=np.float64)
    for ky in range(kernel):
        for kx in range(kernel):
            windows[:, :, :, :, ky, kx] = np.transpose(
                x.data[:, :, ky:ky + oh, kx:kx + ow], (0, 2, 3, 1))
    data = windows.reshape(m * oh * ow, c * kernel * kernel)

    def vjp(g):
        g6 = np.asarray(g).reshape(m, oh, ow, c, kernel, kernel)
        gx = np.zeros_like(x.data)
        for ky in range(kernel):
            for kx in range(kernel):
                gx[:, :, ky:ky + oh, kx:kx + ow] += np.transpose(
                    g6[:, :, :, :, ky, kx], (0, 3, 1, 2))
        return (gx,)

    return _make(data, (x,), vjp)


def ring_mean(x, k: int, mask=None):
    """Mean over each node's cyclic +-k neighborhood including itself.

    Rows flagged invalid by ``mask`` are excluded from every mean and
    zeroed in the output. Backward reuses the same cyclic window kernel
    (the adjacency is symmetric).
    """
    x = _t(x)
    m = x.data.shape[0]
    maskv = np.ones(m) if mask is None else np.asarray(mask, dtype=np.float64).reshape(m)
    xm = x.data * maskv[:, None]
    s = kernels.ring_window_sum(xm, k)
    cnt = kernels.ring_window_sum(maskv[:, None], k)[:, 0]
    denom = np.where(cnt > 0, cnt, 1.0)
    out = (maskv[:, None] * s) / denom[:, None]

    def vjp(g):
        t = (np.asarray(g) * maskv[:, None]) / denom[:, None]
        return (maskv[:, None] * kernels.ring_window_sum(t, k),)

    return _make(out, (x,), vjp)


# verification harness ----------------------------------------------------

def grad_check(fn, params, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the scalar output from scratch on every call; ``params``
    are the leaf tensors to perturb. Relative error per element is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    for p in params:
        p.grad = None
    out = fn()
    out.backward()
    analytic = [
        (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params
    ]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.ravel()
        gflat = ga.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_hi = float(fn().data)
            flat[i] = orig - h
            f_lo = float(fn().data)
            flat[i] = orig
            numeric = (f_hi - f_lo) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
