"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine records a graph of `Node` objects on the tensors it produces
(the differentiation tape). Every backward rule is itself expressed in
terms of the differentiable operations below, so a gradient computed with
``grad(..., create_graph=True)`` is again a recorded tensor and can be
differentiated a second time. This is what lets a gradient-norm penalty
be part of a training objective.

Convolutions are lowered to patch-gather matrix products: ``im2col`` and
``col2im`` are a mutually adjoint pair of linear primitives, and both
``conv2d`` and ``conv_transpose2d`` are thin compositions over them.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Node:
    """One recorded operation: inputs, and the rule mapping the output
    cotangent to input cotangents (expressed via Tensor ops)."""

    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op, inputs, vjp):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp


class Tensor:
    """N-dimensional float64 array, optionally tracked on the tape."""

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = None

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
        return float(self.data.reshape(()))

    def detach(self):
        """A view of the same values, cut off from the tape."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; all routed through the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op, inputs, vjp):
    out = Tensor(data)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), vjp)
    return out


def zeros(shape):
    return Tensor(np.zeros(shape))


def zeros_like(t):
    return Tensor(np.zeros_like(t.data))


def ones(shape):
    return Tensor(np.ones(shape))


def ones_like(t):
    return Tensor(np.ones_like(t.data))


def _sum_to(g, shape):
    """Reduce a broadcast cotangent back to ``shape`` (differentiably)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    if g.shape != tuple(shape):
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        ga = _sum_to(g, a.shape) if a.requires_grad else None
        gb = _sum_to(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "add", (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        ga = _sum_to(g, a.shape) if a.requires_grad else None
        gb = _sum_to(neg(g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "sub", (a, b), vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        ga = _sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = _sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "mul", (a, b), vjp)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if np.any(b.data == 0.0):
        raise ValueError("division by zero")
    out = a.data / b.data

    def vjp(g):
        ga = _sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _make(out, "div", (a, b), vjp)


def neg(a):
    a = _as_tensor(a)

    def vjp(g):
        return (neg(g) if a.requires_grad else None,)

    return _make(-a.data, "neg", (a,), vjp)


def power(a, p):
    """Elementwise ``a**p`` for a scalar exponent."""
    a = _as_tensor(a)
    p = float(p)
    if p != int(p) and np.any(a.data < 0.0):
        raise ValueError("fractional power of negative value")
    out = a.data**p

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (mul(g, mul(Tensor(np.full((), p)), power(a, p - 1.0))),)

    return _make(out, "power", (a,), vjp)


def exp(a):
    a = _as_tensor(a)
    out_t = _make(np.exp(a.data), "exp", (a,), None)

    def vjp(g):
        return (mul(g, out_t) if a.requires_grad else None,)

    if out_t.node is not None:
        out_t.node.vjp = vjp
    return out_t


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log requires strictly positive input")
    out = np.log(a.data)

    def vjp(g):
        return (div(g, a) if a.requires_grad else None,)

    return _make(out, "log", (a,), vjp)


def sqrt(a):
    a = _as_tensor(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt requires non-negative input")
    out_t = _make(np.sqrt(a.data), "sqrt", (a,), None)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (div(g, mul(Tensor(np.full((), 2.0)), out_t)),)

    if out_t.node is not None:
        out_t.node.vjp = vjp
    return out_t


def tanh(a):
    a = _as_tensor(a)
    out_t = _make(np.tanh(a.data), "tanh", (a,), None)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (mul(g, sub(Tensor(np.ones(())), mul(out_t, out_t))),)

    if out_t.node is not None:
        out_t.node.vjp = vjp
    return out_t


def sigmoid(a):
    a = _as_tensor(a)
    out_t = _make(1.0 / (1.0 + np.exp(-a.data)), "sigmoid", (a,), None)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (mul(g, mul(out_t, sub(Tensor(np.ones(())), out_t))),)

    if out_t.node is not None:
        out_t.node.vjp = vjp
    return out_t


def absolute(a):
    a = _as_tensor(a)
    sign = Tensor(np.sign(a.data))

    def vjp(g):
        return (mul(g, sign) if a.requires_grad else None,)

    return _make(np.abs(a.data), "abs", (a,), vjp)


def leaky_relu(a, negative_slope=0.01):
    """x for x >= 0, negative_slope * x otherwise.

    The subgradient at 0 is taken from the positive branch.
    """
    a = _as_tensor(a)
    slope = float(negative_slope)
    mask = Tensor(np.where(a.data >= 0.0, 1.0, slope))

    def vjp(g):
        return (mul(g, mask) if a.requires_grad else None,)

    return _make(a.data * mask.data, "leaky_relu", (a,), vjp)


def relu(a):
    return leaky_relu(a, 0.0)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    in_shape = a.shape

    if axis is None:
        kept = (1,) * a.ndim
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        ax = tuple(i % a.ndim for i in ax)
        kept = tuple(1 if i in ax else s for i, s in enumerate(in_shape))

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        if g.shape != kept:
            g = reshape(g, kept)
        return (broadcast_to(g, in_shape),)

    return _make(out, "sum", (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        n = a.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for i in ax:
            n *= a.shape[i % a.ndim]
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(np.full((), 1.0 / n)))


def broadcast_to(a, shape):
    a = _as_tensor(a)
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape).copy()
    in_shape = a.shape

    def vjp(g):
        return (_sum_to(g, in_shape) if a.requires_grad else None,)

    return _make(out, "broadcast_to", (a,), vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)
    in_shape = a.shape

    def vjp(g):
        return (reshape(g, in_shape) if a.requires_grad else None,)

    return _make(out, "reshape", (a,), vjp)


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (transpose(g, inv) if a.requires_grad else None,)

    return _make(np.ascontiguousarray(a.data.transpose(axes)), "transpose", (a,), vjp)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            grads.append(narrow(g, axis, int(lo), int(hi)) if t.requires_grad else None)
        return tuple(grads)

    return _make(out, "concat", tuple(tensors), vjp)


def narrow(a, axis, start, stop):
    """Contiguous slice [start:stop) along one axis."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    in_shape = a.shape

    def vjp(g):
        return (pad_slice(g, in_shape, axis, start) if a.requires_grad else None,)

    return _make(np.ascontiguousarray(a.data[idx]), "narrow", (a,), vjp)


def pad_slice(a, shape, axis, start):
    """Embed ``a`` into a zero tensor of ``shape`` at ``start`` along ``axis``
    (the adjoint of :func:`narrow`)."""
    a = _as_tensor(a)
    shape = tuple(shape)
    out = np.zeros(shape)
    idx = [slice(None)] * len(shape)
    idx[axis] = slice(start, start + a.shape[axis])
    idx = tuple(idx)
    out[idx] = a.data
    stop = start + a.shape[axis]

    def vjp(g):
        return (narrow(g, axis, start, stop) if a.requires_grad else None,)

    return _make(out, "pad_slice", (a,), vjp)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = matmul(g, transpose(b, (1, 0))) if a.requires_grad else None
        gb = matmul(transpose(a, (1, 0)), g) if b.requires_grad else None
        return ga, gb

    return _make(out, "matmul", (a, b), vjp)


# ---------------------------------------------------------------------------
# patch gather/scatter: the linear pair underlying both convolution ops


def _conv_out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _im2col_array(x, kh, kw, stride, padding):
    n, c, h, w = x.shape
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} too large for input {h}x{w} with padding {padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    sn, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * kh * kw)


def _col2im_array(cols, chw, kh, kw, stride, padding):
    c, h, w = chw
    n = cols.shape[0]
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.zeros((n, c, hp, wp))
    cols6 = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols6[:, :, i, j]
    if padding:
        return np.ascontiguousarray(xp[:, :, padding : padding + h, padding : padding + w])
    return xp


def im2col(x, kh, kw, stride, padding):
    """Gather all kh x kw patches of an NCHW tensor into rows:
    output (N, H'*W', C*kh*kw)."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"im2col expects NCHW input, got {x.shape}")
    chw = x.shape[1:]
    out = _im2col_array(x.data, kh, kw, stride, padding)

    def vjp(g):
        return (col2im(g, chw, kh, kw, stride, padding) if x.requires_grad else None,)

    return _make(out, "im2col", (x,), vjp)


def col2im(cols, chw, kh, kw, stride, padding):
    """Scatter-add patch rows back into an NCHW tensor; adjoint of im2col."""
    cols = _as_tensor(cols)
    chw = tuple(chw)
    out = _col2im_array(cols.data, chw, kh, kw, stride, padding)

    def vjp(g):
        return (im2col(g, kh, kw, stride, padding) if cols.requires_grad else None,)

    return _make(out, "col2im", (cols,), vjp)


# ---------------------------------------------------------------------------
# network-level operations


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of an NCHW input with an (F, C, kH, kW) kernel."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D tensors, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {cw}")
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(w, kw, stride, padding)
    cols = im2col(x, kh, kw, stride, padding)  # (N, L, C*kh*kw)
    wmat = reshape(weight, (f, cw * kh * kw))
    out = matmul(reshape(cols, (n * ho * wo, cw * kh * kw)), transpose(wmat, (1, 0)))
    out = transpose(reshape(out, (n, ho * wo, f)), (0, 2, 1))
    out = reshape(out, (n, f, ho, wo))
    if bias is not None:
        bias = _as_tensor(bias)
        out = add(out, reshape(bias, (1, f, 1, 1)))
    return out


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Adjoint of conv2d: NCHW input with an (C_in, C_out, kH, kW) kernel.

    Output spatial extent is (H - 1) * stride - 2 * padding + kH. With the
    same weight array, this equals the gradient of conv2d w.r.t. its input.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-D tensors, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    cw, f, kh, kw = weight.shape
    if c != cw:
        raise ShapeError(f"conv_transpose2d channel mismatch: input has {c}, weight expects {cw}")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d output would be empty for input {h}x{w}")
    xm = reshape(transpose(x, (0, 2, 3, 1)), (n * h * w, c))
    wmat = reshape(weight, (c, f * kh * kw))
    cols = reshape(matmul(xm, wmat), (n, h * w, f * kh * kw))
    out = col2im(cols, (f, ho, wo), kh, kw, stride, padding)
    if bias is not None:
        bias = _as_tensor(bias)
        out = add(out, reshape(bias, (1, f, 1, 1)))
    return out


def instance_norm(x, gamma, beta, eps=1e-5):
    """Per-(sample, channel) normalization over the spatial axes.

    Variance uses the biased 1/(H*W) estimator.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"instance_norm affine parameters must have shape ({c},)")
    mu = mean(x, axis=(2, 3), keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=(2, 3), keepdims=True)
    xn = div(xc, sqrt(add(var, Tensor(np.full((), eps)))))
    return add(mul(xn, reshape(gamma, (1, c, 1, 1))), reshape(beta, (1, c, 1, 1)))


def l1_distance(a, b):
    """Mean absolute difference between two same-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l1_distance shape mismatch: {a.shape} vs {b.shape}")
    return mean(absolute(sub(a, b)))


def softmax_cross_entropy(logits, targets):
    """Mean softmax cross-entropy of (N, K) logits against integer targets."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N, K) logits, got {logits.shape}")
    n, k = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise ShapeError(f"expected {n} targets, got {targets.shape[0]}")
    if np.any(targets < 0) or np.any(targets >= k):
        raise ValueError(f"targets must lie in [0, {k})")
    # constant shift for numerical stability; does not change the value
    shift = Tensor(np.max(logits.data, axis=1, keepdims=True))
    z = sub(logits, broadcast_to(shift, logits.shape))
    lse = log(tsum(exp(z), axis=1, keepdims=True))
    onehot = Tensor(np.eye(k)[targets])
    picked = tsum(mul(z, onehot), axis=1, keepdims=True)
    return mean(sub(lse, picked))


# ---------------------------------------------------------------------------
# reverse pass


def _toposort(output):
    order = []
    visited = set()
    stack = [(output, False)]
    while stack:
        t, emitted = stack.pop()
        if emitted:
            order.append(t)
            continue
        if t.node is None or id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        for inp in t.node.inputs:
            if inp.node is not None and id(inp) not in visited:
                stack.append((inp, False))
    return order


def grad(output, wrt, create_graph=False):
    """Gradients of a scalar ``output`` w.r.t. each tensor in ``wrt``.

    Tensors that do not participate in the output's history receive zeros.
    With ``create_graph=True`` the backward pass is itself recorded, so the
    returned gradients can be differentiated again.
    """
    output = _as_tensor(output)
    if output.size != 1:
        raise ValueError(f"grad expects a scalar output, got shape {output.shape}")
    wrt = list(wrt)

    order = _toposort(output)

    # restrict the sweep to nodes that can reach a wrt tensor
    needed = {id(w) for w in wrt}
    for t in order:  # inputs precede consumers
        if any(id(i) in needed for i in t.node.inputs):
            needed.add(id(t))

    grads = {id(output): ones_like(output)}
    for t in reversed(order):
        g = grads.get(id(t))
        if g is None or id(t) not in needed:
            continue
        if create_graph:
            in_grads = t.node.vjp(g)
        else:
            with no_grad():
                in_grads = t.node.vjp(g)
        for inp, ig in zip(t.node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if id(inp) not in needed and inp.node is not None:
                continue
            prev = grads.get(id(inp))
            if prev is None:
                grads[id(inp)] = ig
            elif create_graph:
                grads[id(inp)] = add(prev, ig)
            else:
                with no_grad():
                    grads[id(inp)] = add(prev, ig)

    return [grads.get(id(w), zeros_like(w)) for w in wrt]
