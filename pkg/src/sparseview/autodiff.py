"""Reverse-mode automatic differentiation over dense numpy arrays.

A `Graph` is a tape: operations append nodes in execution order, so the
node list is always topologically sorted and `backward` is a single
reverse sweep that visits each node at most once.  Tensors are thin
wrappers around numpy arrays; constants (requires_grad=False leaves)
never enter the tape.

Broadcasting in binary elementwise ops is restricted to equal shapes or
one scalar operand (size 1); anything richer goes through an explicit
`broadcast_to`.  Training code uses float32; gradient checks build
float64 tensors and everything here is dtype-generic.
"""

import contextlib

import numpy as np

from . import _kernels as K
from .errors import ContractError, DomainError, ShapeError

DEFAULT_DTYPE = np.float32


class Node:
    __slots__ = ("op", "parents", "backward_fn", "tensor")

    def __init__(self, op, parents, backward_fn, tensor):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.tensor = tensor


class Graph:
    """Execution tape.  Use as a context manager around differentiable work."""

    _current = None

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        if Graph._current is not None:
            raise ContractError("graphs do not nest")
        Graph._current = self
        return self

    def __exit__(self, *exc):
        Graph._current = None
        return False

    def _add(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    def _leaf_id(self, tensor):
        if tensor._graph is not self:
            tensor._graph = self
            tensor.node_id = self._add(Node("leaf", (), None, tensor))
        return tensor.node_id

    def backward(self, loss):
        """Accumulate d(loss)/d(tensor) into .grad for every tracked tensor."""
        if self.consumed:
            raise ContractError("backward already ran on this graph; reset() first")
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        if loss._graph is not self or loss.node_id is None:
            raise ContractError("loss tensor is not part of this graph")
        self.consumed = True
        grads = [None] * len(self.nodes)
        grads[loss.node_id] = np.ones_like(loss.data)
        for nid in range(len(self.nodes) - 1, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            t = node.tensor
            if t is not None and t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            if node.backward_fn is None:
                continue
            contribs = node.backward_fn(g)
            for pid, pg in zip(node.parents, contribs):
                if pid < 0 or pg is None:
                    continue
                grads[pid] = pg if grads[pid] is None else grads[pid] + pg

    def reset(self):
        """Zero the grads of tracked tensors and allow another backward."""
        for node in self.nodes:
            if node.tensor is not None:
                node.tensor.grad = None
        self.consumed = False


def backward(graph, loss):
    graph.backward(loss)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_graph")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = None
        self._graph = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, requires_grad=True):
    return Tensor(np.ascontiguousarray(data), requires_grad=requires_grad)


def _const_like(value, ref):
    return Tensor(np.asarray(value, dtype=ref.dtype))


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return Tensor(arr)


def _record(op, out_data, inputs, backward_fn):
    """Wrap op output; append a tape node when gradients are being tracked."""
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if not track:
        return out
    g = Graph._current
    if g is None:
        raise ContractError(f"op '{op}' on a requires_grad tensor outside a Graph")
    parents = tuple(g._leaf_id(t) if t.requires_grad else -1 for t in inputs)
    out._graph = g
    out.node_id = g._add(Node(op, parents, backward_fn, out))
    return out


# ---------------------------------------------------------------------------
# binary elementwise


def _binary_setup(a, b, op):
    a = _as_tensor(a)
    b = _as_tensor(b, dtype=a.dtype)
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} require equal shapes or a scalar")
    return a, b


def _reduce_for(g, t):
    """Collapse gradient onto a scalar operand's shape when it broadcast."""
    if g.shape == t.shape:
        return g
    return np.sum(g).reshape(t.shape).astype(t.dtype, copy=False)


def add(a, b):
    a, b = _binary_setup(a, b, "add")
    return _record(
        "add", a.data + b.data, (a, b),
        lambda g: (_reduce_for(g, a), _reduce_for(g, b)),
    )


def sub(a, b):
    a, b = _binary_setup(a, b, "sub")
    return _record(
        "sub", a.data - b.data, (a, b),
        lambda g: (_reduce_for(g, a), -_reduce_for(g, b)),
    )


def mul(a, b):
    a, b = _binary_setup(a, b, "mul")
    return _record(
        "mul", a.data * b.data, (a, b),
        lambda g: (_reduce_for(g * b.data, a), _reduce_for(g * a.data, b)),
    )


def div(a, b):
    a, b = _binary_setup(a, b, "div")
    return _record(
        "div", a.data / b.data, (a, b),
        lambda g: (
            _reduce_for(g / b.data, a),
            _reduce_for(-g * a.data / (b.data * b.data), b),
        ),
    )


def neg(a):
    a = _as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# unary elementwise


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = _as_tensor(a)
    return _record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sin(a):
    a = _as_tensor(a)
    return _record("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = _as_tensor(a)
    return _record("cos", np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def absolute(a):
    a = _as_tensor(a)
    return _record("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = _as_tensor(a)
    pos = a.data > 0
    return _record("relu", np.where(pos, a.data, 0), (a,), lambda g: (g * pos,))


def leaky_relu(a, slope=0.2):
    a = _as_tensor(a)
    d = np.asarray(slope, dtype=a.dtype)
    pos = a.data > 0
    return _record(
        "leaky_relu", np.where(pos, a.data, d * a.data), (a,),
        lambda g: (g * np.where(pos, 1, d).astype(a.dtype),),
    )


def _sigmoid_data(x):
    s = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + s), s / (1 + s))


def sigmoid(a):
    a = _as_tensor(a)
    out = _sigmoid_data(a.data)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def softplus(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0) + np.log1p(np.exp(-np.abs(a.data)))
    return _record("softplus", out, (a,), lambda g: (g * _sigmoid_data(a.data),))


def clamp_min(a, floor):
    a = _as_tensor(a)
    f = np.asarray(floor, dtype=a.dtype)
    keep = a.data > f
    return _record("clamp_min", np.maximum(a.data, f), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    return _record(
        "reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),)
    )


def transpose(a, axes):
    a = _as_tensor(a)
    inv = tuple(np.argsort(axes))
    return _record(
        "transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,),
        lambda g: (g.transpose(inv),),
    )


def broadcast_to(a, shape):
    a = _as_tensor(a)
    old = a.shape
    out = np.broadcast_to(a.data, shape)

    def bwd(g):
        extra = g.ndim - len(old)
        axes = tuple(range(extra)) + tuple(
            i + extra for i, s in enumerate(old) if s == 1 and g.shape[i + extra] != 1
        )
        red = g.sum(axis=axes, keepdims=False) if axes else g
        return (red.reshape(old),)

    return _record("broadcast_to", out, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        outs = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(np.ascontiguousarray(g[tuple(idx)]))
        return outs

    return _record("concat", data, tuple(tensors), bwd)


def stack(tensors, axis=0):
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def crop(a, slices):
    """slices: per-axis (start, stop) pairs or None for the full axis."""
    a = _as_tensor(a)
    idx = tuple(
        slice(None) if s is None else slice(s[0], s[1]) for s in slices
    )
    shape = a.shape

    def bwd(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[idx] = g
        return (out,)

    return _record("crop", np.ascontiguousarray(a.data[idx]), (a,), bwd)


def pad(a, pad_width):
    """Zero padding; pad_width: per-axis (before, after)."""
    a = _as_tensor(a)
    idx = tuple(slice(b, b + s) for (b, _), s in zip(pad_width, a.shape))
    return _record(
        "pad", np.pad(a.data, pad_width), (a,),
        lambda g: (np.ascontiguousarray(g[idx]),),
    )


def flip(a, axes):
    a = _as_tensor(a)
    return _record(
        "flip", np.ascontiguousarray(np.flip(a.data, axes)), (a,),
        lambda g: (np.flip(g, axes),),
    )


def dilate(a, stride, axes):
    """Insert stride-1 zeros between elements along the given axes."""
    a = _as_tensor(a)
    if stride == 1:
        return _record("dilate", a.data.copy(), (a,), lambda g: (g,))
    shape = list(a.shape)
    idx = [slice(None)] * len(shape)
    for ax in axes:
        shape[ax] = (shape[ax] - 1) * stride + 1
        idx[ax] = slice(None, None, stride)
    idx = tuple(idx)
    out = np.zeros(shape, dtype=a.dtype)
    out[idx] = a.data
    return _record(
        "dilate", out, (a,), lambda g: (np.ascontiguousarray(g[idx]),)
    )


# ---------------------------------------------------------------------------
# reductions


def _unreduce(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tensor_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    shape = a.shape
    return _record(
        "sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
        lambda g: (_unreduce(g, shape, axis, keepdims).astype(a.dtype, copy=False),),
    )


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    shape = a.shape
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([shape[ax] for ax in axes]))
    out = np.sum(a.data, axis=axis, keepdims=keepdims) / np.asarray(n, dtype=a.dtype)
    return _record(
        "mean", out, (a,),
        lambda g: ((_unreduce(g, shape, axis, keepdims) / n).astype(a.dtype, copy=False),),
    )


def permsum(a, axis=0):
    """Sum along one axis in a canonical (sorted-value) order.

    Bitwise invariant to permutations of the inputs along `axis`; the
    gradient of a sum does not depend on summation order.
    """
    a = _as_tensor(a)
    shape = a.shape
    out = np.sum(np.sort(a.data, axis=axis), axis=axis)
    return _record(
        "permsum", out, (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).astype(a.dtype, copy=False),),
    )


def variance_over_axis(a, axis=0):
    """Population variance along an axis (exactly permutation invariant)."""
    a = _as_tensor(a)
    n = a.shape[axis]
    mu = permsum(a, axis=axis) * (1.0 / n)
    mu_b = broadcast_to(reshape(mu, _keep_shape(a.shape, axis)), a.shape)
    dev = sub(a, mu_b)
    return permsum(mul(dev, dev), axis=axis) * (1.0 / n)


def _keep_shape(shape, axis):
    s = list(shape)
    s[axis % len(shape)] = 1
    return tuple(s)


def cumsum(a, axis, exclusive=False):
    a = _as_tensor(a)
    if exclusive:
        inc = np.cumsum(a.data, axis=axis)
        out = np.zeros_like(inc)
        idx_to = [slice(None)] * a.data.ndim
        idx_to[axis] = slice(1, None)
        idx_from = [slice(None)] * a.data.ndim
        idx_from[axis] = slice(None, -1)
        out[tuple(idx_to)] = inc[tuple(idx_from)]

        def bwd(g):
            # d out[i] / d a[j] = 1 for j < i
            gf = np.flip(g, axis)
            acc = np.cumsum(gf, axis=axis)
            shifted = np.zeros_like(acc)
            shifted[tuple(idx_to)] = acc[tuple(idx_from)]
            return (np.ascontiguousarray(np.flip(shifted, axis)),)

        return _record("cumsum_excl", out, (a,), bwd)

    out = np.cumsum(a.data, axis=axis)
    return _record(
        "cumsum", out, (a,),
        lambda g: (np.ascontiguousarray(np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)),),
    )


def l1(a):
    """Sum of absolute values."""
    return tensor_sum(absolute(a))


def l2sq(a):
    """Sum of squares."""
    a = _as_tensor(a)
    return tensor_sum(mul(a, a))


# ---------------------------------------------------------------------------
# matmul / convolution


def matmul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-d operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ ({a.shape} @ {b.shape})")
    ad, bd = a.data, b.data
    return _record(
        "matmul", ad @ bd, (a, b),
        lambda g: (g @ bd.T, ad.T @ g),
    )


def _conv_nd_raw(x, k, stride, pad, nd):
    """Forward correlation via im2col + GEMM.  Negative pad crops first."""
    if pad < 0:
        cut = -pad
        sl = (slice(None), slice(None)) + (slice(cut, -cut),) * nd
        x = x[sl]
        pad = 0
    x = np.ascontiguousarray(x)
    k = np.ascontiguousarray(k)
    cout = k.shape[0]
    kdims = k.shape[2:]
    if nd == 2:
        col = K.im2col2d(x, kdims[0], kdims[1], stride, pad)
    else:
        col = K.im2col3d(x, kdims[0], kdims[1], kdims[2], stride, pad)
    out_sp = tuple(
        K.conv_out_size(x.shape[2 + i], kdims[i], stride, pad) for i in range(nd)
    )
    out = col @ k.reshape(cout, -1).T
    out = out.reshape((x.shape[0],) + out_sp + (cout,))
    perm = (0, nd + 1) + tuple(range(1, nd + 1))
    return np.ascontiguousarray(out.transpose(perm)), col


def _asym_pad(x, pads):
    """Per-axis (before, after) padding where negative entries crop."""
    pos = [(max(b, 0), max(a, 0)) for b, a in pads]
    if any(p != (0, 0) for p in pos):
        x = np.pad(x, pos)
    idx = tuple(
        slice(-b if b < 0 else None, a if a < 0 else None) for b, a in pads
    )
    if any(s != slice(None, None) for s in idx):
        x = x[idx]
    return x


def _conv_input_grad(g, k, in_shape, stride, pad, nd):
    """Gradient w.r.t. conv input: dilate the output grad by the stride,
    extend it by the remainder the forward stride never reached, then
    correlate with the spatially flipped, channel-swapped kernel."""
    ksz = k.shape[2]  # square kernels only
    q = ksz - 1 - pad
    shape = list(g.shape)
    idx = [slice(None)] * g.ndim
    pads = [(0, 0), (0, 0)]
    for ax in range(2, 2 + nd):
        rem = (in_shape[ax] + 2 * pad - ksz) % stride
        shape[ax] = (shape[ax] - 1) * stride + 1
        idx[ax] = slice(None, None, stride)
        pads.append((q, q + rem))
    gd = np.zeros(shape, dtype=g.dtype)
    gd[tuple(idx)] = g
    gd = _asym_pad(gd, pads)
    kq = np.ascontiguousarray(
        np.flip(k, axis=tuple(range(2, 2 + nd))).swapaxes(0, 1)
    )
    full, _ = _conv_nd_raw(gd, kq, 1, 0, nd)
    assert full.shape == in_shape
    return full


def _conv(a, k, stride, pad, nd, name):
    a = _as_tensor(a)
    k = _as_tensor(k)
    if a.data.ndim != nd + 2 or k.data.ndim != nd + 2:
        raise ShapeError(f"{name}: expected {nd + 2}-d input and kernel")
    if a.shape[1] != k.shape[1]:
        raise ShapeError(
            f"{name}: input channels {a.shape[1]} != kernel channels {k.shape[1]}"
        )
    if stride < 1:
        raise ContractError(f"{name}: stride must be >= 1")
    if pad < 0:
        raise ContractError(f"{name}: pad must be >= 0")
    for i in range(nd):
        if k.shape[2 + i] > a.shape[2 + i] + 2 * pad:
            raise ShapeError(f"{name}: kernel exceeds padded input extent")
    ad, kd = a.data, k.data
    out, col = _conv_nd_raw(ad, kd, stride, pad, nd)
    in_shape = ad.shape
    cout = kd.shape[0]

    def bwd(g):
        ga = gk = None
        if a.requires_grad:
            ga = _conv_input_grad(g, kd, in_shape, stride, pad, nd)
        if k.requires_grad:
            perm = (0,) + tuple(range(2, 2 + nd)) + (1,)
            gm = np.ascontiguousarray(g.transpose(perm)).reshape(-1, cout)
            gk = (gm.T @ col).reshape(kd.shape)
        return (ga, gk)

    return _record(name, out, (a, k), bwd)


def conv2d(a, k, stride=1, pad=0):
    """a: [N,Cin,H,W], k: [Cout,Cin,kh,kw] -> [N,Cout,H',W']."""
    return _conv(a, k, stride, pad, 2, "conv2d")


def conv3d(a, k, stride=1, pad=0):
    """a: [N,Cin,D,H,W], k: [Cout,Cin,kd,kh,kw] -> [N,Cout,D',H',W']."""
    return _conv(a, k, stride, pad, 3, "conv3d")


def conv_transpose3d(a, k, stride=2, pad=0):
    """Transposed 3-d convolution; k: [Cin,Cout,kd,kh,kw]."""
    a = _as_tensor(a)
    k = _as_tensor(k)
    ksz = k.shape[2]
    d = dilate(a, stride, axes=(2, 3, 4))
    kq = transpose(flip(k, (2, 3, 4)), (1, 0, 2, 3, 4))
    return conv3d(d, kq, stride=1, pad=ksz - 1 - pad)


# ---------------------------------------------------------------------------
# interpolation


def bilinear_sample(img, coords):
    """img: [C,H,W]; coords: [K,2] (x,y) -> (values [C,K], in-bounds mask [K]).

    Out-of-bounds coords yield 0 with mask False; differentiable w.r.t.
    both the map and the coordinates.
    """
    img = _as_tensor(img)
    coords = _as_tensor(coords, dtype=img.dtype)
    if img.data.ndim != 3 or coords.data.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError("bilinear_sample expects [C,H,W] map and [K,2] coords")
    imd = np.ascontiguousarray(img.data)
    crd = np.ascontiguousarray(coords.data.astype(img.dtype, copy=False))
    out, mask = K.bilinear_fwd(imd, crd)

    def bwd(g):
        gi, gc = K.bilinear_bwd(
            np.ascontiguousarray(g), imd, crd, img.requires_grad, coords.requires_grad
        )
        if gc is not None and gc.dtype != coords.dtype:
            gc = gc.astype(coords.dtype)
        return (gi, gc)

    return _record("bilinear_sample", out, (img, coords), bwd), mask


def trilinear_sample(vol, coords):
    """vol: [C,D,H,W]; coords: [K,3] (x,y,z) -> (values [C,K], mask [K])."""
    vol = _as_tensor(vol)
    coords = _as_tensor(coords, dtype=vol.dtype)
    if vol.data.ndim != 4 or coords.data.ndim != 2 or coords.shape[1] != 3:
        raise ShapeError("trilinear_sample expects [C,D,H,W] volume and [K,3] coords")
    vd = np.ascontiguousarray(vol.data)
    crd = np.ascontiguousarray(coords.data.astype(vol.dtype, copy=False))
    out, mask = K.trilinear_fwd(vd, crd)

    def bwd(g):
        gv, gc = K.trilinear_bwd(
            np.ascontiguousarray(g), vd, crd, vol.requires_grad, coords.requires_grad
        )
        if gc is not None and gc.dtype != coords.dtype:
            gc = gc.astype(coords.dtype)
        return (gv, gc)

    return _record("trilinear_sample", out, (vol, coords), bwd), mask
