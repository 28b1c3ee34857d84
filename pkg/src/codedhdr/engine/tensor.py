"""Reverse-mode autodiff over float32 N-D arrays.

Only the operations the three reconstruction networks and their losses need
are provided: 3-D convolution (plain / strided / dilated / transposed), ReLU,
channel concatenation, frame slicing, elementwise arithmetic and full-tensor
reductions.  A Tensor wraps a numpy array plus the backward closure that
scatters its gradient to its parents; `backward()` replays the recorded ops in
reverse topological order.

Network data lives in N x C x F x H x W layout.  All values are float32;
reductions accumulate in float64 before rounding back, which keeps loss sums
stable without changing the storage contract.
"""

from dataclasses import dataclass

import numpy as np

from . import conv as _k


def _as_f32(data):
    a = np.asarray(data, dtype=np.float32)
    return a


class Tensor:
    """A node in the autodiff graph: value, optional gradient, parents."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = _as_f32(data)
        if self.data.ndim > 5:
            raise ValueError(f"tensor order {self.data.ndim} exceeds the supported 5")
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    # convenience arithmetic; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of {self.data.size} elements")
        return float(self.data.reshape(()))


def parameter(data, name):
    """Named leaf tensor that receives gradients and optimizer updates."""
    return Tensor(data, requires_grad=True, name=name)


def constant(data):
    return Tensor(data)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad or p._parents)
    if live:
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = g.astype(np.float32, copy=True) if g.dtype != np.float32 else g.copy()
    else:
        t.grad += g


def _coerce(other):
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=np.float32))


def _binary_shapes(a, b, opname):
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ValueError(f"{opname}: shape {a.data.shape} vs {b.data.shape} "
                     "(only identical shapes or scalars combine)")


def _reduce_to(g, shape):
    # undo scalar broadcasting in binary-op backward
    if g.shape == shape:
        return g
    return np.asarray(g.sum(dtype=np.float64), dtype=np.float32).reshape(shape)


def _scalar_pair(a, b):
    return a.data.ndim == 0 and b.data.ndim == 0


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "add")
    if _scalar_pair(a, b):  # single rounding keeps loss sums tight
        data = np.float32(np.float64(a.data) + np.float64(b.data))
    else:
        data = a.data + b.data

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "sub")
    if _scalar_pair(a, b):
        data = np.float32(np.float64(a.data) - np.float64(b.data))
    else:
        data = a.data - b.data

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(-g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "mul")
    if _scalar_pair(a, b):
        data = np.float32(np.float64(a.data) * np.float64(b.data))
    else:
        data = a.data * b.data

    def backward(g):
        _accum(a, _reduce_to(g * b.data, a.data.shape))
        _accum(b, _reduce_to(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def relu(x):
    x = _coerce(x)
    data = np.maximum(x.data, 0.0)

    def backward(g):
        _accum(x, g * (x.data > 0))

    return _node(data, (x,), backward)


def abs_(x):
    x = _coerce(x)
    data = np.abs(x.data)

    def backward(g):
        _accum(x, g * np.sign(x.data))

    return _node(data, (x,), backward)


def sum_all(x):
    x = _coerce(x)
    data = np.float32(x.data.sum(dtype=np.float64))

    def backward(g):
        _accum(x, np.broadcast_to(g.astype(np.float32), x.data.shape))

    return _node(data, (x,), backward)


def mean_all(x):
    x = _coerce(x)
    n = x.data.size
    data = np.float32(x.data.mean(dtype=np.float64))

    def backward(g):
        _accum(x, np.broadcast_to((g / n).astype(np.float32), x.data.shape))

    return _node(data, (x,), backward)


def concat_channels(a, b):
    """Concatenate on the channel axis; skip-connection primitive."""
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != b.data.ndim:
        raise ValueError("concat_channels: rank mismatch "
                         f"{a.data.ndim} vs {b.data.ndim}")
    for ax in range(a.data.ndim):
        if ax != 1 and a.data.shape[ax] != b.data.shape[ax]:
            raise ValueError(
                f"concat_channels: axis {ax} extent {a.data.shape[ax]} vs "
                f"{b.data.shape[ax]} (only the channel axis may differ)")
    ca = a.data.shape[1]
    data = np.concatenate((a.data, b.data), axis=1)

    def backward(g):
        _accum(a, g[:, :ca])
        _accum(b, g[:, ca:])

    return _node(data, (a, b), backward)


def slice_frames(x, start, stop):
    """Select frames [start:stop) along the F axis of an N,C,F,H,W tensor."""
    x = _coerce(x)
    if x.data.ndim != 5:
        raise ValueError("slice_frames expects a 5-D tensor")
    f = x.data.shape[2]
    if not (0 <= start < stop <= f):
        raise ValueError(f"frame slice [{start}:{stop}) out of range for f={f}")
    data = x.data[:, :, start:stop].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, :, start:stop] = g
        _accum(x, full)

    return _node(data, (x,), backward)


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one convolution layer."""
    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3, 3)
    stride: tuple = (1, 1, 1)
    dilation: tuple = (1, 1, 1)
    padding: tuple = (0, 0, 0)
    transposed: bool = False
    output_padding: tuple = (0, 0, 0)

    def __post_init__(self):
        for nm in ("kernel", "stride", "dilation"):
            if any(v < 1 for v in getattr(self, nm)):
                raise ValueError(f"ConvSpec.{nm} extents must be >= 1, got "
                                 f"{getattr(self, nm)}")
        if any(v < 0 for v in self.padding):
            raise ValueError(f"ConvSpec.padding must be >= 0, got {self.padding}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("ConvSpec channel counts must be >= 1")

    @property
    def weight_shape(self):
        if self.transposed:
            return (self.in_channels, self.out_channels) + tuple(self.kernel)
        return (self.out_channels, self.in_channels) + tuple(self.kernel)


def same_size_padding(kernel, dilation=(1, 1, 1)):
    """Padding p = d*(k-1)/2 per axis; rejects even kernels, where no integral
    same-size padding exists."""
    pads = []
    for k, d in zip(kernel, dilation):
        if k % 2 == 0:
            raise ValueError(f"same-size padding needs an odd kernel, got {k}")
        pads.append(d * (k - 1) // 2)
    return tuple(pads)


def _check_weight(spec, w):
    if tuple(w.data.shape) != spec.weight_shape:
        raise ValueError(
            f"weight shape {tuple(w.data.shape)} does not match spec "
            f"{spec.weight_shape} (out,in,kf,kh,kw)"
            if not spec.transposed else
            f"weight shape {tuple(w.data.shape)} does not match spec "
            f"{spec.weight_shape} (in,out,kf,kh,kw)")


def conv3d(x, spec, w, b=None):
    """3-D convolution per `spec`; rejects shape mismatches with an axis-level
    diagnostic before touching the kernels."""
    x, w = _coerce(x), _coerce(w)
    if spec.transposed:
        raise ValueError("conv3d called with a transposed spec; "
                         "use conv3d_transposed")
    _check_weight(spec, w)
    b = _coerce(b) if b is not None else None
    if b is not None and b.data.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {b.data.shape} != ({spec.out_channels},)")
    y, xp = _k.conv3d_forward(x.data, w.data, None if b is None else b.data,
                              spec.stride, spec.dilation, spec.padding)

    def backward(g):
        dx, dw, db = _k.conv3d_backward(
            g, xp, w.data, spec.stride, spec.dilation, spec.padding,
            x.data.shape, with_bias=b is not None)
        _accum(x, dx)
        _accum(w, dw)
        if b is not None:
            _accum(b, db)

    parents = (x, w) if b is None else (x, w, b)
    return _node(y, parents, backward)


def conv3d_transposed(x, spec, w, b=None):
    """Transposed 3-D convolution per `spec` (spec.transposed must be set)."""
    x, w = _coerce(x), _coerce(w)
    if not spec.transposed:
        raise ValueError("conv3d_transposed needs spec.transposed")
    _check_weight(spec, w)
    b = _coerce(b) if b is not None else None
    if b is not None and b.data.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {b.data.shape} != ({spec.out_channels},)")
    y = _k.convt3d_forward(x.data, w.data, None if b is None else b.data,
                           spec.stride, spec.dilation, spec.padding,
                           spec.output_padding)

    def backward(g):
        dx, dw, db = _k.convt3d_backward(
            g, x.data, w.data, spec.stride, spec.dilation, spec.padding,
            with_bias=b is not None)
        _accum(x, dx)
        _accum(w, dw)
        if b is not None:
            _accum(b, db)

    parents = (x, w) if b is None else (x, w, b)
    return _node(y, parents, backward)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, parameters=()):
    """Reverse-mode sweep from a scalar loss.

    Zeroes and then fills `.grad` on every reachable tensor; every tensor in
    `parameters` is guaranteed a gradient afterwards (zeros if disconnected).
    Returns a name -> gradient map for the named parameters.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = _toposort(loss)
    for node in order:
        node.grad = None
    for p in parameters:
        p.grad = np.zeros_like(p.data)
    loss.grad = np.ones((), np.float32)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    grads = {}
    for p in parameters:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        if p.name is not None:
            grads[p.name] = p.grad
    return grads


def kaiming_uniform(shape, fan_in, rng):
    """He-uniform init for ReLU stacks: U(-b, b), b = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
