"""Dense tensors with reverse-mode automatic differentiation on numpy storage.

Only the operations the operator architecture actually needs are provided;
there is no general broadcasting. Gradients accumulate by summation over all
paths. A single graph is owned by one thread.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class GraphError(Exception):
    """Raised for malformed autodiff graphs (cycles, non-scalar roots)."""


_grad_enabled = True


class no_grad:
    """Context manager disabling graph construction (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled():
    return _grad_enabled


class Tensor:
    """A dense row-major array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def assert_finite(self, what="tensor"):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {what}")
        return self

    def backward(self):
        g = build_graph(self)
        backward(g, self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    # operator sugar; scalars are treated as constants
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

    def __pow__(self, p):
        return power(self, p)


class Graph:
    """Topologically ordered operation records reachable from one root."""

    def __init__(self, nodes, leaves):
        self.nodes = nodes      # topological order, leaves first
        self.leaves = leaves    # parameter tensors (requires_grad, no parents)


def build_graph(root):
    """Iterative DFS topological sort; raises GraphError on a cycle."""
    order = []
    state = {}  # id -> 0 visiting, 1 done
    stack = [(root, iter(root._parents))]
    state[id(root)] = 0
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            s = state.get(id(parent))
            if s == 0:
                raise GraphError("cycle detected in computation graph")
            if s is None:
                state[id(parent)] = 0
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            state[id(node)] = 1
            order.append(node)
            stack.pop()
    leaves = [t for t in order if t.requires_grad and not t._parents]
    return Graph(order, leaves)


def backward(graph, loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's grad buffer."""
    if loss.size != 1:
        raise GraphError("backward requires a scalar loss")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
    # intermediate grads are not retained
    for node in graph.nodes:
        if node._parents:
            node.grad = None


def _const_like(value, ref):
    return Tensor(np.asarray(value, dtype=ref.dtype))


def _coerce(other, ref):
    if isinstance(other, Tensor):
        return other
    return _const_like(other, ref)


def _make(data, parents, backward_fn, op):
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data)
    out.requires_grad = req
    if req:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    return out


def _accum(t, g):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _reduce_to(g, shape):
    """Sum g down to `shape` (covers the scalar-vs-array cases we allow)."""
    if g.shape == tuple(shape):
        return g
    return np.sum(g) * np.ones(shape, dtype=g.dtype) if shape == () else g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    b = _coerce(b, a)
    data = a.data + b.data

    def bw(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(g, b.shape))

    return _make(data, (a, b), bw, "add")


def sub(a, b):
    b = _coerce(b, a)
    data = a.data - b.data

    def bw(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(-g, b.shape))

    return _make(data, (a, b), bw, "sub")


def mul(a, b):
    b = _coerce(b, a)
    data = a.data * b.data

    def bw(g):
        _accum(a, _reduce_to(g * b.data, a.shape))
        _accum(b, _reduce_to(g * a.data, b.shape))

    return _make(data, (a, b), bw, "mul")


def div(a, b):
    b = _coerce(b, a)
    data = a.data / b.data

    def bw(g):
        _accum(a, _reduce_to(g / b.data, a.shape))
        _accum(b, _reduce_to(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), bw, "div")


def neg(a):
    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw, "neg")


def power(a, p):
    p = float(p)
    data = a.data ** p

    def bw(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _make(data, (a,), bw, "pow")


def sqrt(a):
    data = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * 0.5 / np.maximum(data, np.finfo(data.dtype).tiny))

    return _make(data, (a,), bw, "sqrt")


# ---------------------------------------------------------------------------
# reductions and shape ops

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _axis_tuple(axis, a.ndim)
    data = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bw(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(gg, a.shape).copy())

    return _make(data, (a,), bw, "sum")


def tmean(a, axis=None, keepdims=False):
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(tsum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(a.shape))

    return _make(data, (a,), bw, "reshape")


def concat(tensors, axis=-1):
    axis = axis % tensors[0].ndim
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            _accum(t, p)

    return _make(data, tuple(tensors), bw, "concat")


# ---------------------------------------------------------------------------
# nonlinearities

def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mish(a):
    """x * tanh(softplus(x)), overflow-safe over the full dtype range."""
    sp = _softplus(a.data)
    tsp = np.tanh(sp)
    data = a.data * tsp

    def bw(g):
        sig = _sigmoid(a.data)
        _accum(a, g * (tsp + a.data * (1.0 - tsp * tsp) * sig))

    return _make(data, (a,), bw, "mish")


def softmax(a, axis):
    """Exp-normalization along `axis` with max subtraction for stability."""
    if not -a.ndim <= axis < a.ndim:
        raise IndexError(f"softmax axis {axis} out of range for rank {a.ndim}")
    ax = axis % a.ndim
    shifted = a.data - np.max(a.data, axis=ax, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=ax, keepdims=True)

    def bw(g):
        dot = np.sum(g * data, axis=ax, keepdims=True)
        _accum(a, data * (g - dot))

    return _make(data, (a,), bw, "softmax")


# ---------------------------------------------------------------------------
# channel and spatial ops

def channel_mix(v, w, b=None):
    """Per-grid-point affine map across the trailing channel axis only."""
    if v.shape[-1] != w.shape[0]:
        raise ValueError(f"channel mismatch: input {v.shape[-1]} vs weight {w.shape[0]}")
    data = np.tensordot(v.data, w.data, axes=([-1], [0]))
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ValueError("bias shape must match output channels")
        data = data + b.data

    def bw(g):
        _accum(v, np.tensordot(g, w.data.T, axes=([-1], [0])))
        lead = tuple(range(g.ndim - 1))
        _accum(w, np.tensordot(v.data, g, axes=(lead, lead)))
        if b is not None:
            _accum(b, g.sum(axis=lead))

    parents = (v, w) if b is None else (v, w, b)
    return _make(data, parents, bw, "channel_mix")


def scale_channels(y, s):
    """Multiply y[batch, *grid, c] by s[batch, c], broadcast over grid axes."""
    grid_nd = y.ndim - 2
    expand = (slice(None),) + (None,) * grid_nd + (slice(None),)
    data = y.data * s.data[expand]

    def bw(g):
        _accum(y, g * s.data[expand])
        _accum(s, np.sum(g * y.data, axis=tuple(range(1, 1 + grid_nd))))

    return _make(data, (y, s), bw, "scale_channels")


def conv2d(x, w, b, stride):
    """Valid-padding 2D convolution; x[b,H,W,ci], w[kh,kw,ci,co]."""
    kh, kw = w.shape[0], w.shape[1]
    win = sliding_window_view(x.data, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # win: (b, oh, ow, ci, kh, kw)
    data = np.einsum("bijcuv,uvco->bijo", win, w.data, optimize=True) + b.data

    def bw(g):
        _accum(w, np.einsum("bijcuv,bijo->uvco", win, g, optimize=True))
        _accum(b, g.sum(axis=(0, 1, 2)))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            oh, ow = g.shape[1], g.shape[2]
            for u in range(kh):
                for v_ in range(kw):
                    patch = np.einsum("bijo,co->bijc", g, w.data[u, v_], optimize=True)
                    gx[:, u:u + oh * stride:stride, v_:v_ + ow * stride:stride] += patch
            _accum(x, gx)

    return _make(data, (x, w, b), bw, "conv2d")


def avgpool2d(x, out_hw):
    """Average pooling of x[b,H,W,c] down to (out_h, out_w); extents must divide."""
    b, h, w_, c = x.shape
    oh, ow = out_hw
    if h % oh or w_ % ow:
        raise ValueError(f"pool target {out_hw} must divide spatial extents {(h, w_)}")
    fh, fw = h // oh, w_ // ow
    data = x.data.reshape(b, oh, fh, ow, fw, c).mean(axis=(2, 4))

    def bw(g):
        gg = g[:, :, None, :, None, :] / (fh * fw)
        _accum(x, np.broadcast_to(gg, (b, oh, fh, ow, fw, c)).reshape(x.shape))

    return _make(data, (x,), bw, "avgpool2d")


def expand_last(a, n):
    """Repeat a trailing singleton axis n times; gradient sums back."""
    if a.shape[-1] != 1:
        raise ValueError("expand_last requires a trailing axis of extent 1")
    data = np.broadcast_to(a.data, a.shape[:-1] + (n,)).copy()

    def bw(g):
        _accum(a, g.sum(axis=-1, keepdims=True))

    return _make(data, (a,), bw, "expand_last")


def index_axis(a, axis, i):
    """Select index i along `axis` (the axis is dropped)."""
    sl = [slice(None)] * a.ndim
    sl[axis] = i
    data = a.data[tuple(sl)].copy()

    def bw(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[tuple(sl)] = g
            _accum(a, buf)

    return _make(data, (a,), bw, "index_axis")


def make_op(data, parents, backward_fn, op="custom"):
    """Public hook for composite ops with hand-written backward rules."""
    return _make(data, parents, backward_fn, op)
