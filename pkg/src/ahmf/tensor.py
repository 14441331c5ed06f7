"""Dense 4-d tensors with reverse-mode automatic differentiation.

Every value in the network lives in a ``Tensor``: a (batch, channels,
height, width) array of float32 (float64 in the shadow mode used for
gradient checking).  Operations executed while recording is enabled are
appended to a global tape; ``backward`` replays that tape in reverse to
fill in ``.grad`` on every leaf that requires it.  Execution order is a
valid topological order by construction, and a tape can be consumed by
``backward`` exactly once.

Forward operations are pure: they never mutate their inputs and identical
inputs produce bit-identical outputs.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand dimensions are inconsistent."""


class GraphError(RuntimeError):
    """Raised on misuse of the recorded graph (e.g. double backward)."""


class Tensor:
    """4-d array with an optional gradient slot.

    The data buffer is treated as immutable once the tensor has entered
    the graph; only the optimizer mutates parameter data, between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-d (N,C,H,W); got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Leaves start with an all-zero gradient: a parameter that never
        # enters a graph legitimately reads as zero gradient.
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        """Mark the gradient as not yet computed for the next backward."""
        self.grad = None

    def __repr__(self):
        return (
            f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, "
            f"requires_grad={self.requires_grad})"
        )

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


class _Node:
    __slots__ = ("inputs", "out", "backward_fn", "tape")

    def __init__(self, inputs, out, backward_fn, tape):
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.tape = tape


class _Tape:
    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes = []
        self.consumed = False


_tape = _Tape()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable recording (inference / finite-difference evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


_sign_trace = None


@contextmanager
def trace_activation_signs(buffer):
    """Collect the sign pattern of every PReLU input into ``buffer``.

    Finite-difference checks use this to reject perturbations that cross
    an activation kink, where difference quotients estimate nothing.
    """
    global _sign_trace
    prev = _sign_trace
    _sign_trace = buffer
    try:
        yield buffer
    finally:
        _sign_trace = prev


def _record(out, inputs, backward_fn):
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(inputs, out, backward_fn, _tape)
        out._node = node
        _tape.nodes.append(node)
    return out


def backward(loss):
    """Populate ``.grad`` with d(loss)/d(leaf) for every recorded leaf.

    The loss must be a scalar (1,1,1,1) tensor produced through the
    active tape.  The tape is consumed: a second call without building a
    new graph is rejected.  Gradients accumulate into pre-existing leaf
    gradients (which start at zero).
    """
    global _tape
    if loss.shape != (1, 1, 1, 1):
        raise GraphError(f"backward needs a scalar (1,1,1,1) loss, got {loss.shape}")
    if loss._node is None:
        raise GraphError("loss is not connected to any recorded operation")
    tape = loss._node.tape
    if tape.consumed:
        raise GraphError("backward already called for this graph")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        stored = []
        for t, dt in zip(node.inputs, node.backward_fn(g)):
            if dt is None or not t.requires_grad:
                continue
            if t._node is None:  # leaf: materialize on the tensor
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += dt
            else:
                acc = grads.get(id(t))
                if acc is None:
                    # own a private buffer: the same array object may be
                    # handed to several inputs (e.g. add returns g twice)
                    if not dt.flags.owndata or any(dt is s for s in stored):
                        dt = dt.copy()
                    grads[id(t)] = dt
                    stored.append(dt)
                else:
                    acc += dt

    tape.consumed = True
    tape.nodes.clear()
    if tape is _tape:
        _tape = _Tape()


# ---------------------------------------------------------------------------
# operations


def _same_dtype(*ts):
    d = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != d:
            raise ShapeError(
                f"mixed dtypes {d.name} vs {t.data.dtype.name}; "
                "build the whole graph in one precision"
            )
    return d


def _broadcast_pair(a, b, op):
    """Shapes must match exactly or differ only as (N,C,1,1) vs (N,C,H,W)."""
    sa, sb = a.shape, b.shape
    if sa == sb:
        return None
    if sa[:2] == sb[:2]:
        if sa[2:] == (1, 1):
            return "a"
        if sb[2:] == (1, 1):
            return "b"
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _reduce_to(g, side):
    return g.sum(axis=(2, 3), keepdims=True) if side else g


def add(a, b):
    _same_dtype(a, b)
    small = _broadcast_pair(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _reduce_to(g, small == "a"), _reduce_to(g, small == "b")

    return _record(out, (a, b), bwd)


def sub(a, b):
    _same_dtype(a, b)
    small = _broadcast_pair(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _reduce_to(g, small == "a"), _reduce_to(-g, small == "b")

    return _record(out, (a, b), bwd)


def mul(a, b):
    """Hadamard product, with (N,C,1,1) broadcasting on either side."""
    _same_dtype(a, b)
    small = _broadcast_pair(a, b, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        return _reduce_to(g * bd, small == "a"), _reduce_to(g * ad, small == "b")

    return _record(out, (a, b), bwd)


def scale(x, s):
    s = float(s)
    out = Tensor(x.data * x.data.dtype.type(s))
    return _record(out, (x,), lambda g: (g * g.dtype.type(s),))


def offset(x, c):
    c = float(c)
    out = Tensor(x.data + x.data.dtype.type(c))
    return _record(out, (x,), lambda g: (g,))


def sigmoid(x):
    xd = x.data
    out_d = np.empty_like(xd)
    pos = xd >= 0
    out_d[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out_d[~pos] = ex / (1.0 + ex)
    out = Tensor(out_d)

    def bwd(g):
        return (g * out_d * (1.0 - out_d),)

    return _record(out, (x,), bwd)


def tanh(x):
    out_d = np.tanh(x.data)
    out = Tensor(out_d)
    return _record(out, (x,), lambda g: (g * (1.0 - out_d * out_d),))


def prelu(x, slope):
    """PReLU with one trainable slope per activation site: x if x > 0 else a*x."""
    if slope.shape != (1, 1, 1, 1):
        raise ShapeError(f"prelu slope must be (1,1,1,1), got {slope.shape}")
    _same_dtype(x, slope)
    xd = x.data
    a = slope.data.reshape(())
    pos = xd > 0
    if _sign_trace is not None:
        _sign_trace.append(pos)
    out = Tensor(np.where(pos, xd, a * xd))

    def bwd(g):
        dx = np.where(pos, g, a * g)
        da = np.where(pos, 0.0, g * xd).sum(dtype=xd.dtype).reshape(1, 1, 1, 1)
        return dx, da

    return _record(out, (x, slope), bwd)


def absolute(x):
    """|x| with the sign(0) = 0 subgradient convention."""
    xd = x.data
    out = Tensor(np.abs(xd))
    return _record(out, (x,), lambda g: (g * np.sign(xd),))


def concat_channels(parts):
    parts = list(parts)
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    _same_dtype(*parts)
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(
                f"concat: N/H/W mismatch {parts[0].shape} vs {p.shape}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.shape[1] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(s) for s in np.split(g, splits, axis=1))

    return _record(out, tuple(parts), bwd)


def sum_all(x):
    out = Tensor(x.data.sum(dtype=x.data.dtype).reshape(1, 1, 1, 1))
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(g.reshape(()), shape).copy(),)

    return _record(out, (x,), bwd)


def mean_all(x):
    count = x.data.size
    out = Tensor((x.data.sum(dtype=x.data.dtype) / count).reshape(1, 1, 1, 1))
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(g.reshape(()) / count, shape).copy(),)

    return _record(out, (x,), bwd)


def global_avg_pool(x):
    """Per-(n,c) mean over spatial positions, shape (N,C,1,1)."""
    m = x.data.size // (x.shape[0] * x.shape[1])
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True, dtype=x.data.dtype))
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(g / m, shape).copy(),)

    return _record(out, (x,), bwd)


def global_var_pool(x):
    """Per-(n,c) population variance over spatial positions, shape (N,C,1,1)."""
    xd = x.data
    m = xd.size // (xd.shape[0] * xd.shape[1])
    mean = xd.mean(axis=(2, 3), keepdims=True, dtype=xd.dtype)
    out = Tensor(((xd - mean) ** 2).mean(axis=(2, 3), keepdims=True, dtype=xd.dtype))

    def bwd(g):
        return (g * (2.0 / m) * (xd - mean),)

    return _record(out, (x,), bwd)


def pixel_shuffle(x, r):
    """Rearrange (N, C*r^2, H, W) -> (N, C, rH, rW).

    out[n, c, r*h + dy, r*w + dx] = in[n, c*r^2 + dy*r + dx, h, w]
    """
    r = int(r)
    if r < 1:
        raise ShapeError(f"pixel_shuffle factor must be positive, got {r}")
    n, c, h, w = x.shape
    if c % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2={r * r}")
    out = Tensor(_ps(x.data, r))
    return _record(out, (x,), lambda g: (_ips(g, r),))


def inverse_pixel_shuffle(x, r):
    """Exact inverse of :func:`pixel_shuffle`: (N, C, rH, rW) -> (N, C*r^2, H, W)."""
    r = int(r)
    if r < 1:
        raise ShapeError(f"inverse_pixel_shuffle factor must be positive, got {r}")
    n, c, h, w = x.shape
    if h % r != 0 or w % r != 0:
        raise ShapeError(
            f"inverse_pixel_shuffle: spatial dims {h}x{w} not divisible by r={r}"
        )
    out = Tensor(_ips(x.data, r))
    return _record(out, (x,), lambda g: (_ps(g, r),))


def _ps(d, r):
    n, c, h, w = d.shape
    co = c // (r * r)
    d = d.reshape(n, co, r, r, h, w)
    return np.ascontiguousarray(d.transpose(0, 1, 4, 2, 5, 3)).reshape(
        n, co, h * r, w * r
    )


def _ips(d, r):
    n, c, h, w = d.shape
    ho, wo = h // r, w // r
    d = d.reshape(n, c, ho, r, wo, r)
    return np.ascontiguousarray(d.transpose(0, 1, 3, 5, 2, 4)).reshape(
        n, c * r * r, ho, wo
    )


def conv2d(x, weight, bias, stride=1, padding=0):
    """2-d cross-correlation (no kernel flip) with zero padding.

    weight: (Cout, Cin, k, k) with odd k; bias: (1, Cout, 1, 1).
    Output spatial size is floor((S + 2*padding - k) / stride) + 1.
    """
    _same_dtype(x, weight, bias)
    co = weight.shape[0]
    if bias.shape != (1, co, 1, 1):
        raise ShapeError(f"conv2d bias must be (1,{co},1,1), got {bias.shape}")
    stride = int(stride)
    padding = int(padding)
    xd, wd = x.data, weight.data
    out = Tensor(kernels.conv2d_forward(xd, wd, bias.data.reshape(co), stride, padding))
    in_hw = (x.shape[2], x.shape[3])
    khw = (weight.shape[2], weight.shape[3])

    def bwd(g):
        g = np.ascontiguousarray(g)
        dx = (
            kernels.conv2d_grad_input(g, wd, stride, padding, in_hw)
            if x.requires_grad
            else None
        )
        dw = (
            kernels.conv2d_grad_weight(g, xd, stride, padding, khw)
            if weight.requires_grad
            else None
        )
        db = (
            g.sum(axis=(0, 2, 3), dtype=g.dtype).reshape(1, co, 1, 1)
            if bias.requires_grad
            else None
        )
        return dx, dw, db

    return _record(out, (x, weight, bias), bwd)
