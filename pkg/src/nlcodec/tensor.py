"""Dense N-D tensors with a reverse-mode automatic-differentiation tape.

Conventions, fixed package-wide:

* row-major (C-order) contiguous buffers; (channel, height, width) axis order
* float32 for training/inference, float64 reserved for gradient checking
* no implicit broadcasting except scalar-with-tensor
* tensors returned across API boundaries never alias their inputs

Recording is explicit: ops build a graph only inside a ``with record() as
tape`` block and only for outputs that depend on a ``requires_grad``
tensor. ``backward(tape, loss)`` walks the tape once in reverse recording
order (which is a topological order by construction).
"""

import math
from contextlib import contextmanager

import numpy as np
from scipy import special as _special

from .errors import ConfigError, ContractError, DomainError, InvariantError
from . import kernels

FLOAT_DTYPES = (np.float32, np.float64)

_next_id = 0
_active_tape = None


def _new_id():
    global _next_id
    _next_id += 1
    return _next_id


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tid")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.array(data, dtype=dtype, order="C")
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tid = _new_id()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        """Copy of the underlying buffer (value semantics)."""
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def tensor(data, dtype=np.float32, requires_grad=False):
    return Tensor(data, dtype=dtype, requires_grad=requires_grad)


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


class TapeNode:
    __slots__ = ("op", "out", "inputs", "fn")

    def __init__(self, op, out, inputs, fn):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.fn = fn


class Tape:
    """Ordered record of primitive operations; recording order is topological."""

    def __init__(self):
        self.nodes = []
        self.gradients = {}


@contextmanager
def record():
    global _active_tape
    if _active_tape is not None:
        raise ContractError("tape recording cannot be nested")
    tape = Tape()
    _active_tape = tape
    try:
        yield tape
    finally:
        _active_tape = None


def _wrap(arr):
    arr = np.asarray(arr)
    if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would promote 0-d to 1-d
        arr = np.ascontiguousarray(arr)
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = False
    t.grad = None
    t.tid = _new_id()
    return t


def _emit(op, out_arr, inputs, fn):
    out = _wrap(out_arr)
    tape = _active_tape
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(TapeNode(op, out, tuple(inputs), fn))
    return out


def backward(tape, loss):
    """Accumulate gradients of a scalar loss for every tensor on the tape.

    Returns a dict mapping tensor id to gradient buffer; buffers have the
    forward tensor's shape. Also populates ``.grad`` on requires_grad
    tensors reachable from the loss.
    """
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ContractError("loss must be a scalar tensor")
    produced = {n.out.tid for n in tape.nodes}
    if loss.tid not in produced:
        raise ContractError("loss was not produced on this tape")
    grads = {loss.tid: np.ones((), dtype=loss.data.dtype)}
    for node in reversed(tape.nodes):
        g = grads.get(node.out.tid)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.fn(g)):
            if gi is None or not (t.requires_grad or t.tid in produced):
                continue
            acc = grads.get(t.tid)
            grads[t.tid] = gi if acc is None else acc + gi
    tape.gradients = grads
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and t.tid in grads:
                t.grad = grads[t.tid]
    return grads


def first_nonfinite_op(tape):
    """Name of the earliest tape node whose output contains a non-finite value."""
    for node in tape.nodes:
        if not np.all(np.isfinite(node.out.data)):
            return node.op
    return None


def _check_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise InvariantError(f"mixed dtypes {dt} vs {t.data.dtype}")
    return dt


def _scalarize(other, dtype):
    if isinstance(other, (int, float)):
        return np.asarray(other, dtype=dtype)
    return None


def _binary_shapes(a, b):
    # same shape, or one side scalar (shape ())
    if a.data.shape == b.data.shape:
        return
    if a.data.shape == () or b.data.shape == ():
        return
    raise InvariantError(f"shape mismatch {a.data.shape} vs {b.data.shape} (only scalar broadcast allowed)")


def _reduce_to(g, shape):
    if shape == () and g.shape != ():
        return g.sum()
    return g


# ---------------------------------------------------------------------------
# elementwise suite

def add(a, b):
    s = _scalarize(b, a.data.dtype)
    if s is not None:
        return _emit("add", a.data + s, (a,), lambda g: [g])
    _check_dtype(a, b)
    _binary_shapes(a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: [_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)])


def sub(a, b):
    s = _scalarize(b, a.data.dtype)
    if s is not None:
        return _emit("sub", a.data - s, (a,), lambda g: [g])
    _check_dtype(a, b)
    _binary_shapes(a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: [_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)])


def mul(a, b):
    s = _scalarize(b, a.data.dtype)
    if s is not None:
        return _emit("mul", a.data * s, (a,), lambda g: [g * s])
    _check_dtype(a, b)
    _binary_shapes(a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: [_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)])


def div(a, b):
    s = _scalarize(b, a.data.dtype)
    if s is not None:
        return _emit("div", a.data / s, (a,), lambda g: [g / s])
    _check_dtype(a, b)
    _binary_shapes(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit("div", out, (a, b),
                 lambda g: [_reduce_to(g / bd, ad.shape), _reduce_to(-g * ad / (bd * bd), bd.shape)])


def relu(x):
    out = np.maximum(x.data, 0)
    mask = x.data > 0  # subgradient at 0 is 0
    return _emit("relu", out, (x,), lambda g: [g * mask])


def sigmoid(x):
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x.data))
    s = s.astype(x.data.dtype, copy=False)
    return _emit("sigmoid", s, (x,), lambda g: [g * s * (1.0 - s)])


def exp(x):
    e = np.exp(x.data)
    return _emit("exp", e, (x,), lambda g: [g * e])


def log(x):
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive input")
    return _emit("log", np.log(x.data), (x,), lambda g: [g / x.data])


def erfc(x):
    out = _special.erfc(x.data).astype(x.data.dtype, copy=False)
    xd = x.data
    c = x.data.dtype.type(2.0 / math.sqrt(math.pi))
    return _emit("erfc", out, (x,), lambda g: [-g * c * np.exp(-xd * xd)])


def clamp(x, lo, hi):
    out = np.clip(x.data, lo, hi)
    mask = (x.data > lo) & (x.data < hi)
    return _emit("clamp", out, (x,), lambda g: [g * mask])


def softmax(x, axis):
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=axis, keepdims=True)
    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return [s * (g - dot)]
    return _emit("softmax", s, (x,), bwd)


def tsum(x):
    return _emit("sum", x.data.sum(), (x,),
                 lambda g: [np.full(x.data.shape, g, dtype=x.data.dtype)])


def tmean(x):
    n = x.data.size
    return _emit("mean", x.data.mean(), (x,),
                 lambda g: [np.full(x.data.shape, g / n, dtype=x.data.dtype)])


# ---------------------------------------------------------------------------
# structure

def reshape(x, shape):
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise InvariantError(f"cannot reshape {x.data.shape} to {shape}")
    old = x.data.shape
    return _emit("reshape", x.data.reshape(shape).copy(), (x,),
                 lambda g: [g.reshape(old).copy()])


def transpose(x):
    if x.data.ndim != 2:
        raise InvariantError("transpose expects a 2-D tensor")
    return _emit("transpose", np.ascontiguousarray(x.data.T), (x,),
                 lambda g: [np.ascontiguousarray(g.T)])


def concat(tensors, axis):
    _check_dtype(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def bwd(g):
        return [np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
                for i in range(len(sizes))]
    return _emit("concat", out, tuple(tensors), bwd)


def narrow(x, axis, start, length):
    if start < 0 or start + length > x.data.shape[axis]:
        raise InvariantError("narrow out of range")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = x.data.shape
    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[idx] = g
        return [gx]
    return _emit("narrow", x.data[idx].copy(), (x,), bwd)


def pad2d(x, pad, mode="symmetric"):
    """Pad the two trailing axes of a [C,H,W] tensor by `pad` on every side."""
    if x.data.ndim != 3:
        raise InvariantError("pad2d expects [C,H,W]")
    if mode not in ("symmetric", "zero"):
        raise ConfigError(f"unknown pad mode {mode!r}")
    c, h, w = x.data.shape
    if mode == "symmetric" and (pad > h or pad > w):
        raise ContractError("symmetric pad wider than the tensor")
    np_mode = "symmetric" if mode == "symmetric" else "constant"
    out = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)), mode=np_mode)
    def bwd(g):
        if mode == "zero":
            return [np.ascontiguousarray(g[:, pad:pad + h, pad:pad + w])]
        gh = np.ascontiguousarray(g[:, pad:pad + h, :]).copy()
        if pad:
            gh[:, :pad, :] += g[:, :pad, :][:, ::-1, :]
            gh[:, h - pad:, :] += g[:, pad + h:, :][:, ::-1, :]
        gx = np.ascontiguousarray(gh[:, :, pad:pad + w]).copy()
        if pad:
            gx[:, :, :pad] += gh[:, :, :pad][:, :, ::-1]
            gx[:, :, w - pad:] += gh[:, :, pad + w:][:, :, ::-1]
        return [gx]
    return _emit("pad2d", out, (x,), bwd)


def avg_pool2(x):
    """2x2 average pooling; trailing dims must be even."""
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ContractError("avg_pool2 needs even spatial dims (pad first)")
    out = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    def bwd(g):
        q = (g * g.dtype.type(0.25))
        return [np.repeat(np.repeat(q, 2, axis=1), 2, axis=2)]
    return _emit("avg_pool2", out.astype(x.data.dtype, copy=False), (x,), bwd)


# ---------------------------------------------------------------------------
# matrix / convolution primitives

def matmul(a, b):
    _check_dtype(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise InvariantError("matmul expects 2-D tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise InvariantError(f"matmul inner dims {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data
    out = kernels.matmul_fwd(ad, bd)
    def bwd(g):
        return [kernels.matmul_fwd(g, np.ascontiguousarray(bd.T)),
                kernels.matmul_fwd(np.ascontiguousarray(ad.T), g)]
    return _emit("matmul", out, (a, b), bwd)


def _conv_checks(x, w, b, stride, k):
    if k % 2 == 0:
        raise ConfigError("convolution kernel size must be odd")
    if stride not in (1, 2):
        raise ConfigError("stride must be 1 or 2")
    if b.data.ndim != 1:
        raise InvariantError("bias must be 1-D")


def conv2d(x, w, b, stride=1, padding=None):
    """Cross-correlation over [C,H,W] with weight [C_out,C_in,k,k]."""
    _check_dtype(x, w, b)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise InvariantError("conv2d expects x[C,H,W], w[Co,Ci,k,k]")
    co, ci, k, k2 = w.data.shape
    _conv_checks(x, w, b, stride, k)
    if k != k2:
        raise InvariantError("conv2d kernel must be square")
    if x.data.shape[0] != ci:
        raise InvariantError(f"conv2d input channels {x.data.shape[0]} != weight C_in {ci}")
    if b.data.shape[0] != co:
        raise InvariantError("conv2d bias length != C_out")
    pad = (k - 1) // 2 if padding is None else padding
    if pad not in (0, (k - 1) // 2):
        raise ConfigError("padding must be 0 or (k-1)/2")
    _, h, wi = x.data.shape
    if h + 2 * pad < k or wi + 2 * pad < k:
        raise InvariantError("conv2d input smaller than kernel")
    xd, wd = x.data, w.data
    out = kernels.conv2d_fwd(xd, wd, b.data, stride, pad)
    def bwd(g):
        return [kernels.conv2d_bwd_input(g, wd, stride, pad, h, wi),
                kernels.conv2d_bwd_weight(xd, g, k, stride, pad),
                g.sum(axis=(1, 2))]
    return _emit("conv2d", out, (x, w, b), bwd)


def deconv2d(x, w, b, stride):
    """Transposed convolution, the exact adjoint of conv2d at equal stride/padding.

    Weight layout is [C_in, C_out, k, k]; output is exactly stride x input size.
    """
    _check_dtype(x, w, b)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise InvariantError("deconv2d expects x[C,H,W], w[Ci,Co,k,k]")
    ci, co, k, k2 = w.data.shape
    _conv_checks(x, w, b, stride, k)
    if k != k2:
        raise InvariantError("deconv2d kernel must be square")
    if x.data.shape[0] != ci:
        raise InvariantError(f"deconv2d input channels {x.data.shape[0]} != weight C_in {ci}")
    if b.data.shape[0] != co:
        raise InvariantError("deconv2d bias length != C_out")
    xd, wd = x.data, w.data
    out = kernels.deconv2d_fwd(xd, wd, b.data, stride)
    def bwd(g):
        return [kernels.deconv2d_bwd_input(g, wd, stride),
                kernels.deconv2d_bwd_weight(xd, g, k, stride),
                g.sum(axis=(1, 2))]
    return _emit("deconv2d", out, (x, w, b), bwd)


def causal_mask3d(k, mask_type):
    """0/1 tap mask: keep offsets lexicographically before the center, plus
    the center itself for type B."""
    if mask_type not in ("A", "B"):
        raise ConfigError(f"mask type must be 'A' or 'B', got {mask_type!r}")
    if k % 2 == 0:
        raise ConfigError("masked convolution kernel size must be odd")
    m = np.zeros((k, k, k), dtype=np.uint8)
    c = k // 2
    for dd in range(k):
        for dh in range(k):
            for dw in range(k):
                rel = (dd - c, dh - c, dw - c)
                if rel < (0, 0, 0) or (mask_type == "B" and rel == (0, 0, 0)):
                    m[dd, dh, dw] = 1
    return m


def conv3d_masked(x, w, b, mask_type):
    """Stride-1 3-D convolution over [F,D,H,W] with causal tap masking.

    Type A output at (d,h,w) depends only on inputs strictly preceding
    (d,h,w) in d-major raster order; masked taps are skipped entirely.
    """
    _check_dtype(x, w, b)
    if x.data.ndim != 4 or w.data.ndim != 5:
        raise InvariantError("conv3d_masked expects x[F,D,H,W], w[Fo,Fi,k,k,k]")
    fo, fi, k, k2, k3 = w.data.shape
    if not (k == k2 == k3):
        raise InvariantError("conv3d_masked kernel must be cubic")
    if k % 2 == 0:
        raise ConfigError("masked convolution kernel size must be odd")
    if x.data.shape[0] != fi:
        raise InvariantError(f"conv3d input features {x.data.shape[0]} != weight F_in {fi}")
    if b.data.shape[0] != fo:
        raise InvariantError("conv3d bias length != F_out")
    mask = causal_mask3d(k, mask_type)
    xd, wd = x.data, w.data
    out = kernels.conv3d_fwd(xd, wd, b.data, mask)
    def bwd(g):
        return [kernels.conv3d_bwd_input(g, wd, mask),
                kernels.conv3d_bwd_weight(xd, g, k, mask),
                g.sum(axis=(1, 2, 3))]
    return _emit("conv3d_masked", out, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# extension point for composite primitives with hand-written backward

def custom_op(name, inputs, forward_fn, backward_fn):
    """Register a primitive: forward_fn(*arrays) -> (out_array, saved);
    backward_fn(saved, g) -> list of per-input gradients (or None)."""
    out_arr, saved = forward_fn(*[t.data for t in inputs])
    return _emit(name, out_arr, tuple(inputs), lambda g: backward_fn(saved, g))
