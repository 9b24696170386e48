"""Dense tensors with reverse-mode differentiation on an explicit tape.

Values are numpy arrays: float64 in gradient-check ("test") mode, float32
for training. Operations record backward closures onto the active Tape
only while one is open, so inference paths build no graph and allocate no
tape memory. Execution order is a topological order of the graph, so the
backward pass is a single reverse sweep over the tape records.
"""

import threading

import numpy as np

TRAIN_DTYPE = np.float32
TEST_DTYPE = np.float64

NEG_INF = float("-inf")


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class SequenceTooShortError(ShapeError):
    """Time axis shorter than the convolution kernel."""


_STATE = threading.local()


def _stack():
    if not hasattr(_STATE, "tapes"):
        _STATE.tapes = []
    return _STATE.tapes


def active_tape():
    """The innermost open Tape on this thread, or None."""
    tapes = _stack()
    return tapes[-1] if tapes else None


class Tensor:
    """A dense n-d float array, optionally tracked for differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(TEST_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class _Record:
    __slots__ = ("out", "fn")

    def __init__(self, out, fn):
        self.out = out
        self.fn = fn


class Tape:
    """Ordered record of primitive operations, walked once in reverse."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


def _track(out, inputs, fn):
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape.records.append(_Record(out, fn))
    return out


def _accum(t, g):
    if g.shape != t.data.shape:
        raise ShapeError(f"gradient shape {g.shape} != value shape {t.data.shape}")
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def backward(loss):
    """Accumulate gradients of `loss` into every requires_grad tensor.

    Gradients sum across reuse of a tensor. The tape is cleared afterward;
    leaf gradients survive until the caller resets them.
    """
    tape = loss.tape
    if tape is None:
        raise RuntimeError("backward() on a tensor that was not recorded on a tape")
    if loss.data.size != 1:
        raise ShapeError(f"backward() expects a scalar loss, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape.records):
        g = rec.out.grad
        if g is None:
            continue
        rec.fn(g)
    tape.records.clear()


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _unbroadcast(g, shape):
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _track(out, (a, b), fn)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _track(out, (a, b), fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _track(out, (a, b), fn)


def scale(x, c):
    """Multiply by a python constant (no gradient for the constant)."""
    c = float(c)
    out = Tensor(x.data * c)

    def fn(g):
        if x.requires_grad:
            _accum(x, g * c)

    return _track(out, (x,), fn)


def sum_all(x):
    out = Tensor(np.asarray(x.data.sum()))

    def fn(g):
        if x.requires_grad:
            _accum(x, np.full_like(x.data, float(g)))

    return _track(out, (x,), fn)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def fn(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _track(out, (a, b), fn)


def conv1d(x, kernel):
    """Valid (no padding) 1-d cross-correlation along the time axis.

    x: [T, C_in] or [B, T, C_in]; kernel: [k, C_in, C_out].
    Returns [T-k+1, C_out] or [B, T-k+1, C_out].
    """
    xd = x.data
    kd = kernel.data
    squeeze = xd.ndim == 2
    if squeeze:
        xd = xd[None]
    if xd.ndim != 3 or kd.ndim != 3 or xd.shape[2] != kd.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.data.shape} x {kernel.data.shape}")
    k = kd.shape[0]
    c_in, c_out = kd.shape[1], kd.shape[2]
    b, t_in = xd.shape[0], xd.shape[1]
    if t_in < k:
        raise SequenceTooShortError(f"conv1d: time axis {t_in} shorter than kernel {k}")
    t_out = t_in - k + 1
    # windows flattened to a single BLAS product: [B*T_out, C_in*k] @ [C_in*k, C_out]
    win = np.lib.stride_tricks.sliding_window_view(xd, k, axis=1)  # [B, T_out, C_in, k]
    win2 = np.ascontiguousarray(win).reshape(b * t_out, c_in * k)
    k2 = kd.transpose(1, 0, 2).reshape(c_in * k, c_out)
    res = (win2 @ k2).reshape(b, t_out, c_out)
    out = Tensor(res[0] if squeeze else res)

    def fn(g):
        gb = (g[None] if squeeze else g).reshape(b * t_out, c_out)
        if kernel.requires_grad:
            gk = (win2.T @ gb).reshape(c_in, k, c_out).transpose(1, 0, 2)
            _accum(kernel, np.ascontiguousarray(gk))
        if x.requires_grad:
            gx = np.zeros_like(xd)
            g3 = gb.reshape(b, t_out, c_out)
            for dk in range(k):
                gx[:, dk:dk + t_out, :] += g3 @ kd[dk].T
            _accum(x, gx[0] if squeeze else gx)

    return _track(out, (x, kernel), fn)


def max_over_time(x):
    """Columnwise maximum over the time axis; gradient goes to the first argmax.

    x: [T, C] or [B, T, C]. Returns [C] or [B, C].
    """
    xd = x.data
    squeeze = xd.ndim == 2
    if squeeze:
        xd = xd[None]
    if xd.shape[1] < 1:
        raise ShapeError("max_over_time: empty time axis")
    idx = np.argmax(xd, axis=1)  # first occurrence on ties
    res = np.take_along_axis(xd, idx[:, None, :], axis=1)[:, 0, :]
    out = Tensor(res[0] if squeeze else res)

    def fn(g):
        gb = g[None] if squeeze else g
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, idx[:, None, :], gb[:, None, :], axis=1)
        if x.requires_grad:
            _accum(x, gx[0] if squeeze else gx)

    return _track(out, (x,), fn)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    y = np.tanh(x.data)
    out = Tensor(y)

    def fn(g):
        if x.requires_grad:
            _accum(x, g * (1.0 - y * y))

    return _track(out, (x,), fn)


def sigmoid(x):
    y = _sigmoid_np(x.data)
    out = Tensor(y)

    def fn(g):
        if x.requires_grad:
            _accum(x, g * y * (1.0 - y))

    return _track(out, (x,), fn)


def relu(x):
    y = np.maximum(x.data, 0.0)
    out = Tensor(y)

    def fn(g):
        if x.requires_grad:
            _accum(x, g * (x.data > 0))

    return _track(out, (x,), fn)


_POINTWISE = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def pointwise(name, x):
    if name not in _POINTWISE:
        raise ValueError(f"unknown pointwise function {name!r}; expected one of {sorted(_POINTWISE)}")
    return _POINTWISE[name](x)


# ---------------------------------------------------------------------------
# shaping


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.data.shape}")
    out = Tensor(x.data.T)

    def fn(g):
        if x.requires_grad:
            _accum(x, g.T)

    return _track(out, (x,), fn)


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))

    def fn(g):
        if x.requires_grad:
            _accum(x, g.reshape(x.data.shape))

    return _track(out, (x,), fn)


def stack_time(tensors):
    """Stack [B, K] tensors along a new middle axis -> [B, T, K]."""
    out = Tensor(np.stack([t.data for t in tensors], axis=1))

    def fn(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, g[:, i, :])

    return _track(out, tuple(tensors), fn)


def concat(tensors, axis=-1):
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def fn(g):
        g = np.moveaxis(g, axis, 0)
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                _accum(t, np.moveaxis(g[a:b], 0, axis))

    return _track(out, tuple(tensors), fn)


def narrow(x, axis, start, length):
    """Slice [start, start+length) along `axis`."""
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(x.data[index])

    def fn(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[index] = g
            _accum(x, gx)

    return _track(out, (x,), fn)


def gather_rows(w, ids):
    """Select rows of a 2-d tensor; backward scatter-adds into the matrix."""
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= w.data.shape[0]):
        raise IndexError(f"row index out of range for matrix with {w.data.shape[0]} rows")
    out = Tensor(w.data[ids])

    def fn(g):
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            np.add.at(gw, ids, g)
            _accum(w, gw)

    return _track(out, (w,), fn)


def masked_fill(x, keep, fill):
    """Where `keep` is False, replace by `fill`; gradient flows only where kept."""
    keep = np.asarray(keep, dtype=bool)
    y = np.where(keep, x.data, x.data.dtype.type(fill))
    if y.shape != x.data.shape:
        raise ShapeError(f"masked_fill: mask shape {keep.shape} does not broadcast onto {x.data.shape}")
    out = Tensor(y)

    def fn(g):
        if x.requires_grad:
            _accum(x, g * keep)

    return _track(out, (x,), fn)


# ---------------------------------------------------------------------------
# softmax family


def softmax(x, axis=-1):
    """Numerically stabilized softmax along `axis`."""
    m = np.max(x.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all -inf row would poison exp
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def fn(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            _accum(x, y * (g - inner))

    return _track(out, (x,), fn)


def softmax_xent(logits, target):
    """Negative log softmax probability of `target` for a 1-d logit vector."""
    v = logits.data.shape[0]
    target = int(target)
    if logits.data.ndim != 1:
        raise ShapeError(f"softmax_xent expects 1-d logits, got {logits.data.shape}")
    if not 0 <= target < v:
        raise IndexError(f"target {target} out of range for {v} classes")
    m = logits.data.max()
    z = logits.data - m
    e = np.exp(z)
    s = e.sum()
    loss = np.log(s) - z[target]
    out = Tensor(np.asarray(loss))

    def fn(g):
        if logits.requires_grad:
            p = e / s
            p[target] -= 1.0
            _accum(logits, p * float(g))

    return _track(out, (logits,), fn)


def softmax_xent_rows(logits, targets):
    """Per-row negative log softmax probability: [B, V] x [B] -> [B]."""
    targets = np.asarray(targets)
    b, v = logits.data.shape
    if targets.shape != (b,):
        raise ShapeError(f"targets shape {targets.shape} != ({b},)")
    if targets.min() < 0 or targets.max() >= v:
        raise IndexError(f"target out of range for {v} classes")
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(b)
    loss = np.log(s[:, 0]) - z[rows, targets]
    out = Tensor(loss)

    def fn(g):
        if logits.requires_grad:
            p = e / s
            p[rows, targets] -= 1.0
            _accum(logits, p * g[:, None])

    return _track(out, (logits,), fn)


# ---------------------------------------------------------------------------
# attention contractions


def attn_scores(q, h):
    """Bilinear attention scores: [B, K] x [B, I, K] -> [B, I]."""
    if q.data.ndim != 2 or h.data.ndim != 3 or q.data.shape[1] != h.data.shape[2]:
        raise ShapeError(f"attn_scores: incompatible shapes {q.data.shape} x {h.data.shape}")
    out = Tensor((h.data @ q.data[:, :, None])[:, :, 0])

    def fn(g):
        if q.requires_grad:
            _accum(q, (g[:, None, :] @ h.data)[:, 0, :])
        if h.requires_grad:
            _accum(h, g[:, :, None] * q.data[:, None, :])

    return _track(out, (q, h), fn)


def attn_context(alpha, h):
    """Attention-weighted average: [B, I] x [B, I, K] -> [B, K]."""
    if alpha.data.shape != h.data.shape[:2]:
        raise ShapeError(f"attn_context: incompatible shapes {alpha.data.shape} x {h.data.shape}")
    out = Tensor((alpha.data[:, None, :] @ h.data)[:, 0, :])

    def fn(g):
        if alpha.requires_grad:
            _accum(alpha, (h.data @ g[:, :, None])[:, :, 0])
        if h.requires_grad:
            _accum(h, alpha.data[:, :, None] * g[:, None, :])

    return _track(out, (alpha, h), fn)
