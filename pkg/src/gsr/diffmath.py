"""Dense 2-D reverse-mode autodiff on top of numpy, plus Adam.

Operations on :class:`DiffArray` record a backward closure on the active
:class:`Tape` whenever an input requires a gradient.  With no active tape the
same calls just compute values, which is what evaluation uses.

    >>> x = DiffArray([[3.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = mul(x, x)
    ...     tape.backward(y)
    >>> float(x.grad[0, 0])
    6.0
"""

import math
import threading

import numpy as np
import scipy.sparse as sp

from gsr import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


class DiffArray:
    """A 2-D float64 array that can take part in a gradient tape."""

    __slots__ = ("value", "grad", "requires_grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"DiffArray must be 2-D, got shape {arr.shape}")
        self.value = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def item(self):
        return float(self.value.reshape(-1)[0])

    def numpy(self):
        return self.value

    def __repr__(self):
        tag = f" node={self.node}" if self.node is not None else ""
        return f"DiffArray(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def const(value):
    if isinstance(value, DiffArray):
        return value
    return DiffArray(value)


class Tape:
    """Ordered record of differentiable operations.

    ``params`` is an optional registry of named leaves; :meth:`backward`
    accumulates into ``.grad`` of every leaf reached.
    """

    def __init__(self):
        self.records = []
        self.params = {}
        self._prev = None

    def __enter__(self):
        self._prev = _active_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        return False

    def register(self, name, param):
        self.params[name] = param
        return param

    def record(self, out, inputs, backward):
        for inp in inputs:
            if inp.node is not None and (inp.node >= len(self.records)
                                         or self.records[inp.node][0] is not inp):
                raise RuntimeError("operand was recorded on a different tape")
        out.node = len(self.records)
        out.requires_grad = True
        self.records.append((out, inputs, backward))

    def backward(self, loss, grad=None):
        if loss.node is None:
            if loss.requires_grad:
                loss.grad += np.ones_like(loss.value) if grad is None else grad
            return
        grads = {loss.node: np.ones_like(loss.value) if grad is None else np.asarray(grad, float)}
        for node in range(loss.node, -1, -1):
            g = grads.pop(node, None)
            if g is None:
                continue
            out, inputs, fn = self.records[node]
            in_grads = fn(g)
            for inp, ig in zip(inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if inp.node is None:
                    inp.grad += ig
                elif inp.node in grads:
                    grads[inp.node] = grads[inp.node] + ig
                else:
                    grads[inp.node] = ig


def _result(value, inputs, backward):
    out = DiffArray.__new__(DiffArray)
    out.value = value
    out.grad = None
    out.requires_grad = False
    out.node = None
    out.name = None
    tape = _active_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        tape.record(out, inputs, backward)
    return out


def _check(cond, op, *arrays):
    if not cond:
        shapes = ", ".join(str(a.shape) for a in arrays)
        raise ShapeError(f"{op}: incompatible shapes {shapes}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcastable(a, b):
    return all(x == y or x == 1 or y == 1 for x, y in zip(a.shape, b.shape))


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------

def add(a, b):
    """Elementwise sum; a 1×d or n×1 operand broadcasts."""
    a, b = const(a), const(b)
    _check(_broadcastable(a, b), "add", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def subtract(a, b):
    a, b = const(a), const(b)
    _check(_broadcastable(a, b), "subtract", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    """Elementwise product; a 1×d or n×1 operand broadcasts."""
    a, b = const(a), const(b)
    _check(_broadcastable(a, b), "mul", a, b)
    av, bv = a.value, b.value
    return _result(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    a, b = const(a), const(b)
    _check(_broadcastable(a, b), "div", a, b)
    av, bv = a.value, b.value
    out = av / bv
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / bv, av.shape),
                              _unbroadcast(-g * out / bv, bv.shape)))


def scale(a, c):
    a = const(a)
    c = float(c)
    return _result(a.value * c, (a,), lambda g: (g * c,))


def power(a, p):
    """Elementwise ``a ** p`` for a scalar exponent."""
    a = const(a)
    av = a.value
    p = float(p)
    return _result(av ** p, (a,), lambda g: (g * p * av ** (p - 1.0),))


def matmul(a, b):
    a, b = const(a), const(b)
    _check(a.cols == b.rows, "matmul", a, b)
    av, bv = a.value, b.value
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm(matrix, x):
    """Product of a constant scipy sparse (or dense ndarray) matrix with ``x``."""
    x = const(x)
    _check(matrix.shape[1] == x.rows, "spmm", DiffArray(np.zeros((1, 1))), x)
    mt = matrix.T.tocsr() if sp.issparse(matrix) else matrix.T
    return _result(np.asarray(matrix @ x.value), (x,), lambda g: (np.asarray(mt @ g),))


def transpose(a):
    a = const(a)
    return _result(a.value.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, rows, cols):
    """Row-major reshape."""
    a = const(a)
    shape = a.shape
    _check(rows * cols == shape[0] * shape[1], "reshape", a)
    return _result(a.value.reshape(rows, cols), (a,), lambda g: (g.reshape(shape),))


def concat_cols(*arrays):
    arrays = [const(x) for x in arrays]
    _check(len({x.rows for x in arrays}) == 1, "concat_cols", *arrays)
    widths = np.cumsum([0] + [x.cols for x in arrays])
    return _result(np.concatenate([x.value for x in arrays], axis=1), tuple(arrays),
                   lambda g: tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(arrays))))


def concat_rows(*arrays):
    arrays = [const(x) for x in arrays]
    _check(len({x.cols for x in arrays}) == 1, "concat_rows", *arrays)
    offs = np.cumsum([0] + [x.rows for x in arrays])
    return _result(np.concatenate([x.value for x in arrays], axis=0), tuple(arrays),
                   lambda g: tuple(g[offs[i]:offs[i + 1]] for i in range(len(arrays))))


def slice_rows(a, start, stop):
    a = const(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _result(a.value[start:stop], (a,), back)


def gather_rows(a, index):
    """Rows ``a[index]``; repeated indices accumulate in the backward pass."""
    a = const(a)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.rows):
        raise IndexError(f"gather_rows: index out of range for {a.rows} rows")
    rows = a.rows

    def back(g):
        full = np.zeros((rows, g.shape[1]))
        np.add.at(full, index, g)
        return (full,)

    return _result(a.value[index], (a,), back)


def scatter_add_rows(a, index, n_rows):
    """Output of ``n_rows`` rows with ``out[index[r]] += a[r]``."""
    a = const(a)
    index = np.asarray(index, dtype=np.int64)
    _check(len(index) == a.rows, "scatter_add_rows", a)
    if index.size and (index.min() < 0 or index.max() >= n_rows):
        raise IndexError(f"scatter_add_rows: index out of range for {n_rows} rows")
    out = np.zeros((n_rows, a.cols))
    np.add.at(out, index, a.value)
    return _result(out, (a,), lambda g: (g[index],))


def relu(a):
    a = const(a)
    mask = a.value > 0
    return _result(a.value * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = const(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def reduce_sum(a, axis=None):
    """Sum over everything (1×1), over rows (axis=0, 1×d) or columns (axis=1, n×1)."""
    a = const(a)
    shape = a.shape
    if axis is None:
        out = np.array([[a.value.sum()]])
    else:
        out = a.value.sum(axis=axis, keepdims=True)
    return _result(out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def reduce_mean(a, axis=None):
    a = const(a)
    count = a.value.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / count)


def segment_mean_rows(a, offsets):
    """Replace each row by the column-mean of its row segment.

    ``offsets`` are segment boundaries ``[0, ..., rows]``; used for per-graph
    statistics when several graphs share one feature matrix.
    """
    a = const(a)
    offsets = np.asarray(offsets, dtype=np.int64)
    _check(offsets[0] == 0 and offsets[-1] == a.rows, "segment_mean_rows", a)
    sizes = np.diff(offsets)
    if np.any(sizes == 0):
        raise ShapeError("segment_mean_rows: empty segment")
    sums = np.add.reduceat(a.value, offsets[:-1], axis=0)
    out = np.repeat(sums / sizes[:, None], sizes, axis=0)

    def back(g):
        gs = np.add.reduceat(g, offsets[:-1], axis=0) / sizes[:, None]
        return (np.repeat(gs, sizes, axis=0),)

    return _result(out, (a,), back)


def segment_softmax(scores, indptr):
    """Softmax of each column within each row segment ``indptr[i]:indptr[i+1]``."""
    scores = const(scores)
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    _check(indptr[-1] == scores.rows, "segment_softmax", scores)
    alpha = kernels.segment_softmax_forward(np.ascontiguousarray(scores.value), indptr)
    return _result(alpha, (scores,),
                   lambda g: (kernels.segment_softmax_backward(alpha, np.ascontiguousarray(g), indptr),))


def neighborhood_attention(q, k, v, indptr, indices, heads, edge_weight=None):
    """Fused multi-head scaled dot-product attention over CSR neighbourhoods.

    For destination row ``i`` and head ``h`` the coefficients are a softmax over
    ``indices[indptr[i]:indptr[i+1]]`` of ``q_i·k_j / sqrt(d_head)``; the output
    is ``sum_j alpha_ij * w_ij * v_j``.  ``edge_weight`` is an optional E×1
    DiffArray of per-edge message weights.  Returns ``(out, alpha)`` where
    ``alpha`` is a plain ndarray (E×heads) for inspection.
    """
    q, k, v = const(q), const(k), const(v)
    _check(q.cols == k.cols == v.cols and k.rows == v.rows, "neighborhood_attention", q, k, v)
    if q.cols % heads:
        raise ShapeError(f"neighborhood_attention: {heads} heads do not divide width {q.cols}")
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    _check(len(indptr) == q.rows + 1 and indptr[-1] == len(indices), "neighborhood_attention", q)
    if indices.size and (indices.min() < 0 or indices.max() >= k.rows):
        raise IndexError("neighborhood_attention: neighbour index out of range")
    scale_ = 1.0 / math.sqrt(q.cols // heads)
    qv = np.ascontiguousarray(q.value)
    kv = np.ascontiguousarray(k.value)
    vv = np.ascontiguousarray(v.value)
    inputs = (q, k, v)
    wv = None
    if edge_weight is not None:
        edge_weight = const(edge_weight)
        _check(edge_weight.shape == (len(indices), 1), "neighborhood_attention", edge_weight)
        wv = np.ascontiguousarray(edge_weight.value[:, 0])
        inputs = inputs + (edge_weight,)
    out, alpha = kernels.attention_forward(qv, kv, vv, indptr, indices, wv, heads, scale_)

    def back(g):
        gq, gk, gv, gw = kernels.attention_backward(
            qv, kv, vv, indptr, indices, wv, heads, scale_, alpha, np.ascontiguousarray(g))
        if wv is None:
            return gq, gk, gv
        return gq, gk, gv, gw[:, None]

    return _result(out, inputs, back), alpha


def heaviside_mask(a, threshold=0.0):
    """Constant 0/1 array ``H(a - threshold)`` with ``H(0) = 1``; no gradient."""
    a = const(a)
    return DiffArray((a.value - threshold >= 0).astype(np.float64))


def minmax_offdiag(a):
    """Min-max scale the off-diagonal entries of a square array to [0, 1].

    The diagonal is set to zero.  A constant off-diagonal yields all zeros.
    Gradients flow through the entries and through the selected min/max.
    """
    a = const(a)
    n = a.rows
    _check(a.rows == a.cols, "minmax_offdiag", a)
    off = ~np.eye(n, dtype=bool)
    if n < 2:
        return _result(np.zeros((n, n)), (a,), lambda g: (np.zeros((n, n)),))
    vals = a.value[off]
    lo_f, hi_f = int(np.argmin(vals)), int(np.argmax(vals))
    lo, hi = vals[lo_f], vals[hi_f]
    span = hi - lo
    flat = np.flatnonzero(off.reshape(-1))
    if span <= 0.0:
        return _result(np.zeros((n, n)), (a,), lambda g: (np.zeros((n, n)),))
    out = np.where(off, (a.value - lo) / span, 0.0)

    def back(g):
        g = np.where(off, g, 0.0)
        ga = g / span
        s_all = g.sum()
        s_out = (g * out).sum()
        ga_flat = ga.reshape(-1)
        # d out_ij / d lo = (out_ij - 1)/span ; d out_ij / d hi = -out_ij/span
        ga_flat[flat[lo_f]] += (s_out - s_all) / span
        ga_flat[flat[hi_f]] += -s_out / span
        return (ga_flat.reshape(n, n),)

    return _result(out, (a,), back)


def zero_diagonal(a):
    a = const(a)
    _check(a.rows == a.cols, "zero_diagonal", a)
    mask = 1.0 - np.eye(a.rows)
    return _result(a.value * mask, (a,), lambda g: (g * mask,))


def dropout(a, rate, training, rng):
    """Inverted dropout; identity when ``training`` is false or ``rate`` is 0."""
    a = const(a)
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.value * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse_loss(pred, target):
    pred, target = const(pred), const(target)
    _check(pred.shape == target.shape, "mse_loss", pred, target)
    diff = pred.value - target.value
    n = diff.size
    return _result(np.array([[np.mean(diff * diff)]]), (pred, target),
                   lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n))


def mae_loss(pred, target):
    pred, target = const(pred), const(target)
    _check(pred.shape == target.shape, "mae_loss", pred, target)
    diff = pred.value - target.value
    n = diff.size
    sgn = np.sign(diff)
    return _result(np.array([[np.mean(np.abs(diff))]]), (pred, target),
                   lambda g: (g * sgn / n, -g * sgn / n))


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment estimates and step counter for one parameter set."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update of ``params`` (name → ndarray) from ``grads``."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


class Adam:
    """Adam over a name → DiffArray parameter dict."""

    def __init__(self, params, lr=1e-3):
        self.params = params
        self.lr = lr
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        adam_step({k: p.value for k, p in self.params.items()},
                  {k: p.grad for k, p in self.params.items()}, self.state, self.lr)


def numeric_grad(fn, param, h=1e-5):
    """Central finite-difference gradient of scalar ``fn()`` w.r.t. ``param``."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn()
        flat[i] = old - h
        down = fn()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest elementwise relative error over entries with magnitude above ``floor``."""
    a = np.asarray(analytic).reshape(-1)
    b = np.asarray(numeric).reshape(-1)
    mag = np.maximum(np.abs(a), np.abs(b))
    mask = mag > floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a[mask] - b[mask]) / mag[mask]))
