"""Minimal dense/sparse matrix autodiff: a reverse-mode tape over numpy.

Everything is a 2-D float64 matrix. Operations executed while a Tape is
active record a backward closure; ``Tape.backward(loss)`` replays them in
reverse, accumulating gradients into ``Tensor.grad``. Gradients of
intermediate tensors are freed as soon as their producing closure has run;
leaf tensors (Parameters) keep theirs until an optimizer step clears them.

No tape active means pure evaluation: no closures, no gradient memory.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class GradientMissing(RuntimeError):
    """An optimizer step found a parameter without a gradient."""


class NumericFailure(RuntimeError):
    """A non-finite value appeared where the contract forbids it."""


class Tensor:
    """Dense row-major float64 matrix with an optional gradient buffer."""

    __slots__ = ("values", "grad")

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D matrices, got ndim={arr.ndim}")
        self.values = arr
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        if self.values.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.values.shape})"


class Parameter(Tensor):
    """A named, learnable tensor; ``regularized`` opts it into L2 penalties."""

    __slots__ = ("name", "regularized")

    def __init__(self, name, values, regularized=False):
        super().__init__(values)
        self.name = name
        self.regularized = regularized

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.values.shape})"


class SparseMatrix:
    """COO-format sparse matrix, entries sorted by (row, col), no duplicates."""

    __slots__ = ("shape", "rows", "cols", "vals")

    def __init__(self, shape, rows, cols, vals):
        self.shape = (int(shape[0]), int(shape[1]))
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ShapeError("rows, cols and vals must be equal-length 1-D arrays")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.shape[0]:
                raise ShapeError("sparse row index out of range")
            if cols.min() < 0 or cols.max() >= self.shape[1]:
                raise ShapeError("sparse col index out of range")
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            keys = rows * self.shape[1] + cols
            if np.any(np.diff(keys) == 0):
                raise ShapeError("duplicate coordinate in sparse matrix")
        self.rows, self.cols, self.vals = rows, cols, vals

    @property
    def nnz(self):
        return self.rows.size

    def densify(self):
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.vals
        return out


# ---------------------------------------------------------------------------
# tape machinery


_ACTIVE_TAPE = None


class Tape:
    """Records backward closures for one forward pass."""

    def __init__(self):
        self._steps = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, fn):
        self._steps.append(fn)

    def backward(self, loss):
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got {loss.shape}")
        loss.grad = np.ones((1, 1))
        for fn in reversed(self._steps):
            fn()
        self._steps = []


def _tape():
    return _ACTIVE_TAPE


def _acc(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _record(out, fn):
    """Register a backward closure that frees out.grad once consumed."""
    tp = _tape()
    if tp is None:
        return

    def step():
        if out.grad is not None:
            fn(out.grad)
            if not isinstance(out, Parameter):
                out.grad = None

    tp.record(step)


# ---------------------------------------------------------------------------
# elementwise / linear ops


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    out = Tensor(a.values @ b.values)

    def bw(g):
        _acc(a, g @ b.values.T)
        _acc(b, a.values.T @ g)

    _record(out, bw)
    return out


def sparse_dense_matmul(s, d, transpose=False):
    """S @ D (or S^T @ D with transpose=True) without densifying S.

    The sparse operand is structural and receives no gradient.
    """
    inner = s.shape[0] if transpose else s.shape[1]
    if inner != d.shape[0]:
        raise ShapeError(
            f"sparse_dense_matmul: inner dims differ, sparse {s.shape}"
            f"{'^T' if transpose else ''} x dense {d.shape}")
    n_out = s.shape[1] if transpose else s.shape[0]
    out_idx = s.cols if transpose else s.rows
    in_idx = s.rows if transpose else s.cols
    res = np.zeros((n_out, d.shape[1]))
    np.add.at(res, out_idx, s.vals[:, None] * d.values[in_idx])
    out = Tensor(res)

    def bw(g):
        if d.grad is None:
            d.grad = np.zeros_like(d.values)
        np.add.at(d.grad, in_idx, s.vals[:, None] * g[out_idx])

    _record(out, bw)
    return out


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    out = Tensor(a.values + b.values)

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    _record(out, bw)
    return out


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes differ, {a.shape} vs {b.shape}")
    out = Tensor(a.values - b.values)

    def bw(g):
        _acc(a, g)
        _acc(b, -g)

    _record(out, bw)
    return out


def mul(a, b):
    """Elementwise product; also accepts a column (n,1) against (n,m)."""
    if a.shape != b.shape:
        if a.shape == (b.shape[0], 1):
            a, b = b, a  # normalize: broadcast operand second
        if not (b.shape == (a.shape[0], 1)):
            raise ShapeError(f"mul: shapes differ, {a.shape} vs {b.shape}")
    out = Tensor(a.values * b.values)

    def bw(g):
        ga = g * b.values
        gb = g * a.values
        if b.shape != a.shape:
            gb = gb.sum(axis=1, keepdims=True)
        _acc(a, ga)
        _acc(b, gb)

    _record(out, bw)
    return out


def scale(a, c):
    c = float(c)
    out = Tensor(a.values * c)

    def bw(g):
        _acc(a, g * c)

    _record(out, bw)
    return out


def row_sum(a):
    out = Tensor(a.values.sum(axis=1, keepdims=True))

    def bw(g):
        _acc(a, np.broadcast_to(g, a.shape).copy())

    _record(out, bw)
    return out


def sum_all(a):
    out = Tensor([[a.values.sum()]])

    def bw(g):
        _acc(a, np.full_like(a.values, g[0, 0]))

    _record(out, bw)
    return out


def sum_squares(a):
    out = Tensor([[float(np.square(a.values).sum())]])

    def bw(g):
        _acc(a, (2.0 * g[0, 0]) * a.values)

    _record(out, bw)
    return out


def gather_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("gather_rows: index out of range")
    out = Tensor(a.values[idx])

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.values)
        np.add.at(a.grad, idx, g)

    _record(out, bw)
    return out


def slice_cols(a, start, stop):
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(
            f"slice_cols [{start}:{stop}] out of range for {a.shape}")
    out = Tensor(a.values[:, start:stop].copy())

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.values)
        a.grad[:, start:stop] += g

    _record(out, bw)
    return out


def scatter_add_rows(a, idx, num_rows):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (a.shape[0],):
        raise ShapeError("scatter_add_rows: one index per input row required")
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise ShapeError("scatter_add_rows: index out of range")
    res = np.zeros((num_rows, a.shape[1]))
    np.add.at(res, idx, a.values)
    out = Tensor(res)

    def bw(g):
        _acc(a, g[idx])

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# block-diagonal weights


def block_matmul(x, q, num_blocks):
    """x @ diag(Q_1..Q_B) where q stacks the blocks vertically.

    q has shape (B*din_b, dout_b); the result is (n, B*dout_b). Equal to a
    dense product with the assembled block-diagonal matrix, without ever
    materializing its zeros.
    """
    xb = _split_blocks(x.shape[1], q.shape, num_blocks)
    din_b, dout_b = xb
    res = _block_forward(x.values, q.values, num_blocks, din_b, dout_b)
    out = Tensor(res)

    def bw(g):
        _acc(x, _block_backward_x(g, q.values, num_blocks, din_b, dout_b))
        _acc(q, _block_backward_q(x.values, g, num_blocks, din_b, dout_b))

    _record(out, bw)
    return out


def _split_blocks(d_in, q_shape, num_blocks):
    if d_in % num_blocks:
        raise ShapeError(f"block count {num_blocks} does not divide input dim {d_in}")
    din_b = d_in // num_blocks
    if q_shape[0] != num_blocks * din_b:
        raise ShapeError(
            f"block weight rows {q_shape[0]} != num_blocks*din_b {num_blocks * din_b}")
    return din_b, q_shape[1]


def _block_forward(xv, qv, b, din_b, dout_b):
    n = xv.shape[0]
    res = np.empty((n, b * dout_b))
    for k in range(b):
        res[:, k * dout_b:(k + 1) * dout_b] = (
            xv[:, k * din_b:(k + 1) * din_b] @ qv[k * din_b:(k + 1) * din_b])
    return res


def _block_backward_x(g, qv, b, din_b, dout_b):
    n = g.shape[0]
    dx = np.empty((n, b * din_b))
    for k in range(b):
        dx[:, k * din_b:(k + 1) * din_b] = (
            g[:, k * dout_b:(k + 1) * dout_b] @ qv[k * din_b:(k + 1) * din_b].T)
    return dx


def _block_backward_q(xv, g, b, din_b, dout_b):
    dq = np.empty((b * din_b, dout_b))
    for k in range(b):
        dq[k * din_b:(k + 1) * din_b] = (
            xv[:, k * din_b:(k + 1) * din_b].T @ g[:, k * dout_b:(k + 1) * dout_b])
    return dq


def assemble_block_weight(blocks):
    """Dense block-diagonal matrix from a list of equally-shaped blocks.

    Off-block entries are exactly zero. Used for tests and inspection; the
    model multiplies blockwise instead.
    """
    shapes = {np.asarray(b).shape for b in blocks}
    if len(shapes) != 1:
        raise ShapeError(f"inconsistent block shapes: {sorted(shapes)}")
    (din_b, dout_b), = shapes
    b = len(blocks)
    out = np.zeros((b * din_b, b * dout_b))
    for k, blk in enumerate(blocks):
        out[k * din_b:(k + 1) * din_b, k * dout_b:(k + 1) * dout_b] = blk
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a):
    mask = a.values > 0.0
    out = Tensor(np.where(mask, a.values, 0.0))

    def bw(g):
        _acc(a, g * mask)

    _record(out, bw)
    return out


def leaky_relu(a, slope):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0,1), got {slope}")
    mask = a.values > 0.0
    out = Tensor(np.where(mask, a.values, slope * a.values))

    def bw(g):
        _acc(a, g * np.where(mask, 1.0, slope))

    _record(out, bw)
    return out


def sigmoid(a):
    v = a.values
    res = np.empty_like(v)
    pos = v >= 0
    res[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    res[~pos] = ev / (1.0 + ev)
    out = Tensor(res)

    def bw(g):
        _acc(a, g * res * (1.0 - res))

    _record(out, bw)
    return out


def softmax_rows(a, mask=None):
    """Row softmax with max-subtraction; masked-out entries are exactly zero."""
    v = a.values
    if mask is None:
        shifted = v - v.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != v.shape:
            raise ShapeError(f"mask shape {mask.shape} != tensor shape {v.shape}")
        active = mask.sum(axis=1)
        if np.any(active == 0):
            row = int(np.argmin(active))
            raise ValueError(f"softmax_rows: row {row} has no active entries")
        neg = np.where(mask, v, -np.inf)
        shifted = v - neg.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
    res = e / e.sum(axis=1, keepdims=True)
    out = Tensor(res)

    def bw(g):
        inner = (res * g).sum(axis=1, keepdims=True)
        _acc(a, res * (g - inner))

    _record(out, bw)
    return out


def segment_softmax(scores, seg_starts):
    """Softmax over contiguous row segments of a column vector.

    ``seg_starts`` are the first row of each segment (seg_starts[0] == 0);
    every segment is nonempty.
    """
    if scores.shape[1] != 1:
        raise ShapeError(f"segment_softmax expects a column, got {scores.shape}")
    starts = np.asarray(seg_starts, dtype=np.int64)
    v = scores.values[:, 0]
    if v.size == 0:
        return Tensor(np.zeros((0, 1)))
    if starts.size == 0 or starts[0] != 0 or np.any(np.diff(starts) <= 0) \
            or starts[-1] >= v.size:
        raise ShapeError("segment starts must begin at 0, increase strictly "
                         "and stay in range")
    seg_max = np.maximum.reduceat(v, starts)
    lengths = np.diff(np.append(starts, v.size))
    e = np.exp(v - np.repeat(seg_max, lengths))
    z = np.add.reduceat(e, starts)
    res = e / np.repeat(z, lengths)
    out = Tensor(res[:, None])

    def bw(g):
        gv = g[:, 0]
        inner = np.add.reduceat(res * gv, starts)
        _acc(scores, (res * (gv - np.repeat(inner, lengths)))[:, None])

    _record(out, bw)
    return out


def dropout(a, rate, training, rng):
    """Inverted dropout: identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = rng.random(a.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    out = Tensor(np.where(keep, a.values * factor, 0.0))

    def bw(g):
        _acc(a, np.where(keep, g * factor, 0.0))

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# losses


def nll_true_class(probs, class_ids):
    """Negative log-likelihood of the true class, summed over rows.

    Probabilities are clamped at 1e-12 before the log so the loss stays
    finite for arbitrary inputs.
    """
    ids = np.asarray(class_ids, dtype=np.int64)
    if ids.shape != (probs.shape[0],):
        raise ShapeError("nll_true_class: one class id per probability row")
    rows = np.arange(ids.size)
    p = probs.values[rows, ids]
    clamped = np.maximum(p, 1e-12)
    out = Tensor([[-np.log(clamped).sum()]])

    def bw(g):
        if probs.grad is None:
            probs.grad = np.zeros_like(probs.values)
        live = p >= 1e-12
        probs.grad[rows[live], ids[live]] -= g[0, 0] / clamped[live]

    _record(out, bw)
    return out


def binary_cross_entropy_bits(scores, labels):
    """Mean base-2 cross entropy of sigmoid(score) against 0/1 labels.

    Computed via softplus so it is finite for any finite score.
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if scores.shape != (y.size, 1):
        raise ShapeError(
            f"binary_cross_entropy_bits: scores {scores.shape} vs {y.size} labels")
    s = scores.values[:, 0]
    per = y * np.logaddexp(0.0, -s) + (1.0 - y) * np.logaddexp(0.0, s)
    out = Tensor([[per.sum() / (y.size * math.log(2.0))]])

    def bw(g):
        p = np.empty_like(s)
        pos = s >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
        es = np.exp(s[~pos])
        p[~pos] = es / (1.0 + es)
        _acc(scores, (g[0, 0] * (p - y) / (y.size * math.log(2.0)))[:, None])

    _record(out, bw)
    return out


def l2_penalty(params, coefficient):
    """coefficient * sum of squared entries over regularized parameters."""
    if coefficient < 0:
        raise ValueError(f"l2 coefficient must be >= 0, got {coefficient}")
    targets = [p for p in params if p.regularized]
    total = sum(float(np.square(p.values).sum()) for p in targets)
    out = Tensor([[coefficient * total]])

    def bw(g):
        c = 2.0 * coefficient * g[0, 0]
        for p in targets:
            _acc(p, c * p.values)

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# optimizers


def sgd_step(params, learning_rate):
    """Plain gradient descent: w <- w - lr * grad; gradients cleared."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise GradientMissing(f"parameter {p.name!r} has no gradient")
    for p in params:
        p.values -= learning_rate * p.grad
        p.grad = None


class AdamState:
    """First/second moment buffers for the optional Adam variant."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params, state, learning_rate):
    params = list(params)
    for p in params:
        if p.grad is None:
            raise GradientMissing(f"parameter {p.name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for p in params:
        m = state.m.setdefault(p.name, np.zeros_like(p.values))
        v = state.v.setdefault(p.name, np.zeros_like(p.values))
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * np.square(p.grad)
        p.values -= learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        p.grad = None


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(loss_fn, params, eps=1e-5):
    """Max relative error of analytic gradients vs central differences.

    ``loss_fn`` must be deterministic (dropout off, fixed inputs) and return
    a scalar Tensor; it is re-evaluated with perturbed parameters.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    base = loss.item()
    tape.backward(loss)
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.values)
                for p in params]
    for p in params:
        p.grad = None

    # Coordinates where both gradients sit below the finite-difference noise
    # floor are counted as agreeing.
    floor = 1e-7 * max(1.0, abs(base))
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        gflat = ga.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = loss_fn().item()
            flat[k] = orig - eps
            f_minus = loss_fn().item()
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = gflat[k]
            m = max(abs(a), abs(numeric))
            if m <= floor:
                continue
            worst = max(worst, abs(a - numeric) / m)
    return worst
