"""Dense tensors with tape-based reverse-mode differentiation.

Forward kernels reduce in a fixed, sequential index order (``_seq_matmul``,
``seq_sum``), so a given output element has the same bits no matter how many
rows it was batched with. Ranking many candidates in one batch therefore
gives exactly the scores a one-at-a-time loop would give. Backward kernels
use BLAS; they only need to be reproducible on one machine.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ContractError, DimensionError, MathDomainError, NonFiniteError

_TAPES: list["Tape"] = []

UNARY_OPS = ("tanh", "sigmoid", "exp", "log")


class Tape:
    """Records primitive ops executed while it is active (``with tape:``)."""

    def __init__(self):
        self.nodes = []
        self.leaves = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)


def active_tape():
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("data", "name", "requires_grad", "_tracked")

    def __init__(self, data, name=None, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.dtype not in (np.float32, np.float64):
            raise ContractError(f"unsupported dtype {arr.dtype}")
        self.data = arr
        self.name = name
        self.requires_grad = requires_grad
        self._tracked = requires_grad

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
    def T(self):
        return transpose(self)

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _lift(x, like=None):
    if type(x) is Tensor:
        return x
    if isinstance(x, Tensor):
        return x
    if like is not None and isinstance(x, (int, float)):
        return _wrap(np.asarray(x, dtype=like.data.dtype))
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _wrap(data):
    # op outputs are already float arrays of a supported dtype
    out = object.__new__(Tensor)
    out.data = data
    out.name = None
    out.requires_grad = False
    out._tracked = False
    return out


def _record(out_data, parents, backward_fn):
    out = _wrap(out_data)
    tape = active_tape()
    if tape is not None and any(p._tracked for p in parents):
        out._tracked = True
        tape.nodes.append((out, parents, backward_fn))
        for p in parents:
            if p.requires_grad:
                tape.leaves[id(p)] = p
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise binary -------------------------------------------------------


def add(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    out = a.data / b.data
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    return _record(-a.data, (a,), lambda g: (-g,))


def where(cond, a, b):
    """Select ``a`` where ``cond`` holds, else ``b``. Exact: no arithmetic on the kept values."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    out = np.where(cond, a.data, b.data)
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                              _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# -- matrix product -----------------------------------------------------------


def _seq_matmul_numpy(a, b):
    # out[..., j] = sum_k a[..., k] * b[k, j], accumulated for k = 0, 1, ... in order
    K = a.shape[-1]
    if b.ndim == 1:
        out = a[..., 0] * b[0]
        tmp = np.empty_like(out)
        for k in range(1, K):
            np.multiply(a[..., k], b[k], out=tmp)
            out += tmp
        return out
    out = a[..., 0, None] * b[0]
    tmp = np.empty_like(out)
    for k in range(1, K):
        np.multiply(a[..., k, None], b[k], out=tmp)
        out += tmp
    return out


try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is optional
    njit = None

if njit is not None:

    @njit(cache=True)
    def _seq_matmul_kernel(a, b, out):
        # same accumulation order as _seq_matmul_numpy; no fastmath, so no FMA contraction
        rows, K = a.shape
        n = b.shape[1]
        for i in range(rows):
            a0 = a[i, 0]
            for j in range(n):
                out[i, j] = a0 * b[0, j]
            for k in range(1, K):
                aik = a[i, k]
                for j in range(n):
                    out[i, j] += aik * b[k, j]

    def _seq_matmul(a, b):
        if a.size == 0:
            return _seq_matmul_numpy(a, b)
        K = a.shape[-1]
        a2 = np.ascontiguousarray(a.reshape(-1, K))
        b2 = np.ascontiguousarray(b if b.ndim == 2 else b[:, None])
        out = np.empty((a2.shape[0], b2.shape[1]), dtype=np.result_type(a2, b2))
        _seq_matmul_kernel(a2, b2, out)
        shape = a.shape[:-1] + ((b.shape[1],) if b.ndim == 2 else ())
        return out.reshape(shape)

else:  # pragma: no cover
    _seq_matmul = _seq_matmul_numpy


def matmul(a, b):
    """``a @ b`` for ``a`` of shape (..., k) and ``b`` of shape (k, n) or (k,)."""
    a, b = _lift(a), _lift(b)
    if b.ndim not in (1, 2) or a.ndim < 1 or a.shape[-1] != b.shape[0] or a.shape[-1] == 0:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"matmul dtype mismatch: {a.dtype} vs {b.dtype}")
    out = _seq_matmul(a.data, b.data)

    def backward(g):
        a2 = a.data.reshape(-1, a.shape[-1])
        if b.ndim == 1:
            g2 = g.reshape(-1)
            return np.multiply.outer(g, b.data), a2.T @ g2
        g2 = g.reshape(-1, b.shape[1])
        return g @ b.data.T, a2.T @ g2

    return _record(out, (a, b), backward)


# -- unary --------------------------------------------------------------------


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def apply_unary(op, t):
    """Elementwise ``tanh``, ``sigmoid``, ``exp`` or ``log``."""
    t = _lift(t)
    x = t.data
    if op == "tanh":
        out = np.tanh(x)
        fn = lambda g: (g * (1.0 - out * out),)
    elif op == "sigmoid":
        out = _sigmoid(x)
        fn = lambda g: (g * out * (1.0 - out),)
    elif op == "exp":
        with np.errstate(over="ignore"):
            out = np.exp(x)
        fn = lambda g: (g * out,)
    elif op == "log":
        bad = np.argwhere(~(x > 0))
        if bad.size:
            idx = tuple(int(i) for i in bad[0])
            raise MathDomainError(f"log of non-positive entry {x[idx]!r} at index {idx}")
        out = np.log(x)
        fn = lambda g: (g / x,)
    else:
        raise ContractError(f"unknown unary op {op!r}; expected one of {UNARY_OPS}")
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return _record(out, (t,), fn)


def tanh(t):
    return apply_unary("tanh", t)


def sigmoid(t):
    return apply_unary("sigmoid", t)


def exp(t):
    return apply_unary("exp", t)


def log(t):
    return apply_unary("log", t)


# -- reductions and normalizers -----------------------------------------------


def _seq_reduce(x, axis):
    return np.take(np.cumsum(x, axis=axis), -1, axis=axis)


def seq_sum(t, axis=None):
    """Sum in index order along ``axis`` (all entries when ``axis`` is None)."""
    t = _lift(t)
    if axis is None:
        out = _seq_reduce(t.data.reshape(-1), 0)
        return _record(np.asarray(out), (t,), lambda g: (np.broadcast_to(g, t.shape).copy(),))
    axis = axis % t.ndim
    out = _seq_reduce(t.data, axis)
    return _record(out, (t,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), t.shape).copy(),))


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what}: non-finite input")


def _softmax_data(x):
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / _seq_reduce(e, -1)[..., None]


def softmax_rows(t, mask=None):
    """Softmax along the last axis with max subtraction.

    ``mask`` (boolean, broadcastable to ``t``) excludes entries; they get
    probability exactly 0. Every row needs at least one unmasked entry.
    """
    t = _lift(t)
    x = t.data
    if mask is None:
        _check_finite(x, "softmax_rows")
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        _check_finite(np.where(mask, x, 0.0), "softmax_rows")
        x = np.where(mask, x, -np.inf)
    out = _softmax_data(x)

    def backward(g):
        inner = _seq_reduce(g * out, -1)[..., None]
        return (out * (g - inner),)

    return _record(out, (t,), backward)


def log_softmax_rows(t):
    t = _lift(t)
    x = t.data
    _check_finite(x, "log_softmax_rows")
    z = x - np.max(x, axis=-1, keepdims=True)
    out = z - np.log(_seq_reduce(np.exp(z), -1))[..., None]

    def backward(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record(out, (t,), backward)


# -- shape and indexing -------------------------------------------------------


def reshape(t, shape):
    t = _lift(t)
    return _record(t.data.reshape(shape), (t,), lambda g: (g.reshape(t.shape),))


def transpose(t):
    t = _lift(t)
    if t.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {t.shape}")
    return _record(t.data.T, (t,), lambda g: (g.T,))


def concat(tensors, axis=-1):
    tensors = [_lift(x) for x in tensors]
    out = np.concatenate([x.data for x in tensors], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([x.shape[ax] for x in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _record(out, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [_lift(x) for x in tensors]
    out = np.stack([x.data for x in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _record(out, tuple(tensors), backward)


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(t, index):
    t = _lift(t)
    out = t.data[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)
    basic = _is_basic(index)

    def backward(g):
        full = np.zeros(t.shape, dtype=g.dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record(out, (t,), backward)


def take_rows(t, ids):
    """Row gather ``t[ids]`` for a matrix ``t``; used for embedding lookup."""
    t = _lift(t)
    ids = np.asarray(ids, dtype=np.intp)
    out = t.data[ids]

    def backward(g):
        full = np.zeros(t.shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, t.shape[-1]))
        return (full,)

    return _record(out, (t,), backward)


def pick(t, ids):
    """``out[...] = t[..., ids[...]]``: one entry per row of the last axis."""
    t = _lift(t)
    ids = np.asarray(ids, dtype=np.intp)
    out = np.take_along_axis(t.data, ids[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros(t.shape, dtype=g.dtype)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        return (full,)

    return _record(out, (t,), backward)


# -- differentiation ----------------------------------------------------------


def backward(tape, loss, params=None):
    """Gradient of the scalar ``loss`` w.r.t. the trainable leaves on ``tape``.

    With ``params`` (name -> Tensor) the result has exactly those keys, with
    zeros for parameters the loss does not depend on. Without it, every named
    ``requires_grad`` leaf touched on the tape is returned.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for out, parents, fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, fn(g)):
            if pg is None or not p._tracked:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if params is None:
        params = {p.name: p for p in tape.leaves.values() if p.name is not None}
        if loss.requires_grad and loss.name is not None:
            params[loss.name] = loss
    result = {}
    for name, p in params.items():
        g = grads.get(id(p))
        result[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.dtype).reshape(p.shape)
    return result
