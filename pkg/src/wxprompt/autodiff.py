"""Dense tensors with tape-based reverse-mode differentiation.

Buffers are numpy arrays (row-major, 32- or 64-bit float). Every operation
validates that finite inputs produce finite outputs; NaN/Inf raises
:class:`NumericError` instead of propagating silently. Gradients are
recorded on an explicit :class:`Tape` (thread-confined, single use) and
replayed in exact reverse execution order by :func:`backward`.

The op set is intentionally small: exactly what an encoder-decoder vision
transformer and its losses need, plus :func:`grad_check`, a central
finite-difference oracle used to validate every analytic gradient rule.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError

PRECISIONS = {"f32": np.float32, "f64": np.float64}

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_K = 0.044715

_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Entries are appended in execution order, so iterating them in reverse
    visits operations in reverse topological order. A tape is single-use:
    :func:`backward` consumes it.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        if popped is not self:
            raise UsageError("tapes must be exited in LIFO order")

    def record(self, out: "Tensor", vjp: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, vjp))

    def __len__(self) -> int:
        return len(self._records)


class Tensor:
    """Immutable dense array with optional recorded gradient.

    ``values`` is never mutated after construction except by ``backward``
    populating ``grad``. Sharing a tensor read-only across threads is safe.
    """

    def __init__(self, values, requires_grad: bool = False, precision: str | None = None):
        arr = np.asarray(values)
        if precision is not None:
            if precision not in PRECISIONS:
                raise ConfigError(f"unknown precision {precision!r}, expected one of {sorted(PRECISIONS)}")
            dtype = PRECISIONS[precision]
        elif arr.dtype == np.float64:
            dtype = np.float64
        else:
            dtype = np.float32
        self.values = np.ascontiguousarray(arr, dtype=dtype)
        if not np.all(np.isfinite(self.values)):
            raise NumericError("tensor constructed from non-finite values")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def item(self) -> float:
        if self.values.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return _wrap(self.values.copy())

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.values.dtype.name}{rg})"

    # Operator sugar; scalars and plain arrays are treated as constants.
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(values: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = False
    out.grad = None
    return out


def _result(values: np.ndarray) -> Tensor:
    if not np.all(np.isfinite(values)):
        raise NumericError("operation produced non-finite values")
    return _wrap(values)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.astype(g.dtype, copy=False)


def _tape_for(*tensors: "Tensor | None") -> "Tape | None":
    tape = active_tape()
    if tape is None:
        return None
    if any(t is not None and t.requires_grad for t in tensors):
        return tape
    return None


def _record(out: Tensor, tape: "Tape | None", vjp: Callable[[np.ndarray], None]) -> Tensor:
    if tape is not None:
        out.requires_grad = True
        tape.record(out, vjp)
    return out


def _constant(x, dtype: np.dtype) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite constant operand")
    return arr


def _check_same_dtype(a: Tensor, b: Tensor) -> None:
    if a.dtype != b.dtype:
        raise UsageError(f"dtype mismatch: {a.dtype.name} vs {b.dtype.name}")


# ---------------------------------------------------------------------------
# Elementwise and structural primitives


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_dtype(a, b)
        out = _result(a.values + b.values)
        tape = _tape_for(a, b)

        def vjp(g):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(g, b.shape))

        return _record(out, tape, vjp)

    const = _constant(b, a.dtype)
    out = _result(a.values + const)
    tape = _tape_for(a)

    def vjp_const(g):
        _accum(a, _unbroadcast(g, a.shape))

    return _record(out, tape, vjp_const)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_dtype(a, b)
        out = _result(a.values - b.values)
        tape = _tape_for(a, b)

        def vjp(g):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(-g, b.shape))

        return _record(out, tape, vjp)

    const = _constant(b, a.dtype)
    out = _result(a.values - const)
    tape = _tape_for(a)

    def vjp_const(g):
        _accum(a, _unbroadcast(g, a.shape))

    return _record(out, tape, vjp_const)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_dtype(a, b)
        out = _result(a.values * b.values)
        tape = _tape_for(a, b)

        def vjp(g):
            _accum(a, _unbroadcast(g * b.values, a.shape))
            _accum(b, _unbroadcast(g * a.values, b.shape))

        return _record(out, tape, vjp)

    const = _constant(b, a.dtype)
    out = _result(a.values * const)
    tape = _tape_for(a)

    def vjp_const(g):
        _accum(a, _unbroadcast(g * const, a.shape))

    return _record(out, tape, vjp_const)


def neg(a: Tensor) -> Tensor:
    out = _result(-a.values)
    tape = _tape_for(a)

    def vjp(g):
        _accum(a, -g)

    return _record(out, tape, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch semantics (operands must be >= 2-D)."""
    _check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        values = np.matmul(a.values, b.values)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} @ {b.shape}") from exc
    out = _result(values)
    tape = _tape_for(a, b)

    def vjp(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.values, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.values, -1, -2), g), b.shape))

    return _record(out, tape, vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        values = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    out = _wrap(np.ascontiguousarray(values))
    tape = _tape_for(a)

    def vjp(g):
        _accum(a, g.reshape(a.shape))

    return _record(out, tape, vjp)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"invalid permutation {axes} for shape {a.shape}")
    out = _wrap(np.ascontiguousarray(a.values.transpose(axes)))
    inverse = tuple(np.argsort(axes))
    tape = _tape_for(a)

    def vjp(g):
        _accum(a, g.transpose(inverse))

    return _record(out, tape, vjp)


def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(ax % ndim for ax in axis)
    if len(set(axes)) != len(axes) or any(ax >= ndim for ax in axes):
        raise ShapeError(f"invalid reduction axis {axis} for ndim {ndim}")
    return axes


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = _result(a.values.sum(axis=axes, keepdims=keepdims))
    tape = _tape_for(a)

    def vjp(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        _accum(a, np.broadcast_to(gg, a.shape).copy())

    return _record(out, tape, vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = _result(a.values.mean(axis=axes, keepdims=keepdims))
    tape = _tape_for(a)

    def vjp(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        _accum(a, np.broadcast_to(gg, a.shape) / count)

    return _record(out, tape, vjp)


def absolute(a: Tensor) -> Tensor:
    out = _result(np.abs(a.values))
    tape = _tape_for(a)

    def vjp(g):
        _accum(a, g * np.sign(a.values))

    return _record(out, tape, vjp)


def square(a: Tensor) -> Tensor:
    out = _result(a.values * a.values)
    tape = _tape_for(a)

    def vjp(g):
        _accum(a, g * (2.0 * a.values))

    return _record(out, tape, vjp)


# ---------------------------------------------------------------------------
# Fused model primitives


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Zero-variance rows normalize to zero (the eps clamp), so constant
    padding frames pass through as ``beta``.
    """
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be > 0, got {eps}")
    d = x.shape[-1] if x.ndim else 0
    if d < 1:
        raise ShapeError(f"layer_norm needs a non-empty last axis, got shape {x.shape}")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match feature dim ({d},)"
        )
    _check_same_dtype(x, gamma)
    _check_same_dtype(x, beta)

    mu = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = centered * inv
    out = _result(gamma.values * xhat + beta.values)
    tape = _tape_for(x, gamma, beta)

    def vjp(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gg = g * gamma.values
            m1 = gg.mean(axis=-1, keepdims=True)
            m2 = (gg * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gg - m1 - xhat * m2))

    return _record(out, tape, vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtraction) along ``axis``."""
    ax = axis % x.ndim if x.ndim else 0
    if x.ndim == 0:
        raise ShapeError("softmax of a scalar is undefined")
    shifted = x.values - x.values.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=ax, keepdims=True)
    out = _result(s)
    tape = _tape_for(x)

    def vjp(g):
        dot = (g * s).sum(axis=ax, keepdims=True)
        _accum(x, s * (g - dot))

    return _record(out, tape, vjp)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    v = x.values
    u = _GELU_C * (v + _GELU_K * v**3)
    t = np.tanh(u)
    out = _result(0.5 * v * (1.0 + t))
    tape = _tape_for(x)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_K * v * v)
        local = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
        _accum(x, g * local)

    return _record(out, tape, vjp)


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows ``table[idx]`` from a 2-D table; backward scatter-adds."""
    if table.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D table, got {table.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows index out of range for table with {table.shape[0]} rows")
    out = _wrap(table.values[idx])
    tape = _tape_for(table)

    def vjp(g):
        if table.requires_grad:
            buf = np.zeros_like(table.values)
            np.add.at(buf, idx, g)
            _accum(table, buf)

    return _record(out, tape, vjp)


def take(a: Tensor, idx: np.ndarray, axis: int) -> Tensor:
    """Index-select along ``axis``; backward scatter-adds into the source."""
    idx = np.asarray(idx, dtype=np.int64)
    ax = axis % a.ndim
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[ax]):
        raise ShapeError(f"take index out of range along axis {ax} of shape {a.shape}")
    out = _wrap(np.take(a.values, idx, axis=ax))
    tape = _tape_for(a)

    def vjp(g):
        buf = np.zeros_like(a.values)
        np.add.at(np.moveaxis(buf, ax, 0), idx, np.moveaxis(g, ax, 0))
        _accum(a, buf)

    return _record(out, tape, vjp)


def replace_rows(x: Tensor, row_mask: np.ndarray, fill: Tensor) -> Tensor:
    """Replace masked rows of ``x[..., T, D]`` with the vector ``fill[D]``.

    ``row_mask`` is boolean with shape ``x.shape[:-1]``. The output carries
    no dependence on the replaced rows' values, which is what makes masked
    positions provably invisible to the model.
    """
    mask = np.asarray(row_mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise ShapeError(f"row mask shape {mask.shape} must equal {x.shape[:-1]}")
    if fill.shape != (x.shape[-1],):
        raise ShapeError(f"fill shape {fill.shape} must be ({x.shape[-1]},)")
    _check_same_dtype(x, fill)
    out = _result(np.where(mask[..., None], fill.values, x.values))
    tape = _tape_for(x, fill)

    def vjp(g):
        if x.requires_grad:
            _accum(x, np.where(mask[..., None], 0.0, g).astype(x.dtype))
        if fill.requires_grad and mask.any():
            _accum(fill, g[mask].sum(axis=0))

    return _record(out, tape, vjp)


def primitive(values: np.ndarray, inputs: Iterable[Tensor], vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Extension point: wrap precomputed ``values`` as one taped operation.

    ``vjp(g)`` must return one cotangent (or None) per input, in order.
    Used by tests to build deliberately wrong gradient rules as negative
    controls for :func:`grad_check`.
    """
    inputs = list(inputs)
    out = _result(np.asarray(values))
    tape = _tape_for(*inputs)

    def run(g):
        grads = vjp(g)
        for t, gi in zip(inputs, grads):
            if gi is not None:
                _accum(t, gi)

    return _record(out, tape, run)


# ---------------------------------------------------------------------------
# Backward pass and the finite-difference oracle


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    ``loss`` must be scalar and the tape must record its full ancestry.
    The tape is consumed: a second backward on it raises.
    """
    if loss.values.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape._consumed:
        raise UsageError("tape already consumed by a previous backward pass")
    tape._consumed = True
    loss.grad = np.ones_like(loss.values)
    for out, vjp in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        vjp(g)


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``fn`` must be deterministic, return a scalar tensor computed from
    ``params``, and all params must be 64-bit. The error for each
    coordinate is ``|analytic - fd| / max(|analytic|, |fd|, 1e-8)``.
    """
    params = list(params)
    if not params:
        raise UsageError("grad_check needs at least one parameter")
    for p in params:
        if p.dtype != np.float64:
            raise UsageError("grad_check requires 64-bit parameters")
        if not p.requires_grad:
            raise UsageError("grad_check parameters must have requires_grad=True")

    saved = [p.values.copy() for p in params]
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = fn()
    if loss.values.size != 1:
        raise UsageError("grad_check function must return a scalar")
    if not np.all(np.isfinite(loss.values)):
        raise NumericError("grad_check function returned non-finite output")
    backward(loss, tape)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params]

    def eval_loss() -> float:
        out = fn()
        val = float(out.values.reshape(()))
        if not np.isfinite(val):
            raise NumericError("grad_check function returned non-finite output")
        return val

    worst = 0.0
    try:
        for p, ana in zip(params, analytic):
            flat = p.values.reshape(-1)
            ana_flat = ana.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = eval_loss()
                flat[i] = orig - eps
                f_minus = eval_loss()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * eps)
                denom = max(abs(ana_flat[i]), abs(fd), 1e-8)
                worst = max(worst, abs(ana_flat[i] - fd) / denom)
    finally:
        for p, orig in zip(params, saved):
            p.values[...] = orig
        for p in params:
            p.grad = None
    return worst
