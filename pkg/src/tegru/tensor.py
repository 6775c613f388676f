"""Dense tensors with tape-based reverse-mode differentiation.

Only the operations the sentiment models need are provided. A :class:`Tape`
records every differentiable operation executed while it is active; calling
``backward`` on a scalar produced under that tape walks the record in reverse
and leaves ``d(loss)/d(leaf)`` in the ``grad`` of every leaf that asked for it.

    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape():
    ...     loss = sum_(mul(w, Tensor([3.0, 4.0])))
    >>> loss.backward()
    >>> w.grad.tolist()
    [3.0, 4.0]

Outside an active tape nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Rng",
    "ShapeError",
    "NonFiniteError",
    "GradientError",
    "rng_seeded",
    "get_default_dtype",
    "set_default_dtype",
    "default_dtype",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "layernorm",
    "concat_last_axis",
    "concat",
    "stack",
    "select",
    "reshape",
    "transpose",
    "broadcast_to",
    "sum_",
    "mean",
    "embedding",
    "pick",
    "where",
    "dropout",
    "gradcheck",
]


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf from its inputs."""


class GradientError(RuntimeError):
    """Misuse of the tape (non-scalar loss, detached graph, reused tape)."""


_state = threading.local()


def get_default_dtype() -> type:
    return getattr(_state, "dtype", np.float32)


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _state.dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the element type of newly created tensors."""
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A numeric array that may take part in differentiation.

    ``data`` is never modified in place by the library; optimizers rebind it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        if self._tape is None:
            raise GradientError("loss is detached: it was not produced under an active Tape")
        self._tape.backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes nest, the innermost one records.
    A tape supports exactly one ``backward`` call.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if self._consumed:
            raise GradientError("tape already consumed by backward; record on a new Tape")
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        out._tape = self
        self._nodes.append((out, parents, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise GradientError("loss is detached: it was not recorded on this tape")
        if self._consumed:
            raise GradientError("backward already ran on this tape; record a new Tape first")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, parents, fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._tape is self:
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
                else:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
        self._nodes.clear()


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._tape = None
    tape = _active_tape()
    out.requires_grad = tape is not None and any(p.requires_grad for p in parents)
    if out.requires_grad:
        tape._record(out, parents, backward)
    return out


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype if like is not None else None)


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    """Shape of an elementwise result; only leading size-1 (or missing) axes may stretch."""
    nd = max(len(a), len(b))
    pa = (1,) * (nd - len(a)) + tuple(a)
    pb = (1,) * (nd - len(b)) + tuple(b)
    out = []
    for x, y in zip(pa, pb):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"{op}: shapes {tuple(a)} and {tuple(b)} are incompatible")
        out.append(max(x, y))
    for padded, orig in ((pa, a), (pb, b)):
        stretched = [i for i in range(nd) if padded[i] != out[i]]
        if stretched and any(s != 1 for s in padded[: stretched[-1] + 1]):
            raise ShapeError(
                f"{op}: shape {tuple(orig)} would broadcast on a non-leading axis "
                f"against {tuple(out)}; reshape or broadcast_to explicitly"
            )
    return tuple(out)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (s, t) in enumerate(zip(shape, g.shape)) if s == 1 and t != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a.shape, b.shape, "add")

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a.shape, b.shape, "sub")

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a.shape, b.shape, "mul")

    def backward(g):
        ga = _reduce_to(g * b.data, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward, "mul")


def neg(x: Tensor) -> Tensor:
    return _result(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, s: float) -> Tensor:
    s = x.dtype.type(s)
    return _result(x.data * s, (x,), lambda g: (g * s,), "scale")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows; sigmoid(0) is exactly 0.5
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    out = np.where(keep, x.data, 0).astype(x.dtype, copy=False)
    return _result(out, (x,), lambda g: (g * keep,), "relu")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _result(out, (x,), lambda g: (g / x.data,), "log")


def where(mask: np.ndarray, x: Tensor, fill: float) -> Tensor:
    """``x`` where ``mask`` is False, the constant ``fill`` where it is True."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"where: mask shape {mask.shape} differs from {x.shape}")
    out = np.where(mask, x.dtype.type(fill), x.data)
    return _result(out, (x,), lambda g: (np.where(mask, 0, g).astype(g.dtype, copy=False),), "where")


# -- linear algebra -----------------------------------------------------------


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], f"matmul {a.shape} x {b.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _reduce_to(g @ _swap_last(b.data), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _reduce_to(_swap_last(a.data) @ g, b.shape)
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


# -- normalisation ------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain * y + bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layernorm: gain {gain.shape} / bias {bias.shape} must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centred * inv
    out = y * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * y).sum(axis=lead) if gain.requires_grad else None
        dbias = g.sum(axis=lead) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dy = g * gain.data
            dx = inv * (dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _result(out.astype(x.dtype, copy=False), (x, gain, bias), backward, "layernorm")


# -- structural ---------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    nd = tensors[0].ndim
    ax = axis % nd
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != ref[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward, "concat")


def concat_last_axis(*tensors: Tensor) -> Tensor:
    if len(tensors) == 1 and not isinstance(tensors[0], Tensor):
        tensors = tuple(tensors[0])
    return concat(tensors, axis=-1)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _result(out, tuple(tensors), backward, "stack")


def select(x: Tensor, index: int, axis: int = 0) -> Tensor:
    """The slice at ``index`` along ``axis`` (that axis is dropped)."""
    ax = axis % x.ndim
    out = np.take(x.data, index, axis=ax)

    def backward(g):
        full = np.zeros_like(x.data)
        idx = [slice(None)] * x.ndim
        idx[ax] = index
        full[tuple(idx)] = g
        return (full,)

    return _result(out, (x,), backward, "select")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast (the only way to stretch a non-leading axis)."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as err:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from err

    def backward(g):
        lead = g.ndim - x.ndim
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        axes = tuple(i for i, s in enumerate(x.shape) if s == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _result(out, (x,), backward, "broadcast_to")


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward, "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(sum_(x, axis), 1.0 / n)


def embedding(table: Tensor, ids: np.ndarray, padding_idx: int | None = 0) -> Tensor:
    """Row lookup ``table[ids]``; the padding row never receives gradient."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError(f"embedding ids must be integers, got {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range for table of {table.shape[0]} rows")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if padding_idx is not None:
            full[padding_idx] = 0
        return (full,)

    return _result(table.data[ids], (table,), backward, "embedding")


def pick(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[i, index[i]]`` for a 2-d ``x``."""
    index = np.asarray(index)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"pick: expected x [b, c] and index [b], got {x.shape} and {index.shape}")
    rows = np.arange(x.shape[0])

    def backward(g):
        full = np.zeros_like(x.data)
        full[rows, index] = g
        return (full,)

    return _result(x.data[rows, index], (x,), backward, "pick")


# -- randomness ---------------------------------------------------------------


class Rng:
    """Seeded random stream used for initialisation, dropout and shuffling."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape, low: float, high: float, dtype=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(dtype or get_default_dtype())

    def normal(self, shape, mean: float = 0.0, std: float = 1.0, dtype=None) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape).astype(dtype or get_default_dtype())

    def bernoulli_mask(self, shape, p: float) -> np.ndarray:
        """Boolean keep-mask; each entry is dropped (False) with probability ``p``."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"drop probability must be in [0, 1], got {p}")
        return self._gen.random(size=shape) >= p

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)


def rng_seeded(seed: int) -> Rng:
    return Rng(seed)


def dropout(x: Tensor, p: float, rng: Rng | None, training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``p == 0``."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs an Rng")
    keep = rng.bernoulli_mask(x.shape, p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return mul(x, Tensor(keep, dtype=x.dtype))


# -- gradient checking -------------------------------------------------------


def gradcheck(
    loss_fn: Callable[[], Tensor],
    tensors: Iterable[Tensor],
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: Rng | None = None,
    floor: float = 1e-6,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the scalar loss from the current tensor values.
    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    With ``max_entries`` only that many randomly chosen entries per tensor
    are perturbed.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat_n = t.data.size
        if max_entries is not None and flat_n > max_entries:
            picks = (rng or Rng(0)).permutation(flat_n)[:max_entries]
        else:
            picks = np.arange(flat_n)
        original = t.data
        for i in picks:
            i = int(i)
            bumped = original.copy().reshape(-1)
            bumped[i] += step
            t.data = bumped.reshape(original.shape)
            up = loss_fn().item()
            bumped[i] -= 2 * step
            t.data = bumped.reshape(original.shape)
            down = loss_fn().item()
            t.data = original
            numeric = (up - down) / (2 * step)
            a = float(grad.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
