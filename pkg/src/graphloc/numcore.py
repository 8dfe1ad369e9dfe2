"""Dense 2-D reverse-mode differentiation on top of numpy.

Every value is a float64 matrix wrapped in a :class:`Tensor`.  Operations
executed while a :class:`Tape` is active are appended to it; replaying the
tape in reverse order is a valid reverse topological order, so
:func:`backward` needs no graph sort.  Outside a tape, operations are plain
numpy computations and their outputs carry no gradient.

Row vectors are ``1 x n`` matrices and scalars are ``1 x 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, ParameterError, ShapeError

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes shadow outer ones.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(value: np.ndarray, inputs: Sequence[Tensor], vjp, op: str = "custom") -> Tensor:
    """Wrap ``value`` as the output of a differentiable op.

    ``vjp(g)`` maps the output cotangent to one cotangent (or ``None``) per
    input.  It is only called for outputs that need a gradient.
    """
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape.records.append(_Record(out, tuple(inputs), vjp, op))
    return out


def backward(tape: Tape, loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) for every leaf reachable from ``loss``.

    Leaf gradients are stored on ``tensor.grad``.  When ``params`` is given,
    returns a name -> gradient dict with zeros for unreachable parameters.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    owned: set[int] = set()
    produced: set[int] = set()
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.value)
    for rec in reversed(tape.records):
        produced.add(id(rec.out))
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        in_grads = rec.vjp(g)
        for inp, ig in zip(rec.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            leaves.setdefault(key, inp)
            if isinstance(ig, RowSlice):
                if key not in owned:
                    grads[key] = grads[key].copy() if key in grads else np.zeros(inp.shape)
                    owned.add(key)
                grads[key][ig.start:ig.stop] += ig.value
                continue
            if ig.shape != inp.shape:
                raise ShapeError(f"{rec.op}: gradient shape {ig.shape} != input shape {inp.shape}")
            if key not in grads:
                grads[key] = ig
            elif key in owned:
                grads[key] += ig
            else:
                grads[key] = grads[key] + ig
                owned.add(key)
    for key, g in grads.items():
        if key in produced:
            continue
        t = leaves.get(key)
        if t is not None:
            t.grad = g if t.grad is None else t.grad + g
    if params is None:
        return {}
    out = {}
    for name, p in params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.value) if g is None else g
    return out


@dataclass
class RowSlice:
    """Cotangent that is zero outside rows [start, stop)."""

    start: int
    stop: int
    value: np.ndarray


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return record(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return record(a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.value * b.value, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.value / b.value

    def vjp(g):
        ga = _unbroadcast(g / b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.value, b.shape) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), vjp, "div")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} x {b.shape} (inner dimensions differ)")

    def vjp(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return record(a.value @ b.value, (a, b), vjp, "matmul")


def transpose(a: Tensor) -> Tensor:
    return record(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def elementwise(a: Tensor, kind: str) -> Tensor:
    """``relu`` or ``tanh``; relu'(0) is 0."""
    a = as_tensor(a)
    if kind == "relu":
        mask = a.value > 0
        return record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")
    if kind == "tanh":
        out = np.tanh(a.value)
        return record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")
    raise ParameterError(f"unknown elementwise kind {kind!r}")


def relu(a: Tensor) -> Tensor:
    return elementwise(a, "relu")


def tanh(a: Tensor) -> Tensor:
    return elementwise(a, "tanh")


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return record(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def abs_(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return record(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),), "abs")


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum over everything (1x1 result) or over one axis, keeping 2-D."""
    a = as_tensor(a)
    if axis is None:
        return record(a.value.sum().reshape(1, 1), (a,),
                      lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")
    return record(a.value.sum(axis=axis, keepdims=True), (a,),
                  lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum_axis")


def mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return mul(sum_(a), 1.0 / a.value.size)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start < stop <= a.rows:
        raise ParameterError(f"row slice [{start}, {stop}) out of range for shape {a.shape}")
    return record(a.value[start:stop].copy(), (a,), lambda g: (RowSlice(start, stop, g),), "slice_rows")


def take_column(a: Tensor, j: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= j < a.cols:
        raise ParameterError(f"column {j} out of range for shape {a.shape}")

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, j] = g[:, 0]
        return (full,)

    return record(a.value[:, j:j + 1].copy(), (a,), vjp, "take_column")


def softmax_rows(a: Tensor) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return record(out, (a,), vjp, "softmax_rows")


def log_softmax_rows(a: Tensor) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return record(out, (a,), vjp, "log_softmax_rows")


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by max(||row||, eps)."""
    a = as_tensor(a)
    norms = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    active = norms > eps
    denom = np.where(active, norms, eps)
    out = a.value / denom

    def vjp(g):
        # d(x/|x|) = (g - y (g.y)) / |x| on active rows; plain g/eps otherwise
        proj = np.where(active, (g * out).sum(axis=1, keepdims=True), 0.0)
        return ((g - out * proj) / denom,)

    return record(out, (a,), vjp, "l2_normalize_rows")


def cosine_similarity_matrix(a: Tensor, eps: float = 1e-12) -> Tensor:
    """l x l pairwise row cosine similarity; zero rows give 0 everywhere."""
    a = as_tensor(a)
    if a.rows < 1:
        raise ShapeError("cosine_similarity_matrix needs at least one row")
    n = l2_normalize_rows(a, eps)
    return matmul(n, transpose(n))


def cosine_rows(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity of corresponding rows, as an l x 1 column."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine_rows: {a.shape} vs {b.shape}")
    return sum_(mul(l2_normalize_rows(a, eps), l2_normalize_rows(b, eps)), axis=1)


def topk_mean_columns(a: Tensor, k: int) -> Tensor:
    """Per column, the mean of its k largest entries (1 x cols).

    Ties go to the lowest row index.
    """
    a = as_tensor(a)
    if not 1 <= k <= a.rows:
        raise ParameterError(f"k={k} outside [1, {a.rows}]")
    order = np.argsort(-a.value, axis=0, kind="stable")[:k]
    cols = np.arange(a.cols)
    picked = a.value[order, cols]
    out = picked.mean(axis=0, keepdims=True)

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, (order, np.broadcast_to(cols, order.shape)), np.broadcast_to(g / k, order.shape))
        return (full,)

    return record(out, (a,), vjp, "topk_mean_columns")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p) in training, identity otherwise."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability {p} outside [0, 1)")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ParameterError("training-mode dropout needs an rng")
    keep = rng.random(a.shape) >= p
    scale = keep / (1.0 - p)
    return record(a.value * scale, (a,), lambda g: (g * scale,), "dropout")


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# finite differences


def numerical_gradient(fn: Callable[[], float], array: np.ndarray, index, step: float = 1e-5) -> float:
    """Central difference of ``fn`` w.r.t. ``array[index]`` (mutated and restored)."""
    old = array[index]
    array[index] = old + step
    plus = fn()
    array[index] = old - step
    minus = fn()
    array[index] = old
    return (plus - minus) / (2.0 * step)


def relative_error(analytic: float, numeric: float, floor: float = 1e-10) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(build_loss: Callable[[Mapping[str, Tensor]], Tensor],
                    params: Mapping[str, Tensor],
                    step: float = 1e-5,
                    indices: Mapping[str, Iterable[tuple[int, int]]] | None = None) -> dict[str, float]:
    """Max relative error between tape gradients and central differences.

    ``build_loss`` must be deterministic in ``params``.  When ``indices`` is
    omitted every entry is checked.
    """
    with Tape() as tape:
        loss = build_loss(params)
    analytic = backward(tape, loss, params)

    def value() -> float:
        return build_loss(params).item()

    report = {}
    for name, p in params.items():
        idx = indices[name] if indices is not None else np.ndindex(*p.shape)
        worst = 0.0
        for ij in idx:
            ij = tuple(ij)
            num = numerical_gradient(value, p.value, ij, step)
            worst = max(worst, relative_error(analytic[name][ij], num))
        report[name] = worst
    return report


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> Mapping[str, Tensor]:
    """One bias-corrected Adam update, in place on ``params``."""
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"adam: gradient {grads[name].shape} vs parameter {p.shape} for {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params
