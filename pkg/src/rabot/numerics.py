"""Dense float64 tensors, an explicit reverse-mode tape, and Adam.

Every forward pass records onto its own :class:`Tape`; there is no global
gradient state. A tape can be replayed backward exactly once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its precondition."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(value, name: str) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


@dataclass
class _Op:
    name: str
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Ops on inputs that do not require grad are evaluated but not recorded.
    ``Tape(enabled=False)`` evaluates everything without recording.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.ops: list[_Op] = []
        self.consumed = False
        self.visited: list[str] = []

    def __len__(self) -> int:
        return len(self.ops)

    def _emit(self, name, value, parents, backward) -> Tensor:
        needs = self.enabled and any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.value = np.asarray(value, dtype=np.float64)
        out.grad, out.requires_grad, out.name = None, needs, None
        if needs:
            if self.consumed:
                raise ContractError("tape already replayed; record a fresh forward pass")
            self.ops.append(_Op(name, out, tuple(parents), backward))
        return out

    # -- linear algebra ---------------------------------------------------

    def matmul(self, a, b) -> Tensor:
        a, b = _as_tensor(a), _as_tensor(b)
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
        av, bv = a.value, b.value
        ga, gb = a.requires_grad, b.requires_grad
        return self._emit(
            "matmul",
            av @ bv,
            (a, b),
            lambda g: (g @ bv.T if ga else None, av.T @ g if gb else None),
        )

    def bmm(self, a, b) -> Tensor:
        """Batched matrix product over matching leading dimensions."""
        a, b = _as_tensor(a), _as_tensor(b)
        if a.value.ndim < 3 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"bmm shape mismatch: {a.shape} x {b.shape}")
        av, bv = a.value, b.value
        return self._emit(
            "bmm",
            np.matmul(av, bv),
            (a, b),
            lambda g: (
                np.matmul(g, bv.swapaxes(-1, -2)) if a.requires_grad else None,
                np.matmul(av.swapaxes(-1, -2), g) if b.requires_grad else None,
            ),
        )

    # -- elementwise -------------------------------------------------------

    def add(self, a, b) -> Tensor:
        a, b = _as_tensor(a), _as_tensor(b)
        sa, sb = a.shape, b.shape
        return self._emit(
            "add", a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        )

    def sub(self, a, b) -> Tensor:
        a, b = _as_tensor(a), _as_tensor(b)
        sa, sb = a.shape, b.shape
        return self._emit(
            "sub", a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
        )

    def mul(self, a, b) -> Tensor:
        a, b = _as_tensor(a), _as_tensor(b)
        av, bv = a.value, b.value
        ga, gb = a.requires_grad, b.requires_grad
        return self._emit(
            "mul",
            av * bv,
            (a, b),
            lambda g: (
                _unbroadcast(g * bv, av.shape) if ga else None,
                _unbroadcast(g * av, bv.shape) if gb else None,
            ),
        )

    def scale(self, a: Tensor, c: float) -> Tensor:
        return self._emit("scale", a.value * c, (a,), lambda g: (g * c,))

    def sigmoid(self, x: Tensor) -> Tensor:
        y = sigmoid_values(x.value)
        return self._emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.value)
        return self._emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))

    def leaky_relu(self, x: Tensor, slope: float = 0.01) -> Tensor:
        d = np.where(x.value > 0, 1.0, slope)
        return self._emit("leaky_relu", x.value * d, (x,), lambda g: (g * d,))

    def exp(self, x: Tensor) -> Tensor:
        y = np.exp(x.value)
        return self._emit("exp", y, (x,), lambda g: (g * y,))

    def log(self, x: Tensor) -> Tensor:
        xv = x.value
        return self._emit("log", np.log(xv), (x,), lambda g: (g / xv,))

    def abs(self, x: Tensor) -> Tensor:
        s = np.sign(x.value)
        return self._emit("abs", np.abs(x.value), (x,), lambda g: (g * s,))

    def clip(self, x: Tensor, lo: float, hi: float) -> Tensor:
        inside = (x.value >= lo) & (x.value <= hi)
        return self._emit("clip", np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))

    def softmax(self, x: Tensor, axis: int = -1) -> Tensor:
        y = softmax_values(x.value, axis)

        def back(g):
            return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

        return self._emit("softmax", y, (x,), back)

    def softmax_rows(self, x: Tensor) -> Tensor:
        if x.value.ndim != 2:
            raise DimensionError(f"softmax_rows expects rank 2, got shape {x.shape}")
        return self.softmax(x, axis=1)

    # -- reductions and shape ----------------------------------------------

    def sum(self, x: Tensor, axis: int | None = None) -> Tensor:
        shape = x.shape
        if axis is None:
            return self._emit("sum", np.sum(x.value), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
        return self._emit(
            "sum",
            x.value.sum(axis=axis),
            (x,),
            lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
        )

    def mean(self, x: Tensor, axis: int | None = None) -> Tensor:
        count = x.value.size if axis is None else x.shape[axis]
        return self.scale(self.sum(x, axis), 1.0 / count)

    def reshape(self, x: Tensor, shape) -> Tensor:
        old = x.shape
        return self._emit("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))

    def transpose(self, x: Tensor, axes) -> Tensor:
        inv = np.argsort(axes)
        return self._emit("transpose", x.value.transpose(axes), (x,), lambda g: (g.transpose(inv),))

    def concat(self, xs: Sequence[Tensor], axis: int = 0) -> Tensor:
        xs = [_as_tensor(x) for x in xs]
        bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return self._emit(
            "concat",
            np.concatenate([x.value for x in xs], axis=axis),
            tuple(xs),
            lambda g: tuple(np.split(g, bounds, axis=axis)),
        )

    def gather_rows(self, x: Tensor, idx) -> Tensor:
        idx = np.asarray(idx, dtype=np.int64)
        n = x.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ContractError(f"row index out of range for {n} rows")

        def back(g):
            g2 = g.reshape(len(idx), -1)
            out = _kernels.spmm(np.arange(len(idx)), idx, np.ones(len(idx)), g2, n)
            return (out.reshape((n,) + g.shape[1:]),)

        return self._emit("gather_rows", x.value[idx], (x,), back)

    # -- graph primitives ----------------------------------------------------

    def edge_spmm(self, h: Tensor, src, dst, w, n: int) -> Tensor:
        """Weighted scatter ``out[dst] += w * h[src]``; ``w`` may be a Tensor."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        w = _as_tensor(w)
        hv, wv = h.value, w.value.reshape(-1)
        value = _kernels.spmm(src, dst, wv, hv, n)

        def back(g):
            gh = _kernels.spmm(dst, src, wv, g, hv.shape[0])
            gw = _kernels.edge_dot(src, dst, g, hv).reshape(w.shape) if w.requires_grad else None
            return (gh, gw)

        return self._emit("edge_spmm", value, (h, w), back)

    def segment_softmax(self, scores: Tensor, seg, n: int) -> Tensor:
        """Softmax of a 1-D score vector within groups given by ``seg``."""
        seg = np.asarray(seg, dtype=np.int64)
        x = scores.value
        m = _kernels.segment_max(x, seg, n)
        e = np.exp(x - m[seg])
        z = _kernels.segment_sum(e, seg, n)
        y = e / z[seg]

        def back(g):
            s = _kernels.segment_sum(g * y, seg, n)
            return (y * (g - s[seg]),)

        return self._emit("segment_softmax", y, (scores,), back)


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_values(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def matmul(a, b, tape: Tape | None = None) -> Tensor:
    return (tape or Tape(enabled=False)).matmul(a, b)


def sigmoid(x, tape: Tape | None = None) -> Tensor:
    return (tape or Tape(enabled=False)).sigmoid(_as_tensor(x))


def softmax_rows(x, tape: Tape | None = None) -> Tensor:
    return (tape or Tape(enabled=False)).softmax_rows(_as_tensor(x))


def l1_distance(a, b, tape: Tape | None = None) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"l1_distance shape mismatch: {a.shape} vs {b.shape}")
    t = tape or Tape(enabled=False)
    return t.sum(t.abs(t.sub(a, b)))


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(x) into ``.grad`` of every tensor reachable on ``tape``.

    Gradients accumulate into parameters. A tape is single-use: a second
    call raises :class:`ContractError`.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractError("tape already replayed; record a fresh forward pass")
    tape.consumed = True
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.value)
    for op in reversed(tape.ops):
        tape.visited.append(op.name)
        g = op.out.grad
        if g is None:
            continue
        for parent, gp in zip(op.parents, op.backward(g)):
            if gp is None or not parent.requires_grad:
                continue
            parent.grad = gp if parent.grad is None else parent.grad + gp
        # free intermediate buffers as soon as they have been consumed
        op.out.grad = None if op.out is not loss else op.out.grad


@dataclass
class OptimizerState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: Sequence[Tensor], state: OptimizerState) -> None:
    """One bias-corrected Adam update; zeroes the gradients afterwards."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {p.name or i!r} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, p in enumerate(params):
        g = p.grad
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.value)
            state.v[i] = np.zeros_like(p.value)
        elif m.shape != p.value.shape:
            raise DimensionError(f"moment buffer shape {m.shape} != parameter {p.shape}")
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = np.zeros_like(p.value)
