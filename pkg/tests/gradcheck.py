"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from rabot.numerics import Tape, Tensor, backward


def numeric_grad(f, param: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f() / d param by central differences; ``f`` returns a float."""
    out = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return out


def rel_error(analytic, numeric, floor: float = 1e-6) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def tensor_rel_error(analytic, numeric) -> float:
    """Max-norm error relative to the larger max-norm of the two gradients."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_gradients(build, params, h: float = 1e-5, per_entry: bool = True, floor: float = 1e-6) -> float:
    """Worst relative error over all ``params`` for ``build(tape) -> scalar``.

    ``per_entry`` compares every coordinate on its own scale; otherwise each
    parameter tensor is compared on the scale of its largest coordinate.
    Coordinates smaller than ``floor`` are judged on an absolute scale, since
    summation round-off in the loss dominates a difference quotient there.
    """
    for p in params:
        p.grad = None
    tape = Tape()
    loss = build(tape)
    backward(tape, loss)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    def value():
        return float(build(Tape(enabled=False)).value)

    worst = 0.0
    for p, a in zip(params, analytic):
        num = numeric_grad(value, p, h)
        worst = max(worst, rel_error(a, num, floor) if per_entry else tensor_rel_error(a, num))
    return worst
