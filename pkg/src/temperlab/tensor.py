"""Dense float64 tensors with a reverse-mode gradient tape.

Only the primitives a small encoder-decoder needs are implemented: matmul
(plain and leading-batch), elementwise arithmetic, row softmax and
log-softmax, layer norm, embedding lookup, shape moves, and inverted
dropout. Storage is row-major float64 throughout; every backward rule is
hand-written and checked against central finite differences in the test
suite. Broadcasting is deliberately restricted to bias-add and row-wise
ops so each rule stays auditable.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

Array = np.ndarray


class Tensor:
    """Dense float64 array plus a flag marking gradient-tape participation.

    Tensors are treated as immutable once created; training replaces
    parameter tensors wholesale instead of mutating them in place.
    """

    __slots__ = ("array", "tracked")

    def __init__(self, values, tracked: bool = False):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor initialised with non-finite values")
        self.array = arr
        self.tracked = bool(tracked)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> Array:
        """Row-major flat view of the underlying storage."""
        return self.array.reshape(-1)

    @property
    def size(self) -> int:
        return self.array.size

    def item(self) -> float:
        if self.array.shape != ():
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.array)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"


def _result(arr: Array, tracked: bool) -> Tensor:
    # Internal constructor for op outputs: skips the finiteness scan, which
    # is guaranteed by construction for finite inputs (stable softmax etc.).
    t = object.__new__(Tensor)
    t.array = arr
    t.tracked = tracked
    return t


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """Ordered record of primitive applications for reverse-mode replay.

    Nodes are appended in execution order, which is a topological order of
    the computation graph, so `backward` can walk the list in reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradientTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self, "gradient tapes closed out of order"
        return False


_TAPES: list[GradientTape] = []


def _active_tape() -> GradientTape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(arr: Array, inputs: tuple[Tensor, ...], backward) -> Tensor:
    tape = _active_tape()
    tracked = tape is not None and any(t.tracked for t in inputs)
    out = _result(arr, tracked)
    if tracked:
        tape.nodes.append(_Node(out, inputs, backward))
    return out


def backward(tape: GradientTape, loss: Tensor) -> dict[Tensor, Array]:
    """Accumulate gradients of `loss` w.r.t. every tracked tensor on the tape.

    Returns a map keyed by tensor identity. Untracked leaves never appear;
    tracked leaves receive a gradient of identical shape to their value.
    """
    if loss.array.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[Tensor, Array] = {loss: np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = grads.get(node.output)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.tracked:
                continue
            acc = grads.get(inp)
            grads[inp] = gi if acc is None else acc + gi
    return grads


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports 2-D x 2-D, N-D x 2-D, and N-D x N-D with
    identical leading dimensions; no other broadcasting."""
    am, bm = a.array, b.array
    if am.ndim < 2 or bm.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {am.shape} and {bm.shape}")
    if am.shape[-1] != bm.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for {am.shape} and {bm.shape}")
    if bm.ndim > 2 and am.shape[:-2] != bm.shape[:-2]:
        raise ShapeError(f"matmul: leading dimensions disagree for {am.shape} and {bm.shape}")
    out = am @ bm

    def bwd(g: Array):
        ga = g @ bm.swapaxes(-1, -2)
        if bm.ndim == 2:
            gb = am.reshape(-1, am.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = am.swapaxes(-1, -2) @ g
        return ga, gb

    return _emit(out, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _emit(a.array + b.array, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    am, bm = a.array, b.array
    return _emit(am * bm, (a, b), lambda g: (g * bm, g * am))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(x.array * c, (x,), lambda g: (g * c,))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    bm = b.array
    if bm.ndim != 1 or x.shape[-1] != bm.shape[0]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match last dim of {x.shape}")
    n = bm.shape[0]

    def bwd(g: Array):
        return g, g.reshape(-1, n).sum(axis=0)

    return _emit(x.array + bm, (x, b), bwd)


def relu(x: Tensor) -> Tensor:
    keep = x.array > 0.0
    return _emit(np.where(keep, x.array, 0.0), (x,), lambda g: (g * keep,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = x.array.shape
    out = x.array.reshape(shape)
    return _emit(out, (x,), lambda g: (g.reshape(orig),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = np.argsort(axes)
    out = np.ascontiguousarray(x.array.transpose(axes))
    return _emit(out, (x,), lambda g: (g.transpose(inv),))


def row_softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    xm = x.array
    if not np.all(np.isfinite(xm)):
        raise NumericError("row_softmax: non-finite input")
    z = xm - xm.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g: Array):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), bwd)


def log_row_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis, computed directly (not log of softmax)."""
    xm = x.array
    if not np.all(np.isfinite(xm)):
        raise NumericError("log_row_softmax: non-finite input")
    z = xm - xm.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def bwd(g: Array):
        p = np.exp(out)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _emit(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then apply
    the affine transform `gain * xhat + bias`."""
    if eps <= 0.0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last dim {d}")
    xm = x.array
    mu = xm.mean(axis=-1, keepdims=True)
    xc = xm - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.array + bias.array

    def bwd(g: Array):
        gh = g * gain.array
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _emit(out, (x, gain, bias), bwd)


def embed(table: Tensor, ids: Array) -> Tensor:
    """Gather rows of `table` by integer id; backward scatter-adds."""
    idx = np.asarray(ids)
    if table.array.ndim != 2:
        raise ShapeError(f"embed: table must be 2-D, got {table.shape}")
    v, d = table.array.shape
    out = table.array[idx]

    def bwd(g: Array):
        gt = np.zeros((v, d), dtype=np.float64)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return _emit(out, (table,), bwd)


def sum_all(x: Tensor) -> Tensor:
    shp = x.array.shape
    out = np.asarray(x.array.sum())
    return _emit(out, (x,), lambda g: (np.full(shp, float(g)),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept units are divided by the keep probability.

    The mask multiply is recorded on the tape like any other op, so the
    backward pass sees exactly the mask used in the forward pass.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, _result(mask, False))


def finite_difference_gradient(f, x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a deterministic scalar function.

    `f` receives a Tensor sharing x's storage; each coordinate is perturbed
    by +/- h in turn and restored bitwise afterwards.
    """
    if h <= 0.0:
        raise ContractError(f"finite difference step must be positive, got {h}")
    base = np.array(x.array, dtype=np.float64)
    probe = _result(base, False)
    flat = base.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(probe))
        flat[i] = orig - h
        fm = _scalar(f(probe))
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return _result(grad.reshape(x.array.shape), False)


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)
