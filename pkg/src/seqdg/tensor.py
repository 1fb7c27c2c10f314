"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation the sequence model needs is an explicit op with a
hand-written backward rule: matrix products over the last two axes,
row-wise softmax, layer normalization, the two losses, and a handful of
structural ops (reshape, permute, concat, slicing). Graphs are built
eagerly; `backward()` on a scalar walks them once in reverse topological
order. Tensors are immutable after creation except for gradient
accumulation, so separate graphs can run on separate threads.

An optional leading batch axis (or several) is supported everywhere:
matmul broadcasts over leading axes and reduces gradients back, and `add`
accepts a trailing-shape operand (bias vectors, positional tables). Ops
validate their outputs and raise `NonFiniteError` as soon as a NaN or Inf
appears, which is what the training loop's divergence guard catches.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "NonDeterministicError",
    "no_grad",
    "matmul",
    "transpose_last",
    "permute",
    "reshape",
    "concat",
    "narrow",
    "take_rows",
    "zero_rows",
    "expand_leading",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "softmax_rows",
    "layer_norm",
    "mse",
    "cross_entropy",
    "sum_all",
    "grad_check",
    "GradCheckReport",
    "ParamCheck",
]


class ShapeError(ValueError):
    """Raised on incompatible shapes; the message carries both shapes."""


class NonFiniteError(ArithmeticError):
    """Raised when a tensor literal or an op result contains NaN or Inf."""


class NonDeterministicError(RuntimeError):
    """Raised when two evaluations of a supposedly pure function disagree."""


_STATE = threading.local()  # distinct graphs may run on distinct threads


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (forward-only passes)."""
    prev = _grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


class Tensor:
    """A dense float64 array plus an optional same-shape gradient.

    Leaves are constructed directly; `requires_grad=True` marks trainable
    parameters. Interior nodes are produced by the module-level ops and
    carry the closures needed for the backward pass. After `backward()`,
    every leaf that requires a gradient has one accumulated in `.grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if arr.size == 0:
            raise ShapeError(f"zero-size tensor with shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor literal contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, no graph, no gradient requirement."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out._op = "detach"
        return out

    def backward(self):
        """Reverse-mode sweep from a scalar; accumulates into leaf grads."""
        if self.data.ndim != 0:
            raise ShapeError(f"backward() starts from a scalar, got shape {self.shape}")
        topo = _toposort(self)
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op!r}{flag})"


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _node(data: np.ndarray, parents: tuple, op: str, backward) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not data.flags["C_CONTIGUOUS"]:
        data = np.ascontiguousarray(data)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"op {op!r} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _acc(t: Tensor, delta: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += delta


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


def _check_trailing(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape:
        return
    if a.ndim > b.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    if b.ndim > a.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not equal "
                     "and neither is a trailing slice of the other")


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "add")
    out = a.data + b.data

    def backward(dout):
        if a.requires_grad:
            _acc(a, _unbroadcast(dout, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(dout, b.shape))

    return _node(out, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "sub")
    out = a.data - b.data

    def backward(dout):
        if a.requires_grad:
            _acc(a, _unbroadcast(dout, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-dout, b.shape))

    return _node(out, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "mul")
    out = a.data * b.data

    def backward(dout):
        if a.requires_grad:
            _acc(a, _unbroadcast(dout * b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(dout * a.data, b.shape))

    return _node(out, (a, b), "mul", backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * c

    def backward(dout):
        if x.requires_grad:
            _acc(x, dout * c)

    return _node(out, (x,), "scale", backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(dout):
        if x.requires_grad:
            _acc(x, dout * (x.data > 0.0))

    return _node(out, (x,), "relu", backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def backward(dout):
        if x.requires_grad:
            _acc(x, np.full_like(x.data, float(dout)))

    return _node(out, (x,), "sum_all", backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible leading axes for {a.shape} and {b.shape}") from exc

    def backward(dout):
        if a.requires_grad:
            _acc(a, _unbroadcast(dout @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ dout, b.shape))

    return _node(out, (a, b), "matmul", backward)


def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {axes} are not a permutation for shape {x.shape}")
    inverse = np.argsort(axes)
    out = np.transpose(x.data, axes)

    def backward(dout):
        if x.requires_grad:
            _acc(x, np.transpose(dout, inverse))

    return _node(out, (x,), "permute", backward)


def transpose_last(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose_last needs ndim >= 2, got {x.shape}")
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return permute(x, axes)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.data.reshape(shape)

    def backward(dout):
        if x.requires_grad:
            _acc(x, dout.reshape(x.shape))

    return _node(out, (x,), "reshape", backward)


def concat(parts: list[Tensor], axis: int = -2) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    ax = axis if axis >= 0 else parts[0].ndim + axis
    sizes = [p.shape[ax] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=ax)
    splits = np.cumsum(sizes)[:-1]

    def backward(dout):
        pieces = np.split(dout, splits, axis=ax)
        for p, g in zip(parts, pieces):
            if p.requires_grad:
                _acc(p, g)

    return _node(out, tuple(parts), "concat", backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along one axis."""
    ax = axis if axis >= 0 else x.ndim + axis
    if not (0 <= start and start + length <= x.shape[ax]):
        raise ShapeError(f"narrow: [{start}:{start + length}] out of range "
                         f"for axis {axis} of shape {x.shape}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, start + length)
    index = tuple(index)
    out = x.data[index]

    def backward(dout):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            g[index] = dout
            _acc(x, g)

    return _node(out, (x,), "narrow", backward)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D tensor; repeated indices are allowed."""
    if x.ndim != 2:
        raise ShapeError(f"take_rows needs a 2-D tensor, got {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"take_rows: index out of range for {x.shape[0]} rows")
    out = x.data[idx]

    def backward(dout):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            np.add.at(g, idx, dout)
            _acc(x, g)

    return _node(out, (x,), "take_rows", backward)


def zero_rows(x: Tensor, row: int) -> Tensor:
    """Zero one row along axis -2; gradient never flows into that row."""
    if x.ndim < 2:
        raise ShapeError(f"zero_rows needs ndim >= 2, got {x.shape}")
    n = x.shape[-2]
    if not (0 <= row < n):
        raise ShapeError(f"zero_rows: row {row} out of range for shape {x.shape}")
    out = x.data.copy()
    out[..., row, :] = 0.0

    def backward(dout):
        if x.requires_grad:
            g = dout.copy()
            g[..., row, :] = 0.0
            _acc(x, g)

    return _node(out, (x,), "zero_rows", backward)


def expand_leading(x: Tensor, leading: tuple[int, ...]) -> Tensor:
    """Materialize `x` repeated over new leading axes."""
    leading = tuple(int(s) for s in leading)
    out = np.broadcast_to(x.data, leading + x.shape)
    k = len(leading)

    def backward(dout):
        if x.requires_grad:
            _acc(x, dout.sum(axis=tuple(range(k))))

    return _node(out, (x,), "expand_leading", backward)


# ---------------------------------------------------------------------------
# normalization and losses


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by per-row max subtraction."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(dout):
        if x.requires_grad:
            inner = (dout * y).sum(axis=-1, keepdims=True)
            _acc(x, (dout - inner) * y)

    return _node(y, (x,), "softmax_rows", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis (biased variance + eps), then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} "
                         f"do not match feature width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def backward(dout):
        if gain.requires_grad:
            _acc(gain, (dout * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _acc(bias, dout.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dy = dout * gain.data
            m1 = dy.mean(axis=-1, keepdims=True)
            m2 = (dy * xhat).mean(axis=-1, keepdims=True)
            _acc(x, inv * (dy - m1 - xhat * m2))

    return _node(out, (x, gain, bias), "layer_norm", backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared elementwise differences (scalar)."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    out = np.asarray((diff * diff).mean())
    n = diff.size

    def backward(dout):
        c = 2.0 * float(dout) / n
        if pred.requires_grad:
            _acc(pred, c * diff)
        if target.requires_grad:
            _acc(target, -c * diff)

    return _node(out, (pred, target), "mse", backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log softmax probability of the target classes.

    `targets` is an integer array shaped like `logits` without its last
    axis (a bare int for 1-D logits). The mean runs over all target
    positions.
    """
    t = np.asarray(targets)
    if t.dtype.kind not in "iu":
        raise TypeError(f"cross_entropy: targets must be integers, got dtype {t.dtype}")
    if t.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets shape {t.shape} does not match "
                         f"logits shape {logits.shape}")
    n_classes = logits.shape[-1]
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise IndexError(f"cross_entropy: class index out of range [0, {n_classes})")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    lse = (m + np.log(z))[..., 0]
    picked = np.take_along_axis(x, t[..., None], axis=-1)[..., 0]
    losses = lse - picked
    out = np.asarray(losses.mean())
    n = losses.size

    def backward(dout):
        if logits.requires_grad:
            g = e / z
            hit = np.take_along_axis(g, t[..., None], axis=-1) - 1.0
            np.put_along_axis(g, t[..., None], hit, axis=-1)
            _acc(logits, g * (float(dout) / n))

    return _node(out, (logits,), "cross_entropy", backward)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class ParamCheck:
    """Finite-difference comparison for one parameter tensor."""

    name: str
    max_rel_err: float
    worst_index: tuple[int, ...]
    n_checked: int
    failing: list[tuple[tuple[int, ...], float, float, float]] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


@dataclass
class GradCheckReport:
    """Result of `grad_check`: worst relative error per parameter and overall."""

    h: float
    tol: float
    checks: list[ParamCheck]
    max_rel_err: float
    worst_param: str

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def failures(self) -> list[ParamCheck]:
        return [c for c in self.checks if not c.passed(self.tol)]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"grad_check {status}: max rel err {self.max_rel_err:.3e} "
                 f"(param {self.worst_param!r}, tol {self.tol:g}, h {self.h:g})"]
        for c in self.failures():
            lines.append(f"  FAIL {c.name}: rel err {c.max_rel_err:.3e} at {c.worst_index}, "
                         f"{len(c.failing)} coordinate(s) over tol")
        return "\n".join(lines)


def grad_check(f, params: dict[str, Tensor], h: float = 1e-5, tol: float = 1e-6,
               rel_floor: float = 1e-3, max_failures: int = 20) -> GradCheckReport:
    """Compare analytic gradients of scalar `f()` against central differences.

    `f` must be deterministic and close over `params`; every entry of every
    parameter is perturbed by ±h in place. Relative error uses
    |analytic − numeric| / max(|analytic|, |numeric|, rel_floor), so small
    gradients are judged on the absolute scale tol*rel_floor. The default
    floor keeps that scale above central-difference roundoff, which is
    about eps*scale/h where scale is the size of intermediate values
    (roughly 1e-11 per unit of internal magnitude at h=1e-5).
    """
    if not (1e-6 <= h <= 1e-4):
        raise ValueError(f"grad_check: h={h:g} outside [1e-6, 1e-4]")

    with no_grad():
        first = f().item()
        second = f().item()
    if first != second:
        raise NonDeterministicError(
            f"f() is not deterministic: {first!r} != {second!r}")

    loss = f()
    loss.backward()
    analytic = {}
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        p.grad = None

    checks = []
    overall = 0.0
    worst = ""
    for name, p in params.items():
        ana = analytic[name]
        worst_err = 0.0
        worst_idx = ()
        failing = []
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = f().item()
            flat[i] = orig - h
            with no_grad():
                fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = ana_flat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
            if err > worst_err:
                worst_err = err
                worst_idx = np.unravel_index(i, p.data.shape)
            if err >= tol and len(failing) < max_failures:
                failing.append((tuple(np.unravel_index(i, p.data.shape)),
                                float(a), float(numeric), float(err)))
        checks.append(ParamCheck(name=name, max_rel_err=worst_err,
                                 worst_index=tuple(int(k) for k in worst_idx),
                                 n_checked=flat.size, failing=failing))
        if worst_err > overall:
            overall = worst_err
            worst = name
    return GradCheckReport(h=h, tol=tol, checks=checks,
                           max_rel_err=overall, worst_param=worst)
