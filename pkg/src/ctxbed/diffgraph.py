"""Minimal define-by-run reverse-mode autodiff over dense float64 arrays.

Every op returns a new :class:`Tensor`; when any input requires a gradient the
result keeps references to its parents plus a closure mapping the upstream
gradient to parent gradients. The graph for a step is therefore the DAG
reachable from the loss, rebuilt on every forward pass. :func:`backward` walks
it once in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "exp",
    "log",
    "neg",
    "square",
    "sqrt",
    "tanh",
    "relu",
    "sigmoid",
    "sum",
    "mean",
    "logsumexp",
    "softmax",
    "concat",
    "stack",
    "slice_",
    "broadcast_to",
    "reshape",
    "transpose",
    "cholesky",
    "where",
    "straight_through",
    "linear",
    "batch_norm",
    "forward_op",
    "backward",
    "topological_order",
    "grad_check",
    "OP_KINDS",
]


class ShapeError(ValueError):
    """Operand shapes cannot be combined."""


class DomainError(ValueError):
    """Input lies outside the domain of the operation (log of <= 0, 1/0)."""


class Tensor:
    """Dense array with an optional gradient slot.

    ``data`` is an ndarray of any shape; ``values`` and ``grad`` expose flat
    views for callers that want the row-major layout.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- operator sugar ---------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return slice_(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _broadcast_shape(op: str, *shapes: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {' and '.join(map(str, shapes))}") from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise binary ----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    if np.any(b.data == 0):
        raise DomainError("div: zero in denominator")
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw, "div")


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is not differentiated."""
    a, b = _as_tensor(a), _as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    shape = _broadcast_shape("where", cond.shape, a.shape, b.shape)
    cond = np.broadcast_to(cond, shape)
    return _make(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                            _unbroadcast(np.where(cond, 0.0, g), b.shape)), "where")


def straight_through(x, value) -> Tensor:
    """Forward ``value`` (same shape as ``x``); backward passes gradients to ``x`` unchanged."""
    x = _as_tensor(x)
    value = np.asarray(value, dtype=np.float64)
    if value.shape != x.shape:
        raise ShapeError(f"straight_through: value shape {value.shape} != {x.shape}")
    return _make(value.copy(), (x,), lambda g: (g,), "straight_through")


# -- matmul ----------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product with numpy's batching rules for ndim >= 2 operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, got {a.shape} and {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


# -- elementwise unary -----------------------------------------------------
def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: non-positive input")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def neg(x) -> Tensor:
    x = _as_tensor(x)
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def square(x) -> Tensor:
    x = _as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("sqrt: non-positive input")
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


# -- reductions ------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(g: np.ndarray, axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if keepdims:
        return g
    for a in sorted(axes):
        g = np.expand_dims(g, a)
    return g


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    return _make(np.asarray(out), (x,),
                 lambda g: (np.broadcast_to(_expand(g, axes, keepdims), x.shape).copy(),), "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)
    return _make(np.asarray(out), (x,),
                 lambda g: (np.broadcast_to(_expand(g, axes, keepdims) / n, x.shape).copy(),),
                 "mean")


def logsumexp(x, axis=-1, keepdims: bool = False) -> Tensor:
    """Max-shifted log-sum-exp along ``axis``."""
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shift = x.data.max(axis=axes, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = np.exp(x.data - shift)
    s = e.sum(axis=axes, keepdims=True)
    out_k = np.log(s) + shift
    soft = e / s
    out = out_k if keepdims else np.squeeze(out_k, axis=axes)
    return _make(out, (x,), lambda g: (_expand(g, axes, keepdims) * soft,), "logsumexp")


def softmax(x, axis=-1) -> Tensor:
    """exp(x - logsumexp(x)); gradients route through the logsumexp node."""
    x = _as_tensor(x)
    return exp(sub(x, logsumexp(x, axis=axis, keepdims=True)))


# -- structural ------------------------------------------------------------
def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: no inputs")
    ndim = xs[0].ndim
    ax = axis % ndim
    for x in xs:
        if x.ndim != ndim or any(x.shape[i] != xs[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}")
    out = np.concatenate([x.data for x in xs], axis=ax)
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(xs)))

    return _make(out, tuple(xs), bw, "concat")


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    return concat([reshape(x, x.shape[:axis % (x.ndim + 1)] + (1,) + x.shape[axis % (x.ndim + 1):])
                   for x in xs], axis=axis)


def slice_(x, index) -> Tensor:
    x = _as_tensor(x)
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (x,), bw, "slice")


def broadcast_to(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    if _broadcast_shape("broadcast", x.shape, shape) != shape:
        raise ShapeError(f"broadcast: cannot broadcast {x.shape} to {shape}")
    return _make(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (_unbroadcast(g, x.shape),), "broadcast")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _make(out.copy(), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2) if x.ndim >= 2 else (0,)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes).copy(), (x,),
                 lambda g: (np.transpose(g, inv),), "transpose")


def cholesky(x) -> Tensor:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Backward uses the symmetric formula
    ``S = L^-T Phi(L^T Lbar) L^-1``, ``Abar = (S + S^T) / 2`` where ``Phi``
    keeps the lower triangle and halves the diagonal.
    """
    from scipy.linalg import solve_triangular

    x = _as_tensor(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"cholesky: need a square matrix, got {x.shape}")
    try:
        L = np.linalg.cholesky(x.data)
    except np.linalg.LinAlgError:
        raise DomainError("cholesky: matrix is not positive definite") from None

    def bw(g):
        P = L.T @ np.tril(g)
        P = np.tril(P) - 0.5 * np.diag(np.diag(P))
        # S = L^-T P L^-1
        tmp = solve_triangular(L, P.T, lower=True, trans="T")  # L^-T P^T
        S = solve_triangular(L, tmp.T, lower=True, trans="T")  # L^-T (L^-T P^T)^T
        return (0.5 * (S + S.T),)

    return _make(L, (x,), bw, "cholesky")


# -- fused layers --------------------------------------------------------------
def linear(x, w, b) -> Tensor:
    """``x @ w + b`` for a 2-d batch ``x``."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: incompatible shapes {x.shape}, {w.shape}, {b.shape}")
    out = x.data @ w.data
    out += b.data

    def bw(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _make(out, (x, w, b), bw, "linear")


def batch_norm(x, gamma, beta, eps: float) -> tuple[Tensor, tuple[np.ndarray, np.ndarray]]:
    """Per-column standardisation with batch statistics, then ``* gamma + beta``.

    Same values and gradients as composing mean/sub/square/sqrt/div/mul/add.
    Returns the output and the batch ``(mean, variance)``.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: incompatible shapes {x.shape}, {gamma.shape}, {beta.shape}")
    n = x.shape[0]
    mu = x.data.mean(axis=0)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        dxhat = g * gamma.data
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        return dx, np.sum(g * xhat, axis=0), g.sum(axis=0)

    return _make(out, (x, gamma, beta), bw, "batch_norm"), (mu, var)


# -- generic dispatch --------------------------------------------------------
_UNARY = {"exp": exp, "log": log, "neg": neg, "square": square, "tanh": tanh, "relu": relu,
          "sqrt": sqrt, "sigmoid": sigmoid, "cholesky": cholesky}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "matmul": matmul}
_AXIS = {"sum-axis": sum, "mean-axis": mean, "logsumexp-axis": logsumexp}

OP_KINDS = ("add", "sub", "mul", "div", "matmul", "exp", "log", "neg", "square", "tanh", "relu",
            "sum-axis", "mean-axis", "logsumexp-axis", "softmax-axis", "concat", "slice",
            "broadcast")


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Apply an op by name, e.g. ``forward_op("logsumexp-axis", x, axis=1)``."""
    if kind in _UNARY:
        return _UNARY[kind](*inputs)
    if kind in _BINARY:
        return _BINARY[kind](*inputs)
    if kind in _AXIS:
        return _AXIS[kind](*inputs, **kwargs)
    if kind == "softmax-axis":
        return softmax(*inputs, **kwargs)
    if kind == "concat":
        return concat(inputs, **kwargs)
    if kind == "slice":
        return slice_(inputs[0], kwargs["index"])
    if kind == "broadcast":
        return broadcast_to(inputs[0], kwargs["shape"])
    raise ValueError(f"unknown op kind {kind!r}")


# -- backward ----------------------------------------------------------------
def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every node after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf
    with ``requires_grad``. Gradients add up across repeated calls."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad_check(function: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    Error per coordinate is ``|analytic - numeric| / (|numeric| + 1e-8)``.
    """
    point = np.array(point, dtype=np.float64)
    x = Tensor(point, requires_grad=True)
    out = function(x)
    backward(out)
    analytic = np.zeros_like(point) if x.grad is None else x.grad
    numeric = np.zeros_like(point)
    flat = point.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = function(Tensor(point)).item()
        flat[i] = orig - step
        lo = function(Tensor(point)).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * step)
    err = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
    return float(err.max()) if err.size else 0.0


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))
