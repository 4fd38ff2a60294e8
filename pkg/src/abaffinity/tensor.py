"""Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a float32 or float64 numpy array. Operations are free
functions; while a `Tape` is active (as a context manager) every operation
whose output needs gradients appends one node with its backward rule, and
`backward(loss, tape)` replays the tape once in reverse, accumulating into
`Tensor.grad`.

Tapes and their tensors are confined to one thread; independent tapes may
run concurrently in separate threads.
"""

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels as _kernels
from .errors import (
    ConfigError,
    ContractError,
    EmptySequenceError,
    NonFiniteError,
    ShapeError,
)

_FLOAT_DTYPES = (np.float32, np.float64)

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense n-dimensional array of reals with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def assert_finite(self, name: str = "tensor") -> "Tensor":
        """Explicit NaN/Inf check; raises NonFiniteError naming the tensor."""
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{name} contains non-finite values")
        return self

    def detach_copy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of executed operations, replayed by `backward`.

    Nodes are appended in execution order, so every node's inputs precede
    it and one reverse sweep visits each node exactly once.
    """

    __slots__ = ("nodes", "_produced")

    def __init__(self):
        self.nodes: list = []
        self._produced: set = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _tape_stack().pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def owns(self, t: Tensor) -> bool:
        return id(t) in self._produced


def _record(out: Tensor, inputs: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(_Node(tuple(inputs), out, backward_fn))
        tape._produced.add(id(out))
    return out


def _accumulate(t: Tensor, delta: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += delta


def backward(loss: Tensor, tape: Tape, params: Optional[Sequence[Tensor]] = None) -> None:
    """Reverse-accumulate gradients of a scalar `loss` through `tape`.

    If `params` is given, any listed tensor left untouched by the sweep
    gets an explicit zero gradient.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if not tape.owns(loss):
        raise ContractError("loss was not produced on this tape")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        grad_out = node.output.grad
        if grad_out is None:
            continue
        grads = node.backward_fn(grad_out)
        for inp, delta in zip(node.inputs, grads):
            if delta is None:
                continue
            if inp.requires_grad or tape.owns(inp):
                _accumulate(inp, delta)
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ContractError(f"mixed tensor dtypes: {sorted(map(str, dtypes))}")


def _out(data, inputs: Sequence[Tensor]) -> Tensor:
    return Tensor(data, requires_grad=any(t.requires_grad for t in inputs))


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    _check_same_dtype(a, b)
    out = _out(a.data @ b.data, (a, b))

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), backward_fn)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {x.shape}")
    out = _out(x.data.T.copy(), (x,))

    def backward_fn(g):
        return (g.T,)

    return _record(out, (x,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    out = _out(a.data + b.data, (a, b))

    def backward_fn(g):
        return g, g

    return _record(out, (a, b), backward_fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-D bias vector to every row of a (..., D) tensor."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias shape {b.shape} does not match rows of {x.shape}")
    _check_same_dtype(x, b)
    out = _out(x.data + b.data, (x, b))
    lead_axes = tuple(range(x.data.ndim - 1))

    def backward_fn(g):
        return g, g.sum(axis=lead_axes) if lead_axes else g

    return _record(out, (x, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    out = _out(a.data * b.data, (a, b))

    def backward_fn(g):
        return g * b.data, g * a.data

    return _record(out, (a, b), backward_fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    out = _out(x.data * c, (x,))

    def backward_fn(g):
        return (g * c,)

    return _record(out, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at 0 is taken as 0."""
    out = _out(np.maximum(x.data, 0), (x,))
    mask = x.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _record(out, (x,), backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, computed with max subtraction."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-d tensor, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = _out(y, (x,))

    def backward_fn(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (x,), backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance,
    then apply the affine scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"gamma/beta must have shape ({d},)")
    _check_same_dtype(x, gamma, beta)
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mean) * inv
    out = _out(xhat * gamma.data + beta.data, (x, gamma, beta))
    lead_axes = tuple(range(x.data.ndim - 1))

    def backward_fn(g):
        dbeta = g.sum(axis=lead_axes) if lead_axes else g.copy()
        dgamma = (g * xhat).sum(axis=lead_axes) if lead_axes else g * xhat
        dxhat = g * gamma.data
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
        dx = (dxhat - s1 / d - xhat * s2 / d) * inv
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), backward_fn)


def conv1d_same(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Zero-padded, length-preserving 1-d cross-correlation, stride 1.

    x: (L, C_in), w: (K, C_in, C_out) with K odd, b: (C_out,).
    """
    if x.data.ndim != 2 or w.data.ndim != 3 or b.data.ndim != 1:
        raise ShapeError(
            f"conv1d_same expects (L,Cin), (K,Cin,Cout), (Cout,); "
            f"got {x.shape}, {w.shape}, {b.shape}"
        )
    k, c_in, c_out = w.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same kernel size must be odd, got {k}")
    if x.shape[1] != c_in:
        raise ShapeError(f"input channels {x.shape[1]} != kernel channels {c_in}")
    if b.shape[0] != c_out:
        raise ShapeError(f"bias length {b.shape[0]} != output channels {c_out}")
    _check_same_dtype(x, w, b)
    out = _out(_kernels.conv1d_forward(x.data, w.data, b.data), (x, w, b))

    def backward_fn(g):
        return _kernels.conv1d_backward(x.data, w.data, g)

    return _record(out, (x, w, b), backward_fn)


def masked_mean_rows(x: Tensor, mask: Tensor) -> Tensor:
    """Mean over the rows of x (L, D) where mask (L,) is 1.

    The mask is treated as a constant; gradient is spread uniformly over
    the unmasked rows.
    """
    if x.data.ndim != 2 or mask.data.ndim != 1 or x.shape[0] != mask.shape[0]:
        raise ShapeError(f"masked_mean_rows got x {x.shape}, mask {mask.shape}")
    sel = mask.data != 0
    n = int(sel.sum())
    if n == 0:
        raise EmptySequenceError("masked_mean_rows: mask selects no positions")
    # sum over the selected rows only, so appended masked rows cannot even
    # perturb summation order (exact padding invariance)
    out = _out(x.data[sel].sum(axis=0) / n, (x,))

    def backward_fn(g):
        dx = np.zeros_like(x.data)
        dx[sel] = g / n
        return (dx,)

    return _record(out, (x,), backward_fn)


def concat_last(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors along the last axis; leading shapes must agree."""
    if not xs:
        raise ContractError("concat_last needs at least one tensor")
    lead = xs[0].shape[:-1]
    for t in xs[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last leading shapes differ: {xs[0].shape} vs {t.shape}"
            )
    _check_same_dtype(*xs)
    out = _out(np.concatenate([t.data for t in xs], axis=-1), tuple(xs))
    sizes = [t.shape[-1] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=-1))

    return _record(out, tuple(xs), backward_fn)


def stack_scalars(xs: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a length-n vector."""
    for t in xs:
        if t.data.ndim != 0:
            raise ShapeError(f"stack_scalars needs scalars, got shape {t.shape}")
    _check_same_dtype(*xs)
    out = _out(np.stack([t.data for t in xs]), tuple(xs))

    def backward_fn(g):
        return tuple(g[i] for i in range(len(xs)))

    return _record(out, tuple(xs), backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    out = _out(x.data.reshape(shape), (x,))
    orig = x.shape

    def backward_fn(g):
        return (g.reshape(orig),)

    return _record(out, (x,), backward_fn)


def sum_all(x: Tensor) -> Tensor:
    out = _out(x.data.sum(), (x,))

    def backward_fn(g):
        return (np.full_like(x.data, g),)

    return _record(out, (x,), backward_fn)


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of elementwise squared differences; differentiable in both."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    if pred.data.size == 0:
        raise ContractError("mse of empty tensors is undefined")
    _check_same_dtype(pred, target)
    diff = pred.data - target.data
    n = pred.data.size
    out = _out(np.mean(diff * diff), (pred, target))

    def backward_fn(g):
        d = (2.0 / n) * diff * g
        return d, -d

    return _record(out, (pred, target), backward_fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; p == 0 returns x unchanged (the default path)."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1.0 - p)
    out = _out(x.data * keep, (x,))

    def backward_fn(g):
        return (g * keep,)

    return _record(out, (x,), backward_fn)
