"""Dense tensors with reverse-mode gradients.

Every layer in this package runs on the :class:`Tensor` below. Each operation
records its parents and a closure that turns the output adjoint into parent
adjoints; ``backward()`` replays the recording in reverse topological order.
Adjoints are collected in a per-call map and only then added into ``.grad``,
so two backward passes without ``zero_grads`` accumulate exactly 2x.

Shapes are strict: binary elementwise ops require identical shapes and the
only broadcasting anywhere is the explicit row-wise ``add_bias``. Scalars are
0-d arrays. Default precision is float64; call ``set_default_dtype`` for
float32 runs (gradient checks are only meaningful in 64-bit).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_DEFAULT_DTYPE = np.dtype(np.float64)
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense array with an optional gradient slot and a backward recipe.

    ``parents`` and ``backward_fn`` are only set on op outputs; leaves
    (parameters, constants) carry neither. ``grad`` stays ``None`` until the
    first backward pass or ``zero_grads`` touches the tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        ``self`` must be a scalar (0-d). Repeated calls without ``zero_grads``
        keep adding, which the training loop relies on for gradient
        accumulation across the essays of a batch.
        """
        if self.data.shape != ():
            raise ValueError(
                f"backward requires a scalar tensor, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        adjoint = {id(self): np.ones((), dtype=self.data.dtype)}
        for node in reversed(topo):
            out_grad = adjoint.pop(id(node), None)
            if out_grad is None:
                continue
            if node.requires_grad and node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += out_grad
            if node._backward is None:
                continue
            for parent, g in zip(node._parents, node._backward(out_grad)):
                if g is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoint:
                    # allocate rather than mutate: closures may hand back views
                    adjoint[key] = adjoint[key] + g
                else:
                    adjoint[key] = g


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; recursion would overflow on long LSTM-era graphs
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def parameter(data) -> Tensor:
    """Mark an array as trainable: a leaf that collects gradients."""
    return Tensor(np.array(data, copy=True), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def node(data, parents, backward_fn) -> Tensor:
    """Create an op output; the graph is pruned when no parent needs grads."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents),
                      backward_fn=backward_fn)
    return Tensor(data)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = np.zeros_like(t.data)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes differ: {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return node(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = np.asarray(out, dtype=x.dtype)
    return node(out, (a,), lambda g: (g * out * (1.0 - out),))


def add_bias(m: Tensor, b: Tensor) -> Tensor:
    """Row-wise bias add, the one sanctioned broadcast: (n,k) + (k,)."""
    if m.data.ndim != 2 or b.data.ndim != 1 or m.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: need (n,k) and (k,), got {m.data.shape} and {b.data.shape}")
    return node(m.data + b.data, (m, b), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# contractions and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if not (1 <= ad.ndim <= 2 and 1 <= bd.ndim <= 2):
        raise ShapeError(f"matmul: only 1-d/2-d operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {ad.shape} @ {bd.shape}")

    def backward(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:  # (k,)@(k,n) -> (n,)
            return g @ bd.T, np.outer(ad, g)
        if ad.ndim == 2 and bd.ndim == 1:  # (m,k)@(k,) -> (m,)
            return np.outer(g, bd), ad.T @ g
        return g * bd, g * ad              # (k,)@(k,) -> ()

    return node(ad @ bd, (a, b), backward)


def vsum(a: Tensor) -> Tensor:
    shape = a.data.shape
    dt = a.data.dtype
    return node(np.asarray(a.data.sum(), dtype=dt), (a,),
                lambda g: (np.full(shape, g, dtype=dt),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.data.shape
    dt = a.data.dtype
    return node(np.asarray(a.data.mean(), dtype=dt), (a,),
                lambda g: (np.full(shape, g / n, dtype=dt),))


def softmax(v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax over a vector; masked entries get weight exactly 0.

    ``mask`` is a boolean array marking the live entries. At least one entry
    must be live. Computed with max subtraction, so huge scores are fine.
    """
    x = v.data
    if x.ndim != 1 or x.shape[0] == 0:
        raise ValueError(f"softmax expects a non-empty vector, got shape {x.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax: mask shape {mask.shape} vs scores {x.shape}")
        if not mask.any():
            raise ValueError("softmax: all entries masked")
        x = np.where(mask, x, -np.inf)
    m = x.max()
    e = np.exp(x - m)
    out = e / e.sum()

    def backward(g):
        s = (g * out).sum()
        return (out * (g - s),)  # zero rows stay zero, masked grads vanish

    return node(out, (v,), backward)


# ---------------------------------------------------------------------------
# structure ops


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return node(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack_rows(vectors) -> Tensor:
    """Stack 1-d tensors of equal length into a (n, k) matrix."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("stack_rows of zero vectors")
    for v in vectors:
        if v.data.ndim != 1 or v.data.shape != vectors[0].data.shape:
            raise ShapeError(
                f"stack_rows: all rows must share one 1-d shape, got "
                f"{v.data.shape} vs {vectors[0].data.shape}")
    out = np.stack([v.data for v in vectors])
    return node(out, tuple(vectors), lambda g: tuple(g[i] for i in range(len(vectors))))


def stack_scalars(scalars) -> Tensor:
    scalars = list(scalars)
    if not scalars:
        raise ValueError("stack_scalars of zero scalars")
    for s in scalars:
        if s.data.shape != ():
            raise ShapeError(f"stack_scalars: expected scalars, got shape {s.data.shape}")
    out = np.array([s.data for s in scalars], dtype=scalars[0].data.dtype)
    return node(out, tuple(scalars),
                lambda g: tuple(np.asarray(g[i]) for i in range(len(scalars))))
