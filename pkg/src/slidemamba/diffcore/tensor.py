"""Dense float64 tensors with reverse-mode gradient accumulation.

Every differentiable operation records its inputs and a backward closure
on the output tensor; ``backward()`` on a scalar walks the recorded graph
in reverse topological order and accumulates ``grad`` buffers on every
tensor with ``requires_grad=True``. Repeated backward calls without
``zero_grad`` accumulate, by design.

Elementwise ops broadcast numpy-style; gradients of broadcast inputs are
summed back to the original shape. Matmul is strictly 2-D.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, ShapeError

__all__ = ["Tensor", "tensor", "concat", "linear_recurrence", "RowIndexPlan"]


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus optional gradient buffer and tape record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- tape plumbing -------------------------------------------------------

    def _child(self, data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- elementwise arithmetic ----------------------------------------------

    @staticmethod
    def _coerce(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        return self._child(
            a.data + b.data, (a, b),
            lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other
        return self._child(
            a.data - b.data, (a, b),
            lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))),
        )

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        return self._child(
            a.data * b.data, (a, b),
            lambda g: (
                (a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape)),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        return self._child(
            a.data / b.data, (a, b),
            lambda g: (
                (a, _unbroadcast(g / b.data, a.shape)),
                (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
            ),
        )

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        a = self
        return self._child(-a.data, (a,), lambda g: ((a, -g),))

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ContractError("pow exponent must be a python scalar")
        a, e = self, float(exponent)
        return self._child(
            a.data ** e, (a,), lambda g: ((a, g * e * a.data ** (e - 1.0)),)
        )

    # -- matmul ----------------------------------------------------------------

    def matmul(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
        return self._child(
            a.data @ b.data, (a, b),
            lambda g: ((a, g @ b.data.T), (b, a.data.T @ g)),
        )

    __matmul__ = matmul

    # -- unary nonlinearities ----------------------------------------------------

    def relu(self) -> "Tensor":
        a = self
        out = np.maximum(a.data, 0.0)
        return self._child(out, (a,), lambda g: ((a, g * (a.data > 0.0)),))

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return self._child(out, (a,), lambda g: ((a, g * out),))

    def log(self) -> "Tensor":
        a = self
        return self._child(np.log(a.data), (a,), lambda g: ((a, g / a.data),))

    def sqrt(self) -> "Tensor":
        a = self
        out = np.sqrt(a.data)
        return self._child(out, (a,), lambda g: ((a, g / (2.0 * out)),))

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return self._child(out, (a,), lambda g: ((a, g * (1.0 - out * out)),))

    def sigmoid(self) -> "Tensor":
        a = self
        out = _sigmoid(a.data)
        return self._child(out, (a,), lambda g: ((a, g * out * (1.0 - out)),))

    def softplus(self) -> "Tensor":
        a = self
        out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
        return self._child(out, (a,), lambda g: ((a, g * _sigmoid(a.data)),))

    # -- reductions / reshaping ---------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return ((a, np.broadcast_to(gg, a.shape).copy()),)

        return self._child(out, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        count = a.data.size if axis is None else np.prod(
            [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
        )
        out = a.data.mean(axis=axis, keepdims=keepdims)

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return ((a, np.broadcast_to(gg, a.shape) / float(count)),)

        return self._child(out, (a,), backward)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape
        return self._child(
            a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(old)),)
        )

    # -- row indexing -----------------------------------------------------------

    def gather_rows(self, indices, plan: "RowIndexPlan | None" = None) -> "Tensor":
        """Select rows by integer index; backward scatter-adds.

        A precomputed RowIndexPlan for the same indices turns the backward
        scatter into a segment sum instead of np.add.at.
        """
        idx = np.asarray(indices, dtype=np.intp)
        a = self

        def backward(g):
            if plan is not None:
                return ((a, plan.add_to_rows(g, a.shape[0])),)
            out = np.zeros_like(a.data)
            np.add.at(out, idx, g)
            return ((a, out),)

        return self._child(a.data[idx], (a,), backward)

    def scatter_add_rows(self, indices, n_rows: int,
                         plan: "RowIndexPlan | None" = None) -> "Tensor":
        """Sum rows of self into an (n_rows, d) buffer at the given indices.

        Accumulation follows the order of ``indices`` (segment sums preserve
        it), so callers that need a deterministic per-row summation order
        must pre-sort.
        """
        idx = np.asarray(indices, dtype=np.intp)
        if idx.shape[0] != self.shape[0]:
            raise ShapeError("scatter_add_rows: one index per row required")
        a = self
        if plan is not None:
            out = plan.add_to_rows(a.data, n_rows)
        else:
            out = np.zeros((n_rows,) + a.shape[1:], dtype=np.float64)
            np.add.at(out, idx, a.data)
        return self._child(out, (a,), lambda g: ((a, g[idx]),))

    # -- fused ops ----------------------------------------------------------------

    def softmax(self) -> "Tensor":
        """Row-stochastic softmax over the last axis, max-shifted for stability."""
        if self.ndim == 0 or self.shape[-1] < 1:
            raise ShapeError("softmax needs a non-empty last axis")
        a = self
        shifted = a.data - a.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)

        def backward(g):
            dot = (g * out).sum(axis=-1, keepdims=True)
            return ((a, out * (g - dot)),)

        return self._child(out, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class RowIndexPlan:
    """Segment-sum plan for repeatedly scatter-adding by one index vector.

    Sorting the indices once lets every scatter become a contiguous
    np.add.reduceat, which is far cheaper than np.add.at. Accumulation
    order within a target row follows the stable sort of the indices.
    """

    def __init__(self, indices, n_rows: int):
        idx = np.asarray(indices, dtype=np.intp)
        self.idx = idx
        self.n_rows = int(n_rows)
        self.perm = np.argsort(idx, kind="stable")
        self.presorted = bool(np.all(self.perm == np.arange(idx.size)))
        sorted_idx = idx[self.perm]
        if idx.size:
            change = np.flatnonzero(np.diff(sorted_idx)) + 1
            self.starts = np.concatenate([[0], change])
            self.rows = sorted_idx[self.starts]
        else:
            self.starts = np.empty(0, dtype=np.intp)
            self.rows = np.empty(0, dtype=np.intp)
        # all-unique indices (e.g. permutations) scatter by plain assignment
        self.unique = self.rows.size == idx.size

    def add_to_rows(self, values: np.ndarray, n_rows: int | None = None) -> np.ndarray:
        n = self.n_rows if n_rows is None else int(n_rows)
        out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
        if not self.idx.size:
            return out
        if self.unique:
            out[self.idx] = values
        else:
            stream = values if self.presorted else values[self.perm]
            out[self.rows] = np.add.reduceat(stream, self.starts, axis=0)
        return out


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate tensors along an axis; backward splits the gradient."""
    ts = [Tensor._coerce(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis if axis >= 0 else t.ndim + axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple((t, p) for t, p in zip(ts, pieces))

    out = Tensor(data)
    if any(t.requires_grad for t in ts):
        out.requires_grad = True
        out._parents = tuple(ts)
        out._backward = backward
    return out


def linear_recurrence(a: Tensor, bx: Tensor, kernel) -> Tensor:
    """Differentiable first-order recurrence h_t = a_t * h_{t-1} + bx_t, h_{-1} = 0.

    ``kernel(a_arr, bx_arr)`` evaluates the recurrence over axis 0 on raw
    arrays (either the sequential reference or the parallel scan). The
    backward pass is the time-reversed recurrence

        g_t = dL/dh_t + a_{t+1} * g_{t+1}

    evaluated with the same kernel, giving d(bx) = g and
    d(a)_t = g_t * h_{t-1}.
    """
    a = Tensor._coerce(a)
    bx = Tensor._coerce(bx)
    if a.shape != bx.shape:
        raise ShapeError(f"linear_recurrence shapes differ: {a.shape} vs {bx.shape}")
    h = kernel(a.data, bx.data)

    def backward(g):
        a_flip = a.data[::-1]
        # coefficient for the reverse recurrence: a shifted one step forward
        coef = np.concatenate([np.zeros_like(a_flip[:1]), a_flip[:-1]], axis=0)
        adj = kernel(coef, g[::-1])[::-1]
        h_prev = np.concatenate([np.zeros_like(h[:1]), h[:-1]], axis=0)
        return ((a, adj * h_prev), (bx, adj.copy()))

    out = Tensor(h)
    if a.requires_grad or bx.requires_grad:
        out.requires_grad = True
        out._parents = (a, bx)
        out._backward = backward
    return out
