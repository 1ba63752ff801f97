"""Reverse-mode automatic differentiation over dense 2D float64 arrays.

The operator set is exactly what the graph surrogate needs: matrix products,
broadcast add/mul, ReLU, row softmax, gather/scatter over node and edge
indices, segment means, batch normalization, the attention-weighted
neighborhood aggregation, and the losses. Every op records its inputs on a
dynamic tape (rebuilt each forward pass); ``Tensor.backward`` accumulates
exact gradients in reverse topological order.

Every forward op validates that its output is finite and raises
NonFiniteError otherwise, so NaNs surface at the op that produced them.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN or Inf."""


def _check_finite(values: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(values).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    return values


def _as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"tensors are 2D, got shape {arr.shape}")
    return arr


class Tensor:
    """A 2D float64 array with an optional gradient accumulator."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False, _parents=(), _backward_fn=None, _op_name="tensor construction"):
        self.values = _check_finite(_as_matrix(values), _op_name)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def accumulate_grad(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += grad

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from this (scalar) tensor through the recorded tape."""
        if self.values.size != 1:
            raise ValueError("backward() starts from a scalar (1x1) tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.accumulate_grad(np.ones_like(self.values))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def _op(values: np.ndarray, parents: tuple[Tensor, ...], backward_fn, name: str) -> Tensor:
    out = Tensor(values, _parents=parents, _op_name=name)
    if out.requires_grad:
        out._backward_fn = backward_fn
    return out


def parameter(values, requires_grad: bool = True) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# index plans


class RowIndex:
    """An integer row-index array with a precomputed scatter-add plan.

    Used both for gathering rows (edges pointing at node features) and for
    the reverse scatter-add; building the sort order once per batch keeps the
    backward pass off the slow ufunc.at path.
    """

    def __init__(self, indices, num_rows: int):
        self.indices = np.ascontiguousarray(np.asarray(indices, dtype=np.int64))
        if self.indices.ndim != 1:
            raise ValueError("row indices must be 1D")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= num_rows):
            raise ValueError("row index out of range")
        self.num_rows = int(num_rows)
        self.order = np.argsort(self.indices, kind="stable")
        sorted_idx = self.indices[self.order]
        boundaries = np.flatnonzero(np.diff(sorted_idx)) + 1
        self.starts = np.concatenate([[0], boundaries]) if sorted_idx.size else np.empty(0, np.int64)
        self.present = sorted_idx[self.starts] if sorted_idx.size else np.empty(0, np.int64)
        self.counts = np.bincount(self.indices, minlength=self.num_rows).astype(np.float64)

    @property
    def covers_all_rows(self) -> bool:
        return bool((self.counts > 0).all())

    def scatter_add(self, values: np.ndarray) -> np.ndarray:
        """Sum rows of ``values`` into their target rows: (e, k) -> (num_rows, k)."""
        out = np.zeros((self.num_rows, values.shape[1]))
        if self.indices.size:
            sums = np.add.reduceat(values[self.order], self.starts, axis=0)
            out[self.present] = sums
        return out


def _plan(indices, num_rows) -> RowIndex:
    return indices if isinstance(indices, RowIndex) else RowIndex(indices, num_rows)


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    values = a.values @ b.values

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(grad @ b.values.T)
        if b.requires_grad:
            b.accumulate_grad(a.values.T @ grad)

    return _op(values, (a, b), backward, "matmul")


def _broadcast_backward(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    ok = all(x == y or x == 1 or y == 1 for x, y in zip(a.shape, b.shape))
    if not ok:
        raise ValueError(f"{op} shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may be a broadcastable row or column vector."""
    _check_broadcast(a, b, "add")
    values = a.values + b.values

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(_broadcast_backward(grad, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_broadcast_backward(grad, b.shape))

    return _op(values, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    values = a.values - b.values

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(_broadcast_backward(grad, a.shape))
        if b.requires_grad:
            b.accumulate_grad(-_broadcast_backward(grad, b.shape))

    return _op(values, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; either side may broadcast along rows or columns."""
    _check_broadcast(a, b, "mul")
    values = a.values * b.values

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(_broadcast_backward(grad * b.values, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_broadcast_backward(grad * a.values, b.shape))

    return _op(values, (a, b), backward, "mul")


def relu(a: Tensor) -> Tensor:
    values = np.maximum(a.values, 0.0)

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(grad * (a.values > 0.0))

    return _op(values, (a,), backward, "relu")


def softmax(a: Tensor, axis: int = 1) -> Tensor:
    """Softmax along ``axis`` (per-edge over attention heads when axis=1)."""
    if axis not in (0, 1):
        raise ValueError("axis must be 0 or 1")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    values = exp / exp.sum(axis=axis, keepdims=True)

    def backward(grad):
        if a.requires_grad:
            inner = (grad * values).sum(axis=axis, keepdims=True)
            a.accumulate_grad(values * (grad - inner))

    return _op(values, (a,), backward, "softmax")


def mean(a: Tensor) -> Tensor:
    size = a.values.size
    values = np.array([[a.values.mean()]])

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(np.full(a.shape, grad[0, 0] / size))

    return _op(values, (a,), backward, "mean")


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target array."""
    target = _as_matrix(target)
    if target.shape != pred.shape:
        raise ValueError(f"mse_loss shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.values - target
    values = np.array([[np.mean(diff * diff)]])

    def backward(grad):
        if pred.requires_grad:
            pred.accumulate_grad((2.0 / diff.size) * diff * grad[0, 0])

    return _op(values, (pred,), backward, "mse_loss")


def index_gather(a: Tensor, rows) -> Tensor:
    """Gather rows of ``a``: output row r is ``a[rows[r]]``."""
    plan = _plan(rows, a.shape[0])
    values = a.values[plan.indices]

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(plan.scatter_add(grad))

    return _op(values, (a,), backward, "index_gather")


def segment_mean(a: Tensor, segments, num_segments: int | None = None) -> Tensor:
    """Mean of the rows of ``a`` grouped by segment id.

    Every segment must be non-empty (graph aggregation guarantees this via
    self-loops).
    """
    plan = segments if isinstance(segments, RowIndex) else RowIndex(segments, num_segments)
    if not plan.covers_all_rows:
        raise ValueError("segment_mean requires every segment to be non-empty")
    values = plan.scatter_add(a.values) / plan.counts[:, None]

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad((grad / plan.counts[:, None])[plan.indices])

    return _op(values, (a,), backward, "segment_mean")


def concat_rows(tensors: list[Tensor]) -> Tensor:
    if not tensors:
        raise ValueError("nothing to concatenate")
    widths = {t.shape[1] for t in tensors}
    if len(widths) != 1:
        raise ValueError(f"concat_rows column mismatch: {sorted(widths)}")
    values = np.concatenate([t.values for t in tensors], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate_grad(grad[lo:hi])

    return _op(values, tuple(tensors), backward, "concat_rows")


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Running statistics for one batch-norm layer (mutated in training mode)."""

    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5):
        self.width = width
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-feature batch normalization with learnable scale and shift.

    Training mode normalizes by the batch statistics (biased variance) and
    updates the running statistics (unbiased variance, momentum blend); eval
    mode normalizes by the running statistics.
    """
    if x.shape[1] != state.width:
        raise ValueError(f"batch_norm width mismatch: {x.shape[1]} vs {state.width}")
    if training:
        n = x.shape[0]
        mu = x.values.mean(axis=0)
        var = x.values.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.values - mu) * inv_std
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * unbiased
    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.values - state.running_mean) * inv_std
    values = gamma.values * xhat + beta.values

    def backward(grad):
        if gamma.requires_grad:
            gamma.accumulate_grad((grad * xhat).sum(axis=0, keepdims=True))
        if beta.requires_grad:
            beta.accumulate_grad(grad.sum(axis=0, keepdims=True))
        if x.requires_grad:
            g = grad * gamma.values
            if training:
                gx = g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0)
                x.accumulate_grad(gx * inv_std)
            else:
                x.accumulate_grad(g * inv_std)

    return _op(values, (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------------------
# graph aggregation


class GraphIndex:
    """Directed edge structure of a (batched) graph, with aggregation plans.

    ``edges[:, 0]`` is the receiving node, ``edges[:, 1]`` the neighbor. The
    edge list must contain a self-loop for every node so neighborhoods
    include the node itself.
    """

    def __init__(self, edges: np.ndarray, num_nodes: int):
        edges = np.asarray(edges, dtype=np.int64)
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise ValueError(f"edges must be (e, 2), got {edges.shape}")
        self.num_nodes = int(num_nodes)
        self.dst = RowIndex(edges[:, 0], num_nodes)
        self.src = RowIndex(edges[:, 1], num_nodes)
        has_self_loop = np.zeros(num_nodes, dtype=bool)
        has_self_loop[edges[edges[:, 0] == edges[:, 1], 0]] = True
        if not has_self_loop.all():
            missing = int(np.flatnonzero(~has_self_loop)[0])
            raise ValueError(f"node {missing} has no self-loop; every neighborhood must include itself")
        # CSR structure over receiving nodes, shared by every conv layer.
        self.csr_order = self.dst.order
        self.csr_indices = edges[:, 1][self.csr_order]
        self.csr_indptr = np.searchsorted(edges[:, 0][self.csr_order], np.arange(num_nodes + 1))
        self.inv_degree = 1.0 / self.dst.counts

    @property
    def edge_count(self) -> int:
        return self.dst.indices.size


def feast_aggregate(q: Tensor, xw: Tensor, graph: GraphIndex) -> Tensor:
    """Attention-weighted mean aggregation over graph neighborhoods.

    ``q`` holds per-edge head weights (e, M); ``xw`` holds per-node projected
    features (n, M*w) laid out head-major. Output row i is
    ``(1/|N(i)|) * sum_{j in N(i)} sum_m q[ij, m] * xw[j, m*w:(m+1)*w]``.
    """
    e, heads = q.shape
    n, mw = xw.shape
    if e != graph.edge_count or n != graph.num_nodes:
        raise ValueError("q/xw shapes do not match the graph")
    if mw % heads != 0:
        raise ValueError(f"xw width {mw} is not a multiple of {heads} heads")
    width = mw // heads
    inv_deg_csr = graph.inv_degree[graph.dst.indices[graph.csr_order]]
    q_csr = q.values[graph.csr_order]
    mats = []
    out = np.zeros((n, width))
    for m in range(heads):
        a = scipy.sparse.csr_matrix(
            (q_csr[:, m] * inv_deg_csr, graph.csr_indices, graph.csr_indptr),
            shape=(n, n),
        )
        mats.append(a)
        out += a @ xw.values[:, m * width : (m + 1) * width]

    def backward(grad):
        if xw.requires_grad:
            gxw = np.empty_like(xw.values)
            for m in range(heads):
                gxw[:, m * width : (m + 1) * width] = mats[m].T @ grad
            xw.accumulate_grad(gxw)
        if q.requires_grad:
            gq = np.empty_like(q.values)
            scaled = grad[graph.dst.indices] * graph.inv_degree[graph.dst.indices][:, None]
            for m in range(heads):
                neighbor = xw.values[:, m * width : (m + 1) * width][graph.src.indices]
                gq[:, m] = np.einsum("ij,ij->i", scaled, neighbor)
            q.accumulate_grad(gq)

    return _op(out, (q, xw), backward, "feast_aggregate")


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """ADAM with L2 weight decay folded into the gradient (coupled decay).

    Update: g <- g + wd * theta; first/second moments with bias correction;
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
    """

    def __init__(
        self,
        params: list[Tensor],
        learning_rate: float = 1e-3,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        """Apply one update to every parameter with a populated gradient."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.values
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.values = p.values - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
