"""Reverse-mode differentiation over dense float64 arrays.

A :class:`DiffValue` wraps an ndarray together with the rule that maps its
output gradient to contributions for each parent.  Every operation in this
module builds a new node; :func:`backward` walks the graph once in reverse
topological order and accumulates gradients additively.

Only two broadcasting patterns are supported: same-shape operands and
scalar-with-array.  Row-vector biases and per-row scaling have dedicated ops
(:func:`add_bias`, :func:`scale_rows`).
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DimensionError, DomainError, SegmentIndexError

BackwardRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class DiffValue:
    """A node in a differentiable computation graph."""

    __slots__ = ("data", "grad", "parents", "backward_rule", "requires_grad", "op")

    def __init__(self, data, parents: tuple = (), backward_rule: BackwardRule | None = None,
                 requires_grad: bool = False, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"DiffValue(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def parameter(data) -> DiffValue:
    """Leaf that participates in differentiation."""
    return DiffValue(np.array(data, dtype=np.float64), requires_grad=True, op="param")


def constant(data) -> DiffValue:
    return DiffValue(data)


def _wrap(x) -> DiffValue:
    return x if isinstance(x, DiffValue) else DiffValue(x)


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Build no graph inside the block, even from parameters."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _node(data, parents: tuple, rule: BackwardRule, op: str) -> DiffValue:
    # Nodes with no differentiable ancestor carry no graph.
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return DiffValue(data, parents, rule, requires_grad=True, op=op)
    return DiffValue(data, op=op)


# ---------------------------------------------------------------- elementwise

def _check_broadcast(a: DiffValue, b: DiffValue, op: str) -> None:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def add(a, b) -> DiffValue:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> DiffValue:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> DiffValue:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)), "mul")


def div(a, b) -> DiffValue:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    return _node(ad / bd, (a, b),
                 lambda g: (_unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / bd ** 2, b.shape)),
                 "div")


def neg(a) -> DiffValue:
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> DiffValue:
    a = _wrap(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a) -> DiffValue:
    a = _wrap(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> DiffValue:
    a = _wrap(a)
    if np.any(a.data <= 0):
        raise DomainError("log: non-positive input")
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,), "log")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
                "relu": relu, "exp": exp, "log": log}


def elementwise(op_kind: str, *inputs) -> DiffValue:
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*inputs)


# ------------------------------------------------------------------ reductions

def total(a) -> DiffValue:
    """Sum of all entries as a scalar."""
    a = _wrap(a)
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def mean(a) -> DiffValue:
    a = _wrap(a)
    n = a.data.size
    if n == 0:
        raise ContractError("mean of an empty array")
    return _node(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),), "mean")


# ------------------------------------------------------------- linear algebra

def matmul(a, b) -> DiffValue:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a) -> DiffValue:
    a = _wrap(a)
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def add_bias(x, b) -> DiffValue:
    """``x[n, d] + b[d]`` with the bias broadcast over rows."""
    x, b = _wrap(x), _wrap(b)
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: bias {b.shape} does not fit {x.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def scale_rows(x, w) -> DiffValue:
    """Multiply row ``i`` of ``x[n, d]`` by the scalar ``w[i]``."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 2 or w.shape != (x.shape[0],):
        raise DimensionError(f"scale_rows: weights {w.shape} do not fit {x.shape}")
    xd, wd = x.data, w.data[:, None]
    return _node(xd * wd, (x, w), lambda g: (g * wd, (g * xd).sum(axis=1)), "scale_rows")


def concat(values: Sequence, axis: int = 0) -> DiffValue:
    values = [_wrap(v) for v in values]
    if not values:
        raise ContractError("concat of nothing")
    out = np.concatenate([v.data for v in values], axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def rule(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(out, tuple(values), rule, "concat")


def column(x, j: int) -> DiffValue:
    x = _wrap(x)

    def rule(g):
        out = np.zeros(x.shape)
        out[:, j] = g
        return (out,)

    return _node(x.data[:, j].copy(), (x,), rule, "column")


def pick(x, rows: np.ndarray, cols: np.ndarray) -> DiffValue:
    """Entries ``x[rows[i], cols[i]]`` as a vector."""
    x = _wrap(x)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def rule(g):
        out = np.zeros(x.shape)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _node(x.data[rows, cols], (x,), rule, "pick")


# ------------------------------------------------------------ index scatter

class SegmentIndex:
    """Validated segment ids with a cached scatter operator.

    ``scatter(values)`` returns a ``[num_segments, d]`` array whose row ``s``
    sums the rows of ``values`` carrying id ``s``.
    """

    def __init__(self, ids, num_segments: int):
        ids = np.asarray(ids)
        if ids.ndim != 1:
            raise DimensionError(f"segment ids must be 1-D, got shape {ids.shape}")
        if ids.size and not np.issubdtype(ids.dtype, np.integer):
            raise ContractError("segment ids must be integers")
        ids = ids.astype(np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
            bad = ids[(ids < 0) | (ids >= num_segments)][0]
            raise SegmentIndexError(f"segment id {bad} outside [0, {num_segments})")
        self.ids = ids
        self.num_segments = int(num_segments)

    def __len__(self) -> int:
        return self.ids.size

    @cached_property
    def _operator(self) -> sp.csr_matrix:
        n = self.ids.size
        order = np.argsort(self.ids, kind="stable")
        counts = np.bincount(self.ids, minlength=self.num_segments)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return sp.csr_matrix((np.ones(n), order, indptr), shape=(self.num_segments, n))

    def scatter(self, values: np.ndarray) -> np.ndarray:
        if values.shape[0] != self.ids.size:
            raise DimensionError(f"{values.shape[0]} rows for {self.ids.size} segment ids")
        if values.ndim == 1:
            return np.asarray(self._operator @ values)
        return np.asarray(self._operator @ values).reshape(self.num_segments, *values.shape[1:])


def as_segment_index(segment_ids, num_segments: int) -> SegmentIndex:
    if isinstance(segment_ids, SegmentIndex):
        if segment_ids.num_segments != num_segments:
            raise ContractError(
                f"segment index built for {segment_ids.num_segments} segments, asked for {num_segments}")
        return segment_ids
    return SegmentIndex(segment_ids, num_segments)


def segment_sum(values, segment_ids, num_segments: int) -> DiffValue:
    values = _wrap(values)
    index = as_segment_index(segment_ids, num_segments)
    out = index.scatter(values.data)
    return _node(out, (values,), lambda g: (g[index.ids],), "segment_sum")


def gather_rows(x, index, num_rows: int | None = None) -> DiffValue:
    """Rows ``x[index]``; ``index`` may be a :class:`SegmentIndex` over x's rows."""
    x = _wrap(x)
    seg = as_segment_index(index, x.shape[0] if num_rows is None else num_rows)
    return _node(x.data[seg.ids], (x,), lambda g: (seg.scatter(g),), "gather_rows")


# ------------------------------------------------------- composite kernels

def softmax_rows(x) -> DiffValue:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    return _node(y, (x,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),), "softmax")


def straight_through(soft, hard: np.ndarray) -> DiffValue:
    """Forward value ``hard``; gradient passed to ``soft`` unchanged."""
    soft = _wrap(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise DimensionError(f"straight_through: {hard.shape} vs {soft.shape}")
    return _node(hard, (soft,), lambda g: (g,), "straight_through")


def batch_norm(x, gamma, beta, eps: float = 1e-5,
               running_mean: np.ndarray | None = None,
               running_var: np.ndarray | None = None) -> DiffValue:
    """Column-wise normalization of ``x[n, d]``.

    With ``running_mean``/``running_var`` the given statistics are used
    (eval mode); otherwise the batch's own biased statistics are.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    d = x.shape[1]
    gd = gamma.data
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"batch_norm: scale {gamma.shape}/shift {beta.shape} for {x.shape}")
    if running_mean is not None:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv
        return _node(xhat * gd + beta.data, (x, gamma, beta),
                     lambda g: (g * gd * inv, (g * xhat).sum(axis=0), g.sum(axis=0)),
                     "batch_norm_eval")
    n = x.shape[0]
    mu = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def rule(g):
        gx = g * gd
        dx = inv / n * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _node(xhat * gd + beta.data, (x, gamma, beta), rule, "batch_norm")


def normalize_rows(x, floor: float = 1e-12) -> DiffValue:
    """``x_i / max(||x_i||, floor)`` row by row."""
    x = _wrap(x)
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    live = norms > floor
    denom = np.where(live, norms, floor)
    y = x.data / denom

    def rule(g):
        radial = np.where(live, (g * y).sum(axis=1, keepdims=True), 0.0)
        return ((g - y * radial) / denom,)

    return _node(y, (x,), rule, "normalize_rows")


def masked_logsumexp_rows(x, mask: np.ndarray) -> DiffValue:
    """``log sum_j exp(x[i, j])`` over entries where ``mask[i, j]`` holds."""
    x = _wrap(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"mask {mask.shape} for {x.shape}")
    if not mask.any(axis=1).all():
        raise ContractError("masked_logsumexp_rows: a row has no admissible entry")
    filled = np.where(mask, x.data, -np.inf)
    m = filled.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(filled - m), 0.0)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s))[:, 0]
    p = e / s
    return _node(out, (x,), lambda g: (p * g[:, None],), "masked_logsumexp")


# ------------------------------------------------------------------ backward

def _topological(root: DiffValue) -> list[DiffValue]:
    order: list[DiffValue] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: DiffValue) -> None:
    """Populate ``grad`` of every differentiable node reachable from ``root``."""
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward root does not depend on any parameter")
    order = _topological(root)
    for node in order:
        node.grad = np.zeros(node.shape)
    root.grad = np.ones(root.shape)
    for node in reversed(order):
        if node.backward_rule is None:
            continue
        for parent, contrib in zip(node.parents, node.backward_rule(node.grad)):
            if contrib is not None and parent.requires_grad:
                parent.grad += contrib


def zero_grad(params: Iterable[DiffValue]) -> None:
    for p in params:
        p.grad = np.zeros(p.shape)


# ---------------------------------------------------------------------- adam

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params: Sequence[DiffValue], state: AdamState) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {i} (shape {p.shape}) has no gradient")
    if not state.first_moment:
        state.first_moment = [np.zeros(p.shape) for p in params]
        state.second_moment = [np.zeros(p.shape) for p in params]
    if len(state.first_moment) != len(params):
        raise ContractError(f"optimizer tracks {len(state.first_moment)} parameters, got {len(params)}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        if m.shape != p.shape:
            raise DimensionError(f"moment shape {m.shape} for parameter {p.shape}")
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        # Out-of-place so graphs built before the step keep their operands.
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.grad = np.zeros(p.shape)
