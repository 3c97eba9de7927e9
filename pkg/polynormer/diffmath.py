"""
Dense/sparse matrix kernels with reverse-mode differentiation.

Every forward computation of the model is expressed through the kernels in
this module. A Tape records one node per kernel call; backward() walks the
record in reverse creation order, which is a reverse topological order
because a node can only depend on nodes created before it.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import DomainError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_LEAKY_SLOPE = 0.2

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class KernelKind(str, Enum):
    MATMUL = "matmul"
    TRANSPOSE = "transpose"
    ADD = "add"
    SUBTRACT = "subtract"
    HADAMARD = "hadamard"
    SCALE = "scale"
    SIGMOID = "sigmoid"
    RELU = "relu"
    LEAKY_RELU = "leaky-relu"
    EXP = "exponential"
    ROW_SUM = "row-sum"
    COL_SUM = "column-sum"
    BROADCAST_ROW = "broadcast-row-vector"
    BROADCAST_COL = "broadcast-col-vector"
    CONCAT_COLS = "concat-cols"
    SLICE_COLS = "slice-cols"
    DIVIDE = "elementwise-divide"


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array with finite entries"""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must have rank 2, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericalError(f"{name} contains non-finite entries")
    return arr


@dataclass
class _Node:
    value: np.ndarray
    parents: Tuple[int, ...]
    backward: Optional[BackwardFn]
    kind: str
    name: Optional[str] = None


@dataclass(eq=False)
class DiffValue:
    """Handle to a matrix recorded on a Tape"""
    value: np.ndarray
    node: int
    tape: "Tape" = field(repr=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> Optional[np.ndarray]:
        if self.tape.grads is None:
            return None
        return self.tape.grads.get(self.node)


class Tape:
    """One eager computation record; discarded after backward"""

    def __init__(self):
        self._nodes: List[_Node] = []
        self.grads: Optional[Dict[int, np.ndarray]] = None

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, value, name: Optional[str] = None) -> DiffValue:
        arr = as_matrix(value, name or "leaf")
        return self._record(arr, (), None, "leaf", name)

    def constant(self, value, name: Optional[str] = None) -> DiffValue:
        # constants are leaves too; their gradient is simply never read
        return self.leaf(value, name or "constant")

    def _record(self, value: np.ndarray, parents: Tuple[int, ...],
                backward: Optional[BackwardFn], kind: str,
                name: Optional[str] = None) -> DiffValue:
        if not np.isfinite(value).all():
            raise NumericalError(f"{kind} produced non-finite values")
        node_id = len(self._nodes)
        self._nodes.append(_Node(value, parents, backward, kind, name))
        return DiffValue(value, node_id, self)

    def is_leaf(self, node: int) -> bool:
        return not self._nodes[node].parents and self._nodes[node].backward is None

    def leaves(self) -> List[int]:
        return [i for i in range(len(self._nodes)) if self.is_leaf(i)]


def _tape_of(*values: DiffValue) -> Tape:
    tape = values[0].tape
    for v in values[1:]:
        if v.tape is not tape:
            raise DomainError("operands belong to different computation records")
    return tape


def _same_shape(kind: str, a: DiffValue, b: DiffValue) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise and linear kernels
# ---------------------------------------------------------------------------

def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    """(m×k)·(k×n) → m×n"""
    tape = _tape_of(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        return g @ bv.T, av.T @ g

    return tape._record(av @ bv, (a.node, b.node), backward, KernelKind.MATMUL.value)


def transpose(x: DiffValue) -> DiffValue:
    return x.tape._record(x.value.T.copy(), (x.node,), lambda g: (g.T,),
                          KernelKind.TRANSPOSE.value)


def add(a: DiffValue, b: DiffValue) -> DiffValue:
    tape = _tape_of(a, b)
    _same_shape("add", a, b)
    return tape._record(a.value + b.value, (a.node, b.node), lambda g: (g, g),
                        KernelKind.ADD.value)


def subtract(a: DiffValue, b: DiffValue) -> DiffValue:
    tape = _tape_of(a, b)
    _same_shape("subtract", a, b)
    return tape._record(a.value - b.value, (a.node, b.node), lambda g: (g, -g),
                        KernelKind.SUBTRACT.value)


def hadamard(a: DiffValue, b: DiffValue) -> DiffValue:
    tape = _tape_of(a, b)
    _same_shape("hadamard", a, b)
    av, bv = a.value, b.value
    return tape._record(av * bv, (a.node, b.node), lambda g: (g * bv, g * av),
                        KernelKind.HADAMARD.value)


def scale(x: DiffValue, c: float) -> DiffValue:
    c = float(c)
    return x.tape._record(x.value * c, (x.node,), lambda g: (g * c,), KernelKind.SCALE.value)


def sigmoid(x: DiffValue) -> DiffValue:
    y = expit(x.value)
    return x.tape._record(y, (x.node,), lambda g: (g * y * (1.0 - y),), KernelKind.SIGMOID.value)


def relu(x: DiffValue) -> DiffValue:
    mask = (x.value > 0).astype(np.float64)
    return x.tape._record(x.value * mask, (x.node,), lambda g: (g * mask,), KernelKind.RELU.value)


def leaky_relu(x: DiffValue, slope: float = DEFAULT_LEAKY_SLOPE) -> DiffValue:
    factor = np.where(x.value > 0, 1.0, float(slope))
    return x.tape._record(x.value * factor, (x.node,), lambda g: (g * factor,),
                          KernelKind.LEAKY_RELU.value)


def exp(x: DiffValue) -> DiffValue:
    y = np.exp(x.value)
    return x.tape._record(y, (x.node,), lambda g: (g * y,), KernelKind.EXP.value)


def row_sum(x: DiffValue) -> DiffValue:
    """n×d → n×1"""
    cols = x.shape[1]
    return x.tape._record(x.value.sum(axis=1, keepdims=True), (x.node,),
                          lambda g: (np.repeat(g, cols, axis=1),), KernelKind.ROW_SUM.value)


def col_sum(x: DiffValue) -> DiffValue:
    """n×d → 1×d"""
    rows = x.shape[0]
    return x.tape._record(x.value.sum(axis=0, keepdims=True), (x.node,),
                          lambda g: (np.repeat(g, rows, axis=0),), KernelKind.COL_SUM.value)


def broadcast_row(x: DiffValue, rows: int) -> DiffValue:
    """1×d → rows×d"""
    if x.shape[0] != 1:
        raise ShapeError(f"broadcast-row-vector: expected 1×d, got {x.shape}")
    return x.tape._record(np.repeat(x.value, rows, axis=0), (x.node,),
                          lambda g: (g.sum(axis=0, keepdims=True),), KernelKind.BROADCAST_ROW.value)


def broadcast_col(x: DiffValue, cols: int) -> DiffValue:
    """n×1 → n×cols"""
    if x.shape[1] != 1:
        raise ShapeError(f"broadcast-col-vector: expected n×1, got {x.shape}")
    return x.tape._record(np.repeat(x.value, cols, axis=1), (x.node,),
                          lambda g: (g.sum(axis=1, keepdims=True),), KernelKind.BROADCAST_COL.value)


def concat_cols(parts: Sequence[DiffValue]) -> DiffValue:
    if not parts:
        raise ShapeError("concat-cols: no operands")
    tape = _tape_of(*parts)
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"concat-cols: shape mismatch {parts[0].shape} vs {p.shape}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return tape._record(np.concatenate([p.value for p in parts], axis=1),
                        tuple(p.node for p in parts), backward, KernelKind.CONCAT_COLS.value)


def slice_cols(x: DiffValue, start: int, stop: int) -> DiffValue:
    rows, cols = x.shape
    if not 0 <= start < stop <= cols:
        raise ShapeError(f"slice-cols: [{start}, {stop}) out of range for shape {x.shape}")

    def backward(g):
        full = np.zeros((rows, cols))
        full[:, start:stop] = g
        return (full,)

    return x.tape._record(x.value[:, start:stop].copy(), (x.node,), backward,
                          KernelKind.SLICE_COLS.value)


def divide(a: DiffValue, b: DiffValue) -> DiffValue:
    tape = _tape_of(a, b)
    _same_shape("elementwise-divide", a, b)
    zeros = np.argwhere(b.value == 0)
    if len(zeros):
        r, c = zeros[0]
        raise DomainError(f"elementwise-divide: zero denominator at ({r}, {c})")
    av, bv = a.value, b.value

    def backward(g):
        return g / bv, -g * av / (bv * bv)

    return tape._record(av / bv, (a.node, b.node), backward, KernelKind.DIVIDE.value)


_KERNELS: Dict[KernelKind, Callable[..., DiffValue]] = {
    KernelKind.MATMUL: matmul,
    KernelKind.TRANSPOSE: transpose,
    KernelKind.ADD: add,
    KernelKind.SUBTRACT: subtract,
    KernelKind.HADAMARD: hadamard,
    KernelKind.SCALE: scale,
    KernelKind.SIGMOID: sigmoid,
    KernelKind.RELU: relu,
    KernelKind.LEAKY_RELU: leaky_relu,
    KernelKind.EXP: exp,
    KernelKind.ROW_SUM: row_sum,
    KernelKind.COL_SUM: col_sum,
    KernelKind.BROADCAST_ROW: broadcast_row,
    KernelKind.BROADCAST_COL: broadcast_col,
    KernelKind.SLICE_COLS: slice_cols,
    KernelKind.DIVIDE: divide,
}


def apply_kernel(kind: KernelKind, inputs: Sequence[DiffValue], *args) -> DiffValue:
    """
    Dispatch an elementwise or linear kernel by kind.

    Extra positional args carry the kind's parameters: the constant for
    scale, the slope for leaky-relu, the target size for broadcasts and
    (start, stop) for slice-cols.
    """
    kind = KernelKind(kind)
    if kind is KernelKind.CONCAT_COLS:
        return concat_cols(inputs)
    return _KERNELS[kind](*inputs, *args)


# ---------------------------------------------------------------------------
# indexing, reductions and composite kernels
# ---------------------------------------------------------------------------

def gather_rows(x: DiffValue, index: np.ndarray) -> DiffValue:
    """Row selection x[index]; repeated indices accumulate in backward"""
    index = np.asarray(index, dtype=np.int64)
    rows, cols = x.shape
    if len(index) and (index.min() < 0 or index.max() >= rows):
        raise ShapeError(f"gather-rows: index out of range for {rows} rows")

    def backward(g):
        full = np.zeros((rows, cols))
        np.add.at(full, index, g)
        return (full,)

    return x.tape._record(x.value[index], (x.node,), backward, "gather-rows")


def pick(x: DiffValue, rows: np.ndarray, cols: np.ndarray) -> DiffValue:
    """Entries x[rows[k], cols[k]] as a k×1 column"""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, (rows, cols), g[:, 0])
        return (full,)

    return x.tape._record(x.value[rows, cols].reshape(-1, 1), (x.node,), backward, "pick")


def sum_all(x: DiffValue) -> DiffValue:
    shape = x.shape
    return x.tape._record(np.array([[x.value.sum()]]), (x.node,),
                          lambda g: (np.full(shape, g[0, 0]),), "sum-all")


def mean_all(x: DiffValue) -> DiffValue:
    count = x.value.size
    return scale(sum_all(x), 1.0 / count)


def spmm(a: sp.csr_matrix, v: DiffValue, values: Optional[DiffValue] = None) -> DiffValue:
    """
    Sparse-dense product A·V.

    When `values` is given it supplies A's nonzeros (an nnz×1 DiffValue in
    CSR order) and receives gradients; otherwise A is a constant.
    """
    a = sp.csr_matrix(a)
    if a.shape[1] != v.shape[0]:
        raise ShapeError(f"spmm: shape mismatch {a.shape} vs {v.shape}")
    if values is not None:
        _tape_of(v, values)
        if values.shape != (a.nnz, 1):
            raise ShapeError(f"spmm: values shape {values.shape}, expected ({a.nnz}, 1)")
        a = sp.csr_matrix((values.value[:, 0], a.indices, a.indptr), shape=a.shape)
    vv = v.value
    out = np.asarray(a @ vv)

    if values is None:
        return v.tape._record(out, (v.node,), lambda g: (np.asarray(a.T @ g),), "spmm")

    edge_rows = np.repeat(np.arange(a.shape[0]), np.diff(a.indptr))
    edge_cols = a.indices

    def backward(g):
        grad_v = np.asarray(a.T @ g)
        grad_vals = np.einsum("ij,ij->i", g[edge_rows], vv[edge_cols]).reshape(-1, 1)
        return grad_v, grad_vals

    return v.tape._record(out, (v.node, values.node), backward, "spmm")


def segment_softmax(scores: DiffValue, offsets: np.ndarray) -> DiffValue:
    """Softmax within each contiguous segment [offsets[s], offsets[s+1])"""
    offsets = np.asarray(offsets, dtype=np.int64)
    if scores.shape[1] != 1:
        raise ShapeError(f"segment-softmax: expected a column vector, got {scores.shape}")
    if offsets[0] != 0 or offsets[-1] != scores.shape[0]:
        raise ShapeError("segment-softmax: offsets do not partition the scores")
    counts = np.diff(offsets)
    empty = np.flatnonzero(counts <= 0)
    if len(empty):
        raise DomainError(f"segment-softmax: segment {empty[0]} is empty")

    s = scores.value[:, 0]
    starts = offsets[:-1]
    shifted = s - np.repeat(np.maximum.reduceat(s, starts), counts)
    e = np.exp(shifted)
    y = e / np.repeat(np.add.reduceat(e, starts), counts)

    def backward(g):
        gy = g[:, 0] * y
        inner = np.repeat(np.add.reduceat(gy, starts), counts)
        return ((gy - y * inner).reshape(-1, 1),)

    return scores.tape._record(y.reshape(-1, 1), (scores.node,), backward, "segment-softmax")


def layer_norm_rows(x: DiffValue, gain: DiffValue, shift: DiffValue, eps: float = 1e-5) -> DiffValue:
    """
    Row-wise standardization followed by gain and shift.

    Rows whose variance plus eps is zero normalize to zero, so they map to
    the shift vector.
    """
    tape = _tape_of(x, gain, shift)
    n, d = x.shape
    if gain.shape != (1, d) or shift.shape != (1, d):
        raise ShapeError(f"layer-norm: gain {gain.shape} / shift {shift.shape} vs input {x.shape}")
    if eps < 0:
        raise DomainError(f"layer-norm: eps must be non-negative, got {eps}")

    xv = x.value
    centered = xv - xv.mean(axis=1, keepdims=True)
    var = (centered * centered).mean(axis=1, keepdims=True)
    denom = var + eps
    inv = np.zeros_like(denom)
    np.divide(1.0, np.sqrt(denom), out=inv, where=denom > 0)
    xhat = centered * inv
    gv = gain.value

    def backward(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return tape._record(xhat * gv + shift.value, (x.node, gain.node, shift.node),
                        backward, "layer-norm")


def log_softmax_rows(x: DiffValue) -> DiffValue:
    z = x.value - x.value.max(axis=1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(y)

    def backward(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return x.tape._record(y, (x.node,), backward, "log-softmax")


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def backward(loss: DiffValue) -> Dict[int, np.ndarray]:
    """
    Gradients of a 1×1 loss with respect to every leaf on its tape.

    Leaves the loss does not depend on receive zero gradients.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be 1×1, got {loss.shape}")
    tape = loss.tape
    nodes = tape._nodes
    grads: Dict[int, np.ndarray] = {loss.node: np.ones((1, 1))}
    for node_id in range(loss.node, -1, -1):
        node = nodes[node_id]
        g = grads.get(node_id)
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = pg
        if node.parents:
            # interior gradients are not part of the result
            del grads[node_id]
    result = {i: grads.get(i, np.zeros_like(nodes[i].value)) for i in tape.leaves()}
    tape.grads = result
    return result


def grad_check(f: Callable[[Mapping[str, DiffValue]], DiffValue],
               params: Mapping[str, np.ndarray], h: float = 1e-5) -> float:
    """
    Compare analytic gradients against central differences.

    Returns max over entries of |analytic - numeric| / max(1, |numeric|).
    """
    if h <= 0:
        raise DomainError(f"grad_check: h must be positive, got {h}")
    base = {name: as_matrix(value, name) for name, value in params.items()}

    def evaluate(values: Mapping[str, np.ndarray]) -> Tuple[DiffValue, Dict[str, DiffValue]]:
        tape = Tape()
        leaves = {name: tape.leaf(arr, name) for name, arr in values.items()}
        out = f(leaves)
        if out.shape != (1, 1):
            raise ShapeError(f"grad_check: objective must be 1×1, got {out.shape}")
        return out, leaves

    loss, leaves = evaluate(base)
    grads = backward(loss)

    worst = 0.0
    for name, arr in base.items():
        analytic = grads[leaves[name].node]
        for idx in np.ndindex(arr.shape):
            probe = dict(base)
            plus = arr.copy()
            plus[idx] += h
            minus = arr.copy()
            minus[idx] -= h
            try:
                probe[name] = plus
                f_plus = evaluate(probe)[0].value[0, 0]
                probe[name] = minus
                f_minus = evaluate(probe)[0].value[0, 0]
            except NumericalError as exc:
                raise NumericalError(f"grad_check: parameter '{name}' {idx}: {exc}") from exc
            numeric = (f_plus - f_minus) / (2.0 * h)
            if not np.isfinite(numeric):
                raise NumericalError(f"grad_check: parameter '{name}' {idx} gave non-finite probe")
            err = abs(analytic[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    logger.debug(f"grad_check over {list(base)}: max relative error {worst:.3e}")
    return worst
