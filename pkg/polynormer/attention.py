"""
Equivariant attention layers: sparse local attention on graph edges and
kernelized linear global attention, both combined with the gated
LayerNorm form, plus dense oracles used for equivalence and stability
probes.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence
import logging

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import diffmath as dm
from .config import MAX_DENSE_NODES, LocalKind
from .diffmath import DiffValue
from .errors import DomainError, ShapeError
from .graphstore import Graph

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5
FLOAT32_MAX = float(np.finfo(np.float32).max)


@dataclass
class LocalLayerParams:
    w_v: DiffValue
    w_h: DiffValue
    beta: DiffValue
    ln_gain: DiffValue
    ln_shift: DiffValue
    # absent for the GCN local kind
    att_src: Optional[DiffValue] = None
    att_dst: Optional[DiffValue] = None

    @classmethod
    def random(cls, tape: dm.Tape, d: int, rng: np.random.Generator,
               local_kind: LocalKind = LocalKind.GAT, scale: float = 0.5) -> "LocalLayerParams":
        """Gaussian draws for every parameter, attention vectors only for GAT"""
        draw = lambda shape, name: tape.leaf(scale * rng.standard_normal(shape), name)
        gat = LocalKind(local_kind) is LocalKind.GAT
        return cls(
            w_v=draw((d, d), "w_v"),
            w_h=draw((d, d), "w_h"),
            beta=draw((1, d), "beta"),
            ln_gain=tape.leaf(1.0 + scale * rng.standard_normal((1, d)), "ln_gain"),
            ln_shift=draw((1, d), "ln_shift"),
            att_src=draw((1, d), "att_src") if gat else None,
            att_dst=draw((1, d), "att_dst") if gat else None,
        )


@dataclass
class GlobalLayerParams:
    w_q: DiffValue
    w_k: DiffValue
    w_v: DiffValue
    w_h: DiffValue
    beta: DiffValue
    ln_gain: DiffValue
    ln_shift: DiffValue

    @classmethod
    def random(cls, tape: dm.Tape, d: int, rng: np.random.Generator,
               scale: float = 0.5) -> "GlobalLayerParams":
        draw = lambda shape, name: tape.leaf(scale * rng.standard_normal(shape), name)
        return cls(
            w_q=draw((d, d), "w_q"),
            w_k=draw((d, d), "w_k"),
            w_v=draw((d, d), "w_v"),
            w_h=draw((d, d), "w_h"),
            beta=draw((1, d), "beta"),
            ln_gain=tape.leaf(1.0 + scale * rng.standard_normal((1, d)), "ln_gain"),
            ln_shift=draw((1, d), "ln_shift"),
        )


@dataclass
class AttentionMatrix:
    """Sparse attention: a fixed CSR pattern with differentiable nonzeros"""
    pattern: sp.csr_matrix
    values: DiffValue

    def to_csr(self) -> sp.csr_matrix:
        p = self.pattern
        return sp.csr_matrix((self.values.value[:, 0], p.indices, p.indptr), shape=p.shape)


def _head_bounds(width: int, heads: int, head: int):
    if width % heads:
        raise ShapeError(f"width {width} is not divisible by {heads} heads")
    size = width // heads
    if not 0 <= head < heads:
        raise ShapeError(f"head {head} out of range for {heads} heads")
    return head * size, (head + 1) * size


# ---------------------------------------------------------------------------
# local attention
# ---------------------------------------------------------------------------

def gat_attention(graph: Graph, x: DiffValue, params: LocalLayerParams, head: int,
                  heads: int = 1, v: Optional[DiffValue] = None) -> AttentionMatrix:
    """
    GAT-style attention for one head over the graph's stored edges.

    For the edge j→i stored at row i, column j:
    e_ij = leaky_relu(a_src·z_i + a_dst·z_j), then softmax over row i.
    """
    if params.att_src is None or params.att_dst is None:
        raise DomainError("gat_attention requires attention vectors")
    if x.shape[0] != graph.n:
        raise ShapeError(f"gat_attention: input has {x.shape[0]} rows for n={graph.n}")
    v = v if v is not None else dm.matmul(x, params.w_v)
    lo, hi = _head_bounds(v.shape[1], heads, head)
    z = dm.slice_cols(v, lo, hi) if heads > 1 else v
    a_src = dm.transpose(dm.slice_cols(params.att_src, lo, hi) if heads > 1 else params.att_src)
    a_dst = dm.transpose(dm.slice_cols(params.att_dst, lo, hi) if heads > 1 else params.att_dst)
    s = dm.matmul(z, a_src)
    t = dm.matmul(z, a_dst)

    adj = graph.adjacency
    rows = np.repeat(np.arange(graph.n), np.diff(adj.indptr))
    scores = dm.leaky_relu(dm.add(dm.gather_rows(s, rows), dm.gather_rows(t, adj.indices)))
    return AttentionMatrix(adj, dm.segment_softmax(scores, adj.indptr))


def gcn_adjacency(graph: Graph) -> sp.csr_matrix:
    """Symmetric-normalized D^{-1/2}(A+I)D^{-1/2}"""
    adj = graph.with_self_loops().adjacency
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    norm = sp.csr_matrix(inv_sqrt @ adj @ inv_sqrt)
    norm.sort_indices()
    return norm


def _gate(params_beta: DiffValue, n: int, carrier: Optional[np.ndarray]) -> DiffValue:
    """σ(1βᵀ) for v1, σ(v₂βᵀ) when a carrier vector is given"""
    if carrier is None:
        return dm.sigmoid(dm.broadcast_row(params_beta, n))
    column = params_beta.tape.constant(np.asarray(carrier, dtype=np.float64).reshape(n, 1), "carrier")
    return dm.sigmoid(dm.matmul(column, params_beta))


def gated_combine(av: DiffValue, h: DiffValue, beta: DiffValue, ln_gain: DiffValue,
                  ln_shift: DiffValue, carrier: Optional[np.ndarray] = None) -> DiffValue:
    """X' = (1 - g) ⊙ LayerNorm(H ⊙ AV) + g ⊙ AV"""
    n, d = av.shape
    g = _gate(beta, n, carrier)
    normed = dm.layer_norm_rows(dm.hadamard(h, av), ln_gain, ln_shift, LAYER_NORM_EPS)
    ones = av.tape.constant(np.ones((n, d)), "ones")
    return dm.add(dm.hadamard(dm.subtract(ones, g), normed), dm.hadamard(g, av))


def local_propagate(x: DiffValue, graph: Graph, params: LocalLayerParams, heads: int = 1,
                    local_kind: LocalKind = LocalKind.GAT) -> DiffValue:
    """A·V with heads concatenated"""
    v = dm.matmul(x, params.w_v)
    if LocalKind(local_kind) is LocalKind.GCN:
        return dm.spmm(gcn_adjacency(graph), v)
    outputs = []
    for head in range(heads):
        att = gat_attention(graph, x, params, head, heads, v=v)
        lo, hi = _head_bounds(v.shape[1], heads, head)
        v_h = dm.slice_cols(v, lo, hi) if heads > 1 else v
        outputs.append(dm.spmm(att.pattern, v_h, values=att.values))
    return outputs[0] if heads == 1 else dm.concat_cols(outputs)


def local_layer(x: DiffValue, graph: Graph, params: LocalLayerParams, heads: int = 1,
                local_kind: LocalKind = LocalKind.GAT,
                carrier: Optional[np.ndarray] = None) -> DiffValue:
    """One local attention layer in the gated LayerNorm form"""
    if x.shape[0] != graph.n:
        raise ShapeError(f"local_layer: input has {x.shape[0]} rows for n={graph.n}")
    av = local_propagate(x, graph, params, heads, local_kind)
    h = dm.matmul(x, params.w_h)
    return gated_combine(av, h, params.beta, params.ln_gain, params.ln_shift, carrier)


# ---------------------------------------------------------------------------
# global attention
# ---------------------------------------------------------------------------

def kernel_attention(x: DiffValue, params: GlobalLayerParams, heads: int = 1) -> DiffValue:
    """
    Linear global attention via the sigmoid kernel factorization.

    Per head: σ(Q)(σ(K)ᵀV) / (σ(Q)·Σᵢσ(Kᵢ)); no n×n matrix is formed.
    """
    q = dm.sigmoid(dm.matmul(x, params.w_q))
    k = dm.sigmoid(dm.matmul(x, params.w_k))
    v = dm.matmul(x, params.w_v)
    outputs = []
    for head in range(heads):
        lo, hi = _head_bounds(v.shape[1], heads, head)
        q_h, k_h, v_h = ((dm.slice_cols(m, lo, hi) if heads > 1 else m) for m in (q, k, v))
        numerator = dm.matmul(q_h, dm.matmul(dm.transpose(k_h), v_h))
        denominator = dm.matmul(q_h, dm.transpose(dm.col_sum(k_h)))
        outputs.append(dm.divide(numerator, dm.broadcast_col(denominator, hi - lo)))
    return outputs[0] if heads == 1 else dm.concat_cols(outputs)


def global_layer(x: DiffValue, params: GlobalLayerParams, heads: int = 1,
                 carrier: Optional[np.ndarray] = None) -> DiffValue:
    """One global attention layer in the gated LayerNorm form"""
    av = kernel_attention(x, params, heads)
    h = dm.matmul(x, params.w_h)
    return gated_combine(av, h, params.beta, params.ln_gain, params.ln_shift, carrier)


def parallel_layer(x: DiffValue, graph: Graph, local: LocalLayerParams, w_q: DiffValue,
                   w_k: DiffValue, heads: int = 1, local_kind: LocalKind = LocalKind.GAT,
                   carrier: Optional[np.ndarray] = None) -> DiffValue:
    """
    Local-and-global layer: sparse and kernel attention summed inside one gate.

    Value, gate and LayerNorm parameters are shared; only the kernel
    attention has its own query and key projections.
    """
    av = local_propagate(x, graph, local, heads, local_kind)
    kernel_params = GlobalLayerParams(w_q, w_k, local.w_v, local.w_h,
                                      local.beta, local.ln_gain, local.ln_shift)
    mixed = dm.add(av, kernel_attention(x, kernel_params, heads))
    h = dm.matmul(x, local.w_h)
    return gated_combine(mixed, h, local.beta, local.ln_gain, local.ln_shift, carrier)


# ---------------------------------------------------------------------------
# dense oracles
# ---------------------------------------------------------------------------

def _check_dense_cap(n: int) -> None:
    if n > MAX_DENSE_NODES:
        raise DomainError(f"dense attention capped at {MAX_DENSE_NODES} nodes, got {n}")


def dense_kernel_attention_oracle(x: DiffValue, params: GlobalLayerParams, heads: int = 1) -> DiffValue:
    """Forms σ(Q)σ(K)ᵀ explicitly, row-normalizes it and multiplies by V"""
    _check_dense_cap(x.shape[0])
    q = dm.sigmoid(dm.matmul(x, params.w_q))
    k = dm.sigmoid(dm.matmul(x, params.w_k))
    v = dm.matmul(x, params.w_v)
    n = x.shape[0]
    outputs = []
    for head in range(heads):
        lo, hi = _head_bounds(v.shape[1], heads, head)
        q_h, k_h, v_h = ((dm.slice_cols(m, lo, hi) if heads > 1 else m) for m in (q, k, v))
        scores = dm.matmul(q_h, dm.transpose(k_h))
        normalized = dm.divide(scores, dm.broadcast_col(dm.row_sum(scores), n))
        outputs.append(dm.matmul(normalized, v_h))
    return outputs[0] if heads == 1 else dm.concat_cols(outputs)


def kernel_attention_scores(x: np.ndarray, w_q: np.ndarray, w_k: np.ndarray, heads: int = 1,
                            rows: Optional[Sequence[int]] = None,
                            cols: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Exact global attention scores for selected (row, column) node pairs.

    Heads are averaged. The normalizer sums keys over all nodes, so a
    full row sums to 1.
    """
    n = x.shape[0]
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.int64)
    cols = np.arange(n) if cols is None else np.asarray(cols, dtype=np.int64)
    q = expit(x[rows] @ w_q)
    k_all = expit(x @ w_k)
    out = np.zeros((len(rows), len(cols)))
    for head in range(heads):
        lo, hi = _head_bounds(q.shape[1], heads, head)
        q_h, k_h = q[:, lo:hi], k_all[:, lo:hi]
        denominator = q_h @ k_h.sum(axis=0)
        out += (q_h @ k_h[cols].T) / denominator[:, None]
    return out / heads


def dense_softmax_attention(x: DiffValue, wq: DiffValue, wk: DiffValue, wv: DiffValue) -> DiffValue:
    """softmax(QKᵀ/√d)·V"""
    _check_dense_cap(x.shape[0])
    q = dm.matmul(x, wq)
    k = dm.matmul(x, wk)
    v = dm.matmul(x, wv)
    scores = dm.scale(dm.matmul(q, dm.transpose(k)), 1.0 / np.sqrt(q.shape[1]))
    return dm.matmul(dm.exp(dm.log_softmax_rows(scores)), v)


# ---------------------------------------------------------------------------
# kernel denominator probes
# ---------------------------------------------------------------------------

def sigmoid_kernel_denominator(k: np.ndarray) -> np.ndarray:
    """Σᵢ σ(Kᵢ,:); every entry lies strictly within (0, n)"""
    k = np.asarray(k, dtype=np.float64)
    return expit(k).sum(axis=0)


def relu_kernel_denominator(k: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Σᵢ relu(Kᵢ,:) accumulated in the given precision (probe only)"""
    k = np.asarray(k, dtype=dtype)
    with np.errstate(over="ignore"):
        return np.maximum(k, 0).sum(axis=0, dtype=dtype)


def float32_overflows(values: np.ndarray) -> bool:
    values = np.asarray(values, dtype=np.float64)
    return bool(np.any(~np.isfinite(values)) or np.any(np.abs(values) > FLOAT32_MAX))


def kernel_overflow_probe(n: int, magnitude: float, width: int = 1) -> dict:
    """Accumulate a constant key matrix through both kernels and compare"""
    k = np.full((n, width), float(magnitude))
    relu32 = relu_kernel_denominator(k, np.float32)
    relu64 = relu_kernel_denominator(k, np.float64)
    sig = sigmoid_kernel_denominator(k)
    result = {
        "n": n,
        "magnitude": magnitude,
        "relu_denominator": float(relu64.max()),
        "relu_float32_overflow": float32_overflows(relu32) or float32_overflows(relu64),
        "sigmoid_denominator": float(sig.max()),
        "sigmoid_within_bounds": bool(np.all(sig > 0) and np.all(sig <= n)),
    }
    logger.debug(f"Kernel overflow probe: {result}")
    return result
