"""
Graph and dataset representation, PGRF file I/O, synthetic generators,
homophily statistics, the spectral (Fiedler) probe and random partitioning.
"""
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from math import gcd
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import networkx as nx
import numpy as np
import scipy.sparse as sp

from .errors import DomainError, FormatError

logger = logging.getLogger(__name__)

PGRF_MAGIC = "pgrf 1"
MAX_EIGEN_NODES = 5000


class Split(str, Enum):
    TRAIN = "t"
    VALID = "v"
    TEST = "s"
    NONE = "-"


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph stored as a symmetric binary CSR adjacency"""
    n: int
    adjacency: sp.csr_matrix = field(repr=False)
    self_loops: bool = False

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]], self_loops: bool = False) -> "Graph":
        pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if len(pairs) and (pairs.min() < 0 or pairs.max() >= n):
            raise DomainError(f"edge endpoint out of range for n={n}")
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        if self_loops:
            rows = np.concatenate([rows, np.arange(n)])
            cols = np.concatenate([cols, np.arange(n)])
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        adj.data[:] = 1.0
        adj.sort_indices()
        return cls(n, adj, self_loops)

    @classmethod
    def from_networkx(cls, g: nx.Graph) -> "Graph":
        mapping = {node: i for i, node in enumerate(sorted(g.nodes()))}
        return cls.from_edges(len(mapping), ((mapping[u], mapping[v]) for u, v in g.edges()))

    @property
    def indptr(self) -> np.ndarray:
        return self.adjacency.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.adjacency.indices

    @property
    def num_edges(self) -> int:
        """Undirected edge count, self-loops excluded"""
        loops = self.n if self.self_loops else 0
        return (self.adjacency.nnz - loops) // 2

    def degrees(self) -> np.ndarray:
        deg = np.diff(self.adjacency.indptr).astype(np.float64)
        return deg - 1.0 if self.self_loops else deg

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once as (u, v) with u < v"""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)

    def with_self_loops(self) -> "Graph":
        if self.self_loops:
            return self
        return Graph.from_edges(self.n, self.edge_list(), self_loops=True)

    def without_self_loops(self) -> "Graph":
        if not self.self_loops:
            return self
        return Graph.from_edges(self.n, self.edge_list())

    def fingerprint(self) -> Tuple[int, bytes, bytes]:
        return self.n, self.adjacency.indptr.tobytes(), self.adjacency.indices.tobytes()


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    splits: np.ndarray = field(repr=False)
    num_classes: int

    def __post_init__(self):
        n = self.graph.n
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DomainError(f"features shape {self.features.shape} does not match n={n}")
        if self.labels.shape != (n,) or self.splits.shape != (n,):
            raise DomainError(f"labels/splits must have length n={n}")
        if len(self.labels) and (self.labels.min() < -1 or self.labels.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [-1, {self.num_classes})")
        marked = self.splits != Split.NONE.value
        if np.any(self.labels[marked] < 0):
            raise DomainError("every split-marked node must carry a label")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def mask(self, split: Split) -> np.ndarray:
        return self.splits == Split(split).value


def structurally_equal(a: Dataset, b: Dataset) -> bool:
    return (
        a.n == b.n
        and a.num_classes == b.num_classes
        and a.graph.self_loops == b.graph.self_loops
        and np.array_equal(a.graph.edge_list(), b.graph.edge_list())
        and a.features.shape == b.features.shape
        and np.array_equal(a.features, b.features)
        and np.array_equal(a.labels, b.labels)
        and np.array_equal(a.splits, b.splits)
    )


# ---------------------------------------------------------------------------
# PGRF I/O
# ---------------------------------------------------------------------------

def _ints(line: str, count: int, lineno: int) -> List[int]:
    tokens = line.split()
    if len(tokens) != count:
        raise FormatError(f"expected {count} integers, got {len(tokens)}", lineno)
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise FormatError(f"malformed integer in '{line.strip()}'", lineno) from None


def parse_dataset(path: Union[str, Path]) -> Dataset:
    """Read a PGRF file; edges are symmetrized and deduplicated"""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def line_at(idx: int, what: str) -> str:
        if idx >= len(lines):
            raise FormatError(f"unexpected end of file, expected {what}", idx + 1)
        return lines[idx]

    if line_at(0, "header").strip() != PGRF_MAGIC:
        raise FormatError(f"expected header '{PGRF_MAGIC}'", 1)
    n, m, d, c = _ints(line_at(1, "counts"), 4, 2)
    if min(n, m, d, c) < 0:
        raise FormatError("counts must be non-negative", 2)

    cursor = 2
    edges = []
    for _ in range(m):
        u, v = _ints(line_at(cursor, "edge line"), 2, cursor + 1)
        if not (0 <= u < n and 0 <= v < n):
            raise FormatError(f"edge ({u}, {v}) out of range for n={n}", cursor + 1)
        if u == v:
            raise FormatError(f"self-loop ({u}, {v}) not allowed", cursor + 1)
        edges.append((u, v))
        cursor += 1

    features = np.zeros((n, d))
    for i in range(n):
        tokens = line_at(cursor, "feature line").split()
        if len(tokens) != d:
            raise FormatError(f"expected {d} feature values, got {len(tokens)}", cursor + 1)
        try:
            features[i] = [float(t) for t in tokens]
        except ValueError:
            raise FormatError("malformed feature value", cursor + 1) from None
        cursor += 1

    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        (labels[i],) = _ints(line_at(cursor, "label line"), 1, cursor + 1)
        if not -1 <= labels[i] < c:
            raise FormatError(f"label {labels[i]} out of range for c={c}", cursor + 1)
        cursor += 1

    splits = np.empty(n, dtype="<U1")
    valid_marks = {s.value for s in Split}
    for i in range(n):
        mark = line_at(cursor, "split line").strip()
        if mark not in valid_marks:
            raise FormatError(f"unknown split mark '{mark}'", cursor + 1)
        if mark != Split.NONE.value and labels[i] < 0:
            raise FormatError(f"node {i} is split-marked but unlabeled", cursor + 1)
        splits[i] = mark
        cursor += 1

    if cursor != len(lines):
        raise FormatError(f"trailing content after {cursor} lines", cursor + 1)

    graph = Graph.from_edges(n, edges)
    logger.info(f"Parsed dataset {path}: n={n}, m={graph.num_edges}, d={d}, c={c}")
    return Dataset(graph, features, labels, splits, c)


def write_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    edges = dataset.graph.edge_list()
    out = [PGRF_MAGIC, f"{dataset.n} {len(edges)} {dataset.feature_dim} {dataset.num_classes}"]
    out.extend(f"{u} {v}" for u, v in edges)
    out.extend(" ".join(repr(float(x)) for x in row) for row in dataset.features)
    out.extend(str(int(y)) for y in dataset.labels)
    out.extend(str(s) for s in dataset.splits)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def gen_er(n: int, p: float, seed: int) -> Graph:
    """Erdős–Rényi G(n, p)"""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"edge probability must lie in [0, 1], got {p}")
    if n < 0:
        raise DomainError(f"node count must be non-negative, got {n}")
    return Graph.from_networkx(nx.fast_gnp_random_graph(n, p, seed=seed))


def _balanced_sizes(n: int, parts: int) -> List[int]:
    sizes = [n // parts] * parts
    for i in range(n % parts):
        sizes[i] += 1
    return sizes


def _split_marks(n: int, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(n)
    n_train, n_valid = int(round(0.6 * n)), int(round(0.2 * n))
    splits = np.full(n, Split.TEST.value, dtype="<U1")
    splits[order[:n_train]] = Split.TRAIN.value
    splits[order[n_train:n_train + n_valid]] = Split.VALID.value
    return splits


def gen_sbm(n: int, classes: int, p_in: float, p_out: float, d: int, noise: float, seed: int) -> Dataset:
    """
    Planted-partition stochastic block model with class-mean features.

    Classes occupy contiguous balanced blocks of node indices;
    features are the one-hot class indicator plus Gaussian noise; splits
    are a 60/20/20 random train/valid/test assignment.
    """
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise DomainError(f"probabilities must lie in [0, 1], got p_in={p_in}, p_out={p_out}")
    if classes < 2:
        raise DomainError(f"need at least 2 classes, got {classes}")
    if d < classes:
        raise DomainError(f"feature dim {d} must be at least the class count {classes}")
    if n < classes:
        raise DomainError(f"need at least one node per class, got n={n}")
    if noise < 0:
        raise DomainError(f"noise scale must be non-negative, got {noise}")

    sizes = _balanced_sizes(n, classes)
    probs = [[p_in if a == b else p_out for b in range(classes)] for a in range(classes)]
    g = nx.stochastic_block_model(sizes, probs, seed=seed)
    graph = Graph.from_networkx(g)

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), sizes).astype(np.int64)
    features = np.zeros((n, d))
    features[np.arange(n), labels] = 1.0
    features += noise * rng.standard_normal((n, d))
    splits = _split_marks(n, rng)
    return Dataset(graph, features, labels, splits, classes)


def gen_csl(n: int, skip: int) -> Graph:
    """
    Circular skip link graph: the n-cycle plus chords (i, i+skip mod n).

    When gcd(n, skip) > 1 the chords form several disjoint cycles; the
    graph is still 4-regular with 2n edges.
    """
    if n < 5:
        raise DomainError(f"CSL needs n >= 5, got {n}")
    if not 2 <= skip <= n - 2:
        raise DomainError(f"skip must lie in [2, n-2], got {skip}")
    if 2 * skip == n:
        raise DomainError(f"skip {skip} = n/2 would duplicate chords")
    if gcd(n, skip) > 1:
        logger.info(f"CSL({n},{skip}): chords split into {gcd(n, skip)} cycles")
    return Graph.from_networkx(nx.circulant_graph(n, [1, skip]))


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def edge_homophily(dataset: Dataset) -> float:
    """Fraction of undirected edges whose endpoints share a label"""
    edges = dataset.graph.edge_list()
    if not len(edges):
        raise DomainError("edge homophily is undefined on a graph without edges")
    lu, lv = dataset.labels[edges[:, 0]], dataset.labels[edges[:, 1]]
    if np.any(lu < 0) or np.any(lv < 0):
        raise DomainError("edge homophily requires every edge endpoint to be labeled")
    return float(np.mean(lu == lv))


def class_insensitive_homophily(dataset: Dataset) -> float:
    """Class-adjusted homophily: mean positive excess of same-class neighbour ratio over class frequency"""
    labels = dataset.labels
    labeled = labels >= 0
    adj = dataset.graph.without_self_loops().adjacency
    c = dataset.num_classes
    onehot = np.zeros((dataset.n, c))
    onehot[np.flatnonzero(labeled), labels[labeled]] = 1.0
    same = np.asarray((adj @ onehot) * onehot).sum(axis=1)
    deg = np.asarray(adj @ labeled.astype(np.float64)).ravel()
    total = 0.0
    for k in range(c):
        members = labels == k
        denom = deg[members].sum()
        h_k = same[members].sum() / denom if denom > 0 else 0.0
        total += max(0.0, h_k - members.sum() / labeled.sum())
    return float(total / (c - 1))


def graph_stats(dataset: Dataset) -> Dict[str, object]:
    deg = dataset.graph.degrees()
    stats: Dict[str, object] = {
        "n": dataset.n,
        "m": dataset.graph.num_edges,
        "mean_degree": float(deg.mean()) if dataset.n else 0.0,
        "isolated": int(np.sum(deg == 0)),
        "class_counts": dict(sorted(Counter(int(y) for y in dataset.labels if y >= 0).items())),
    }
    try:
        stats["edge_homophily"] = edge_homophily(dataset)
        stats["class_insensitive_homophily"] = class_insensitive_homophily(dataset)
    except DomainError as exc:
        logger.warning(f"Homophily not reported: {exc}")
    return stats


# ---------------------------------------------------------------------------
# spectral probe
# ---------------------------------------------------------------------------

def normalized_laplacian(graph: Graph) -> np.ndarray:
    """Dense I - D^{-1/2} A D^{-1/2}, isolated nodes with degree clamped to 1"""
    adj = graph.without_self_loops().adjacency
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0))
    return np.eye(graph.n) - (inv_sqrt[:, None] * adj.toarray() * inv_sqrt[None, :])


def fiedler_pair(graph: Graph) -> Tuple[float, np.ndarray]:
    """
    Second-smallest eigenpair of the normalized Laplacian.

    The trivial direction D^{1/2}·1 is deflated by shifting it above the
    spectrum, so the returned vector is orthogonal to it even when the
    zero eigenvalue is repeated (disconnected graphs).
    """
    n = graph.n
    if n < 2:
        raise DomainError(f"Fiedler vector needs n >= 2, got {n}")
    if n > MAX_EIGEN_NODES:
        raise DomainError(f"dense eigensolve capped at {MAX_EIGEN_NODES} nodes, got {n}")
    lap = normalized_laplacian(graph)
    trivial = np.sqrt(graph.without_self_loops().degrees())
    norm = np.linalg.norm(trivial)
    if norm > 0:
        trivial /= norm
        # normalized Laplacian spectrum lies in [0, 2]
        values, vectors = np.linalg.eigh(lap + 3.0 * np.outer(trivial, trivial))
        lam, vec = values[0], vectors[:, 0]
    else:
        values, vectors = np.linalg.eigh(lap)
        lam, vec = values[1], vectors[:, 1]
    vec = vec / np.linalg.norm(vec)
    nonzero = np.flatnonzero(np.abs(vec) > 1e-12)
    if len(nonzero) and vec[nonzero[0]] < 0:
        vec = -vec
    return float(lam), vec


def fiedler_vector(graph: Graph) -> np.ndarray:
    return fiedler_pair(graph)[1]


# ---------------------------------------------------------------------------
# relabeling, partitioning, subgraphs
# ---------------------------------------------------------------------------

def _check_perm(perm: Sequence[int], n: int) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise DomainError("perm is not a bijection on [0, n)")
    return perm


def permute_graph(graph: Graph, perm: Sequence[int]) -> Graph:
    """Relabel node i as perm[i]"""
    perm = _check_perm(perm, graph.n)
    edges = graph.edge_list()
    return Graph.from_edges(graph.n, perm[edges] if len(edges) else edges, self_loops=graph.self_loops)


def permute_dataset(dataset: Dataset, perm: Sequence[int]) -> Dataset:
    perm = _check_perm(perm, dataset.n)
    inverse = np.argsort(perm)
    return Dataset(
        permute_graph(dataset.graph, perm),
        dataset.features[inverse],
        dataset.labels[inverse],
        dataset.splits[inverse],
        dataset.num_classes,
    )


@dataclass(frozen=True)
class Partitioning:
    assignment: np.ndarray
    parts: int

    def members(self, part: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == part)


def random_partition(n: int, parts: int, seed: int) -> Partitioning:
    """Uniform random assignment into parts whose sizes differ by at most one"""
    if not 1 <= parts <= n:
        raise DomainError(f"parts must lie in [1, n={n}], got {parts}")
    order = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % parts
    return Partitioning(assignment, parts)


def induced_subgraph(dataset: Dataset, nodes: Sequence[int]) -> Dataset:
    """Node-induced sub-dataset; node k of the result is nodes[k] (sorted)"""
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    adj = dataset.graph.without_self_loops().adjacency[nodes][:, nodes].tocoo()
    keep = adj.row < adj.col
    graph = Graph.from_edges(len(nodes), zip(adj.row[keep], adj.col[keep]))
    return Dataset(graph, dataset.features[nodes], dataset.labels[nodes],
                   dataset.splits[nodes], dataset.num_classes)


# ---------------------------------------------------------------------------
# 1-WL colour refinement
# ---------------------------------------------------------------------------

def wl_histograms(graphs: Sequence[Graph], rounds: Optional[int] = None) -> List[List[Counter]]:
    """
    Joint 1-WL colour refinement over several graphs.

    Colours share one palette, so histograms are comparable across graphs.
    Returns, per graph, the colour histogram after each round.
    """
    rounds = rounds if rounds is not None else max(g.n for g in graphs)
    colors = [np.zeros(g.n, dtype=np.int64) for g in graphs]
    history: List[List[Counter]] = [[Counter(c.tolist())] for c in colors]
    for _ in range(rounds):
        palette: Dict[Tuple, int] = {}
        refined = []
        for g, col in zip(graphs, colors):
            adj = g.without_self_loops().adjacency
            new = np.empty(g.n, dtype=np.int64)
            for v in range(g.n):
                neigh = adj.indices[adj.indptr[v]:adj.indptr[v + 1]]
                signature = (int(col[v]), tuple(sorted(col[neigh].tolist())))
                new[v] = palette.setdefault(signature, len(palette))
            refined.append(new)
        stable = len(set(np.concatenate(refined).tolist())) == len(set(np.concatenate(colors).tolist()))
        colors = refined
        for hist, col in zip(history, colors):
            hist.append(Counter(col.tolist()))
        if stable:
            break
    return history


def wl_equivalent(a: Graph, b: Graph) -> bool:
    """True when 1-WL refinement cannot tell the two graphs apart"""
    ha, hb = wl_histograms([a, b])
    return all(x == y for x, y in zip(ha, hb))
