"""
Symbolic expansion of the polynomial base model X ← (W X) ⊙ (X + B) on
tiny graphs with scalar node features.

Used to check polynomial expressivity mechanically: the expansion by
recurrence, an independent closed form for B = 0, the constructive
monomial selection, degree spectra, and the quadratic-attention layer
for contrast.
"""
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations, product
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union
import logging

import numpy as np

from .errors import DomainError, ShapeError

logger = logging.getLogger(__name__)

PRUNE_TOLERANCE = 1e-12
MAX_NODES = 4
MAX_LAYERS = 3

Exponents = Tuple[int, ...]


class PolyOp(str, Enum):
    ADD = "add"
    MUL = "mul"
    SCALE = "scale"


@dataclass
class MPoly:
    """Sparse multivariate polynomial in x_0 … x_{n-1}"""
    n: int
    terms: Dict[Exponents, float] = field(default_factory=dict)

    def __post_init__(self):
        for exps in self.terms:
            if len(exps) != self.n:
                raise ShapeError(f"exponent vector {exps} has length {len(exps)}, expected {self.n}")
        self.terms = {e: float(c) for e, c in self.terms.items() if abs(c) >= PRUNE_TOLERANCE}

    @classmethod
    def zero(cls, n: int) -> "MPoly":
        return cls(n)

    @classmethod
    def constant(cls, n: int, value: float) -> "MPoly":
        return cls(n, {(0,) * n: value})

    @classmethod
    def variable(cls, n: int, index: int) -> "MPoly":
        if not 0 <= index < n:
            raise DomainError(f"variable index {index} out of range for n={n}")
        exps = [0] * n
        exps[index] = 1
        return cls(n, {tuple(exps): 1.0})

    @classmethod
    def monomial(cls, n: int, indices: Iterable[int], coefficient: float = 1.0) -> "MPoly":
        return cls(n, {exponents_of(indices, n): coefficient})

    def _check(self, other: "MPoly") -> None:
        if other.n != self.n:
            raise ShapeError(f"variable count mismatch: {self.n} vs {other.n}")

    def __add__(self, other: "MPoly") -> "MPoly":
        self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return MPoly(self.n, out)

    def __mul__(self, other: "MPoly") -> "MPoly":
        self._check(other)
        out: Dict[Exponents, float] = {}
        for ea, ca in self.terms.items():
            for eb, cb in other.terms.items():
                e = tuple(a + b for a, b in zip(ea, eb))
                out[e] = out.get(e, 0.0) + ca * cb
        return MPoly(self.n, out)

    def scale(self, c: float) -> "MPoly":
        return MPoly(self.n, {e: v * c for e, v in self.terms.items()})

    def __neg__(self) -> "MPoly":
        return self.scale(-1.0)

    def __sub__(self, other: "MPoly") -> "MPoly":
        return self + (-other)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, exps: Exponents) -> float:
        return self.terms.get(tuple(exps), 0.0)

    def degrees(self) -> Set[int]:
        return {sum(e) for e in self.terms}

    def evaluate(self, point: Sequence[float]) -> float:
        point = np.asarray(point, dtype=np.float64)
        if point.shape != (self.n,):
            raise ShapeError(f"evaluation point has shape {point.shape}, expected ({self.n},)")
        return float(sum(c * np.prod(point ** np.asarray(e)) for e, c in self.terms.items()))

    def max_difference(self, other: "MPoly") -> float:
        diff = (self - other).terms
        return max((abs(c) for c in diff.values()), default=0.0)


def mpoly_arith(kind: PolyOp, a: MPoly, b: Union[MPoly, float]) -> MPoly:
    kind = PolyOp(kind)
    if kind is PolyOp.SCALE:
        if isinstance(b, MPoly):
            raise DomainError("scale expects a real factor")
        return a.scale(float(b))
    if not isinstance(b, MPoly):
        raise DomainError(f"{kind.value} expects a polynomial operand")
    return a + b if kind is PolyOp.ADD else a * b


def exponents_of(indices: Iterable[int], n: int) -> Exponents:
    exps = [0] * n
    for idx in indices:
        if not 0 <= idx < n:
            raise DomainError(f"index {idx} out of range for n={n}")
        exps[idx] += 1
    return tuple(exps)


@dataclass
class BaseModelWeights:
    """Per-layer W (n×n) and B (length n) of the base model"""
    w: List[np.ndarray]
    b: List[np.ndarray]

    def __post_init__(self):
        if len(self.w) != len(self.b):
            raise ShapeError(f"{len(self.w)} weight matrices but {len(self.b)} bias vectors")
        if not self.w:
            raise DomainError("base model needs at least one layer")
        n = self.w[0].shape[0]
        self.w = [np.asarray(m, dtype=np.float64) for m in self.w]
        self.b = [np.asarray(v, dtype=np.float64).reshape(-1) for v in self.b]
        for layer, (m, v) in enumerate(zip(self.w, self.b), start=1):
            if m.shape != (n, n) or v.shape != (n,):
                raise ShapeError(f"layer {layer}: W {m.shape}, B {v.shape}; expected ({n}, {n}) and ({n},)")

    @property
    def n(self) -> int:
        return self.w[0].shape[0]

    @property
    def layers(self) -> int:
        return len(self.w)

    @property
    def bias_free(self) -> bool:
        return all(not np.any(v) for v in self.b)

    @classmethod
    def random(cls, n: int, layers: int, rng: np.random.Generator,
               bias_layers: Optional[Iterable[int]] = None) -> "BaseModelWeights":
        """
        Generic draws with entries bounded away from zero.

        bias_layers lists the 1-based layers with nonzero B (default: none).
        """
        chosen = set(bias_layers or ())

        def draw(shape):
            return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.5, 1.5, size=shape)

        w = [draw((n, n)) for _ in range(layers)]
        b = [draw(n) if layer in chosen else np.zeros(n) for layer in range(1, layers + 1)]
        return cls(w, b)


def _check_caps(n: int, layers: int) -> None:
    if not 1 <= n <= MAX_NODES:
        raise DomainError(f"symbolic expansion capped at n <= {MAX_NODES}, got {n}")
    if not 1 <= layers <= MAX_LAYERS:
        raise DomainError(f"symbolic expansion capped at L <= {MAX_LAYERS}, got {layers}")


def base_expand(weights: BaseModelWeights, n: Optional[int] = None) -> List[MPoly]:
    """Apply X ← (W X) ⊙ (X + B) symbolically from X_i = x_i"""
    n = weights.n if n is None else n
    if n != weights.n:
        raise ShapeError(f"weights are for n={weights.n}, requested n={n}")
    _check_caps(n, weights.layers)
    x = [MPoly.variable(n, i) for i in range(n)]
    for w, b in zip(weights.w, weights.b):
        mixed = []
        for i in range(n):
            acc = MPoly.zero(n)
            for j in range(n):
                if w[i, j]:
                    acc = acc + x[j].scale(w[i, j])
            mixed.append(acc)
        x = [mixed[i] * (x[i] + MPoly.constant(n, b[i])) for i in range(n)]
    return x


def _coefficient_chain(weights: BaseModelWeights) -> Dict[Tuple[int, ...], float]:
    """
    c_L over index tuples of length 2^L.

    c_1((a, b)) = W¹_ab and c_{l+1}(I ++ J) = c_l(I) · W^{l+1}_{I[0] J[0]} · c_l(J).
    """
    n = weights.n
    first = weights.w[0]
    table = {(a, b): first[a, b] for a in range(n) for b in range(n) if first[a, b]}
    for w in weights.w[1:]:
        table = {
            left + right: cl * w[left[0], right[0]] * cr
            for left, cl in table.items()
            for right, cr in table.items()
            if w[left[0], right[0]]
        }
    return table


def closed_form_expand(weights: BaseModelWeights, n: Optional[int] = None,
                       layers: Optional[int] = None) -> List[MPoly]:
    """X_i = Σ over index tuples I starting at i of c_L(I) Π_j x_{I_j} (B = 0 only)"""
    n = weights.n if n is None else n
    layers = weights.layers if layers is None else layers
    if n != weights.n or layers != weights.layers:
        raise ShapeError(f"weights are for n={weights.n}, L={weights.layers}")
    _check_caps(n, layers)
    if not weights.bias_free:
        raise DomainError("closed form expansion requires B = 0")
    polys = [dict() for _ in range(n)]
    for idx, coef in _coefficient_chain(weights).items():
        exps = exponents_of(idx, n)
        terms = polys[idx[0]]
        terms[exps] = terms.get(exps, 0.0) + coef
    return [MPoly(n, terms) for terms in polys]


def base_numeric(weights: BaseModelWeights, x: Sequence[float]) -> np.ndarray:
    """Direct numeric recurrence of the base model"""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != (weights.n,):
        raise ShapeError(f"input has shape {x.shape}, expected ({weights.n},)")
    for w, b in zip(weights.w, weights.b):
        x = (w @ x) * (x + b)
    return x


# ---------------------------------------------------------------------------
# constructive monomial selection
# ---------------------------------------------------------------------------

_State = Tuple[Dict[int, Tuple[int, Tuple[int, ...]]], ...]


def _halves_containing(need: Tuple[int, ...], node: int) -> List[Tuple[int, ...]]:
    half = len(need) // 2
    return sorted({tuple(sorted(need[k] for k in combo))
                   for combo in combinations(range(len(need)), half)
                   if node in (need[k] for k in combo)})


def _minus(need: Tuple[int, ...], part: Tuple[int, ...]) -> Tuple[int, ...]:
    rest = list(need)
    for item in part:
        rest.remove(item)
    return tuple(rest)


def _assign(level: int, node: int, need: Tuple[int, ...], state: _State) -> Optional[_State]:
    """Make node's level-`level` leaf multiset equal `need`, extending the partner choices"""
    if level == 0:
        return state if need == (node,) else None
    fixed = state[level].get(node)
    if fixed is not None:
        return state if fixed[1] == need else None
    for left in _halves_containing(need, node):
        right = _minus(need, left)
        for partner in sorted(set(right)):
            trial = tuple(dict(s) for s in state)
            trial[level][node] = (partner, need)
            result = _assign(level - 1, node, left, trial)
            if result is None:
                continue
            result = _assign(level - 1, partner, right, result)
            if result is not None:
                return result
    return None


def select_monomial_params(i: int, targets: Sequence[int], n: int, layers: int) -> BaseModelWeights:
    """
    0/1 weights with B = 0 so that node i expands to exactly x_i · Π x_targets.

    Every W row is one-hot or zero, so each layer multiplies a node's value
    by one partner's value; the partners are found by backtracking.
    """
    _check_caps(n, layers)
    targets = tuple(int(t) for t in targets)
    if len(targets) != 2 ** layers - 1:
        raise DomainError(f"need {2 ** layers - 1} target indices for L={layers}, got {len(targets)}")
    if not 0 <= i < n or any(not 0 <= t < n for t in targets):
        raise DomainError(f"indices must lie in [0, {n})")
    need = tuple(sorted((i,) + targets))
    state = _assign(layers, i, need, tuple({} for _ in range(layers + 1)))
    if state is None:
        raise DomainError(f"no one-hot weight chain realizes node {i} with targets {targets}")
    w = []
    for level in range(1, layers + 1):
        m = np.zeros((n, n))
        for node, (partner, _) in state[level].items():
            m[node, partner] = 1.0
        w.append(m)
    return BaseModelWeights(w, [np.zeros(n) for _ in range(layers)])


def is_targeted_monomial(poly: MPoly, i: int, targets: Sequence[int], tol: float = 1e-9) -> bool:
    """True when poly is exactly x_i · Π x_targets with coefficient 1"""
    exps = exponents_of((i,) + tuple(targets), poly.n)
    return len(poly.terms) == 1 and abs(poly.coefficient(exps) - 1.0) <= tol


def degree_spectrum(polys: Iterable[MPoly]) -> Set[int]:
    degrees: Set[int] = set()
    for poly in polys:
        degrees |= poly.degrees()
    return degrees


def cubic_witness_weights() -> BaseModelWeights:
    """
    Two-layer weights on three nodes whose node-0 output is exactly x_0²·x_1.

    Layer 1: node 0 squares itself, nodes 1 and 2 both form x_1x_2 and
    node 2's bias adds x_1. Layer 2: node 0 takes the difference of
    nodes 2 and 1, which leaves x_1, times its own x_0².
    """
    w1 = np.array([[1.0, 0.0, 0.0],
                   [0.0, 0.0, 1.0],
                   [0.0, 1.0, 0.0]])
    b1 = np.array([0.0, 0.0, 1.0])
    w2 = np.array([[0.0, -1.0, 1.0],
                   [0.0, 0.0, 0.0],
                   [0.0, 0.0, 0.0]])
    return BaseModelWeights([w1, w2], [b1, np.zeros(3)])


def min_degree_with_bias(layers: int, bias_layers: Iterable[int]) -> int:
    """Lowest degree reachable with generic W when B is nonzero only at bias_layers"""
    chosen = {l for l in bias_layers if 1 <= l <= layers}
    return 2 ** (layers - len(chosen))


# ---------------------------------------------------------------------------
# quadratic-attention contrast
# ---------------------------------------------------------------------------

@dataclass
class GTLayerReport:
    polys: List[MPoly]
    # per node: every degree-3 monomial with its coefficient, zeros included
    degree3: List[Dict[Exponents, float]]

    def missing(self, node: int) -> List[Exponents]:
        return [e for e, c in self.degree3[node].items() if c == 0.0]


def gt_layer_expand(n: int, wq: float, wk: float, wv: float) -> GTLayerReport:
    """x_i' = wq·wk·wv · x_i · Σ_j x_j², the softmax-free attention layer on scalars"""
    if not 1 <= n <= MAX_NODES:
        raise DomainError(f"symbolic expansion capped at n <= {MAX_NODES}, got {n}")
    x = [MPoly.variable(n, i) for i in range(n)]
    squares = MPoly.zero(n)
    for xj in x:
        squares = squares + xj * xj
    polys = [(x[i] * squares).scale(wq * wk * wv) for i in range(n)]
    cubic = sorted({exponents_of(idx, n) for idx in product(range(n), repeat=3)})
    degree3 = [{e: p.coefficient(e) for e in cubic} for p in polys]
    return GTLayerReport(polys, degree3)
