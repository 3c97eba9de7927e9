import pytest
import numpy as np
import sympy

from polynormer.errors import DomainError, ShapeError
from polynormer.polyoracle import (BaseModelWeights, MPoly, PolyOp, base_expand, base_numeric,
                                   closed_form_expand, cubic_witness_weights, degree_spectrum,
                                   exponents_of, gt_layer_expand, is_targeted_monomial,
                                   min_degree_with_bias, mpoly_arith, select_monomial_params)

pytestmark = pytest.mark.unit


@pytest.fixture
def rng():
    return np.random.default_rng(17)


def sympy_expand(weights: BaseModelWeights):
    """Independent expansion of the recurrence through sympy"""
    symbols = sympy.symbols(f"x0:{weights.n}")
    x = list(symbols)
    for w, b in zip(weights.w, weights.b):
        mixed = [sum(sympy.Float(w[i, j]) * x[j] for j in range(weights.n)) for i in range(weights.n)]
        x = [sympy.expand(mixed[i] * (x[i] + sympy.Float(b[i]))) for i in range(weights.n)]
    return [sympy.Poly(p, *symbols) for p in x]


def assert_matches_sympy(polys, weights, tol=1e-9):
    for ours, theirs in zip(polys, sympy_expand(weights)):
        reference = {tuple(e): float(c) for e, c in theirs.terms() if abs(float(c)) >= 1e-12}
        assert set(ours.terms) == set(reference)
        for exps, coef in reference.items():
            assert ours.coefficient(exps) == pytest.approx(coef, rel=tol, abs=tol)


def test_arithmetic_prunes_cancellations():
    x0, x1 = MPoly.variable(2, 0), MPoly.variable(2, 1)
    assert ((x0 + x1) - x1 - x0).is_zero
    square = (x0 + x1) * (x0 - x1)
    assert square.coefficient((1, 1)) == 0.0
    assert square.coefficient((2, 0)) == 1.0
    assert square.coefficient((0, 2)) == -1.0


def test_mpoly_arith_dispatch():
    x0 = MPoly.variable(2, 0)
    assert mpoly_arith(PolyOp.SCALE, x0, 3.0).coefficient((1, 0)) == 3.0
    assert mpoly_arith(PolyOp.MUL, x0, x0).degrees() == {2}
    with pytest.raises(DomainError):
        mpoly_arith(PolyOp.ADD, x0, 1.0)
    with pytest.raises(ShapeError):
        x0 + MPoly.variable(3, 0)


def test_evaluate():
    poly = MPoly.monomial(3, [0, 0, 2], coefficient=2.0) + MPoly.constant(3, 1.0)
    assert poly.evaluate([3.0, 5.0, 0.5]) == pytest.approx(2.0 * 9.0 * 0.5 + 1.0)


def test_exponents_of_counts_repeats():
    assert exponents_of([2, 0, 2], 3) == (1, 0, 2)
    with pytest.raises(DomainError):
        exponents_of([3], 3)


@pytest.mark.parametrize("n,layers,bias_layers", [
    (2, 1, ()), (3, 2, ()), (3, 2, (1,)), (3, 2, (1, 2)), (2, 3, (2,)),
])
def test_base_expand_matches_sympy(n, layers, bias_layers, rng):
    weights = BaseModelWeights.random(n, layers, rng, bias_layers=bias_layers)
    assert_matches_sympy(base_expand(weights), weights)


@pytest.mark.parametrize("n,layers", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_closed_form_agrees_with_recurrence(n, layers, rng):
    weights = BaseModelWeights.random(n, layers, rng)
    for a, b in zip(closed_form_expand(weights), base_expand(weights)):
        assert a.max_difference(b) < 1e-9


def test_closed_form_requires_zero_bias(rng):
    with pytest.raises(DomainError):
        closed_form_expand(BaseModelWeights.random(2, 1, rng, bias_layers=[1]))


def test_symbolic_matches_numeric(rng):
    weights = BaseModelWeights.random(3, 2, rng, bias_layers=[1])
    point = rng.uniform(-1.0, 1.0, 3)
    values = [p.evaluate(point) for p in base_expand(weights)]
    np.testing.assert_allclose(values, base_numeric(weights, point), rtol=1e-10)


def test_bias_free_output_is_homogeneous(rng):
    for layers in (1, 2, 3):
        weights = BaseModelWeights.random(2, layers, rng)
        assert degree_spectrum(base_expand(weights)) == {2 ** layers}


def test_bias_spans_degree_range(rng):
    weights = BaseModelWeights.random(2, 2, rng, bias_layers=[1, 2])
    assert degree_spectrum(base_expand(weights)) == {1, 2, 3, 4}


@pytest.mark.parametrize("bias_layers", [(), (1,), (2,), (1, 2)])
def test_lowest_degree_with_bias(bias_layers, rng):
    weights = BaseModelWeights.random(3, 2, rng, bias_layers=bias_layers)
    assert min(degree_spectrum(base_expand(weights))) == min_degree_with_bias(2, bias_layers)


@pytest.mark.parametrize("i,targets", [(0, (1,)), (2, (2,)), (1, (0, 2, 2)), (0, (0, 1, 2))])
def test_select_monomial_params(i, targets):
    layers = 1 if len(targets) == 1 else 2
    weights = select_monomial_params(i, targets, n=3, layers=layers)
    assert weights.bias_free
    polys = base_expand(weights)
    assert is_targeted_monomial(polys[i], i, targets)


def test_select_monomial_rejects_wrong_target_count():
    with pytest.raises(DomainError):
        select_monomial_params(0, (1, 2), n=3, layers=2)


def test_expansion_caps():
    weights = BaseModelWeights([np.eye(5)], [np.zeros(5)])
    with pytest.raises(DomainError):
        base_expand(weights)


def test_cubic_witness_is_exact():
    polys = base_expand(cubic_witness_weights())
    assert is_targeted_monomial(polys[0], 0, (0, 1))


def test_attention_layer_misses_the_witness_monomial():
    report = gt_layer_expand(3, 0.7, -1.3, 0.9)
    assert (2, 1, 0) in report.missing(0)
    assert report.polys[0].coefficient((3, 0, 0)) == pytest.approx(0.7 * -1.3 * 0.9)
    assert report.polys[0].degrees() == {3}
