import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kamtori import (CoefficientJet, DivergenceError, FourierTaylorSeries,
                     lie_transform, poisson_bracket)
from conftest import random_real_series

R, S = 0.5, 0.2


def test_weighted_norm_single_term():
    # one coefficient c r^|m| e^{s|k|_1}
    f = FourierTaylorSeries.from_terms(2, [((1, -1), (1, 0), 0.5, (0, 0))])
    expected = 0.5 * 0.3 * math.exp(0.1 * 2)
    assert f.weighted_norm(0.3, 0.1) == pytest.approx(expected, rel=1e-15)


def test_weighted_norm_cosine():
    f = FourierTaylorSeries.cosine(2, (1, 0))
    # two conjugate modes of modulus 1/2 at |k|_1 = 1
    assert f.weighted_norm(1.0, 0.05) == pytest.approx(math.exp(0.05),
                                                       rel=1e-15)


def test_norm_monotonicity():
    rng = np.random.default_rng(1)
    f = random_real_series(rng)
    assert f.weighted_norm(0.2, 0.1) <= f.weighted_norm(0.4, 0.1)
    assert f.weighted_norm(0.2, 0.1) <= f.weighted_norm(0.2, 0.3)


def test_norm_triangle_and_scale():
    rng = np.random.default_rng(2)
    f, g = random_real_series(rng), random_real_series(rng)
    assert (f + g).weighted_norm(R, S) <= (
        f.weighted_norm(R, S) + g.weighted_norm(R, S)) * (1 + 1e-15)
    assert f.scale(3.0).weighted_norm(R, S) == pytest.approx(
        3.0 * f.weighted_norm(R, S), rel=1e-14)


def test_norm_submultiplicative_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(100):
        f = random_real_series(rng, nterms=5, d_cap=8)
        g = random_real_series(rng, nterms=5, d_cap=8)
        prod = f.multiply(g, R, S)
        lhs = prod.weighted_norm(R, S) + prod.tail_estimate
        assert lhs <= f.weighted_norm(R, S) * g.weighted_norm(R, S) * (1 + 1e-12)


def test_norm_majorizes_sup():
    # the weighted norm dominates the sup over the real domain |I| <= r
    rng = np.random.default_rng(4)
    f = random_real_series(rng)
    theta = rng.uniform(0, 2 * math.pi, (50, 2))
    I = rng.uniform(-R, R, (50, 2))
    vals = f.evaluate_grid(I, theta)
    assert np.max(np.abs(vals)) <= f.weighted_norm(R, 0.0) * (1 + 1e-12)


def test_derivatives():
    f = FourierTaylorSeries.cosine(2, (1, 0))
    d = f.dtheta(0)
    # d/dtheta1 cos theta1 = -sin theta1
    pts = np.array([[0.3, 0.0], [1.1, 2.0]])
    got = d.evaluate_grid(np.zeros((2, 2)), pts).real
    assert np.allclose(got, -np.sin(pts[:, 0]), atol=1e-15)
    g = FourierTaylorSeries.action_monomial(2, (2, 1))
    dg = g.daction(0)
    I = np.array([[0.2, 0.5]])
    assert dg.evaluate_grid(I, np.zeros((1, 2))).real[0] == pytest.approx(
        2 * 0.2 * 0.5, rel=1e-15)


def test_bracket_antisymmetry():
    rng = np.random.default_rng(5)
    for _ in range(20):
        f, g = random_real_series(rng), random_real_series(rng)
        res = (poisson_bracket(f, g) + poisson_bracket(g, f)).weighted_norm(R, S)
        assert res <= 1e-12 * max(poisson_bracket(f, g).weighted_norm(R, S),
                                  1e-300)


def test_bracket_jacobi():
    rng = np.random.default_rng(6)
    for _ in range(20):
        f = random_real_series(rng, nterms=5)
        g = random_real_series(rng, nterms=5)
        h = random_real_series(rng, nterms=5)
        total = (poisson_bracket(f, poisson_bracket(g, h))
                 + poisson_bracket(g, poisson_bracket(h, f))
                 + poisson_bracket(h, poisson_bracket(f, g)))
        ref = max(poisson_bracket(f, poisson_bracket(g, h)).weighted_norm(0.3, 0.05),
                  1e-300)
        assert total.weighted_norm(0.3, 0.05) / ref <= 1e-10


def test_bracket_leibniz():
    rng = np.random.default_rng(7)
    for _ in range(20):
        f = random_real_series(rng, nterms=5)
        g = random_real_series(rng, nterms=5)
        h = random_real_series(rng, nterms=5)
        lhs = poisson_bracket(f.multiply(g), h)
        rhs = f.multiply(poisson_bracket(g, h)) + poisson_bracket(f, h).multiply(g)
        ref = max(lhs.weighted_norm(0.3, 0.05), 1e-300)
        assert (lhs - rhs).weighted_norm(0.3, 0.05) / ref <= 1e-10


def test_bracket_hand_example():
    # {sin theta1, omega . I} = omega1 cos theta1 with omega1 = 1
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    F = FourierTaylorSeries.from_terms(2, [
        ((1, 0), (0, 0), -0.5j, (0, 0)), ((-1, 0), (0, 0), 0.5j, (0, 0))])
    N = (FourierTaylorSeries.action_monomial(2, (1, 0), 1.0)
         + FourierTaylorSeries.action_monomial(2, (0, 1), golden))
    b = poisson_bracket(F, N)
    cos = FourierTaylorSeries.cosine(2, (1, 0))
    assert (b - cos).weighted_norm(1.0, 0.1) <= 1e-15


def test_jets_product_rule_finite_difference():
    rng = np.random.default_rng(8)
    n = 2
    delta = np.array([3e-7, -2e-7])

    def rand_jet_series():
        terms = []
        for _ in range(4):
            k = tuple(int(x) for x in rng.integers(-2, 3, n))
            c = complex(rng.normal(), rng.normal())
            jet = tuple(complex(rng.normal(), rng.normal()) for _ in range(n))
            cj = tuple(x.conjugate() for x in jet)
            terms.append((k, (0, 0), c / 2, tuple(x / 2 for x in jet)))
            terms.append((tuple(-x for x in k), (0, 0), c.conjugate() / 2,
                          tuple(x / 2 for x in cj)))
        return FourierTaylorSeries.from_terms(n, terms, real_symmetric=True)

    f, g = rand_jet_series(), rand_jet_series()
    prod = f.multiply(g)
    theta = rng.uniform(0, 2 * math.pi, (10, n))
    I = np.zeros((10, n))
    # product jets agree with (f at offset)*(g at offset) to first order
    lhs = prod.evaluate_grid(I, theta, param_offset=delta)
    rhs = (f.evaluate_grid(I, theta, param_offset=delta)
           * g.evaluate_grid(I, theta, param_offset=delta))
    assert np.max(np.abs(lhs - rhs)) <= 1e-6 * np.max(np.abs(rhs) + 1.0)


def test_coefficient_jet_algebra():
    a = CoefficientJet(2.0, (1.0, 0.5))
    b = CoefficientJet(3.0, (-1.0, 2.0))
    p = a * b
    assert p.value == 6.0
    assert p.domega == (2.0 * -1.0 + 3.0 * 1.0, 2.0 * 2.0 + 3.0 * 0.5)
    assert a.at((0.1, 0.2)) == pytest.approx(2.0 + 0.1 + 0.1, rel=1e-15)


def test_truncate_and_compress_are_exact_about_dropped_weight():
    rng = np.random.default_rng(9)
    f = random_real_series(rng, nterms=12)
    kept, dropped = f.truncate(2, 1, R, S)
    assert kept.weighted_norm(R, S) + dropped == pytest.approx(
        f.weighted_norm(R, S), rel=1e-12)
    assert kept.fourier_degree() <= 2 and kept.action_degree() <= 1
    tol = 0.1 * f.weighted_norm(R, S)
    small = f.compress(tol, R, S)
    assert (f - small).weighted_norm(R, S) <= tol * (1 + 1e-12)


def test_serialization_round_trip_bit_exact():
    rng = np.random.default_rng(10)
    f = random_real_series(rng)
    g = FourierTaylorSeries.from_json(f.to_json())
    assert g.coeffs == f.coeffs
    assert g.to_json() == f.to_json()


def test_lie_transform_exact_example():
    # H = omega . I, F = (eps/omega1) sin theta1 -> H o X_F^1 = omega.I - eps cos theta1
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    eps = 1e-3
    N = (FourierTaylorSeries.action_monomial(2, (1, 0), 1.0)
         + FourierTaylorSeries.action_monomial(2, (0, 1), golden))
    F = FourierTaylorSeries.from_terms(2, [
        ((1, 0), (0, 0), -0.5j * eps, (0, 0)),
        ((-1, 0), (0, 0), 0.5j * eps, (0, 0))])
    out, tail = lie_transform(N, F, 0.5, 1.0)
    expected = N - FourierTaylorSeries.cosine(2, (1, 0), eps)
    assert (out - expected).weighted_norm(0.5, 1.0) <= 1e-18
    assert tail <= 1e-18


def test_lie_transform_divergence_detected():
    # a generator far too large for the domain must be rejected, not looped
    F = FourierTaylorSeries.cosine(2, (1, 0), 50.0).multiply(
        FourierTaylorSeries.constant(2, 1.0)
        + FourierTaylorSeries.action_monomial(2, (1, 0), 1.0))
    H = FourierTaylorSeries.action_monomial(2, (1, 0), 1.0)
    with pytest.raises(DivergenceError):
        lie_transform(H, F, 1.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_norm_positive_homogeneous(seed):
    rng = np.random.default_rng(seed)
    f = random_real_series(rng, nterms=4)
    c = float(rng.uniform(0.1, 10.0))
    assert f.scale(c).weighted_norm(R, S) == pytest.approx(
        c * f.weighted_norm(R, S), rel=1e-12)


def test_real_symmetry_check():
    f = FourierTaylorSeries.from_terms(
        2, [((1, 0), (0, 0), 1.0 + 0.5j, (0, 0))], real_symmetric=True)
    assert f.check_real_symmetry() > 1e-15
    g = FourierTaylorSeries.cosine(2, (1, 0))
    assert g.check_real_symmetry() == 0.0
