import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmlab.checks import fixture_distributions, identity_suite, rademacher
from rmlab.cumulants import JointDistribution, joint_cumulant
from rmlab.errors import ComplexityLimit, RemainderNotZero
from rmlab.polynomials import Polynomial
from rmlab.precumulants import (
    decoupling_residual,
    decoupling_terms,
    expansion_identity_check,
    precumulant_eval,
    precumulant_values,
    remainder_bound_check,
)

CORRELATED3 = JointDistribution([0.2, 0.3, 0.5], [[1, 0, 2], [-1, 1, 0], [0.2, -0.6, -1.2]])


def test_empty_y_is_identity():
    ev = precumulant_eval(CORRELATED3, 1, ())
    assert np.array_equal(ev.values, CORRELATED3.values[:, 1])


def test_single_y_gives_covariance():
    d = CORRELATED3
    for x, y in itertools.product(range(3), repeat=2):
        cov = d.moment((x, y)) - d.moment((x,)) * d.moment((y,))
        assert precumulant_eval(d, x, (y,)).expectation == pytest.approx(cov, abs=1e-12)


def test_rademacher_pair_means():
    d = rademacher(2)
    for m in range(5):
        for ys in itertools.combinations_with_replacement(range(2), m):
            assert abs(precumulant_eval(d, 0, ys).expectation - joint_cumulant(d, (0,) + ys)) <= 1e-12


def test_precumulant_cap():
    with pytest.raises(ComplexityLimit):
        precumulant_values(CORRELATED3, 0, (0,) * 7)


def test_decoupling_cases():
    assert decoupling_residual(CORRELATED3, 0, (1,), ()) == 0.0
    assert decoupling_residual(CORRELATED3, 0, (1, 2), (2,)) <= 1e-11
    # Z independent of (X, Y): the correction sum vanishes on its own
    joint = JointDistribution.product(CORRELATED3, JointDistribution([0.3, 0.7], [[1.0], [-0.5]]))
    t = decoupling_terms(joint, 0, (1,), (3, 3))
    assert t.residual <= 1e-11
    assert np.max(np.abs(t.correction)) <= 1e-11


def test_expansion_examples():
    centered = fixture_distributions(0, 4)[3][1]
    one = Polynomial.constant(centered.n)
    cmp = expansion_identity_check(centered, 0, one, list(range(centered.n)), 2)
    assert abs(cmp.direct) <= 1e-12 and cmp.difference <= 1e-12

    f = Polynomial.monomial(3, (1,))
    cmp = expansion_identity_check(CORRELATED3, 0, f, [0, 1, 2], 2)
    assert cmp.direct == pytest.approx(CORRELATED3.moment((0, 1)), abs=1e-12)
    assert cmp.difference <= 1e-12

    four = JointDistribution([0.1, 0.2, 0.3, 0.4],
                             [[1, -1, 0.5], [0, 2, -1], [-1, 0.5, 1.5], [0.5, -0.5, -1]])
    quad = Polynomial.monomial(3, (0, 1), 2.0) + Polynomial.monomial(3, (2, 2), -1.0) + Polynomial.monomial(3, (1,))
    assert expansion_identity_check(four, 0, quad, [0, 1, 2], 4).difference <= 1e-10


def test_expansion_rejects_high_degree():
    f = Polynomial.monomial(3, (0, 1, 2))
    with pytest.raises(RemainderNotZero):
        expansion_identity_check(CORRELATED3, 0, f, [0, 1, 2], 3)


def test_remainder_bound():
    d = rademacher(1)
    cube = Polynomial.monomial(1, (0, 0, 0))
    rep = remainder_bound_check(d, 0, cube, [0], 2)
    assert abs(rep.omega) <= rep.bound
    low = Polynomial.monomial(1, (0,))
    assert remainder_bound_check(d, 0, low, [0], 2).omega == pytest.approx(0.0, abs=1e-14)
    bounds = [remainder_bound_check(d, 0, low, [0], R).bound for R in (2, 3, 4)]
    assert all(b == 0 for b in bounds)


def test_identity_suite_passes():
    records = identity_suite()
    assert len({r.case for r in records if r.suite == "moment-cumulant"}) >= 20
    bad = [r for r in records if not r.passed]
    assert not bad, bad


# -- properties -------------------------------------------------------------------------

@st.composite
def small_distributions(draw):
    atoms = draw(st.integers(1, 5))
    n = draw(st.integers(1, 3))
    w = draw(st.lists(st.integers(1, 9), min_size=atoms, max_size=atoms))
    vals = draw(st.lists(st.lists(st.integers(-3, 3), min_size=n, max_size=n), min_size=atoms, max_size=atoms))
    p = np.array(w, dtype=float)
    return JointDistribution(p / p.sum(), np.array(vals, dtype=float) / 2)


@settings(max_examples=60, deadline=None)
@given(small_distributions(), st.data())
def test_precumulant_mean_is_cumulant(dist, data):
    x = data.draw(st.integers(0, dist.n - 1))
    ys = data.draw(st.lists(st.integers(0, dist.n - 1), max_size=4))
    assert abs(precumulant_eval(dist, x, ys).expectation - joint_cumulant(dist, [x] + ys)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(small_distributions(), st.data())
def test_precumulant_symmetric_in_y(dist, data):
    x = data.draw(st.integers(0, dist.n - 1))
    ys = data.draw(st.lists(st.integers(0, dist.n - 1), max_size=4))
    perm = data.draw(st.permutations(ys))
    assert np.allclose(precumulant_values(dist, x, ys), precumulant_values(dist, x, perm), atol=1e-12, rtol=0)


@settings(max_examples=40, deadline=None)
@given(small_distributions(), st.data())
def test_expansion_exact_below_degree(dist, data):
    R = data.draw(st.integers(1, 3))
    f = Polynomial.constant(dist.n, data.draw(st.integers(-2, 2)))
    for _ in range(data.draw(st.integers(0, 3))):
        deg = data.draw(st.integers(1, R)) - 1
        ix = tuple(data.draw(st.integers(0, dist.n - 1)) for _ in range(deg))
        f = f + Polynomial.monomial(dist.n, ix, data.draw(st.integers(-3, 3)))
    if f.degree() >= R:
        return
    nb = sorted(set(data.draw(st.lists(st.integers(0, dist.n - 1), min_size=1))) | {0})
    assert expansion_identity_check(dist, 0, f, nb, R).difference <= 1e-10


def test_polynomial_json_and_derivative():
    f = Polynomial.monomial(2, (0, 0, 1), 3.0) + Polynomial.constant(2, -1.0)
    assert Polynomial.from_json(f.to_json()) == f
    assert f.derivative((0, 1)) == Polynomial.monomial(2, (0,), 6.0)
    assert f.derivative((1, 1)).is_zero()
    assert f.evaluate(np.array([[2.0, 0.5]]))[0] == pytest.approx(5.0)
