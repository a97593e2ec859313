"""Exact identity suites for the cumulant and pre-cumulant machinery on finite distributions."""

import itertools
from dataclasses import dataclass

import numpy as np

from .cumulants import (
    CumulantTable,
    JointDistribution,
    Partition,
    joint_cumulant,
    mobius,
    moments_from_cumulants,
    partitions_of,
    wick_expectation_check,
)
from .polynomials import Polynomial
from .precumulants import decoupling_residual, expansion_identity_check, precumulant_values

TOL = 1e-10
CHECK_HEADER = ["suite", "case", "residual", "passed"]


@dataclass
class CheckRecord:
    suite: str
    case: str
    residual: float
    tol: float = TOL

    @property
    def passed(self):
        return bool(np.isfinite(self.residual) and self.residual <= self.tol)

    def row(self):
        return {"suite": self.suite, "case": self.case, "residual": self.residual,
                "passed": int(self.passed)}


def random_distribution(rng, atoms, n, centered=False):
    p = rng.random(atoms) + 0.1
    p /= p.sum()
    v = rng.integers(-3, 4, size=(atoms, n)).astype(float) / 2
    if centered:
        v -= p @ v
    return JointDistribution(p, v)


def rademacher(n=1):
    return JointDistribution.product(*[JointDistribution([0.5, 0.5], [[-1.0], [1.0]])] * n)


def fixture_distributions(seed=0, count=24):
    """Named finite distributions: Rademacher products, a correlated triple and seeded random ones."""
    rng = np.random.default_rng(seed)
    out = [("rademacher1", rademacher(1)), ("rademacher3", rademacher(3)),
           ("correlated3", JointDistribution([0.2, 0.3, 0.5], [[1, 0, 2], [-1, 1, 0], [0.2, -0.6, -1.2]]))]
    k = 0
    while len(out) < count:
        atoms, n = 2 + k % 4, 2 + k % 3
        out.append((f"random{k}-a{atoms}-n{n}", random_distribution(rng, atoms, n, centered=k % 2 == 0)))
        k += 1
    return out


def _multisets(n, max_size):
    for m in range(1, max_size + 1):
        yield from itertools.combinations_with_replacement(range(n), m)


def moment_roundtrip(name, dist, order=4):
    table = CumulantTable.from_distribution(dist, order)
    worst = max(abs(moments_from_cumulants(table, ix) - dist.moment(ix)) for ix in _multisets(dist.n, order))
    return CheckRecord("moment-cumulant", name, float(worst))


def mobius_inversion(n):
    """``sum_{P <= R <= Q} mu(P, R) = [P == Q]`` over every pair of the lattice of ``[n]``."""
    parts = partitions_of(n)
    worst = 0
    if n <= 4:
        pairs = [(P, Q) for P in parts for Q in parts if P.refines(Q)]
    else:  # from the bottom element only; the full pair set is too large to be useful
        bottom = Partition.bottom(n)
        pairs = [(bottom, Q) for Q in parts]
    for P, Q in pairs:
        total = sum(mobius(P, R) for R in parts if P.refines(R) and R.refines(Q))
        worst = max(worst, abs(total - (1 if P == Q else 0)))
    return CheckRecord("mobius", f"n={n}", float(worst))


def precumulant_mean(name, dist, max_y=3):
    worst = 0.0
    for x in range(dist.n):
        for m in range(0, max_y + 1):
            for ys in itertools.combinations_with_replacement(range(dist.n), m):
                K = precumulant_values(dist, x, ys)
                worst = max(worst, abs(dist.expect(K) - joint_cumulant(dist, (x,) + ys)))
    return CheckRecord("precumulant-mean", name, worst)


def precumulant_alternative(name, dist, max_y=3):
    """``K - kappa - X prod Y + sum_{Y' <= Y} prod Y' kappa(X, Y minus Y') = 0`` atom by atom."""
    worst = 0.0
    for x in range(dist.n):
        for ys in itertools.combinations_with_replacement(range(dist.n), max_y):
            K = precumulant_values(dist, x, ys)
            s = np.zeros(len(dist))
            for r in range(len(ys) + 1):
                for sub in itertools.combinations(range(len(ys)), r):
                    rest = tuple(ys[i] for i in range(len(ys)) if i not in sub)
                    s += dist.monomial([ys[i] for i in sub]) * joint_cumulant(dist, (x,) + rest)
            resid = K - joint_cumulant(dist, (x,) + ys) - dist.monomial((x,) + ys) + s
            worst = max(worst, float(np.max(np.abs(resid))))
    return CheckRecord("precumulant-alternative", name, worst)


def decoupling(name, dist):
    worst = 0.0
    n = dist.n
    for ys in itertools.combinations_with_replacement(range(n), 2):
        for zs in itertools.combinations_with_replacement(range(n), 2):
            worst = max(worst, decoupling_residual(dist, 0, ys, zs))
    return CheckRecord("decoupling", name, worst)


def random_polynomial(rng, nvars, degree, terms=4):
    f = Polynomial.constant(nvars, float(rng.integers(-2, 3)))
    for _ in range(terms):
        d = int(rng.integers(1, degree + 1))
        ix = tuple(int(i) for i in rng.integers(0, nvars, size=d))
        f = f + Polynomial.monomial(nvars, ix, float(rng.integers(-3, 4)))
    return f


def expansion(name, dist, rng, R=3):
    worst = 0.0
    for _ in range(3):
        f = random_polynomial(rng, dist.n, R - 1)
        nb = sorted(set(range(dist.n)))
        worst = max(worst, expansion_identity_check(dist, 0, f, nb, R).difference)
    return CheckRecord("expansion", name, worst)


def wick(name, dist, rng):
    """Append an independent Rademacher coordinate and check ``E[Y :X1 X2:] = 0``."""
    joint = JointDistribution.product(dist, rademacher(1))
    new = joint.n - 1
    x2 = (int(rng.integers(0, dist.n)),)
    y = tuple(int(i) for i in rng.integers(0, dist.n, size=2))
    res = wick_expectation_check(joint, (new,), x2, y)
    return CheckRecord("wick", name, max(res.residual, res.relation_residual))


def identity_suite(seed=0, count=24):
    """Every exact identity on the fixture set; each record must be at most ``TOL``."""
    rng = np.random.default_rng(seed + 7)
    records = [mobius_inversion(n) for n in range(1, 7)]
    for name, dist in fixture_distributions(seed, count):
        records.append(moment_roundtrip(name, dist))
        records.append(precumulant_mean(name, dist))
        records.append(precumulant_alternative(name, dist))
        records.append(decoupling(name, dist))
        records.append(expansion(name, dist, rng))
        records.append(wick(name, dist, rng))
    return records
