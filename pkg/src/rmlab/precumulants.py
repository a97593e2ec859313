"""Pre-cumulants K(X; Y) on finite distributions and the cumulant expansion they drive.

``K(X; Y)`` is a random variable whose expectation is the joint cumulant
``kappa(X, Y)``.  It is computed here from its closed moment-product form:
the time integrals in its definition are never discretized.
"""

import math
from collections import Counter
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .cumulants import JointDistribution, joint_cumulant
from .errors import ComplexityLimit, InvalidArgument, RemainderNotZero

MAX_Y = 6
MAX_DECOUPLING = 5
MAX_EXPANSION_TERMS = 200_000


def _subset_products(dist, ys):
    """Per-atom products over every subset of ``ys`` (bitmask keyed) and their expectations."""
    m = len(ys)
    prods = [None] * (1 << m)
    prods[0] = np.ones(len(dist))
    for mask in range(1, 1 << m):
        low = mask & -mask
        prods[mask] = prods[mask ^ low] * dist.values[:, ys[low.bit_length() - 1]]
    return prods


def _nonempty_submasks(mask):
    sub = mask
    while sub:
        yield sub
        sub = (sub - 1) & mask


def precumulant_values(dist, x, ys):
    """Per-atom values of ``K(X; Y)`` with ``X`` the coordinate ``x`` and ``Y`` the coordinates ``ys``.

    Expanding the closed form, the random factor is always ``prod Y_S`` for the
    last block ``S``; everything else is a number.  We collect those numbers
    into one coefficient per ``S``.
    """
    ys = tuple(int(i) for i in ys)
    if len(ys) > MAX_Y:
        raise ComplexityLimit(f"|ys| = {len(ys)} exceeds the cap of {MAX_Y}")
    if any(i < 0 or i >= dist.n for i in (x, *ys)):
        raise InvalidArgument("index out of range")
    m = len(ys)
    full = (1 << m) - 1
    prods = _subset_products(dist, ys)
    xcol = dist.values[:, x]
    ey = np.array([dist.expect(p) for p in prods])
    exy = np.array([dist.expect(xcol * p) for p in prods])

    # signed sum over ordered chains of non-empty blocks of expectations
    chains = np.zeros(1 << m)
    chains[0] = 1.0
    for mask in range(1, 1 << m):
        chains[mask] = -sum(ey[b] * chains[mask ^ b] for b in _nonempty_submasks(mask))

    def with_x(mask):
        # X block may be empty; it sits at the far end of the chain
        total = exy[0] * chains[mask]
        for b in _nonempty_submasks(mask):
            total += exy[b] * chains[mask ^ b]
        return total

    out = xcol * prods[full]
    for last in _nonempty_submasks(full):
        out = out - with_x(full ^ last) * prods[last]
    return out


@dataclass
class PrecumulantEvaluation:
    distribution: JointDistribution
    x_index: int
    y_indices: tuple
    values: np.ndarray

    @property
    def expectation(self):
        return self.distribution.expect(self.values)


def precumulant_eval(dist, x, ys):
    ys = tuple(int(i) for i in ys)
    return PrecumulantEvaluation(dist, int(x), ys, precumulant_values(dist, int(x), ys))


def _position_splits(items):
    """All (chosen, rest) splits of a tuple by position."""
    k = len(items)
    for mask in range(1 << k):
        chosen = tuple(items[i] for i in range(k) if mask >> i & 1)
        rest = tuple(items[i] for i in range(k) if not mask >> i & 1)
        yield chosen, rest


@dataclass
class DecouplingTerms:
    lhs: np.ndarray
    rhs: np.ndarray
    correction: np.ndarray

    @property
    def residual(self):
        return float(np.max(np.abs(self.lhs - self.rhs)))


def decoupling_terms(dist, x, ys, zs):
    """Both sides of the decoupling identity for ``K(X; Y + Z)`` evaluated atom by atom.

    ``correction`` is the sum over proper sub-vectors of ``Z`` that vanishes
    when ``Z`` is independent of ``(X, Y)``.
    """
    ys, zs = tuple(ys), tuple(zs)
    if len(ys) + len(zs) > MAX_DECOUPLING:
        raise ComplexityLimit(f"|ys| + |zs| exceeds the cap of {MAX_DECOUPLING}")
    kappa_all = joint_cumulant(dist, (x, *ys, *zs))
    lhs = precumulant_values(dist, x, ys + zs) - kappa_all
    head = dist.monomial(zs) * (precumulant_values(dist, x, ys) - joint_cumulant(dist, (x, *ys)))
    correction = np.zeros(len(dist))
    for ysub, yrest in _position_splits(ys):
        for zsub, zrest in _position_splits(zs):
            if len(zsub) == len(zs):
                continue
            correction += (dist.monomial(ysub) * dist.monomial(zsub)
                           * joint_cumulant(dist, (x, *yrest, *zrest)))
    return DecouplingTerms(lhs, head - correction, correction)


def decoupling_residual(dist, x, ys, zs):
    """Largest per-atom gap between the two sides of the decoupling identity."""
    return decoupling_terms(dist, x, ys, zs).residual


def _multisets(neighborhood, m):
    """Sorted multisets of size ``m`` with the number of ordered tuples each represents."""
    for ms in combinations_with_replacement(sorted(neighborhood), m):
        count = math.factorial(m)
        for c in Counter(ms).values():
            count //= math.factorial(c)
        yield ms, count


def _check_expansion_args(dist, i0, f, neighborhood, R):
    neighborhood = sorted({int(i) for i in neighborhood})
    if i0 not in neighborhood:
        raise InvalidArgument("i0 must belong to the neighbourhood")
    if any(i < 0 or i >= dist.n for i in neighborhood):
        raise InvalidArgument("neighbourhood index out of range")
    if f.nvars != dist.n:
        raise InvalidArgument("polynomial and distribution disagree on the number of variables")
    if R < 1:
        raise InvalidArgument("R must be at least 1")
    if math.comb(len(neighborhood) + R, R) > MAX_EXPANSION_TERMS:
        raise ComplexityLimit("too many expansion terms")
    return neighborhood


def truncated_expansion(dist, i0, f, neighborhood, R):
    """Value of the expansion of ``E[w_i0 f(w)]`` with all orders below ``R``."""
    neighborhood = _check_expansion_args(dist, i0, f, neighborhood, R)
    zeroed = dist.with_zeroed(neighborhood)
    total = 0.0
    for m in range(R):
        for ms, count in _multisets(neighborhood, m):
            df = f.derivative(ms)
            if df.is_zero():
                continue
            weight = count / math.factorial(m)
            kappa = joint_cumulant(dist, (i0, *ms))
            k_values = precumulant_values(dist, i0, ms)
            full = dist.expect(df.evaluate(dist.values))
            restricted = dist.expect((k_values - kappa) * df.evaluate(zeroed.values))
            total += weight * (kappa * full + restricted)
    return float(total)


@dataclass
class ExpansionComparison:
    direct: float
    expansion: float

    @property
    def difference(self):
        return abs(self.direct - self.expansion)


def expansion_identity_check(dist, i0, f, neighborhood, R):
    """Compare ``E[w_i0 f(w)]`` with its cumulant expansion, which is exact when deg f < R."""
    if f.degree() >= R:
        raise RemainderNotZero(f"deg f = {f.degree()} is not below R = {R}")
    direct = dist.expect(dist.values[:, i0] * f.evaluate(dist.values))
    return ExpansionComparison(direct, truncated_expansion(dist, i0, f, neighborhood, R))


@dataclass
class RemainderReport:
    omega: float
    bound: float

    @property
    def ratio(self):
        if self.bound == 0:
            return 0.0 if self.omega == 0 else math.inf
        return abs(self.omega) / self.bound


def remainder_bound_check(dist, i0, f, neighborhood, R, quad_nodes=32):
    """Exact remainder of the order-``R`` expansion next to its moment bound.

    The bound is ``sqrt(mu_2R) * sum_i int_0^1 ||d_i f(t w_N, w_rest)||_2 dt``
    with ``mu_2R`` the largest absolute ``2R``-th moment.
    """
    neighborhood = _check_expansion_args(dist, i0, f, neighborhood, R)
    direct = dist.expect(dist.values[:, i0] * f.evaluate(dist.values))
    omega = direct - truncated_expansion(dist, i0, f, neighborhood, R)
    mu = float(np.max(dist.probs @ np.abs(dist.values) ** (2 * R)))
    nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)
    ts, ws = (nodes + 1) / 2, weights / 2
    total = 0.0
    for ms, count in _multisets(neighborhood, R):
        df = f.derivative(ms)
        if df.is_zero():
            continue
        integral = 0.0
        for t, w in zip(ts, ws):
            vals = np.array(dist.values)
            vals[:, neighborhood] *= t
            integral += w * math.sqrt(dist.expect(np.abs(df.evaluate(vals)) ** 2))
        total += count * integral
    return RemainderReport(float(omega), float(math.sqrt(mu) * total))
