"""Set partitions, moments and joint cumulants of finite discrete distributions.

Elements of a ground set of size ``n`` are labelled ``0, ..., n-1``.  Index
multisets are tuples of variable indices, repetitions allowed.
"""

import json
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, combinations_with_replacement

import numpy as np

from .errors import (
    ComplexityLimit,
    DegenerateSampleWarning,
    IncompleteTable,
    InvalidArgument,
    PreconditionFailed,
)

MAX_PARTITION_SIZE = 12
MAX_CUMULANT_ORDER = 10
MAX_EMPIRICAL_ORDER = 6


@dataclass(frozen=True)
class Partition:
    """A set partition of ``{0, ..., n-1}`` with blocks sorted by minimum."""

    blocks: tuple
    n: int

    def __post_init__(self):
        blocks = tuple(tuple(sorted(b)) for b in self.blocks)
        if any(len(b) == 0 for b in blocks):
            raise InvalidArgument("empty block")
        seen = sorted(x for b in blocks for x in b)
        if seen != list(range(self.n)):
            raise InvalidArgument(f"blocks do not partition range({self.n})")
        object.__setattr__(self, "blocks", tuple(sorted(blocks)))

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    @classmethod
    def from_rgs(cls, rgs):
        """Build from a restricted growth string."""
        blocks = {}
        for i, label in enumerate(rgs):
            blocks.setdefault(label, []).append(i)
        return cls(tuple(tuple(b) for b in blocks.values()), len(rgs))

    @classmethod
    def top(cls, n):
        return cls((tuple(range(n)),), n)

    @classmethod
    def bottom(cls, n):
        return cls(tuple((i,) for i in range(n)), n)

    def block_of(self):
        """Map element -> index of its block."""
        out = [0] * self.n
        for k, b in enumerate(self.blocks):
            for x in b:
                out[x] = k
        return out

    def refines(self, other):
        """True when every block of ``self`` lies inside a block of ``other``."""
        owner = other.block_of()
        return all(len({owner[x] for x in b}) == 1 for b in self.blocks)

    def __str__(self):
        return "{" + ",".join("{" + ",".join(map(str, b)) + "}" for b in self.blocks) + "}"


def iter_partitions(n):
    """Lazily yield set partitions of ``n`` elements in restricted-growth-string order."""
    for rgs in iter_rgs(n):
        yield Partition.from_rgs(rgs)


def iter_rgs(n):
    """Restricted growth strings of length ``n`` in lexicographic order."""
    def rec(prefix, current_max):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for label in range(current_max + 2):
            prefix.append(label)
            yield from rec(prefix, max(current_max, label))
            prefix.pop()

    if n == 0:
        yield ()
        return
    yield from rec([0], 0)


def partitions_of(n):
    """All set partitions of ``n`` elements in restricted-growth-string order."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_PARTITION_SIZE:
        raise InvalidArgument(f"n must be an integer in [1, {MAX_PARTITION_SIZE}], got {n!r}")
    return list(iter_partitions(int(n)))


def mobius(p, q):
    """Möbius function of the partition lattice for ``p`` finer than ``q``."""
    if not p.refines(q):
        return 0
    owner = q.block_of()
    counts = [0] * len(q)
    for b in p.blocks:
        counts[owner[b[0]]] += 1
    out = 1
    for k in counts:
        out *= (-1) ** (k - 1) * math.factorial(k - 1)
    return out


def mobius_to_top(p):
    k = len(p)
    return (-1) ** (k - 1) * math.factorial(k - 1)


@lru_cache(maxsize=None)
def _partition_masks(n):
    """Partitions of ``n`` positions as tuples of block bitmasks, plus Möbius weights."""
    out = []
    for part in iter_partitions(n):
        masks = tuple(sum(1 << x for x in b) for b in part.blocks)
        out.append((masks, mobius_to_top(part)))
    return tuple(out)


class JointDistribution:
    """A random vector taking finitely many values ``values[j]`` with probabilities ``probs[j]``."""

    def __init__(self, probs, values):
        probs = np.asarray(probs, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if probs.ndim != 1 or len(probs) == 0:
            raise InvalidArgument("need at least one atom")
        if values.shape[0] != len(probs):
            raise InvalidArgument("every atom needs one value vector")
        if np.any(probs < 0) or np.any(probs > 1):
            raise InvalidArgument("probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidArgument(f"probabilities sum to {probs.sum()!r}, not 1")
        self.probs = probs
        self.values = values
        self.probs.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def n(self):
        return self.values.shape[1]

    def __len__(self):
        return len(self.probs)

    def __repr__(self):
        return f"JointDistribution(atoms={len(self)}, n={self.n})"

    @classmethod
    def from_dict(cls, data):
        atoms = data["atoms"]
        if not atoms:
            raise InvalidArgument("need at least one atom")
        lengths = {len(a["v"]) for a in atoms}
        if len(lengths) != 1:
            raise InvalidArgument("all value vectors must have the same length")
        return cls([a["p"] for a in atoms], [a["v"] for a in atoms])

    def to_dict(self):
        return {"atoms": [{"p": float(p), "v": [float(x) for x in v]}
                          for p, v in zip(self.probs, self.values)]}

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def product(cls, *dists):
        """Distribution of independent blocks placed side by side."""
        probs, values = np.array([1.0]), np.zeros((1, 0))
        for d in dists:
            probs = np.outer(probs, d.probs).ravel()
            values = np.concatenate([np.repeat(values, len(d), axis=0),
                                     np.tile(d.values, (len(values), 1))], axis=1)
        return cls(probs, values)

    def monomial(self, indices):
        """Per-atom values of the product of the listed coordinates."""
        out = np.ones(len(self))
        for i in indices:
            out = out * self.values[:, i]
        return out

    def expect(self, per_atom):
        return float(np.dot(self.probs, per_atom))

    def moment(self, indices):
        return self.expect(self.monomial(indices))

    def with_zeroed(self, coords):
        """Copy whose listed coordinates are set to zero on every atom."""
        values = np.array(self.values)
        values[:, list(coords)] = 0.0
        return JointDistribution(self.probs, values)


def _check_indices(dist, indices, cap):
    indices = tuple(int(i) for i in indices)
    if not indices:
        raise InvalidArgument("indices must be non-empty")
    if len(indices) > cap:
        raise ComplexityLimit(f"{len(indices)} indices exceed the cap of {cap}")
    if any(i < 0 or i >= dist.n for i in indices):
        raise InvalidArgument(f"index out of range for a {dist.n}-variable distribution")
    return indices


def _subset_moments(columns, probs):
    """Expectations of products over every subset of ``columns`` (bitmask keyed)."""
    k = len(columns)
    prods = [None] * (1 << k)
    prods[0] = np.ones_like(columns[0])
    moments = np.empty(1 << k)
    moments[0] = 1.0
    for mask in range(1, 1 << k):
        low = mask & -mask
        prods[mask] = prods[mask ^ low] * columns[low.bit_length() - 1]
        moments[mask] = np.dot(probs, prods[mask])
    return moments


def _cumulant_from_moments(moments, k):
    total = 0.0
    for masks, weight in _partition_masks(k):
        term = float(weight)
        for m in masks:
            term *= moments[m]
        total += term
    return total


def joint_cumulant(dist, indices):
    """Joint cumulant of the coordinates listed in ``indices`` (a multiset)."""
    indices = sorted(_check_indices(dist, indices, MAX_CUMULANT_ORDER))  # order-free, bit for bit
    columns = [dist.values[:, i] for i in indices]
    return _cumulant_from_moments(_subset_moments(columns, dist.probs), len(indices))


def multiset_key(indices):
    return tuple(sorted(int(i) for i in indices))


class CumulantTable:
    """Joint cumulants keyed by sorted index multisets of size at most ``order``."""

    def __init__(self, order, values=None):
        self.order = int(order)
        self._values = {}
        for key, val in (values or {}).items():
            self[key] = val

    def __setitem__(self, indices, value):
        key = multiset_key(indices)
        if not 1 <= len(key) <= self.order:
            raise InvalidArgument(f"multiset {key} outside table order {self.order}")
        self._values[key] = float(value)

    def __getitem__(self, indices):
        key = multiset_key(indices)
        try:
            return self._values[key]
        except KeyError:
            raise IncompleteTable(f"no cumulant entry for {key}") from None

    def __contains__(self, indices):
        return multiset_key(indices) in self._values

    def __len__(self):
        return len(self._values)

    def items(self):
        return self._values.items()

    @classmethod
    def from_distribution(cls, dist, order):
        table = cls(order)
        for m in range(1, order + 1):
            for key in combinations_with_replacement(range(dist.n), m):
                table[key] = joint_cumulant(dist, key)
        return table


def moments_from_cumulants(table, indices):
    """Raw mixed moment as the sum over partitions of products of cumulants."""
    indices = tuple(int(i) for i in indices)
    if not indices:
        return 1.0
    if len(indices) > MAX_PARTITION_SIZE:
        raise ComplexityLimit(f"{len(indices)} indices exceed the cap of {MAX_PARTITION_SIZE}")
    total = 0.0
    for part in iter_partitions(len(indices)):
        term = 1.0
        for block in part.blocks:
            term *= table[[indices[x] for x in block]]
        total += term
    return total


def empirical_cumulant(samples, indices, return_se=False, n_batches=20):
    """Plug-in joint cumulant of the empirical distribution of ``samples``.

    ``samples`` has one draw per row.  With ``return_se`` the standard error is
    estimated from ``n_batches`` disjoint batches.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] < 2:
        raise InvalidArgument("need at least two samples")
    indices = tuple(int(i) for i in indices)
    if not indices:
        raise InvalidArgument("indices must be non-empty")
    if len(indices) > MAX_EMPIRICAL_ORDER:
        raise ComplexityLimit(f"{len(indices)} indices exceed the cap of {MAX_EMPIRICAL_ORDER}")
    if any(np.ptp(samples[:, i]) == 0 for i in set(indices)):
        warnings.warn("zero-variance coordinate in empirical cumulant", DegenerateSampleWarning)

    def estimate(block):
        probs = np.full(len(block), 1.0 / len(block))
        columns = [block[:, i] for i in indices]
        return _cumulant_from_moments(_subset_moments(columns, probs), len(indices))

    value = estimate(samples)
    if not return_se:
        return value
    n_batches = min(n_batches, samples.shape[0] // 2)
    if n_batches < 2:
        return value, float("nan")
    batches = np.array_split(samples, n_batches)
    ests = np.array([estimate(b) for b in batches])
    return value, float(ests.std(ddof=1) / math.sqrt(n_batches))


def _sub_multisets(items):
    """Yield (chosen, rest) position splits of a tuple, every subset once."""
    k = len(items)
    for r in range(k + 1):
        for chosen in combinations(range(k), r):
            rest = tuple(i for i in range(k) if i not in chosen)
            yield chosen, rest


def wick_values(dist, xs, table=None):
    """Per-atom values of the Wick polynomial of the coordinates ``xs``."""
    xs = tuple(int(i) for i in xs)
    if table is None:
        table = CumulantTable.from_distribution(dist, max(len(xs), 1))
    out = np.zeros(len(dist))
    for chosen, rest in _sub_multisets(xs):
        coef = 0.0
        if rest:
            for part in iter_partitions(len(rest)):
                term = (-1.0) ** len(part)
                for block in part.blocks:
                    term *= table[[xs[rest[x]] for x in block]]
                coef += term
        else:
            coef = 1.0
        out += coef * dist.monomial([xs[c] for c in chosen])
    return out


def _factorizes(dist, left, right, tol=1e-12):
    """True when the coordinates ``left`` are independent of ``right`` under ``dist``."""
    if not left or not right:
        return True
    lkeys = [tuple(row) for row in dist.values[:, list(left)]]
    rkeys = [tuple(row) for row in dist.values[:, list(right)]]
    joint, pl, pr = {}, {}, {}
    for p, a, b in zip(dist.probs, lkeys, rkeys):
        joint[a, b] = joint.get((a, b), 0.0) + p
        pl[a] = pl.get(a, 0.0) + p
        pr[b] = pr.get(b, 0.0) + p
    return all(abs(joint.get((a, b), 0.0) - pa * pb) <= tol
               for a, pa in pl.items() for b, pb in pr.items())


@dataclass
class WickCheck:
    residual: float
    relation_residual: float


def wick_expectation_check(dist, x1, x2=(), y=()):
    """Check that ``E[Y :X1 X2:]`` vanishes when ``X1`` is independent of ``(X2, Y)``.

    ``x1``, ``x2`` and ``y`` are index tuples; ``Y`` is the product of the
    coordinates in ``y``.  Also returns the pointwise residual of the
    symmetrized pre-cumulant/Wick relation for the multiset ``x1 + x2``.
    """
    from .precumulants import precumulant_values

    x1, x2, y = (tuple(int(i) for i in v) for v in (x1, x2, y))
    if not x1:
        raise InvalidArgument("x1 must be non-empty")
    if set(x1) & (set(x2) | set(y)):
        raise PreconditionFailed("x1 shares coordinates with x2/y")
    if not _factorizes(dist, sorted(set(x1)), sorted(set(x2) | set(y))):
        raise PreconditionFailed("x1 is not independent of (x2, y) under this distribution")
    xs = x1 + x2
    table = CumulantTable.from_distribution(dist, len(xs))
    wick = wick_values(dist, xs, table)
    residual = abs(dist.expect(dist.monomial(y) * wick))

    # sum_X [K(X; rest) - kappa] == |X| prod X - sum_{X'} |X'| E[prod X'] :X \ X':
    k = len(xs)
    kappa = joint_cumulant(dist, xs)
    lhs = np.zeros(len(dist))
    for j in range(k):
        lhs += precumulant_values(dist, xs[j], xs[:j] + xs[j + 1:]) - kappa
    rhs = k * dist.monomial(xs)
    for chosen, rest in _sub_multisets(xs):
        if not chosen:
            continue
        sub = [xs[c] for c in chosen]
        rhs -= len(chosen) * dist.moment(sub) * wick_values(dist, [xs[r] for r in rest], table)
    return WickCheck(residual, float(np.max(np.abs(lhs - rhs))))
