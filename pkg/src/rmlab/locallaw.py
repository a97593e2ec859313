"""Resolvent experiments: error matrix, Ward identity, local-law scaling and spectral statistics."""

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .ensembles import expectation_matrix, sample_matrix, sample_seed, with_size
from .errors import IllConditioned, InvalidArgument, PreconditionFailed, Unsupported, VarianceWarning
from .mde import MdeOptions, density_profile, solve_mde, support_estimate
from .parallel import pmap

ERRORS_HEADER = ["N", "eta", "E", "seed", "iso_mean", "avg_mean", "D_iso", "D_avg", "ward"]
SPECTRA_HEADER = ["N", "seed", "k", "lambda", "gamma_k", "max_component"]
BULK_FRACTION = 0.1  # eigenvalues excluded at each edge
MIN_SAMPLES = 5
PROBE_STREAM = 0x70726F6265  # keeps probe draws apart from the integer-seeded sample streams


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row[h]) for h in header])
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# --- resolvent, error matrix, Ward identity -------------------------------------------

def resolvent_probes(N, seed=0):
    """Four coordinate vectors followed by four seeded random unit vectors, as columns."""
    P = np.zeros((N, 8))
    for j, a in enumerate((0, N // 4, N // 2, (3 * N) // 4)):
        P[min(a, N - 1), j] = 1.0
    g = np.random.default_rng([PROBE_STREAM, seed]).standard_normal((N, 4))
    P[:, 4:] = g / np.linalg.norm(g, axis=0)
    return P


def probe_matrices(N, seed=0):
    """The identity and a seeded random real symmetric matrix of operator norm one."""
    g = np.random.default_rng([PROBE_STREAM, seed, 1]).standard_normal((N, N))
    B = (g + g.T) / 2
    return [np.eye(N), B / np.linalg.norm(B, 2)]


def _check_eta(z):
    if z.imag < 1e-12:
        raise IllConditioned(f"Im z = {z.imag:.3g} is too small for a stable resolvent")


def resolvent_from_eig(lam, U, z):
    g = 1.0 / (lam - z)
    return (U * g) @ U.conj().T


def resolvent(H, z):
    """``(H - z)^-1`` through the eigendecomposition of Hermitian ``H``."""
    z = complex(z)
    _check_eta(z)
    lam, U = np.linalg.eigh(H)
    return resolvent_from_eig(lam, U, z)


def error_matrix(G, A, kernel, z):
    """``D = (H - A + S[G]) G``, written as ``1 + (z - A + S[G]) G`` to avoid forming ``H``."""
    N = G.shape[0]
    A = np.zeros((N, N)) if A is None else A
    return np.eye(N) + (z * np.eye(N) - A + kernel.apply_S(G)) @ G


def ward_residual(G, z):
    """Largest relative gap in ``sum_b |G_ab|^2 = Im G_aa / eta`` over rows ``a``."""
    eta = complex(z).imag
    lhs = np.sum(np.abs(G) ** 2, axis=1)
    rhs = np.diag(G).imag / eta
    return float(np.max(np.abs(lhs - rhs) / np.abs(rhs)))


@dataclass
class ErrorReport:
    N: int
    z: complex
    seed: object
    iso_error: float
    avg_error: float
    D_iso: float
    D_avg: float
    ward_residual: float

    def values(self):
        return [self.iso_error, self.avg_error, self.D_iso, self.D_avg, self.ward_residual]


def _probe_errors(X, P, Bs):
    iso = float(np.max(np.abs(P.T @ X @ P)))
    N = X.shape[0]
    avg = max(abs(np.trace(B @ X)) / N for B in Bs)
    return iso, float(avg)


def _report(G, A, kernel, z, M, P, Bs, seed=None):
    iso, avg = _probe_errors(G - M, P, Bs)
    D = error_matrix(G, A, kernel, z)
    d_iso, d_avg = _probe_errors(D, P, Bs)
    return ErrorReport(G.shape[0], z, seed, iso, avg, d_iso, d_avg, ward_residual(G, z)), D


def resolvent_and_error(H, A, kernel, z, M, probe_seed=0, seed=None):
    """Resolvent ``G``, error matrix ``D`` and the probe report against the MDE solution ``M``."""
    z = complex(z)
    _check_eta(z)
    G = resolvent(H, z)
    N = G.shape[0]
    report, D = _report(G, A, kernel, z, np.asarray(M), resolvent_probes(N, probe_seed),
                        probe_matrices(N, probe_seed), seed)
    return G, D, report


# --- local-law scaling -----------------------------------------------------------------

@dataclass
class SweepResult:
    rows: list
    avg_slope: float
    iso_slope: float

    def to_csv(self):
        return _csv(ERRORS_HEADER, self.rows)


def _sweep_sample(index, model, seed, zs, Ms):
    H = sample_matrix(model, sample_seed(seed, index))
    lam, U = np.linalg.eigh(H)
    A = expectation_matrix(model)
    N = model.N
    P, Bs = resolvent_probes(N), probe_matrices(N)
    out = []
    for z, M in zip(zs, Ms):
        G = resolvent_from_eig(lam, U, z)
        rep, _ = _report(G, A, model.kernel, z, M, P, Bs)
        out.append(rep.values())
    return out


def _mean_errors(model, zs, samples, seed, jobs, opts):
    A = expectation_matrix(model)
    Ms = [solve_mde(A, model.kernel, z, opts).M for z in zs]
    per_sample = pmap(partial(_sweep_sample, model=model, seed=seed, zs=zs, Ms=Ms), range(samples), jobs)
    arr = np.array(per_sample)  # samples x len(zs) x 5
    return arr[:, :, :4].mean(axis=0), arr[:, :, 4].max(axis=0)


def _slope(x, y):
    if len(np.unique(x)) < 2:  # a single N eta value has no slope
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _warn_samples(samples):
    if samples < MIN_SAMPLES:
        warnings.warn(f"{samples} samples give unreliable means; use at least {MIN_SAMPLES}", VarianceWarning)


def error_sweep(model, N_list, etas=None, E=0.0, samples=20, seed=0, eta_exponents=None,
                jobs=1, opts=None, rho_min=0.05):
    """Mean probe errors of ``G - M`` and ``D`` over a grid of ``(N, eta)`` at ``z = E + i eta``.

    ``etas`` are absolute values; ``eta_exponents`` gives ``eta = N^-x`` per size instead.
    The slopes are least-squares fits of log error against ``log(N eta)`` pooled over all sizes.
    """
    if (etas is None) == (eta_exponents is None):
        raise InvalidArgument("give exactly one of etas and eta_exponents")
    _warn_samples(samples)
    opts = opts or MdeOptions()
    rows = []
    for N in N_list:
        m = with_size(model, N)
        grid = [N ** -x for x in eta_exponents] if eta_exponents is not None else list(etas)
        if min(grid) < N ** -0.9:
            raise InvalidArgument(f"eta below N^-0.9 at N = {N}")
        rho = solve_mde(expectation_matrix(m), m.kernel, complex(E, 1e-3), opts).density
        if rho < rho_min:
            raise PreconditionFailed(f"E = {E} is not in the bulk (rho = {rho:.3g})")
        zs = [complex(E, eta) for eta in grid]
        means, ward = _mean_errors(m, zs, samples, seed, jobs, opts)
        for eta, mean, w in zip(grid, means, ward):
            rows.append({"N": N, "eta": eta, "E": E, "seed": seed, "iso_mean": mean[0],
                         "avg_mean": mean[1], "D_iso": mean[2], "D_avg": mean[3], "ward": w})
    x = np.array([r["N"] * r["eta"] for r in rows])
    avg = _slope(x, np.array([r["avg_mean"] for r in rows]))
    iso = _slope(x, np.array([r["iso_mean"] for r in rows]))
    return SweepResult(rows, avg, iso)


def japanese(z):
    return 1.0 + abs(z)


def outside_sweep(model, N_list, z, samples=20, seed=0, jobs=1, opts=None):
    """Errors at a fixed ``z`` away from the spectrum, with the ``<z>^2 sqrt(N)`` and ``<z>^2 N`` scalings."""
    _warn_samples(samples)
    z = complex(z)
    rows = []
    for N in N_list:
        m = with_size(model, N)
        means, ward = _mean_errors(m, [z], samples, seed, jobs, opts)
        mean = means[0]
        w = japanese(z) ** 2
        rows.append({"N": N, "z": z, "iso_mean": mean[0], "avg_mean": mean[1],
                     "iso_scaled": mean[0] * w * math.sqrt(N), "avg_scaled": mean[1] * w * N,
                     "ward": ward[0]})
    return rows


# --- self-consistent density on the real line ----------------------------------------

_DENSITY_CACHE = {}


def _density_model(model):
    """A model with the same density that is cheaper to solve.

    With ``A = 0`` the block-copy equation closes on ``span{1, J (x) 1}`` with
    dimension-free coefficients, so four rows per block suffice.
    """
    if model.kind == "block_copy" and model.A is None:
        n = int(model.params.get("n_blocks", 2))
        if model.N > 4 * n:
            return with_size(model, 4 * n)
    return model


def _spectral_radius_bound(model):
    A = expectation_matrix(model)
    s = np.linalg.norm(model.kernel.apply_S(np.eye(model.N)), 2)
    return float(np.linalg.norm(A, 2) + 3.0 * math.sqrt(s) + 0.5)


def model_density(model, eta=1e-3, step=0.01, opts=None):
    """Density profile of ``model`` on a grid covering its spectrum (cached per model)."""
    A = expectation_matrix(model)
    key = (model.model_id(), hash(A.tobytes()), eta, step)
    if key not in _DENSITY_CACHE:
        dm = _density_model(model)
        L = _spectral_radius_bound(dm)
        grid = np.arange(-L, L + step / 2, step)
        _DENSITY_CACHE[key] = density_profile(expectation_matrix(dm), dm.kernel, grid, eta, opts)
    return _DENSITY_CACHE[key]


@dataclass
class ClassicalPositions:
    E: np.ndarray
    cdf: np.ndarray
    rho: np.ndarray

    @classmethod
    def from_profile(cls, profile):
        F = cumulative_trapezoid(profile.rho, profile.E, initial=0.0)
        return cls(profile.E, F / F[-1], profile.rho)

    def index(self, E, N):
        """``k(E) = ceil(N * int_-inf^E rho)``."""
        return np.ceil(N * np.interp(E, self.E, self.cdf) - 1e-9).astype(int)

    def gamma(self, N):
        """``gamma_k`` for ``k = 1..N``: where the cumulative density reaches ``k / N``."""
        k = np.arange(1, N + 1)
        return np.interp(k / N, self.cdf, self.E)

    def density_at(self, E):
        return np.interp(E, self.E, self.rho)


def semicircle_positions(n_grid=20001):
    """Exact semicircle law on [-2, 2] in the same container (oracle for the GOE/GUE runs)."""
    E = np.linspace(-2, 2, n_grid)
    rho = np.sqrt(np.maximum(4 - E * E, 0)) / (2 * math.pi)
    cdf = 0.5 + (E * np.sqrt(np.maximum(4 - E * E, 0)) / 4 + np.arcsin(E / 2)) / math.pi
    return ClassicalPositions(E, cdf, rho)


# --- rigidity and delocalization ------------------------------------------------------

def bulk_indices(N, edge_fraction=BULK_FRACTION):
    """0-based indices of eigenvalues kept after dropping ``edge_fraction`` at each edge."""
    lo = int(math.ceil(edge_fraction * N))
    return np.arange(lo, N - lo)


def _spectral_sample(H, positions, edge_fraction):
    N = H.shape[0]
    lam, U = np.linalg.eigh(H)
    gamma = positions.gamma(N)
    maxc = np.max(np.abs(U), axis=0)
    bulk = bulk_indices(N, edge_fraction)
    rig = float(np.max(N * positions.density_at(gamma[bulk]) * np.abs(lam[bulk] - gamma[bulk])))
    deloc = float(math.sqrt(N) * np.max(maxc[bulk]))
    return lam, gamma, maxc, rig, deloc


@dataclass
class SpectralSummary:
    N: int
    rigidity: np.ndarray
    delocalization: np.ndarray
    rows: list = field(default_factory=list)

    @property
    def median_rigidity(self):
        return float(np.median(self.rigidity))

    @property
    def max_rigidity(self):
        return float(np.max(self.rigidity))

    @property
    def median_delocalization(self):
        return float(np.median(self.delocalization))

    @property
    def max_delocalization(self):
        return float(np.max(self.delocalization))

    def to_csv(self):
        return _csv(SPECTRA_HEADER, self.rows)


def _summarize(N, results, seeds):
    rows = []
    for s, (lam, gamma, maxc, _, _) in zip(seeds, results):
        for k in range(N):
            rows.append({"N": N, "seed": s, "k": k + 1, "lambda": lam[k], "gamma_k": gamma[k],
                         "max_component": maxc[k]})
    return SpectralSummary(N, np.array([r[3] for r in results]), np.array([r[4] for r in results]), rows)


def _model_spectral_sample(index, model, seed, positions, edge_fraction):
    return _spectral_sample(sample_matrix(model, sample_seed(seed, index)), positions, edge_fraction)


def rigidity_and_delocalization(model, samples=10, seed=0, edge_fraction=BULK_FRACTION, jobs=1):
    """Per sample ``max_k N rho(gamma_k) |lambda_k - gamma_k|`` and ``max sqrt(N) |u_a|`` over the bulk."""
    positions = ClassicalPositions.from_profile(model_density(model))
    fn = partial(_model_spectral_sample, model=model, seed=seed, positions=positions,
                 edge_fraction=edge_fraction)
    results = pmap(fn, range(samples), jobs)
    return _summarize(model.N, results, [sample_seed(seed, i) for i in range(samples)])


def gaussian_orthogonal(N, rng):
    g = rng.standard_normal((N, N))
    return (g + g.T) / math.sqrt(2 * N)


def gaussian_unitary(N, rng):
    g = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / math.sqrt(2)
    return (g + g.conj().T) / math.sqrt(2 * N)


def _oracle_matrix(N, seed, symmetry):
    rng = np.random.default_rng(seed)
    return gaussian_unitary(N, rng) if symmetry == "complex" else gaussian_orthogonal(N, rng)


def _oracle_spectral_sample(index, N, seed, symmetry, edge_fraction):
    H = _oracle_matrix(N, sample_seed(seed, index), symmetry)
    return _spectral_sample(H, semicircle_positions(), edge_fraction)


def oracle_rigidity(N, samples=10, seed=0, symmetry="real", edge_fraction=BULK_FRACTION, jobs=1):
    """Same statistics for GOE/GUE matrices built directly, against the exact semicircle."""
    fn = partial(_oracle_spectral_sample, N=N, seed=seed, symmetry=symmetry, edge_fraction=edge_fraction)
    results = pmap(fn, range(samples), jobs)
    return _summarize(N, results, [sample_seed(seed, i) for i in range(samples)])


# --- outliers -------------------------------------------------------------------------

def distance_to_support(x, support):
    x = np.asarray(x, dtype=float)
    d = np.full(x.shape, np.inf)
    for lo, hi in support:
        d = np.minimum(d, np.maximum(0.0, np.maximum(lo - x, x - hi)))
    return d


@dataclass
class OutlierReport:
    support: list
    margin: float
    counts: list
    inside: list

    @property
    def total(self):
        return int(sum(self.counts))


def _eigvals_sample(index, model, seed):
    return np.linalg.eigvalsh(sample_matrix(model, sample_seed(seed, index)))


def outlier_check(model, samples=20, seed=0, margin=0.2, support=None, jobs=1):
    """Eigenvalues farther than ``margin`` from the support (estimated from the MDE unless given)."""
    if support is None:
        support = support_estimate(model_density(model))
    eigs = pmap(partial(_eigvals_sample, model=model, seed=seed), range(samples), jobs)
    counts, inside = [], []
    for lam in eigs:
        out = int(np.sum(distance_to_support(lam, support) > margin))
        counts.append(out)
        inside.append(len(lam) - out)
    return OutlierReport(list(support), float(margin), counts, inside)


# --- gap ratios -----------------------------------------------------------------------

def gap_ratios(eigs, edge_fraction=BULK_FRACTION):
    """``min(s_k, s_k+1) / max(s_k, s_k+1)`` over consecutive spacings inside the bulk window."""
    lam = np.sort(np.asarray(eigs))
    idx = bulk_indices(len(lam), edge_fraction)
    s = np.diff(lam[idx])
    a, b = s[:-1], s[1:]
    return np.minimum(a, b) / np.maximum(a, b)


@dataclass
class GapRatioStats:
    mean: float
    stderr: float
    histogram: np.ndarray
    edges: np.ndarray
    count: int
    per_sample: np.ndarray

    @classmethod
    def from_samples(cls, ratios, bins=20):
        per_sample = np.array([r.mean() for r in ratios])
        pooled = np.concatenate(ratios)
        hist, edges = np.histogram(pooled, bins=bins, range=(0.0, 1.0), density=True)
        stderr = float(per_sample.std(ddof=1) / math.sqrt(len(per_sample))) if len(per_sample) > 1 else math.nan
        return cls(float(pooled.mean()), stderr, hist, edges, len(pooled), per_sample)


def _ratio_sample(index, model, seed, edge_fraction):
    return gap_ratios(_eigvals_sample(index, model, seed), edge_fraction)


def gap_ratio_stats(model, samples=50, seed=0, edge_fraction=BULK_FRACTION, jobs=1, bins=20):
    if model.N < 256:
        raise InvalidArgument("gap-ratio statistics need N >= 256")
    fn = partial(_ratio_sample, model=model, seed=seed, edge_fraction=edge_fraction)
    return GapRatioStats.from_samples(pmap(fn, range(samples), jobs), bins)


def _oracle_ratio_sample(index, N, seed, symmetry, edge_fraction):
    return gap_ratios(np.linalg.eigvalsh(_oracle_matrix(N, sample_seed(seed, index), symmetry)), edge_fraction)


def oracle_gap_ratios(N, samples=50, seed=0, symmetry="real", edge_fraction=BULK_FRACTION, jobs=1, bins=20):
    """Gap ratios of GOE (``real``) or GUE (``complex``) matrices generated here."""
    fn = partial(_oracle_ratio_sample, N=N, seed=seed, symmetry=symmetry, edge_fraction=edge_fraction)
    return GapRatioStats.from_samples(pmap(fn, range(samples), jobs), bins)


def poisson_gap_ratios(N, samples=50, seed=0, edge_fraction=BULK_FRACTION, bins=20):
    """Control: independent uniform points have no level repulsion."""
    ratios = [gap_ratios(np.random.default_rng([PROBE_STREAM, seed, i, 2]).uniform(size=N), edge_fraction)
              for i in range(samples)]
    return GapRatioStats.from_samples(ratios, bins)


@dataclass
class UniversalityRecord:
    model: GapRatioStats
    oracle: GapRatioStats

    @property
    def difference(self):
        return abs(self.model.mean - self.oracle.mean)


def universality_comparison(model, samples=50, seed=0, oracle_seed=None, jobs=1):
    stats = gap_ratio_stats(model, samples, seed, jobs=jobs)
    oracle_seed = seed + 1_000_003 if oracle_seed is None else oracle_seed
    oracle = oracle_gap_ratios(model.N, samples, oracle_seed, model.symmetry, jobs=jobs)
    return UniversalityRecord(stats, oracle)


# --- the Gaussian second moment of <D> ------------------------------------------------

def _pair_trace_terms(G, terms):
    """``sum T G_ba G_dc`` and the quartic contraction, for ``T`` given by pairing terms."""
    first = 0.0
    for c, kind, K in terms:
        KGK = K @ G @ K
        first += c * (np.sum(G * KGK) if kind == "direct" else np.trace(G @ KGK))
    second = 0.0
    Gt = G.T
    for c2, kind2, K2 in terms:
        if kind2 == "direct":
            X, Y = G @ K2 @ Gt, Gt @ K2 @ G
        else:
            X, Y = G @ K2 @ G, Gt @ K2 @ Gt
        for c1, kind1, K1 in terms:
            if (kind1 == "direct") == (kind2 == "direct"):
                val = np.trace(K1 @ X) * np.trace(K1 @ Y)
            else:
                val = np.trace(X @ K1 @ Y @ K1)
            second += c1 * c2 * val
    return first, second


def _dense_trace_terms(G, T):
    first = np.einsum("abcd,ba,dc->", T, G, G)
    second = np.einsum("abcd,efgh,bg,ha,fc,de->", T, T, G, G, G, G, optimize="greedy")
    return first, second


def d2_integrands(G, kernel, dense_limit=32):
    """Per-sample integrands ``(first, second)`` of the two-term formula for ``E <D>^2``.

    ``first = N^-3 sum T[a,b,c,d] G_ba G_dc`` and
    ``second = N^-4 sum T[a1,b1,c1,d1] T[a2,b2,c2,d2] G_b1c2 G_d2a1 G_b2c1 G_d1a2``.
    """
    N = G.shape[0]
    terms = kernel.pairing_terms()
    if terms is not None:
        first, second = _pair_trace_terms(G, terms)
    elif N <= dense_limit:
        first, second = _dense_trace_terms(G, kernel.tensor())
    else:
        raise Unsupported(f"{kernel.kind} at N = {N} has no fast route for the quartic contraction")
    return complex(first) / N ** 3, complex(second) / N ** 4


def is_gaussian(model):
    return model.params.get("entries", "gaussian") == "gaussian"


@dataclass
class D2Check:
    formula: complex
    mc: complex
    mc_stderr: float
    diff_stderr: float
    bound_rhs: float  # N^-2 E[k <Im G>/eta + (k <Im G>/eta)^2]
    kappa_norm: float

    @property
    def discrepancy(self):
        return abs(self.formula - self.mc)

    @property
    def bound_constant(self):
        """Measured ``C`` in ``|E <D>^2| <= C N^-2 E[...]``."""
        return abs(self.mc) / self.bound_rhs if self.bound_rhs > 0 else 0.0


def _d2_sample(index, model, seed, z, dense_limit):
    H = sample_matrix(model, sample_seed(seed, index))
    G = resolvent(H, z)
    A = expectation_matrix(model)
    d = np.trace(error_matrix(G, A, model.kernel, z)) / model.N
    first, second = d2_integrands(G, model.kernel, dense_limit)
    return complex(d) ** 2, first + second, float(np.mean(np.diag(G).imag))


def _complex_stderr(x):
    x = np.asarray(x)
    if len(x) < 2:
        return math.nan
    return float(math.sqrt(x.real.var(ddof=1) + x.imag.var(ddof=1)) / math.sqrt(len(x)))


def gaussian_D2_check(model, z=1j, samples=500, seed=0, jobs=1, dense_limit=32):
    """Two-term formula for ``E <D>^2`` against direct Monte Carlo of ``<D>^2`` on the same samples."""
    from .audit import kappa_norm_av2

    if not is_gaussian(model):
        raise Unsupported("the two-term formula holds for Gaussian entries only")
    if model.N > 256:
        raise InvalidArgument("gaussian_D2_check is limited to N <= 256")
    z = complex(z)
    _check_eta(z)
    _warn_samples(samples)
    res = pmap(partial(_d2_sample, model=model, seed=seed, z=z, dense_limit=dense_limit), range(samples), jobs)
    mc = np.array([r[0] for r in res])
    formula = np.array([r[1] for r in res])
    im_g = np.array([r[2] for r in res])
    kn = kappa_norm_av2(model.kernel)
    x = kn * im_g / z.imag
    rhs = float(np.mean(x + x * x)) / model.N ** 2
    return D2Check(complex(formula.mean()), complex(mc.mean()), _complex_stderr(mc),
                   _complex_stderr(formula - mc), rhs, float(kn))
