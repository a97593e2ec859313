"""Numerical checks of the correlation hypotheses: cumulant norms, flatness and fullness."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import Unsupported
from .kernels import DENSE_LIMIT, LAW_CUMULANTS

AV2_DENSE_LIMIT = 32
FLATNESS_TOL = 1e-10


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def probe_vectors(N, complex_=False, seed=0, n_random=None):
    """All coordinate vectors plus ``4N`` random unit vectors (one per row)."""
    rng = np.random.default_rng(seed)
    n_random = 4 * N if n_random is None else n_random
    x = rng.standard_normal((n_random, N))
    if complex_:
        x = x + 1j * rng.standard_normal((n_random, N))
    return np.concatenate([np.eye(N, dtype=x.dtype), _unit_rows(x)])


def kappa_norm_av2(kernel, dense_limit=AV2_DENSE_LIMIT):
    """Operator norm of the ``N^2 x N^2`` matrix ``|kappa(alpha, beta)|``."""
    N = kernel.N
    if kernel.scale == 0:
        return 0.0
    if N <= dense_limit:
        mat = np.abs(kernel.tensor()).reshape(N * N, N * N)
        return float(np.max(np.abs(np.linalg.eigvalsh(mat))))
    op = LinearOperator((N * N, N * N), dtype=float,
                        matvec=lambda v: np.real(kernel.abs_matvec(v.reshape(N, N))).ravel())
    val = eigsh(op, k=1, which="LM", return_eigenvectors=False, tol=1e-8, maxiter=2000)
    return float(abs(val[0]))


def _iso_part(T, probes, axis, batch=16):
    """``sup_x || A_x ||`` with ``A_x(i, j)`` the norm of ``sum_a x_a T[a, i, ., j]`` (axis 2)
    or of ``sum_a x_a T[a, i, j, .]`` (axis 3)."""
    best = 0.0
    for start in range(0, len(probes), batch):
        X = probes[start:start + batch]
        C = np.tensordot(X, T, axes=(1, 0))  # (p, b, c, d)
        A = np.linalg.norm(C, axis=axis)
        best = max(best, float(np.max(np.linalg.norm(A, 2, axis=(1, 2)))))
    return best


def iso_norm_d(T, probes):
    return _iso_part(T, probes, axis=2)


def iso_norm_c(T, probes):
    return _iso_part(T, probes, axis=3)


def kappa_norm_iso2(kernel, seed=0, wrong_assignment=False):
    """Isotropic two-point norm from the kernel's declared direct/cross split.

    With ``wrong_assignment`` the direct part is measured in the cross norm and
    vice versa, which is not bounded uniformly in N for Wigner-type kernels.
    """
    if kernel.scale == 0:
        return 0.0
    td, tc = kernel.split_tensors()
    probes = probe_vectors(kernel.N, kernel.is_complex, seed)
    if wrong_assignment:
        return iso_norm_c(td, probes) + iso_norm_d(tc, probes)
    return iso_norm_d(td, probes) + iso_norm_c(tc, probes)


@dataclass
class FlatnessReport:
    c: float
    C: float

    @property
    def violated(self):
        return self.c <= FLATNESS_TOL


def flatness_bounds(kernel, n_random=100, seed=0):
    """Extreme eigenvalues of ``S[T] / <T>`` over the probes ``T = e_i e_i^*`` and random ``x x^*``."""
    N = kernel.N
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_random, N))
    if kernel.is_complex:
        x = x + 1j * rng.standard_normal((n_random, N))
    vecs = np.concatenate([np.eye(N, dtype=x.dtype), x])
    lo, hi = np.inf, -np.inf
    for v in vecs:
        T = np.outer(v, v.conj())
        avg = np.real(np.trace(T)) / N
        S = kernel.apply_S(T)
        eig = np.linalg.eigvalsh((S + S.conj().T) / 2)
        lo, hi = min(lo, eig[0] / avg), max(hi, eig[-1] / avg)
    return FlatnessReport(float(lo), float(hi))


def _symmetry_basis(N, complex_):
    """Frobenius-orthonormal basis of real symmetric (or Hermitian) matrices, one per column of vec(B)."""
    cols = []
    for i in range(N):
        B = np.zeros((N, N), dtype=complex if complex_ else float)
        B[i, i] = 1.0
        cols.append(B.ravel())
    r = 1 / np.sqrt(2)
    for i in range(N):
        for j in range(i + 1, N):
            B = np.zeros((N, N), dtype=complex if complex_ else float)
            B[i, j] = B[j, i] = r
            cols.append(B.ravel())
            if complex_:
                B = np.zeros((N, N), dtype=complex)
                B[i, j], B[j, i] = 1j * r, -1j * r
                cols.append(B.ravel())
    return np.array(cols).T


def fullness_lower_bound(kernel):
    """Smallest ``E|Tr BW|^2 / Tr B^2`` over ``B`` of the kernel's symmetry class."""
    N = kernel.N
    if N > DENSE_LIMIT:
        raise Unsupported(f"fullness needs N <= {DENSE_LIMIT}")
    if kernel.scale == 0:
        return 0.0
    T = kernel.tensor()
    # Tr BW = sum_ab B_ba w_ab, so E|Tr BW|^2 = sum beta_ab conj(beta_cd) E[w_ab w_dc] with beta = B^T
    K = T.transpose(0, 1, 3, 2).reshape(N * N, N * N)
    U = _symmetry_basis(N, kernel.is_complex)
    beta = U.reshape(N, N, -1).transpose(1, 0, 2).reshape(N * N, -1)
    Q = np.real(beta.T @ K @ beta.conj())
    Q = (Q + Q.T) / 2
    return float(np.linalg.eigvalsh(Q)[0])


def _re_im_parts(T, Tb):
    """Re/Im covariance blocks from ``T = E[w w]`` and ``Tb = E[w conj(w)]`` (each used linearly)."""
    return {
        ("re", "re"): np.real(T + Tb) / 2,
        ("im", "im"): np.real(Tb - T) / 2,
        ("re", "im"): np.imag(T - Tb) / 2,
        ("im", "re"): np.imag(T + Tb) / 2,
    }


def _re_im_split(td, tc):
    """Direct and cross parts of every Re/Im block.

    Swapping the last two labels turns a direct pattern into a cross one, so
    the direct part of a block collects ``td`` and the swapped ``tc``.
    """
    swap = (0, 1, 3, 2)
    zero = np.zeros_like(td)
    direct = _re_im_parts(td, zero)
    cross = _re_im_parts(tc, zero)
    for key, val in _re_im_parts(zero, tc.transpose(swap)).items():
        direct[key] = direct[key] + val
    for key, val in _re_im_parts(zero, td.transpose(swap)).items():
        cross[key] = cross[key] + val
    for key in direct:
        if not np.any(direct[key] + cross[key]):  # a vanishing block must not split into +-X
            direct[key], cross[key] = zero, zero
    return direct, cross


@dataclass
class TildeNorms:
    av2: float
    iso2: float
    parts: dict


def hermitian_tilde_norms(kernel, seed=0):
    """Two-point av/iso norms summed over all Re/Im assignments of the two entries."""
    if not kernel.is_complex:
        raise Unsupported("tilde norms are defined for complex Hermitian models")
    N = kernel.N
    td, tc = kernel.split_tensors()
    probes = probe_vectors(N, False, seed)
    bd, bc = _re_im_split(td, tc)
    parts, av, iso = {}, 0.0, 0.0
    for key in bd:
        full = np.abs(bd[key] + bc[key]).reshape(N * N, N * N)
        a = float(np.linalg.norm(full, 2)) if np.any(full) else 0.0
        i = iso_norm_d(bd[key], probes) + iso_norm_c(bc[key], probes)
        parts["".join(key)] = {"av2": a, "iso2": i}
        av += a
        iso += i
    return TildeNorms(av, iso, parts)


def _orbit_sums(kernel):
    ids, weights, law = kernel.orbit_structure()
    flat_ids, w = ids.ravel(), np.abs(weights.ravel())
    n = flat_ids.max() + 1
    s1 = np.bincount(flat_ids, weights=w, minlength=n)
    s2 = np.bincount(flat_ids, weights=w * w, minlength=n)
    return ids, np.abs(weights), LAW_CUMULANTS[law], s1, s2


def higher_order_norms(kernel, max_order=4):
    """Analytic higher cumulant norms for kernels built from iid entries on symmetry orbits.

    Returns ``av[k]`` for ``k >= 4``, ``iso[k]`` for ``k >= 3``, the first term
    of the third order averaged norm, and the direct/cross third order norm.
    """
    ids, w, cums, s1, s2 = _orbit_sums(kernel)
    N = kernel.N
    av, iso = {}, {}
    for k in range(3, max_order + 1):
        kk = abs(cums.get(k, 0.0))
        iso[k] = float(kk * np.max(s1 ** (k - 2) * s2))
        if k >= 4:
            av[k] = float(kk * np.sum(s1 ** k) / N**2)
    k3 = abs(cums.get(3, 0.0))
    first3 = float(k3 * np.max(s1 * s2))
    # X[b_beta, a_gamma] = sum over same-orbit pairs of sum_alpha |kappa(alpha, beta, gamma)|
    X = np.zeros((N, N))
    if k3:
        a_idx, b_idx = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        order = np.argsort(ids.ravel(), kind="stable")
        sorted_ids = ids.ravel()[order]
        starts = np.flatnonzero(np.r_[True, np.diff(sorted_ids) != 0])
        bounds = np.r_[starts, len(order)]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            members = order[lo:hi]
            o = sorted_ids[lo]
            for m1 in members:
                for m2 in members:
                    X[b_idx.ravel()[m1], a_idx.ravel()[m2]] += k3 * s1[o] * w.ravel()[m1] * w.ravel()[m2]
    # kappa is symmetric, so the dd, dc, cd and cc norms all reduce to the same sum
    dd = float(np.linalg.norm(X) / N)
    return {"av": av, "iso": iso, "av3_first": first3,
            "dd": dd, "dc": dd, "cd": dd, "cc": dd, "decomposition": dd}


@dataclass
class NormReport:
    model_id: str
    symmetry: str
    av2: float
    iso2: float
    flatness_c: float
    flatness_C: float
    flatness_violated: bool
    fullness: object = None
    av3_first: object = None
    third_order_split: object = None
    av4: object = None
    iso3: object = None
    iso4: object = None
    tilde: object = None
    A_norm: float = 0.0
    warnings: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self):
        """(assumption, status, detail) rows."""
        rows = [("A", "warn" if any(w.startswith("A:") for w in self.warnings) else "pass",
                 f"|A| = {self.A_norm:.4g}"),
                ("C", "pass", f"av2 = {self.av2:.4g}, iso2 = {self.iso2:.4g}"),
                ("E", "warn" if self.flatness_violated else "pass",
                 f"c = {self.flatness_c:.4g}, C = {self.flatness_C:.4g}")]
        if self.fullness is not None:
            rows.append(("F", "warn" if self.fullness <= FLATNESS_TOL else "pass",
                         f"lambda = {self.fullness:.4g}"))
        return rows


def audit_model(model, seed=0):
    """Evaluate every available norm and condition for a model; small N only for dense parts."""
    from .ensembles import A_norm_within_bound, expectation_matrix

    kernel = model.kernel
    flat = flatness_bounds(kernel, seed=seed)
    dense_ok = kernel.N <= DENSE_LIMIT
    report = NormReport(
        model_id=model.model_id(),
        symmetry=model.symmetry,
        av2=kappa_norm_av2(kernel),
        iso2=kappa_norm_iso2(kernel, seed) if dense_ok else float("nan"),
        flatness_c=flat.c,
        flatness_C=flat.C,
        flatness_violated=flat.violated,
        fullness=fullness_lower_bound(kernel) if dense_ok else None,
        A_norm=float(np.linalg.norm(expectation_matrix(model), 2)),
    )
    try:
        hi = higher_order_norms(kernel)
        report.av3_first = hi["av3_first"]
        report.third_order_split = hi["decomposition"]
        report.av4 = hi["av"].get(4)
        report.iso3, report.iso4 = hi["iso"].get(3), hi["iso"].get(4)
    except Unsupported:
        pass
    if kernel.is_complex and dense_ok:
        t = hermitian_tilde_norms(kernel, seed)
        report.tilde = {"av2": t.av2, "iso2": t.iso2}
    if not A_norm_within_bound(model):
        report.warnings.append("A: norm of A exceeds the declared bound")
    if flat.violated:
        report.warnings.append("E: flatness lower bound is not positive")
    if report.fullness is not None and report.fullness <= FLATNESS_TOL:
        report.warnings.append("F: fullness constant is not positive")
    return report
