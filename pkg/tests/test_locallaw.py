import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmlab.ensembles import CorrelationModel, expectation_matrix, sample_matrix
from rmlab.errors import IllConditioned, InvalidArgument, PreconditionFailed, Unsupported, VarianceWarning
from rmlab.kernels import DenseKernel
from rmlab.locallaw import (
    ERRORS_HEADER,
    SPECTRA_HEADER,
    ClassicalPositions,
    _spectral_sample,
    bulk_indices,
    d2_integrands,
    error_sweep,
    gap_ratios,
    gaussian_D2_check,
    model_density,
    oracle_gap_ratios,
    oracle_rigidity,
    outlier_check,
    outside_sweep,
    poisson_gap_ratios,
    resolvent,
    resolvent_and_error,
    resolvent_probes,
    rigidity_and_delocalization,
    semicircle_positions,
    ward_residual,
)
from rmlab.mde import solve_mde, support_estimate


def hermitian(N, seed, complex_=False):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, N))
    if complex_:
        X = X + 1j * rng.standard_normal((N, N))
    return (X + X.conj().T) / math.sqrt(4 * N)


def test_resolvent_identity():
    H = hermitian(64, 0, True)
    z = 0.2 + 0.05j
    G = resolvent(H, z)
    assert np.linalg.norm((H - z * np.eye(64)) @ G - np.eye(64)) / 8 <= 1e-10
    with pytest.raises(IllConditioned):
        resolvent(H, 0.2 + 1e-13j)


def test_error_matrix_for_zero_hamiltonian():
    N, z = 16, 0.4 + 1j
    k = CorrelationModel("wigner", N).kernel
    M = solve_mde(np.zeros((N, N)), k, z).M
    G, D, rep = resolvent_and_error(np.zeros((N, N)), None, k, z, M)
    assert np.allclose(G, -np.eye(N) / z, atol=1e-15)
    # D = S[G] G with S[Id] = (1 + 1/N) Id
    assert np.max(np.abs(D - (1 + 1 / N) / z**2 * np.eye(N))) <= 1e-12
    assert all(v >= 0 and np.isfinite(v) for v in rep.values())


def test_avg_error_sanity_band():
    m = CorrelationModel("wigner", 512)
    M = solve_mde(expectation_matrix(m), m.kernel, 1j).M
    _, _, rep = resolvent_and_error(sample_matrix(m, 0), None, m.kernel, 1j, M)
    assert rep.avg_error <= 0.1


def test_ward_identity_cases():
    assert ward_residual(resolvent(hermitian(64, 1), 0.3 + 0.01j), 0.3 + 0.01j) <= 1e-9
    d = np.linspace(-2, 2, 20)
    z = 0.1 + 0.02j
    G = resolvent(np.diag(d), z)
    assert np.allclose(np.diag(G), 1 / (d - z), atol=1e-14)
    assert ward_residual(G, z) <= 1e-12
    fake = G + 0.3 * np.ones((20, 20))
    assert ward_residual(fake, z) > 0.1


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31), st.floats(-3, 3), st.sampled_from([1.0, 0.1, 0.01]),
       st.booleans())
def test_ward_identity_property(N, seed, E, eta, cplx):
    z = complex(E, eta)
    assert ward_residual(resolvent(hermitian(N, seed, cplx), z), z) <= 1e-9


def test_probes():
    P = resolvent_probes(64)
    assert P.shape == (64, 8)
    assert np.allclose(np.linalg.norm(P, axis=0), 1)
    assert np.array_equal(P, resolvent_probes(64))


def test_error_sweep_small():
    m = CorrelationModel("wigner", 64)
    res = error_sweep(m, [64, 128], eta_exponents=[0.2, 0.5], samples=5, seed=3)
    csv = res.to_csv()
    assert csv.splitlines()[0] == ",".join(ERRORS_HEADER)
    assert len(csv.splitlines()) == 5
    assert all(r["ward"] <= 1e-9 for r in res.rows)
    assert res.avg_slope < 0 and res.iso_slope < 0
    again = error_sweep(m, [64, 128], eta_exponents=[0.2, 0.5], samples=5, seed=3)
    assert again.to_csv() == csv


def test_error_sweep_preconditions():
    m = CorrelationModel("wigner", 64)
    with pytest.raises(PreconditionFailed):
        error_sweep(m, [64], etas=[0.1], E=3.0, samples=5)
    with pytest.raises(InvalidArgument):
        error_sweep(m, [64], etas=[64 ** -0.95], samples=5)
    with pytest.warns(VarianceWarning):
        error_sweep(m, [64], etas=[0.5], samples=2)


def test_errors_decay_as_eta_grows():
    m = CorrelationModel("wigner", 128)
    res = error_sweep(m, [128], etas=[1, 2, 4, 8], samples=5, seed=1)
    iso = [r["iso_mean"] for r in res.rows]
    avg = [r["avg_mean"] for r in res.rows]
    assert all(b < a for a, b in zip(iso, iso[1:]))
    assert all(b < a for a, b in zip(avg, avg[1:]))


def test_outside_spectrum_iso_error():
    m = CorrelationModel("wigner", 64)
    rows = outside_sweep(m, [64, 128, 256], 3 + 0.01j, samples=5)
    for r in rows:
        assert r["iso_mean"] <= 10 / math.sqrt(r["N"])


def test_classical_positions():
    sc = semicircle_positions()
    gamma = sc.gamma(1000)
    assert gamma[499] == pytest.approx(0.0, abs=1e-2)
    assert np.all(np.diff(gamma) >= 0)
    k = sc.index(np.linspace(-2.5, 2.5, 50), 1000)
    assert np.all(np.diff(k) >= 0) and k[0] == 0 and k[-1] == 1000
    prof = model_density(CorrelationModel("wigner", 64, "complex"))
    mdepos = ClassicalPositions.from_profile(prof)
    assert np.max(np.abs(mdepos.gamma(200)[20:180] - sc.gamma(200)[20:180])) < 0.01


def test_rigidity_and_delocalization_small():
    m = CorrelationModel("wigner", 256)
    s = rigidity_and_delocalization(m, samples=3)
    assert len(s.rigidity) == 3
    assert s.median_rigidity <= 5 * math.log(256)
    assert s.max_delocalization <= 10 * math.sqrt(math.log(256))
    assert s.to_csv().splitlines()[0] == ",".join(SPECTRA_HEADER)
    o = oracle_rigidity(256, samples=3)
    assert o.median_rigidity <= 5 * math.log(256)


def test_localized_eigenvectors_control():
    N = 100
    *_, deloc = _spectral_sample(np.diag(np.linspace(-2, 2, N)), semicircle_positions(), 0.1)
    assert deloc == pytest.approx(math.sqrt(N))


def test_outliers():
    N = 256
    w = CorrelationModel("wigner", N)
    rep = outlier_check(w, samples=3)
    assert rep.total == 0
    assert all(i == N for i in rep.inside)
    tight = outlier_check(w, samples=3, margin=0.0)
    assert all(c + i == N for c, i in zip(tight.counts, tight.inside))
    spike = CorrelationModel("deformed", N, A="diag:" + str([10.0] + [0.0] * (N - 1)))
    tracked = outlier_check(spike, samples=3)
    assert len(tracked.support) == 2 and tracked.total == 0
    bare = outlier_check(spike, samples=3, support=support_estimate(model_density(w)))
    assert bare.counts == [1, 1, 1]


def test_gap_ratio_basics():
    assert np.allclose(gap_ratios(np.arange(100.0), 0.1), 1.0)
    r = gap_ratios(np.random.default_rng(0).uniform(size=500))
    assert np.all((r >= 0) & (r <= 1))
    assert len(bulk_indices(100)) == 80


def test_gap_ratio_oracle_self_consistency():
    both = oracle_gap_ratios(1024, samples=50, seed=17)
    halves = both.per_sample[:25].mean() - both.per_sample[25:].mean()
    assert abs(halves) <= 0.005
    poisson = poisson_gap_ratios(1024, samples=20, seed=17)
    assert both.mean - poisson.mean >= 0.05


def test_d2_routes_agree():
    N = 12
    k = CorrelationModel("fourfold", N).kernel
    dense = DenseKernel(k.tensor())
    G = resolvent(hermitian(N, 4), 0.3 + 0.5j)
    a, b = d2_integrands(G, k), d2_integrands(G, dense)
    assert abs(a[0] - b[0]) <= 1e-14 and abs(a[1] - b[1]) <= 1e-14


def test_d2_dense_limit():
    m = CorrelationModel("block_copy", 64, params={"n_blocks": 2})
    with pytest.raises(Unsupported):
        d2_integrands(np.eye(64), m.kernel)


def test_d2_check_small_and_errors():
    z = 1j
    zero = gaussian_D2_check(CorrelationModel("zero", 16), z, samples=5)
    assert zero.formula == 0 and zero.mc == 0
    res = gaussian_D2_check(CorrelationModel("wigner", 16), z, samples=200)
    assert res.discrepancy <= 3 * res.diff_stderr
    with pytest.raises(Unsupported):
        gaussian_D2_check(CorrelationModel("wigner", 16, params={"entries": "rademacher"}), z, samples=5)
    with pytest.raises(InvalidArgument):
        gaussian_D2_check(CorrelationModel("wigner", 512), z, samples=5)


def test_d2_check_jobs_invariant():
    m = CorrelationModel("wigner", 8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", VarianceWarning)
        a = gaussian_D2_check(m, 1j, samples=6, jobs=1)
        b = gaussian_D2_check(m, 1j, samples=6, jobs=2)
    assert a.formula == b.formula and a.mc == b.mc
