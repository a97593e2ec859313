import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmlab.ensembles import CorrelationModel, expectation_matrix, sample_matrix
from rmlab.errors import EmptySupport, InvalidArgument, NonConvergence
from rmlab.mde import (
    DensityProfile,
    MdeOptions,
    density_profile,
    extrapolate_density,
    solve_mde,
    stability_norm,
    support_estimate,
)


def scalar_m(z, sigma=1.0, a=0.0):
    """Root of 1 + (z - a + sigma m) m = 0 with Im m > 0."""
    b = z - a
    r = cmath.sqrt(b * b - 4 * sigma)
    roots = [(-b + r) / (2 * sigma), (-b - r) / (2 * sigma)]
    return max(roots, key=lambda m: m.imag)


def flat(N=8):
    return CorrelationModel("wigner", N, "complex").kernel


def zeros(N):
    return np.zeros((N, N))


@pytest.mark.parametrize("z,m", [(1j, 1j * (math.sqrt(5) - 1) / 2), (2j, 1j * (math.sqrt(2) - 1))])
def test_semicircle_values(z, m):
    sol = solve_mde(zeros(8), flat(), z)
    assert abs(sol.trace_avg - m) <= 1e-9
    assert sol.im_min > 0 and sol.residual <= 1e-10


def test_upper_half_plane_only():
    with pytest.raises(InvalidArgument):
        solve_mde(zeros(4), flat(4), 1.0 + 0j)
    with pytest.raises(InvalidArgument):
        solve_mde(zeros(4), flat(4), 1.0 - 0.1j)


def test_nonconvergence_reported():
    with pytest.raises(NonConvergence):
        solve_mde(zeros(4), flat(4), 0.1 + 0.01j, MdeOptions(max_iter=2))


def test_residual_certificate_recomputed():
    k = CorrelationModel("fourfold", 12).kernel
    A = np.diag(np.linspace(-1, 1, 12))
    z = 0.3 + 0.05j
    sol = solve_mde(A, k, z)
    N = 12
    resid = np.eye(N) + (z * np.eye(N) - A + k.apply_S(sol.M)) @ sol.M
    assert np.max(np.abs(resid)) <= 1e-10
    im = (sol.M - sol.M.conj().T) / 2j
    assert np.linalg.eigvalsh(im)[0] > 0
    assert np.trace(im).real / N == pytest.approx(math.pi * sol.density, rel=1e-12)


def test_density_at_zero_extrapolates():
    assert extrapolate_density(zeros(8), flat(), 0.0) == pytest.approx(1 / math.pi, abs=1e-4)


def test_density_profile_mass_and_support():
    grid = np.arange(-4, 4.0001, 0.01)
    prof = density_profile(zeros(8), flat(), grid, 1e-3)
    assert np.all(prof.rho >= 0) and prof.converged.all()
    assert prof.mass() == pytest.approx(1.0, abs=0.01)
    assert prof.rho[np.argmin(abs(grid - 3))] < 1e-3 and prof.rho[np.argmin(abs(grid + 3))] < 1e-3
    (lo, hi), = support_estimate(prof)
    assert abs(lo + 2) <= 0.02 and abs(hi - 2) <= 0.02
    assert prof.to_csv().splitlines()[0] == "E,rho,eta,converged"


def test_deformed_support_matches_spectrum():
    half = 32
    A = np.diag([1.0] * half + [-1.0] * half)
    prof = density_profile(A, CorrelationModel("wigner", 2 * half).kernel, np.arange(-4, 4.0001, 0.01), 1e-3)
    supp = prof.support
    big = CorrelationModel("deformed", 2048, A="diag:" + str([1.0] * 1024 + [-1.0] * 1024))
    lam = np.linalg.eigvalsh(sample_matrix(big, 0))
    assert len(supp) == 1
    assert abs(supp[0][0] - lam[0]) <= 0.05 and abs(supp[0][1] - lam[-1]) <= 0.05


def test_empty_support():
    prof = DensityProfile(np.linspace(-1, 1, 5), np.zeros(5), 1e-3, np.ones(5, dtype=bool))
    with pytest.raises(EmptySupport):
        support_estimate(prof)


def test_stability_norm():
    k = CorrelationModel("wigner", 16).kernel
    far = solve_mde(zeros(16), k, 5j)
    assert stability_norm(far.M, k) <= 1.5
    mid = solve_mde(zeros(16), k, 0.5 + 0.1j)
    dense, free = stability_norm(mid.M, k), stability_norm(mid.M, k, dense_limit=0)
    assert free == pytest.approx(dense, rel=0.05)
    trend = [stability_norm(solve_mde(zeros(16), k, 2 + eta * 1j).M, k) for eta in (1, 0.3, 0.1, 0.03)]
    assert all(b > a for a, b in zip(trend, trend[1:]))


def test_uniqueness_from_random_starts():
    k = CorrelationModel("gaussian_metric_decay", 8, params={"s": 6.0}).kernel
    A = np.diag(np.linspace(-0.5, 0.5, 8))
    z = 2.5 + 0.5j
    rng = np.random.default_rng(0)
    sols = []
    for _ in range(10):
        X = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        M0 = (X + X.conj().T) / 4 + 1j * (np.eye(8) + 0.1 * X @ X.conj().T)
        sols.append(solve_mde(A, k, z, initial=M0).M)
    spread = max(np.max(np.abs(a - b)) for a in sols for b in sols)
    assert spread <= 10 * 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 5), st.floats(-1, 1), st.floats(0.25, 4))
def test_scalar_reduction(E, eta, a, sigma):
    N = 6
    z = complex(E, eta)
    k = flat(N).scaled(sigma)
    sol = solve_mde(a * np.eye(N), k, z)
    m = scalar_m(z, sigma, a)
    assert np.max(np.abs(sol.M - m * np.eye(N))) <= 1e-9


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 3))
def test_real_wigner_scalar_with_finite_N_correction(E, eta):
    # S[m Id] = m (1 + 1/N) Id for real symmetric noise
    N = 10
    sol = solve_mde(zeros(N), CorrelationModel("wigner", N).kernel, complex(E, eta))
    assert abs(sol.trace_avg - scalar_m(complex(E, eta), 1 + 1 / N)) <= 1e-9


def test_expectation_path_uses_model_A():
    m = CorrelationModel("deformed", 4, A="diag:[2, 2, 2, 2]")
    sol = solve_mde(expectation_matrix(m), flat(4), 1j)
    assert abs(sol.trace_avg - scalar_m(1j, 1.0, 2.0)) <= 1e-9
