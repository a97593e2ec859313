"""Matrix Dyson equation ``1 + (z - A + S[M]) M = 0`` with ``Im M > 0``."""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import circulant
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import EmptySupport, InvalidArgument, NonConvergence, PositivityLoss, SingularStability


@dataclass
class MdeOptions:
    tol: float = 1e-10
    max_iter: int = 10_000
    eta_start: float = 10.0
    eta_factor: float = 0.7
    continuation_tol: float = 1e-7
    gamma_floor: float = 2.0 ** -20
    stall_window: int = 10
    stall_ratio: float = 0.9


@dataclass
class MdeSolution:
    z: complex
    M: np.ndarray
    residual: float
    iterations: int
    im_min: float
    converged: bool = True

    @property
    def trace_avg(self):
        """Normalized trace ``<M>``."""
        return complex(np.trace(self.M)) / self.M.shape[0]

    @property
    def density(self):
        return self.trace_avg.imag / math.pi

    def sidecar(self):
        return {"z": [self.z.real, self.z.imag], "residual": self.residual,
                "iterations": self.iterations, "im_min": self.im_min, "converged": self.converged}


class _Dense:
    """Iteration state for a general ``A`` and kernel."""

    def __init__(self, A, kernel):
        self.kernel = kernel
        self.N = kernel.N
        self.A = np.zeros((self.N, self.N)) if A is None else np.asarray(A)
        self.eye = np.eye(self.N)

    def start(self, z):
        return -self.eye / z

    def _shift(self, M, z):
        return z * self.eye - self.A + self.kernel.apply_S(M)

    def phi(self, M, z):
        return -np.linalg.inv(self._shift(M, z))

    def residual(self, M, z):
        return float(np.max(np.abs(self.eye + self._shift(M, z) @ M)))

    def im_min(self, M):
        return float(np.linalg.eigvalsh((M - M.conj().T) / 2j)[0])

    def full(self, M):
        return M


class _Circulant:
    """Iteration state for ``A = 0`` and translation-invariant kernels; ``M`` is its first row."""

    def __init__(self, kernel):
        self.kernel = kernel
        self.N = kernel.N
        self.delta = np.zeros(self.N, dtype=complex)
        self.delta[0] = 1.0

    def eig(self, r):
        return self.N * np.fft.ifft(r)

    def row(self, lam):
        return np.fft.fft(lam) / self.N

    def start(self, z):
        return -self.delta / z

    def _shift_eig(self, r, z):
        return z + self.eig(self.kernel.circulant_S(r))

    def phi(self, r, z):
        return self.row(-1.0 / self._shift_eig(r, z))

    def residual(self, r, z):
        return float(np.max(np.abs(self.row(1.0 + self._shift_eig(r, z) * self.eig(r)))))

    def im_min(self, r):
        return float(np.min(self.eig(r).imag))

    def full(self, r):
        return circulant(r).T


class _Diagonal:
    """Iteration state for diagonal ``A`` and kernels preserving diagonals; ``M`` is its diagonal."""

    def __init__(self, A, kernel):
        self.kernel = kernel
        self.a = np.zeros(kernel.N) if A is None else np.real(np.diag(A)).astype(float)

    def start(self, z):
        return np.full(self.kernel.N, -1.0 / z, dtype=complex)

    def _shift(self, m, z):
        return z - self.a + self.kernel.diagonal_S(m)

    def phi(self, m, z):
        return -1.0 / self._shift(m, z)

    def residual(self, m, z):
        return float(np.max(np.abs(1.0 + self._shift(m, z) * m)))

    def im_min(self, m):
        return float(np.min(m.imag))

    def full(self, m):
        return np.diag(m)


def _state(A, kernel):
    flat_A = A is None or not np.any(A)
    if flat_A and kernel.supports_circulant:
        return _Circulant(kernel)
    A_diag = A is None or not np.any(A - np.diag(np.diag(A)))
    if A_diag and kernel.preserves_diagonal:
        return _Diagonal(A, kernel)
    return _Dense(A, kernel)


def _iterate(state, z, M, tol, max_iter, opts):
    """Damped fixed-point iteration ``M <- (1 - g) M + g Phi(M)``.

    Starts at ``g = 1/2``: for a spectral point with ``|m| = 1`` the linearized
    map then contracts at rate ``|cos arg m|`` instead of ``1 - eta``.  If
    progress stalls the full step ``g = 1`` is tried once; ``g`` is halved when
    the residual grows or positivity is lost.
    """
    gamma = 0.5
    toggled = False
    res = state.residual(M, z)
    history = [res]
    it = 0
    while res > tol and it < max_iter:
        it += 1
        cand = (1 - gamma) * M + gamma * state.phi(M, z)
        cand_res = state.residual(cand, z)
        if not np.isfinite(cand_res) or cand_res > res or state.im_min(cand) <= 0:
            gamma /= 2
            if gamma < opts.gamma_floor:
                raise NonConvergence(f"step size underflow at z = {z}")
            continue
        M, res = cand, cand_res
        history.append(res)
        w = opts.stall_window
        if not toggled and len(history) > w and res > opts.stall_ratio * history[-w - 1]:
            gamma, toggled = 1.0, True
    return M, res, it


def solve_mde(A, kernel, z, opts=None, initial=None):
    """Solve the MDE at ``z`` by continuation in ``Im z`` from ``eta_start`` downwards.

    ``initial`` (a previous solution's matrix) skips the continuation and warm starts.
    """
    opts = opts or MdeOptions()
    z = complex(z)
    if z.imag <= 0:
        raise InvalidArgument("Im z must be positive")
    state = _state(A, kernel)
    total = 0
    if initial is not None:
        initial = np.asarray(initial)
        if isinstance(state, _Circulant):
            M = initial[0]
        elif isinstance(state, _Diagonal):
            M = np.diag(initial).astype(complex)
        else:
            M = initial
        etas = [z.imag]
    else:
        eta = max(opts.eta_start, z.imag)
        etas = [eta]
        while etas[-1] > z.imag:
            etas.append(max(etas[-1] * opts.eta_factor, z.imag))
        M = state.start(complex(z.real, etas[0]))
    for k, eta in enumerate(etas):
        zz = complex(z.real, eta)
        last = k == len(etas) - 1
        M, res, it = _iterate(state, zz, M, opts.tol if last else opts.continuation_tol,
                              opts.max_iter, opts)
        total += it
    im_min = state.im_min(M)
    if im_min <= 0:
        raise PositivityLoss(f"Im M lost positivity at z = {z}")
    if res > opts.tol:
        raise NonConvergence(f"residual {res:.3g} after {total} iterations at z = {z}")
    return MdeSolution(z, state.full(M), res, total, im_min)


@dataclass
class DensityProfile:
    E: np.ndarray
    rho: np.ndarray
    eta: float
    converged: np.ndarray
    support: list = field(default_factory=list)

    def mass(self):
        return float(np.trapezoid(self.rho, self.E)) if hasattr(np, "trapezoid") \
            else float(np.trapz(self.rho, self.E))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "rho", "eta", "converged"])
        for e, r, c in zip(self.E, self.rho, self.converged):
            w.writerow([repr(float(e)), repr(float(r)), repr(float(self.eta)), int(bool(c))])
        return buf.getvalue()


def density_profile(A, kernel, E_grid, eta_eval, opts=None, rho_floor=1e-3):
    """``rho(E + i eta_eval)`` along the grid, warm-started left to right."""
    opts = opts or MdeOptions()
    E_grid = np.asarray(E_grid, dtype=float)
    rho = np.zeros(len(E_grid))
    ok = np.zeros(len(E_grid), dtype=bool)
    prev = None
    for j, E in enumerate(E_grid):
        z = complex(E, eta_eval)
        try:
            sol = solve_mde(A, kernel, z, opts, initial=prev)
        except (NonConvergence, PositivityLoss):
            try:
                sol = solve_mde(A, kernel, z, opts)
            except (NonConvergence, PositivityLoss):
                prev = None
                continue
        rho[j], ok[j] = sol.density, True
        prev = sol.M
    profile = DensityProfile(E_grid, rho, float(eta_eval), ok)
    try:
        profile.support = support_estimate(profile, rho_floor)
    except EmptySupport:
        profile.support = []
    return profile


def support_estimate(profile, rho_floor=1e-3):
    """Maximal grid intervals on which ``rho > rho_floor``."""
    above = profile.rho > rho_floor
    if not above.any():
        raise EmptySupport("density never exceeds the floor on this grid")
    out, start = [], None
    for j, flag in enumerate(above):
        if flag and start is None:
            start = j
        if not flag and start is not None:
            out.append((float(profile.E[start]), float(profile.E[j - 1])))
            start = None
    if start is not None:
        out.append((float(profile.E[start]), float(profile.E[-1])))
    return out


def extrapolate_density(A, kernel, E, etas=(1e-2, 1e-3, 1e-4), opts=None):
    """Quadratic fit of ``rho(E + i eta)`` in ``eta``, evaluated at ``eta = 0``."""
    vals = [solve_mde(A, kernel, complex(E, eta), opts).density for eta in etas]
    coef = np.polyfit(np.asarray(etas), np.asarray(vals), len(etas) - 1)
    return float(coef[-1])


def stability_operator(M, kernel):
    """``X -> X - M S[X] M`` on ``N x N`` matrices."""
    return lambda X: X - M @ kernel.apply_S(X) @ M


def _dense_stability_matrix(M, kernel):
    N = M.shape[0]
    L = np.empty((N * N, N * N), dtype=complex)
    op = stability_operator(M, kernel)
    for k in range(N * N):
        E = np.zeros(N * N, dtype=complex)
        E[k] = 1.0
        L[:, k] = op(E.reshape(N, N)).ravel()
    return L


def stability_norm(M, kernel, dense_limit=32, iters=30, tol=1e-10, seed=0):
    """``||(1 - C_M S)^-1||`` in the Hilbert-Schmidt norm, i.e. ``1 / sigma_min``."""
    M = np.asarray(M, dtype=complex)
    N = M.shape[0]
    if N <= dense_limit:
        smin = float(np.linalg.svd(_dense_stability_matrix(M, kernel), compute_uv=False)[-1])
    else:
        smin = _smallest_singular_value(M, kernel, iters, tol, seed)
    if smin < 1e-14:
        raise SingularStability(f"smallest singular value {smin:.3g}")
    return 1.0 / smin


def _smallest_singular_value(M, kernel, iters, tol, seed):
    """Inverse power iteration on ``L^* L`` with GMRES solves for ``L`` and ``L^*``."""
    N = M.shape[0]
    Ms = M.conj().T
    fwd = LinearOperator((N * N, N * N), dtype=complex,
                         matvec=lambda v: (v.reshape(N, N) - M @ kernel.apply_S(v.reshape(N, N)) @ M).ravel())
    adj = LinearOperator((N * N, N * N), dtype=complex,
                         matvec=lambda v: (v.reshape(N, N) - kernel.apply_S(Ms @ v.reshape(N, N) @ Ms)).ravel())
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N * N) + 1j * rng.standard_normal(N * N)
    x /= np.linalg.norm(x)
    est = None
    for _ in range(iters):
        y, info = gmres(adj, x, rtol=tol, maxiter=500)
        y, info2 = gmres(fwd, y, rtol=tol, maxiter=500)
        if info or info2:
            raise NonConvergence("GMRES did not converge in the stability solve")
        nrm = np.linalg.norm(y)
        new = 1.0 / math.sqrt(nrm)
        x = y / nrm
        if est is not None and abs(new - est) <= 1e-6 * est:
            est = new
            break
        est = new
    return est


def solution_json(sol):
    return json.dumps(sol.sidecar(), sort_keys=True)
