"""Two-point covariance kernels of random matrix entries and the self-energy map they induce.

A kernel stores ``T[a, b, c, d] = E[w_ab w_cd]`` for a Hermitian noise matrix
``W``.  The self-energy map is ``S[V] = E[W V W] / N``, i.e.

    S[V]_ad = (1/N) sum_{b,c} T[a, b, c, d] V_bc.

Structured kernels evaluate ``S`` in closed form; the dense tensor is only
built on request for small ``N``.
"""

import copy

import numpy as np

from .errors import InvalidArgument, Unsupported

DENSE_LIMIT = 64
ENTRY_LAWS = ("gaussian", "rademacher")
# joint cumulants of a standardized entry law, order -> value
LAW_CUMULANTS = {
    "gaussian": {},
    "rademacher": {4: -2.0, 6: 16.0, 8: -272.0},
}


def _deltas(N):
    r = np.arange(N)
    return np.ix_(r, r, r, r)


def _fold(V, M):
    """Sum an ``N x N`` matrix over index classes mod ``M``."""
    n = V.shape[0] // M
    return V.reshape(n, M, n, M).sum(axis=(0, 2))


class Kernel:
    """Base class; subclasses provide the unscaled ``_`` methods."""

    kind = "kernel"
    has_split = True

    def __init__(self, N, symmetry="real", scale=1.0):
        if N < 1:
            raise InvalidArgument("N must be positive")
        if symmetry not in ("real", "complex"):
            raise InvalidArgument(f"unknown symmetry {symmetry!r}")
        if scale < 0:
            raise InvalidArgument("scale must be non-negative")
        self.N = int(N)
        self.symmetry = symmetry
        self.scale = float(scale)

    @property
    def is_complex(self):
        return self.symmetry == "complex"

    def __repr__(self):
        return f"{type(self).__name__}(N={self.N}, symmetry={self.symmetry!r}, scale={self.scale})"

    def scaled(self, lam):
        """Same kernel with every cumulant multiplied by ``lam``."""
        out = copy.copy(self)
        out.scale = self.scale * lam
        return out

    def _check_dense(self):
        if self.N > DENSE_LIMIT:
            raise Unsupported(f"dense tensor requested for N = {self.N} > {DENSE_LIMIT}")

    def tensor(self):
        """Dense ``T`` of shape ``(N, N, N, N)``."""
        self._check_dense()
        return self.scale * self._tensor()

    def split_tensors(self):
        """Declared direct/cross split ``(T_d, T_c)`` with ``T = T_d + T_c``."""
        self._check_dense()
        td, tc = self._split()
        return self.scale * td, self.scale * tc

    def _split(self):
        t = self._tensor()
        return t, np.zeros_like(t)

    def covariance(self, a, b, c, d):
        return self.scale * self._entry(a % self.N, b % self.N, c % self.N, d % self.N)

    def _entry(self, a, b, c, d):
        raise NotImplementedError

    def two_point(self, alpha, beta):
        """``E[w_alpha w_beta]``; for complex kernels the 2x2 Re/Im covariance block."""
        (a, b), (c, d) = alpha, beta
        exy = self.covariance(a, b, c, d)
        if not self.is_complex:
            return float(np.real(exy))
        exyb = self.covariance(a, b, d, c)  # E[x conj(y)], since conj(w_cd) = w_dc
        return np.array([
            [np.real(exy + exyb) / 2, np.imag(exy - exyb) / 2],
            [np.imag(exy + exyb) / 2, np.real(exyb - exy) / 2],
        ])

    def apply_S(self, V):
        V = np.asarray(V)
        if V.shape != (self.N, self.N):
            raise InvalidArgument(f"expected a {self.N}x{self.N} matrix")
        return self.scale * self._apply_S(V)

    def _apply_S(self, V):
        return np.einsum("abcd,bc->ad", self._tensor(), V) / self.N

    def apply_S_parts(self, V):
        """``(S_d[V], S_c[V])`` from the declared split (dense)."""
        td, tc = self.split_tensors()
        return (np.einsum("abcd,bc->ad", td, V) / self.N,
                np.einsum("abcd,bc->ad", tc, V) / self.N)

    supports_circulant = False
    preserves_diagonal = False

    def diagonal_S(self, v):
        """Diagonal of ``S[diag(v)]`` for kernels that map diagonal matrices to diagonal ones."""
        if not self.preserves_diagonal:
            raise Unsupported(f"{self.kind} does not preserve diagonal matrices")
        return self.scale * self._diagonal_S(np.asarray(v))

    def circulant_S(self, r):
        """First row of ``S[M]`` for the circulant ``M_ad = r[(d - a) mod N]``."""
        if not self.supports_circulant:
            raise Unsupported(f"{self.kind} has no circulant fast path")
        return self.scale * self._circulant_S(np.asarray(r))

    def abs_matvec(self, v):
        """Apply the ``N^2 x N^2`` matrix ``|T[(ab), (cd)]|`` to ``v`` (shape ``(N, N)``)."""
        return self.scale * self._abs_matvec(np.asarray(v))

    def _abs_matvec(self, v):
        return np.einsum("abcd,cd->ab", np.abs(self._tensor()), v)

    nonnegative = False

    def matvec(self, v):
        """Apply ``T[(ab), (cd)]`` itself to ``v``."""
        v = np.asarray(v)
        if self.nonnegative:
            return self.abs_matvec(v)
        return self.scale * np.einsum("abcd,cd->ab", self._tensor(), v)

    def pairing_terms(self):
        """``T`` as a sum of ``coef * K_ac K_bd`` ("direct") and ``coef * K_ad K_bc`` ("cross")
        with symmetric ``K``; ``None`` if the kernel has no such form."""
        terms = self._pairings()
        if terms is None:
            return None
        return [(self.scale * c, kind, K) for c, kind, K in terms]

    def _pairings(self):
        return None

    def sample_W(self, rng):
        return np.sqrt(self.scale) * self._sample(rng)

    def _sample(self, rng):
        raise Unsupported(f"sampling is not available for {self.kind}")

    def orbit_structure(self):
        """``(orbit_ids, weights, law)`` when entries are ``w = weight * g[orbit]`` with iid ``g``."""
        raise Unsupported(f"{self.kind} has no analytic entry structure")


class ZeroKernel(Kernel):
    kind = "zero"

    def _entry(self, a, b, c, d):
        return 0.0

    def _tensor(self):
        return np.zeros((self.N,) * 4)

    def _apply_S(self, V):
        return np.zeros_like(V)

    def _abs_matvec(self, v):
        return np.zeros_like(v)

    nonnegative = True

    def _pairings(self):
        return []

    supports_circulant = True

    def _circulant_S(self, r):
        return np.zeros_like(r)

    preserves_diagonal = True

    def _diagonal_S(self, v):
        return np.zeros_like(v)

    def _sample(self, rng):
        return np.zeros((self.N, self.N), dtype=complex if self.is_complex else float)


class _OrbitKernel(Kernel):
    """Real kernels whose entries are ``weight * g[orbit]`` for iid standardized ``g``."""

    def __init__(self, N, symmetry="real", scale=1.0, entries="gaussian"):
        super().__init__(N, symmetry, scale)
        if entries not in ENTRY_LAWS:
            raise InvalidArgument(f"unknown entry law {entries!r}")
        if entries != "gaussian" and self.is_complex:
            raise Unsupported("non-Gaussian entries are only available for real symmetry")
        self.entries = entries

    def _draw(self, rng, size):
        if self.entries == "rademacher":
            return rng.choice([-1.0, 1.0], size=size)
        return rng.standard_normal(size)

    def _orbits(self):
        raise NotImplementedError

    def orbit_structure(self):
        if self.is_complex:
            raise Unsupported("orbit structure is only defined for real symmetry")
        ids, weights = self._orbits()
        return ids, np.sqrt(self.scale) * weights, self.entries

    def _sample_real(self, rng):
        ids, weights = self._orbits()
        g = self._draw(rng, ids.max() + 1)
        return weights * g[ids]


def _pair_orbits(N):
    """Orbits of ``{(a, b), (b, a)}`` with weights ``sqrt(2 / size)``."""
    a, b = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    ids = lo * N + hi
    _, ids = np.unique(ids, return_inverse=True)
    ids = ids.reshape(N, N)
    weights = np.where(a == b, np.sqrt(2.0), 1.0)
    return ids, weights


def _complex_hermitian_noise(rng, N):
    """GUE-normalized noise: ``E|w_ab|^2 = 1``, real diagonal of variance 1."""
    g = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2)
    return (g + g.conj().T) / np.sqrt(2)


class WignerKernel(_OrbitKernel):
    """Independent entries up to Hermitian symmetry.

    Real: ``T = d_ac d_bd + d_ad d_bc`` (diagonal variance 2).
    Complex: ``T = d_ad d_bc`` (all variances 1), so ``S[V] = <V> Id``.
    """

    kind = "wigner"

    def _entry(self, a, b, c, d):
        cross = float(a == d and b == c)
        if self.is_complex:
            return cross
        return float(a == c and b == d) + cross

    def _split(self):
        a, b, c, d = _deltas(self.N)
        cross = ((a == d) & (b == c)).astype(float)
        direct = ((a == c) & (b == d)).astype(float)
        if self.is_complex:
            return np.zeros_like(cross), cross
        return direct, cross

    def _tensor(self):
        td, tc = self._split()
        return td + tc

    def _apply_S(self, V):
        out = np.trace(V) / self.N * np.eye(self.N, dtype=V.dtype)
        if not self.is_complex:
            out = out + V.T / self.N
        return out

    supports_circulant = True

    def _circulant_S(self, r):
        out = np.zeros_like(r)
        out[0] = r[0]
        if not self.is_complex:
            out = out + np.roll(r[::-1], 1) / self.N
        return out

    preserves_diagonal = True

    def _diagonal_S(self, v):
        out = np.full_like(v, v.sum() / self.N)
        return out if self.is_complex else out + v / self.N

    def _abs_matvec(self, v):
        return v.T if self.is_complex else v + v.T

    nonnegative = True

    def _pairings(self):
        eye = np.eye(self.N)
        if self.is_complex:
            return [(1.0, "cross", eye)]
        return [(1.0, "direct", eye), (1.0, "cross", eye)]

    def _orbits(self):
        return _pair_orbits(self.N)

    def _sample(self, rng):
        if self.is_complex:
            return _complex_hermitian_noise(rng, self.N)
        return self._sample_real(rng)


class FourfoldKernel(_OrbitKernel):
    """Entries with ``w_ab = w_ba = w_{-a,-b}`` (indices mod N), real only.

    ``T`` counts the symmetries mapping ``(a, b)`` to ``(c, d)``.
    """

    kind = "fourfold"

    def __init__(self, N, symmetry="real", scale=1.0, entries="gaussian"):
        if symmetry != "real":
            raise Unsupported("the fourfold model is real symmetric only")
        super().__init__(N, symmetry, scale, entries)

    def _entry(self, a, b, c, d):
        N = self.N
        return float((a == c and b == d) + (a == d and b == c)
                     + ((a + c) % N == 0 and (b + d) % N == 0)
                     + ((a + d) % N == 0 and (b + c) % N == 0))

    def _split(self):
        N = self.N
        a, b, c, d = _deltas(N)
        direct = ((a == c) & (b == d)).astype(float) + (((a + c) % N == 0) & ((b + d) % N == 0))
        cross = ((a == d) & (b == c)).astype(float) + (((a + d) % N == 0) & ((b + c) % N == 0))
        return direct, cross

    def _tensor(self):
        td, tc = self._split()
        return td + tc

    def _apply_S(self, V):
        N = self.N
        neg = (-np.arange(N)) % N
        out = np.trace(V) * np.eye(N, dtype=V.dtype)
        anti = V[np.arange(N), neg].sum()
        out[np.arange(N), neg] += anti
        out = out + V.T + V[np.ix_(neg, neg)].T
        return out / N

    def _abs_matvec(self, v):
        neg = (-np.arange(self.N)) % self.N
        r = v[np.ix_(neg, neg)]
        return v + v.T + r + r.T

    nonnegative = True

    def _pairings(self):
        eye = np.eye(self.N)
        refl = eye[(-np.arange(self.N)) % self.N]
        return [(1.0, "direct", eye), (1.0, "cross", eye), (1.0, "direct", refl), (1.0, "cross", refl)]

    def _orbits(self):
        N = self.N
        a, b = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        images = np.stack([a * N + b, b * N + a, ((-a) % N) * N + (-b) % N, ((-b) % N) * N + (-a) % N])
        key = images.min(axis=0)
        srt = np.sort(images, axis=0)
        size = 1 + (np.diff(srt, axis=0) != 0).sum(axis=0)
        _, ids = np.unique(key, return_inverse=True)
        return ids.reshape(N, N), np.sqrt(4.0 / size)

    def _sample(self, rng):
        return self._sample_real(rng)


class BlockCopyKernel(_OrbitKernel):
    """``n_blocks x n_blocks`` identical copies of one ``M x M`` Wigner matrix, ``M = N / n_blocks``.

    The copied matrix has unit variance on every entry including the diagonal,
    so ``T = 1[(a,b) ~ (c,d) or (a,b) ~ (d,c)]`` with ``~`` equality mod ``M``.
    The complex version only has the cross part.
    """

    kind = "block_copy"

    def __init__(self, N, n_blocks, symmetry="real", scale=1.0, entries="gaussian"):
        if n_blocks < 1 or N % n_blocks:
            raise InvalidArgument(f"n_blocks = {n_blocks} must divide N = {N}")
        super().__init__(N, symmetry, scale, entries)
        self.n_blocks = int(n_blocks)
        self.M = N // n_blocks

    def _entry(self, a, b, c, d):
        M = self.M
        a, b, c, d = a % M, b % M, c % M, d % M
        cross = float(a == d and b == c)
        if self.is_complex:
            return cross
        return float((a == c and b == d) or (a == d and b == c))

    def _split(self):
        M = self.M
        a, b, c, d = (x % M for x in _deltas(self.N))
        direct = ((a == c) & (b == d)).astype(float)
        cross = ((a == d) & (b == c)).astype(float)
        if self.is_complex:
            return np.zeros_like(cross), cross
        return direct, cross - ((a == b) & (b == c) & (c == d))

    def _tensor(self):
        td, tc = self._split()
        return td + tc

    def _apply_S(self, V):
        M, n = self.M, self.n_blocks
        F = _fold(V, M)
        if self.is_complex:
            core = np.trace(F) * np.eye(M, dtype=F.dtype)
        else:
            core = F.T + np.diag(np.trace(F) - np.diag(F))
        return np.tile(core, (n, n)) / self.N

    def _abs_matvec(self, v):
        M, n = self.M, self.n_blocks
        F = _fold(v, M)
        core = F.T if self.is_complex else F + F.T - np.diag(np.diag(F))
        return np.tile(core, (n, n))

    nonnegative = True

    def _pairings(self):
        if not self.is_complex:
            return None  # the diagonal correction is not a pairing
        idx = np.arange(self.N) % self.M
        return [(1.0, "cross", (idx[:, None] == idx[None, :]).astype(float))]

    def _orbits(self):
        ids, _ = _pair_orbits(self.M)
        return np.tile(ids, (self.n_blocks, self.n_blocks)), np.ones((self.N, self.N))

    def _sample(self, rng):
        if self.is_complex:
            g = (rng.standard_normal((self.M,) * 2) + 1j * rng.standard_normal((self.M,) * 2)) / np.sqrt(2)
            x = np.triu(g, 1)
            x = x + x.conj().T + np.diag(rng.standard_normal(self.M))
            return np.tile(x, (self.n_blocks, self.n_blocks))
        return self._sample_real(rng)


def torus_offsets(N):
    """Signed torus offset of each index from 0, as a float array."""
    x = np.arange(N)
    return np.minimum(x, N - x).astype(float)


class MetricDecayKernel(Kernel):
    """Gaussian moving-average field on the ``N x N`` torus, symmetrized.

    ``Y = k * G`` (circular convolution) with ``k(x) ~ (1 + |x|)^(-(s+2)/2)``
    normalized in l2, so the autocorrelation ``c`` of ``k`` has ``c(0) = 1``.
    Real: ``W = (Y + Y^T)/sqrt(2)`` and ``T = c(c-a, d-b) + c(d-a, c-b)``.
    Complex: ``W = (Y + Y^*)/sqrt(2)`` and ``T = c(d-a, c-b)``.
    """

    kind = "gaussian_metric_decay"
    supports_circulant = True

    def __init__(self, N, s=14.0, symmetry="real", scale=1.0):
        super().__init__(N, symmetry, scale)
        if s <= 0:
            raise InvalidArgument("decay exponent must be positive")
        self.s = float(s)
        off = torus_offsets(N)
        dist = np.hypot(off[:, None], off[None, :])
        k = (1.0 + dist) ** (-(self.s + 2) / 2)
        self.k = k / np.linalg.norm(k)
        self._kf = np.fft.fft2(self.k)
        c = np.fft.ifft2(np.abs(self._kf) ** 2).real
        self.c = np.maximum(c, 0.0)
        self._cf = np.fft.fft2(self.c).real
        u, w = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        nu = np.bincount(((u - w) % N).ravel(), weights=self.c.ravel(), minlength=N)
        self._nu_f = np.fft.fft(nu)

    def _entry(self, a, b, c, d):
        N = self.N
        cross = self.c[(d - a) % N, (c - b) % N]
        if self.is_complex:
            return float(cross)
        return float(self.c[(c - a) % N, (d - b) % N] + cross)

    def _split(self):
        N = self.N
        a, b, c, d = _deltas(N)
        cross = self.c[(d - a) % N, (c - b) % N]
        if self.is_complex:
            return np.zeros_like(cross), cross
        return self.c[(c - a) % N, (d - b) % N], cross

    def _tensor(self):
        td, tc = self._split()
        return td + tc

    def _conv(self, V):
        return np.fft.ifft2(self._cf * np.fft.fft2(V))

    def _cross_part(self, V):
        N = self.N
        idx = np.arange(N)
        shifts = V[idx[:, None], (idx[:, None] + idx[None, :]) % N].sum(axis=0)  # s(w) = sum_b V[b, b+w]
        g = self.c @ shifts
        return g[(idx[None, :] - idx[:, None]) % N]

    def _apply_S(self, V):
        out = self._cross_part(V)
        if not self.is_complex:
            out = out + self._conv(V.T)
        if not np.iscomplexobj(V):
            out = np.real(out)
        return out / self.N

    def _circulant_S(self, r):
        N = self.N
        r = np.asarray(r, dtype=complex)
        out = N * (self.c @ r.real + 1j * (self.c @ r.imag))  # keeps c real: no N^2 complex cast
        if not self.is_complex:
            r_rev = np.roll(r[::-1], 1)
            out = out + np.fft.ifft(self._nu_f * np.fft.fft(r_rev))
        return out / N

    nonnegative = True

    def _abs_matvec(self, v):
        out = self._conv(v.T)
        if not self.is_complex:
            out = out + self._conv(v)
        return np.real(out) if not np.iscomplexobj(v) else out

    def covariance_envelope(self):
        """Largest |T(alpha, beta)| at each integer distance, from the autocorrelation."""
        off = torus_offsets(self.N)
        dist = np.hypot(off[:, None], off[None, :])
        r = np.rint(dist).astype(int)
        env = np.zeros(r.max() + 1)
        np.maximum.at(env, r.ravel(), self.c.ravel())
        return np.arange(len(env)), env

    def decay_slope(self, r_min=2.0, r_max=None):
        """Log-log slope of the covariance envelope between ``r_min`` and ``r_max``."""
        r, env = self.covariance_envelope()
        r_max = r_max or self.N / 4
        keep = (r >= r_min) & (r <= r_max) & (env > 0)
        return float(np.polyfit(np.log(r[keep]), np.log(env[keep]), 1)[0])

    def _sample(self, rng):
        N = self.N
        g = rng.standard_normal((N, N))
        if self.is_complex:
            g = (g + 1j * rng.standard_normal((N, N))) / np.sqrt(2)
        y = np.fft.ifft2(self._kf * np.fft.fft2(g))
        if self.is_complex:
            return (y + y.conj().T) / np.sqrt(2)
        y = y.real
        return (y + y.T) / np.sqrt(2)


class DenseKernel(Kernel):
    """User-supplied covariance tensor ``T[a, b, c, d]``; no declared split (all direct)."""

    kind = "custom"

    def __init__(self, T, symmetry="real", scale=1.0, atol=1e-10):
        T = np.asarray(T)
        if T.ndim != 4 or len(set(T.shape)) != 1:
            raise InvalidArgument("covariance tensor must have shape (N, N, N, N)")
        super().__init__(T.shape[0], symmetry, scale)
        if not np.allclose(T, T.transpose(2, 3, 0, 1), atol=atol):
            raise InvalidArgument("covariance tensor must satisfy T[a,b,c,d] = T[c,d,a,b]")
        if symmetry == "real":
            if np.iscomplexobj(T) and np.abs(T.imag).max() > atol:
                raise InvalidArgument("real symmetry needs a real tensor")
            T = np.real(T)
            if not np.allclose(T, T.transpose(1, 0, 2, 3), atol=atol):
                raise InvalidArgument("real symmetric noise needs T[a,b,c,d] = T[b,a,c,d]")
        self.T = T

    def _entry(self, a, b, c, d):
        return self.T[a, b, c, d]

    def _tensor(self):
        return self.T

    def tensor(self):
        return self.scale * self.T

    def split_tensors(self):
        return self.scale * self.T, np.zeros_like(self.T)

    def _sample(self, rng):
        if self.is_complex:
            raise Unsupported("sampling a custom complex kernel is not supported")
        N = self.N
        iu = np.triu_indices(N)
        cov = self.T[iu[0], iu[1]][:, iu[0], iu[1]]
        lam, vec = np.linalg.eigh(cov)
        w = vec @ (np.sqrt(np.clip(lam, 0, None)) * rng.standard_normal(len(lam)))
        W = np.zeros((N, N))
        W[iu] = w
        return W + np.triu(W, 1).T
