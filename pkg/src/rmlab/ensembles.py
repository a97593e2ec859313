"""Correlated Hermitian random matrix models ``H = A + W / sqrt(N)``."""

import hashlib
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidArgument, Unsupported
from .kernels import (
    BlockCopyKernel,
    DenseKernel,
    FourfoldKernel,
    MetricDecayKernel,
    WignerKernel,
    ZeroKernel,
)

KINDS = ("wigner", "deformed", "gaussian_metric_decay", "block_copy", "fourfold", "custom", "zero")
MATRIX_MAGIC = b"MDEM"


class OUDriftWarning(UserWarning):
    """The discretized flow inflates the covariance by more than the tolerance."""


@dataclass
class CorrelationModel:
    kind: str
    N: int
    symmetry: str = "real"
    params: dict = field(default_factory=dict)
    A: object = None  # None, "diag:[...]", "file:path" or an array
    base_dir: object = None  # resolves relative "file:" paths

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown model kind {self.kind!r}")
        if self.N < 2:
            raise InvalidArgument("N must be at least 2")
        if self.symmetry not in ("real", "complex"):
            raise InvalidArgument(f"unknown symmetry {self.symmetry!r}")
        if self.kind == "deformed" and self.A is None:
            raise InvalidArgument("a deformed model needs an A specification")
        self._kernel = None
        self._A = None

    @classmethod
    def from_config(cls, config, base_dir=None):
        try:
            return cls(config["kind"], int(config["N"]), config.get("symmetry", "real"),
                       dict(config.get("params") or {}), config.get("A"), base_dir)
        except KeyError as exc:
            raise ConfigError(f"model config is missing {exc}") from None

    def to_config(self):
        A = self.A if (self.A is None or isinstance(self.A, str)) else "inline"
        return {"kind": self.kind, "N": self.N, "symmetry": self.symmetry,
                "params": self.params, "A": A}

    def model_id(self):
        text = json.dumps(self.to_config(), sort_keys=True)
        return f"{self.kind}-N{self.N}-{hashlib.sha256(text.encode()).hexdigest()[:8]}"

    @property
    def kernel(self):
        if self._kernel is None:
            self._kernel = build_kernel(self)
        return self._kernel


def with_size(model, N):
    """The same ensemble at dimension ``N``; explicit ``A`` matrices do not resize."""
    if N == model.N:
        return model
    if model.A is not None:
        raise InvalidArgument("a model with an explicit A cannot change its dimension")
    return CorrelationModel(model.kind, int(N), model.symmetry, dict(model.params), None, model.base_dir)


def build_kernel(model):
    p, N, sym = model.params, model.N, model.symmetry
    entries = p.get("entries", "gaussian")
    scale = float(p.get("scale", 1.0))
    if model.kind in ("wigner", "deformed"):
        return WignerKernel(N, sym, scale, entries)
    if model.kind == "fourfold":
        return FourfoldKernel(N, sym, scale, entries)
    if model.kind == "block_copy":
        return BlockCopyKernel(N, int(p.get("n_blocks", 2)), sym, scale, entries)
    if model.kind == "gaussian_metric_decay":
        return MetricDecayKernel(N, float(p.get("s", 14.0)), sym, scale)
    if model.kind == "zero":
        return ZeroKernel(N, sym)
    if model.kind == "custom":
        path = p.get("tensor")
        if path is None:
            raise InvalidArgument("custom model needs params.tensor (path to a .npy file)")
        path = Path(path)
        if model.base_dir is not None and not path.is_absolute():
            path = Path(model.base_dir) / path
        T = np.load(path)
        if T.shape[0] != N:
            raise InvalidArgument(f"tensor dimension {T.shape[0]} does not match N = {N}")
        return DenseKernel(T, sym, scale)
    raise InvalidArgument(f"unknown model kind {model.kind!r}")


def write_matrix(path, M):
    """Write a square matrix: ``MDEM``, u32 N, u8 complex flag, little-endian f64 row-major."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgument("only square matrices can be written")
    is_complex = np.iscomplexobj(M)
    body = M.astype("<c16" if is_complex else "<f8").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC + struct.pack("<IB", M.shape[0], int(is_complex)) + body)


def read_matrix(path):
    data = Path(path).read_bytes()
    if data[:4] != MATRIX_MAGIC or len(data) < 9:
        raise InvalidArgument(f"{path} is not a matrix file")
    N, flag = struct.unpack("<IB", data[4:9])
    dtype = "<c16" if flag else "<f8"
    expected = N * N * np.dtype(dtype).itemsize
    if len(data) - 9 != expected:
        raise InvalidArgument(f"{path}: expected {expected} payload bytes, found {len(data) - 9}")
    return np.frombuffer(data[9:], dtype=dtype).reshape(N, N).copy()


def _parse_A(spec, N, base_dir=None):
    if spec is None:
        return None
    if isinstance(spec, np.ndarray):
        A = spec
    elif spec.startswith("diag:"):
        A = np.diag(np.asarray(json.loads(spec[5:]), dtype=float))
    elif spec.startswith("file:"):
        path = Path(spec[5:])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        A = read_matrix(path)
    else:
        raise InvalidArgument(f"cannot parse A specification {spec!r}")
    if A.shape != (N, N):
        raise InvalidArgument(f"A has shape {A.shape}, expected {(N, N)}")
    if not np.allclose(A, A.conj().T, atol=1e-12):
        raise InvalidArgument("A must be Hermitian")
    return A


def expectation_matrix(model):
    """``A = E H``; the zero matrix unless an A specification is configured."""
    if model._A is None:
        A = _parse_A(model.A, model.N, model.base_dir)
        model._A = np.zeros((model.N, model.N)) if A is None else A
    return model._A


def A_norm_within_bound(model):
    bound = float(model.params.get("A_bound", 10.0))
    return float(np.linalg.norm(expectation_matrix(model), 2)) <= bound


def sample_seed(seed, index):
    """Seed of the ``index``-th sample of a run."""
    return (int(seed) ^ int(index)) & (2**64 - 1)


def sample_noise(model, seed):
    """The noise matrix ``W`` (entries of order one) for a given seed."""
    return model.kernel.sample_W(np.random.default_rng(int(seed) & (2**64 - 1)))


def sample_matrix(model, seed):
    """``H = A + W / sqrt(N)``, exactly Hermitian, deterministic in ``seed``."""
    H = expectation_matrix(model) + sample_noise(model, seed) / math.sqrt(model.N)
    return (H + H.conj().T) / 2


def two_point_cumulant(model, alpha, beta):
    return model.kernel.two_point(alpha, beta)


def apply_S(kernel_or_model, V):
    kernel = kernel_or_model.kernel if isinstance(kernel_or_model, CorrelationModel) else kernel_or_model
    return kernel.apply_S(V)


def label_distance(alpha, beta, N):
    """Torus distance between labels, identifying a label with its transpose."""
    def d(x, y):
        da = abs(x[0] - y[0]) % N
        db = abs(x[1] - y[1]) % N
        return math.hypot(min(da, N - da), min(db, N - db))
    return min(d(alpha, beta), d((alpha[1], alpha[0]), beta))


def neighborhood_radius(N, k, mu=0.1):
    return k * N ** (0.25 - mu)


def neighborhood_sets(model, alpha, k, R, mu=0.1):
    """Labels within distance ``k * N^(1/4 - mu)`` of ``alpha`` or its transpose."""
    if model.kind != "gaussian_metric_decay":
        raise Unsupported(f"{model.kind} has no metric on labels")
    if not 0 <= k <= R:
        raise InvalidArgument("need 0 <= k <= R")
    N = model.N
    r = neighborhood_radius(N, k, mu)
    a, b = alpha
    off = np.arange(N)
    out = set()
    for ca, cb in ((a, b), (b, a)):
        da = np.abs(off - ca) % N
        db = np.abs(off - cb) % N
        da, db = np.minimum(da, N - da), np.minimum(db, N - db)
        close = np.hypot(da[:, None], db[None, :]) <= r
        out.update(map(tuple, np.argwhere(close).tolist()))
    return frozenset(out)


def neighborhood_size_ok(model, R, mu=0.1):
    """Whether ``|N_R| <= N^(1/2 - mu)`` holds for this system size."""
    size = len(neighborhood_sets(model, (0, 0), R, R, mu))
    return size <= model.N ** (0.5 - mu), size


@dataclass
class OUResult:
    H: np.ndarray
    steps: int
    dt: float
    covariance_drift: float  # relative inflation of the stationary covariance


def ou_evolve(model, H0, t, seed, drift_tol=0.01):
    """Euler-Maruyama for ``dH = -(H - A)/2 dt + dB`` with increments correlated like ``W / sqrt(N)``."""
    if t < 0:
        raise InvalidArgument("t must be non-negative")
    H0 = np.asarray(H0)
    if t == 0:
        return OUResult(H0.copy(), 0, 0.0, 0.0)
    dt = min(0.01, t / 100)
    steps = math.ceil(round(t / dt, 9))
    dt = t / steps
    A = expectation_matrix(model)
    X = H0 - A
    rng = np.random.default_rng(int(seed) & (2**64 - 1))
    root_n = math.sqrt(model.N)
    for _ in range(steps):
        X = (1 - dt / 2) * X + math.sqrt(dt) * model.kernel.sample_W(rng) / root_n
    # per-step variance map v -> r v + dt has the fixed point dt / (1 - r) = 1 / (1 - dt / 4)
    r = (1 - dt / 2) ** 2
    drift = (dt / (1 - r) - 1) * (1 - r ** steps)
    if drift > drift_tol:
        warnings.warn(f"OU discretization inflates covariances by {drift:.3g}", OUDriftWarning)
    H = A + X
    return OUResult((H + H.conj().T) / 2, steps, dt, drift)
