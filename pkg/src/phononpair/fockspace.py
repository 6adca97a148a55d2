"""Dense linear algebra on truncated single-mode and optical x mechanical Fock spaces.

Basis ordering is optical-major: the joint index of ``|j>_a |k>_m`` is
``j * n_m + k`` (mechanical index fastest). Every module in the package
relies on this convention.

Operators are plain complex ``numpy.ndarray`` objects. States carry their
dimensions so that projections and partial traces stay unambiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_DIM = 4096
HERMITIAN_TOL = 1e-12


class DimensionError(ValueError):
    """Raised for invalid or mismatched Hilbert-space dimensions."""


class ResourceError(RuntimeError):
    """Raised when an operator would exceed the configured maximum dimension."""


def _as_operator(A) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"operator must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("operator has non-finite entries")
    return A


def make_annihilation(dim: int) -> np.ndarray:
    """Ladder operator with ``A[j-1, j] = sqrt(j)``."""
    if int(dim) != dim or dim < 2:
        raise DimensionError(f"annihilation operator needs dim >= 2, got {dim}")
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def make_creation(dim: int) -> np.ndarray:
    return make_annihilation(dim).T.copy()


def make_number(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def identity(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex)


def dagger(A) -> np.ndarray:
    return np.conj(np.asarray(A)).T


def commutator(A, B) -> np.ndarray:
    return A @ B - B @ A


def is_hermitian(A, tol: float = HERMITIAN_TOL) -> bool:
    A = np.asarray(A)
    return bool(np.max(np.abs(A - A.conj().T), initial=0.0) <= tol)


def tensor(A, B, max_dim: int = MAX_DIM) -> np.ndarray:
    """Kronecker product, ``A`` on the optical factor and ``B`` on the mechanical one."""
    A = _as_operator(A)
    B = _as_operator(B)
    dim = A.shape[0] * B.shape[0]
    if dim > max_dim:
        raise ResourceError(f"tensor product dimension {dim} exceeds maximum {max_dim}")
    return np.kron(A, B)


@dataclass(frozen=True)
class ModeOperators:
    """Ladder and number operators of the two modes embedded in the joint space."""

    n_a: int
    n_m: int
    a: np.ndarray
    m: np.ndarray

    @property
    def dim(self) -> int:
        return self.n_a * self.n_m

    @property
    def ad(self) -> np.ndarray:
        return dagger(self.a)

    @property
    def md(self) -> np.ndarray:
        return dagger(self.m)

    @property
    def num_a(self) -> np.ndarray:
        return self.ad @ self.a

    @property
    def num_m(self) -> np.ndarray:
        return self.md @ self.m


@lru_cache(maxsize=32)
def _mode_ops(n_a: int, n_m: int) -> ModeOperators:
    a = tensor(make_annihilation(n_a), identity(n_m))
    m = tensor(identity(n_a), make_annihilation(n_m))
    a.setflags(write=False)
    m.setflags(write=False)
    return ModeOperators(n_a, n_m, a, m)


def mode_operators(n_a: int, n_m: int) -> ModeOperators:
    """Cached joint-space operators for truncations ``(n_a, n_m)``."""
    return _mode_ops(int(n_a), int(n_m))


# Scaling and squaring with diagonal Pade approximants (Higham 2005 thresholds).
_PADE_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


@lru_cache(maxsize=None)
def _pade_coefficients(m: int) -> tuple[float, ...]:
    f = math.factorial
    return tuple(f(2 * m - j) * f(m) / (f(2 * m) * f(j) * f(m - j)) for j in range(m + 1))


def _pade(A: np.ndarray, m: int) -> np.ndarray:
    b = _pade_coefficients(m)
    n = A.shape[0]
    I = np.eye(n, dtype=A.dtype)
    powers = [I, A @ A]
    # even powers A^0, A^2, A^4, ...
    for _ in range(2, m // 2 + 1):
        powers.append(powers[-1] @ powers[1])
    U_inner = sum(b[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
    V = sum(b[2 * k] * powers[k] for k in range(m // 2 + 1))
    U = A @ U_inner
    return np.linalg.solve(V - U, V + U)


def expm(A) -> np.ndarray:
    """Matrix exponential by scaling and squaring of a Pade approximant."""
    A = _as_operator(A)
    norm = np.linalg.norm(A, 1)
    if norm == 0.0:
        return np.eye(A.shape[0], dtype=complex)
    for m in (3, 5, 7, 9):
        if norm <= _PADE_THETA[m]:
            return _pade(A, m)
    s = max(0, math.ceil(math.log2(norm / _PADE_THETA[13])))
    X = _pade(A / 2.0**s, 13)
    for _ in range(s):
        X = X @ X
    return X


def basis_index(j: int, k: int, n_m: int) -> int:
    return j * n_m + k


@dataclass(frozen=True)
class StateVector:
    """Pure state on the joint optical x mechanical space."""

    dims: tuple[int, int]
    amplitudes: np.ndarray
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        n_a, n_m = self.dims
        if amps.size != n_a * n_m:
            raise DimensionError(f"expected {n_a * n_m} amplitudes, got {amps.size}")
        amps.setflags(write=False)
        object.__setattr__(self, "dims", (int(n_a), int(n_m)))
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, dims, j: int, k: int) -> "StateVector":
        n_a, n_m = dims
        if not (0 <= j < n_a and 0 <= k < n_m):
            raise DimensionError(f"|{j}{k}> outside truncation {dims}")
        amps = np.zeros(n_a * n_m, dtype=complex)
        amps[basis_index(j, k, n_m)] = 1.0
        return cls((n_a, n_m), amps)

    @classmethod
    def vacuum(cls, dims) -> "StateVector":
        return cls.basis(dims, 0, 0)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        return StateVector(self.dims, self.amplitudes / self.norm)

    def amplitude(self, j: int, k: int) -> complex:
        return project(self, basis_index(j, k, self.dims[1]))

    def as_grid(self) -> np.ndarray:
        """Amplitudes reshaped to ``[optical, mechanical]``."""
        return self.amplitudes.reshape(self.dims)

    def leakage(self) -> float:
        """Population on the highest Fock level of either mode."""
        p = np.abs(self.as_grid()) ** 2
        return float(p[-1, :].sum() + p[:, -1].sum() - p[-1, -1])

    def to_density(self) -> "DensityMatrix":
        psi = self.amplitudes
        return DensityMatrix(self.dims, np.outer(psi, psi.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    dims: tuple[int, int]
    data: np.ndarray

    def __post_init__(self):
        n_a, n_m = self.dims
        d = n_a * n_m
        data = np.array(self.data, dtype=complex)
        if data.shape != (d, d):
            raise DimensionError(f"density matrix must be {d}x{d}, got {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "dims", (int(n_a), int(n_m)))
        object.__setattr__(self, "data", data)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))[0])

    def populations(self) -> np.ndarray:
        """Joint Fock populations ``P[n_a, n_m]``."""
        return np.real(np.diag(self.data)).reshape(self.dims).copy()

    def expect(self, op) -> complex:
        return complex(np.trace(self.data @ op))

    def reduced_mechanical(self) -> np.ndarray:
        n_a, n_m = self.dims
        r = self.data.reshape(n_a, n_m, n_a, n_m)
        return np.einsum("ikil->kl", r)

    def reduced_optical(self) -> np.ndarray:
        n_a, n_m = self.dims
        r = self.data.reshape(n_a, n_m, n_a, n_m)
        return np.einsum("ikjk->ij", r)


def thermal_populations(n_mean: float, dim: int) -> np.ndarray:
    """Bose-Einstein populations truncated to ``dim`` levels and renormalized."""
    if n_mean <= 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    x = n_mean / (1.0 + n_mean)
    p = (1.0 - x) * x ** np.arange(dim)
    return p / p.sum()


def thermal_mechanics(dims, n_th: float) -> DensityMatrix:
    """Optical vacuum times a mechanical thermal state."""
    n_a, n_m = dims
    rho_a = np.zeros((n_a, n_a))
    rho_a[0, 0] = 1.0
    return DensityMatrix(dims, np.kron(rho_a, np.diag(thermal_populations(n_th, n_m))))


def _check_dims(A: np.ndarray, n: int):
    if A.shape[0] != n:
        raise DimensionError(f"operator dimension {A.shape[0]} does not match state dimension {n}")


def apply(A, psi: StateVector) -> StateVector:
    A = _as_operator(A)
    _check_dims(A, psi.amplitudes.size)
    return StateVector(psi.dims, A @ psi.amplitudes)


def inner(psi: StateVector, phi: StateVector) -> complex:
    """``<psi|phi>``."""
    if psi.dims != phi.dims:
        raise DimensionError(f"dimension mismatch {psi.dims} vs {phi.dims}")
    return complex(np.vdot(psi.amplitudes, phi.amplitudes))


def project(psi: StateVector, index: int) -> complex:
    if not 0 <= index < psi.amplitudes.size:
        raise DimensionError(f"basis index {index} outside [0, {psi.amplitudes.size})")
    return complex(psi.amplitudes[index])
