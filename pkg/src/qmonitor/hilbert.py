"""Finite-dimensional states, Hermitian operators and density matrices.

All containers are immutable: the wrapped numpy arrays are copied on
construction and flagged read-only, so instances can be shared between
trajectory workers without copying.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ModelDefinitionError

NORM_TOL = 1e-10
HERMITIAN_TOL = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.complex128, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Unit-norm complex amplitude vector.

    Use :meth:`from_amplitudes` to normalize arbitrary input; the plain
    constructor insists the vector is already normalized.
    """

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.ndim != 1:
            raise ModelDefinitionError(f"state must be a vector, got shape {amps.shape}")
        if amps.shape[0] < 2:
            raise ModelDefinitionError("state dimension must be at least 2")
        if not np.all(np.isfinite(amps)):
            raise ModelDefinitionError("state has non-finite amplitudes")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) >= NORM_TOL:
            raise ModelDefinitionError(f"state norm {norm!r} differs from 1")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_amplitudes(cls, amplitudes) -> QuantumState:
        amps = np.asarray(amplitudes, dtype=np.complex128)
        norm = np.linalg.norm(amps)
        if not np.isfinite(norm) or norm == 0.0:
            raise ModelDefinitionError("cannot normalize a zero or non-finite vector")
        return cls(amps / norm)

    @classmethod
    def basis(cls, dim: int, index: int) -> QuantumState:
        amps = np.zeros(dim, dtype=np.complex128)
        amps[index] = 1.0
        return cls(amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def projector(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def __eq__(self, other):
        if not isinstance(other, QuantumState):
            return NotImplemented
        return np.array_equal(self.amplitudes, other.amplitudes)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Dense Hermitian matrix in units with hbar = 1."""

    entries: np.ndarray

    def __post_init__(self):
        m = _frozen(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ModelDefinitionError(f"operator must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ModelDefinitionError("operator has non-finite entries")
        err = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
        if err > HERMITIAN_TOL:
            raise ModelDefinitionError(f"operator is not Hermitian (max deviation {err:.3e})")
        object.__setattr__(self, "entries", m)

    @classmethod
    def diagonal(cls, values) -> HermitianOperator:
        return cls(np.diag(np.asarray(values, dtype=float)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def is_diagonal(self) -> bool:
        m = self.entries
        return not np.any(m - np.diag(np.diagonal(m)))

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.entries)

    def __eq__(self, other):
        if not isinstance(other, HermitianOperator):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Positive semidefinite, unit-trace Hermitian matrix.

    ``tol`` widens the hermiticity/positivity checks (1e-10 / 1e-8 by
    default); integrators pass a looser value for accumulated drift.
    """

    entries: np.ndarray
    tol: float = 1e-8

    def __post_init__(self):
        m = _frozen(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ModelDefinitionError(f"density matrix must be square with dim >= 2, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ModelDefinitionError("density matrix has non-finite entries")
        herm_tol = 1e-10 if self.tol <= 1e-8 else self.tol
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise ModelDefinitionError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > self.tol:
            raise ModelDefinitionError(f"density matrix trace {tr!r} differs from 1")
        lo = np.linalg.eigvalsh(m)[0]
        if lo < -self.tol:
            raise ModelDefinitionError(f"density matrix has negative eigenvalue {lo:.3e}")
        object.__setattr__(self, "entries", m)

    @classmethod
    def from_state(cls, state: QuantumState) -> DensityMatrix:
        return cls(state.projector())

    @classmethod
    def maximally_mixed(cls, dim: int) -> DensityMatrix:
        return cls(np.eye(dim) / dim)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def purity(self) -> float:
        m = self.entries
        return float(np.real(np.vdot(m, m)))

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    __hash__ = None


def _check_dims(a: int, b: int):
    if a != b:
        raise ModelDefinitionError(f"dimension mismatch: {a} vs {b}")


def expectation(state: QuantumState, op: HermitianOperator) -> float:
    """Return <psi|L|psi>."""
    _check_dims(state.dim, op.dim)
    psi = state.amplitudes
    value = np.vdot(psi, op.entries @ psi)
    if abs(value.imag) >= 1e-9:
        raise ModelDefinitionError(f"expectation has imaginary part {value.imag:.3e}")
    return float(value.real)


def variance(state: QuantumState, op: HermitianOperator) -> float:
    """Return <L^2> - <L>^2, clamped at zero."""
    _check_dims(state.dim, op.dim)
    psi = state.amplitudes
    l_psi = op.entries @ psi
    mean = np.vdot(psi, l_psi).real
    second = np.vdot(l_psi, l_psi).real
    return max(float(second - mean * mean), 0.0)


def trace_distance_matrix(a: np.ndarray, b: np.ndarray) -> float:
    """Half the trace norm of ``a - b`` for raw Hermitian arrays."""
    diff = np.asarray(a) - np.asarray(b)
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    _check_dims(a.dim, b.dim)
    return trace_distance_matrix(a.entries, b.entries)


def mix(states: Sequence[QuantumState], weights: Sequence[float]) -> DensityMatrix:
    """Convex combination sum_i w_i |psi_i><psi_i|."""
    if len(states) == 0 or len(states) != len(weights):
        raise ModelDefinitionError("need one weight per state and at least one state")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("mixture weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise DomainError(f"mixture weights sum to {w.sum()!r}, not 1")
    dim = states[0].dim
    for s in states:
        _check_dims(dim, s.dim)
    amps = np.stack([s.amplitudes for s in states])
    rho = np.einsum("k,ki,kj->ij", w, amps, amps.conj())
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho)


def dephasing_rates(op: HermitianOperator, coupling: float) -> np.ndarray:
    """Decay rates of density-matrix elements in the eigenbasis of ``op``.

    With H = 0 the element rho_ij (eigenbasis of ``op``) evolves as
    rho_ij(0) * exp(-R[i, j] t) where R[i, j] = coupling/2 * (l_i - l_j)**2.
    For a diagonal ``op`` rows follow the computational basis; otherwise they
    follow the ascending eigenvalue order of ``numpy.linalg.eigh``.
    """
    if coupling < 0:
        raise DomainError("coupling must be non-negative")
    if op.is_diagonal:
        ev = np.diagonal(op.entries).real
    else:
        ev = np.linalg.eigvalsh(op.entries)
    return 0.5 * coupling * (ev[:, None] - ev[None, :]) ** 2
