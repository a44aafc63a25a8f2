"""Smeared mass-density operators on a periodic 1-D lattice.

Distinguishable particles live on ``n_sites`` sites; the product basis index
of a configuration (s_0, ..., s_{N-1}) is sum_p s_p * n_sites**(N-1-p). Each
lattice cell c carries the diagonal operator

    F_c = sum_p m_p sum_s G(d(c, s)) P_{p,s},   G(d) = exp(-d^2 / (2 sigma^2))

with d the minimum-image distance. Monitoring every F_c with coupling
lambda = gamma / m0^2 turns the generic SSE, master equation and signal
into their CSL counterparts. All lengths are in lattice units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .hilbert import HermitianOperator
from .model import Channel, FeedbackSpec, MonitoringModel

MAX_SITES = 16
MAX_DIM = 256


@dataclass(frozen=True)
class LatticeConfig:
    n_sites: int
    masses: tuple[float, ...] = (1.0,)
    smearing_sigma: float = 1.0
    gamma_over_m0sq: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        problems = []
        if not isinstance(self.n_sites, (int, np.integer)) or not 2 <= self.n_sites <= MAX_SITES:
            problems.append(f"n_sites must be an integer in [2, {MAX_SITES}]")
        if not self.masses:
            problems.append("at least one particle is required")
        elif any(not np.isfinite(m) or m <= 0 for m in self.masses):
            problems.append("particle masses must be positive")
        if not np.isfinite(self.smearing_sigma) or self.smearing_sigma <= 0:
            problems.append("smearing_sigma must be positive")
        elif not problems and self.smearing_sigma >= self.n_sites / 2:
            problems.append("smearing_sigma must be smaller than n_sites/2")
        if not np.isfinite(self.gamma_over_m0sq) or self.gamma_over_m0sq < 0:
            problems.append("gamma_over_m0sq must be >= 0")
        if not problems and self.dim > MAX_DIM:
            problems.append(f"Hilbert dimension {self.dim} exceeds {MAX_DIM}")
        if problems:
            raise ConfigError(problems)

    @property
    def n_particles(self) -> int:
        return len(self.masses)

    @property
    def dim(self) -> int:
        return int(self.n_sites) ** self.n_particles


def lattice_distance(n_sites: int, a, b):
    """Minimum-image distance on a ring of ``n_sites`` sites."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % n_sites
    return np.minimum(d, n_sites - d)


def site_table(config: LatticeConfig) -> np.ndarray:
    """(dim, N) array: site of every particle in each product basis state."""
    grids = np.indices((config.n_sites,) * config.n_particles).reshape(config.n_particles, -1)
    return grids.T.copy()


def basis_index(config: LatticeConfig, sites: Sequence[int]) -> int:
    if len(sites) != config.n_particles:
        raise DomainError(f"expected {config.n_particles} site labels, got {len(sites)}")
    idx = 0
    for s in sites:
        if not 0 <= s < config.n_sites:
            raise DomainError(f"site {s} is off the lattice")
        idx = idx * config.n_sites + int(s)
    return idx


def smearing_kernel(config: LatticeConfig, distance) -> np.ndarray:
    return np.exp(-np.asarray(distance, dtype=float) ** 2 / (2.0 * config.smearing_sigma ** 2))


@dataclass(frozen=True)
class MassDensityFamily:
    """One diagonal operator per cell; ``values[c, i]`` is F_c on basis state i."""

    ops: tuple[HermitianOperator, ...]
    values: np.ndarray
    kernel_sum: float

    def __len__(self):
        return len(self.ops)


def build_mass_density_ops(config: LatticeConfig) -> MassDensityFamily:
    table = site_table(config)
    cells = np.arange(config.n_sites)
    values = np.zeros((config.n_sites, config.dim))
    for p, m in enumerate(config.masses):
        dist = lattice_distance(config.n_sites, cells[:, None], table[None, :, p])
        values += m * smearing_kernel(config, dist)
    values.setflags(write=False)
    ops = tuple(HermitianOperator.diagonal(v) for v in values)
    kernel_sum = float(smearing_kernel(config, lattice_distance(config.n_sites, cells, 0)).sum())
    return MassDensityFamily(ops, values, kernel_sum)


def lattice_hopping(config: LatticeConfig, hopping: float) -> HermitianOperator:
    """Nearest-neighbour ring hopping -J sum_p (|s+1><s| + h.c.) for each particle."""
    n, N = config.n_sites, config.n_particles
    shift = np.roll(np.eye(n), 1, axis=0)
    single = -hopping * (shift + shift.T)
    if n == 2:
        single = -hopping * np.array([[0.0, 1.0], [1.0, 0.0]])
    h = np.zeros((config.dim, config.dim))
    for p in range(N):
        term = np.ones((1, 1))
        for q in range(N):
            term = np.kron(term, single if q == p else np.eye(n))
        h += term
    return HermitianOperator(h)


def csl_model(config: LatticeConfig, hamiltonian: HermitianOperator | None = None,
              feedback: FeedbackSpec | None = None) -> MonitoringModel:
    """Monitoring model whose channels are the smeared mass densities."""
    family = build_mass_density_ops(config)
    h = hamiltonian if hamiltonian is not None else HermitianOperator(np.zeros((config.dim, config.dim)))
    chans = tuple(Channel(op, float(config.gamma_over_m0sq)) for op in family.ops)
    return MonitoringModel(h, chans, feedback)


def _label(config: LatticeConfig, state) -> int:
    if isinstance(state, (int, np.integer)):
        if not 0 <= state < config.dim:
            raise DomainError(f"basis index {state} out of range")
        return int(state)
    return basis_index(config, state)


def csl_decoherence_rate(config: LatticeConfig, basis_state_i, basis_state_j) -> float:
    """Decay rate of rho_ij under the CSL master equation with H = 0.

    Basis states are product-basis indices or tuples of particle sites.
    """
    values = build_mass_density_ops(config).values
    i, j = _label(config, basis_state_i), _label(config, basis_state_j)
    diff = values[:, i] - values[:, j]
    return float(0.5 * config.gamma_over_m0sq * np.sum(diff ** 2))
