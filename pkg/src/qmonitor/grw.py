"""GRW-style spontaneous localization jumps and their flash record.

A jump of particle p multiplies the state by a Gaussian operator G_z
centred on lattice site z,

    G_z(s) = C exp(-d(z, s)^2 / (4 w^2)),   sum_z G_z^2 = identity,

with z drawn from the Born weights ||G_z psi||^2. Jumps occur at rate
``jump_rate`` per particle; between jumps the state evolves unitarily. The
ensemble obeys

    d rho/dt = -i [H, rho] + rate * sum_p (sum_z G_z^p rho G_z^p - rho).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .csl import LatticeConfig, lattice_distance, site_table
from .errors import IntegrationError, ModelDefinitionError, PreconditionError
from .hilbert import HermitianOperator, QuantumState
from .rng import BlockUniforms

MAX_JUMP_PROBABILITY = 0.1


@dataclass(frozen=True)
class FlashEvent:
    time: float
    particle: int
    center: int
    trajectory: int = 0


@dataclass(frozen=True)
class JumpModel:
    hamiltonian: HermitianOperator
    jump_rate: float
    localization_width: float
    lattice: LatticeConfig
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.jump_rate) or self.jump_rate < 0:
            raise ModelDefinitionError("jump_rate must be finite and >= 0")
        if not np.isfinite(self.localization_width) or self.localization_width <= 0:
            raise ModelDefinitionError("localization_width must be finite and > 0")
        if self.hamiltonian.dim != self.lattice.dim:
            raise ModelDefinitionError(
                f"Hamiltonian dim {self.hamiltonian.dim} does not match lattice dim {self.lattice.dim}")

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def n_particles(self) -> int:
        return self.lattice.n_particles

    def site_kernel(self) -> np.ndarray:
        """(n_sites, n_sites) array g[z, s] with sum_z g[z, s]^2 = 1."""
        n = self.lattice.n_sites
        z = np.arange(n)
        g = np.exp(-lattice_distance(n, z[:, None], z[None, :]) ** 2 / (4.0 * self.localization_width ** 2))
        return g / np.sqrt((g ** 2).sum(axis=0))[None, :]

    def localization_ops(self) -> np.ndarray:
        """(N, n_sites, dim) diagonals of G_z for every particle and centre."""
        if "ops" not in self._cache:
            g = self.site_kernel()
            table = site_table(self.lattice)
            ops = np.stack([g[:, table[:, p]] for p in range(self.n_particles)])
            ops.setflags(write=False)
            self._cache["ops"] = ops
        return self._cache["ops"]

    def propagator(self, dt: float) -> np.ndarray:
        key = ("U", dt)
        if key not in self._cache:
            vals, vecs = np.linalg.eigh(self.hamiltonian.entries)
            self._cache[key] = (vecs * np.exp(-1j * vals * dt)[None, :]) @ vecs.conj().T
        return self._cache[key]

    def me_rhs(self):
        h = self.hamiltonian.entries
        ops = self.localization_ops()
        overlap = np.einsum("pzi,pzj->ij", ops, ops) - self.n_particles
        damp = self.jump_rate * overlap

        def rhs(rho):
            return -1j * (h @ rho - rho @ h) + damp * rho
        return rhs


def grw_me_derivative(rho, model: JumpModel) -> np.ndarray:
    from .me import me_derivative
    return me_derivative(rho, model)


def _check_dt(model: JumpModel, dt: float):
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    p = model.jump_rate * model.n_particles * dt
    if p >= MAX_JUMP_PROBABILITY:
        raise PreconditionError(f"jump probability per step {p:.3g} must stay below {MAX_JUMP_PROBABILITY}")


def _jump_rows(model: JumpModel, psi: np.ndarray, rows: np.ndarray, u_particle: np.ndarray,
               u_center: np.ndarray):
    """Apply jumps to ``psi[rows]`` in place; return (particles, centres)."""
    ops = model.localization_ops()
    particles = np.minimum((u_particle * model.n_particles).astype(int), model.n_particles - 1)
    prob = np.abs(psi[rows]) ** 2
    centers = np.empty(len(rows), dtype=int)
    for r, (row, p) in enumerate(zip(rows, particles)):
        weights = ops[p] ** 2 @ prob[r]
        cdf = np.cumsum(weights)
        total = cdf[-1]
        if not total > 0:
            raise IntegrationError("post-jump norm vanished")
        z = int(np.searchsorted(cdf, u_center[r] * total, side="right"))
        z = min(z, len(cdf) - 1)
        centers[r] = z
        new = psi[row] * ops[p, z]
        psi[row] = new / np.linalg.norm(new)
    return particles, centers


def grw_step(state: QuantumState, model: JumpModel, dt: float, rng: np.random.Generator,
             time: float = 0.0):
    """Jump decision followed by the unitary step; returns (state, flash or None)."""
    _check_dt(model, dt)
    if state.dim != model.dim:
        raise ModelDefinitionError(f"state dim {state.dim} does not match model dim {model.dim}")
    u = rng.random(3)
    psi = state.amplitudes[None, :].copy()
    flash = None
    if u[0] < model.jump_rate * model.n_particles * dt:
        parts, centers = _jump_rows(model, psi, np.array([0]), u[1:2], u[2:3])
        flash = FlashEvent(time, int(parts[0]), int(centers[0]))
    psi = psi @ model.propagator(dt).T
    return QuantumState(psi[0] / np.linalg.norm(psi[0])), flash


def run_grw_block(model: JumpModel, psi0: np.ndarray, dt: float, steps: int, seed: int,
                  first_index: int, samples: np.ndarray, chunk: int = 256,
                  keep_snapshots: bool = False):
    """Vectorized jump trajectories for one block; mirrors ``sse.run_block``."""
    from .sse import SampleSums

    _check_dt(model, dt)
    b = psi0.shape[0]
    uniforms = BlockUniforms(seed, range(first_index, first_index + b), 3)
    acc = SampleSums(len(samples), model.dim, 0)
    snaps = np.empty((b, len(samples), model.dim), dtype=np.complex128) if keep_snapshots else None
    flashes: list[FlashEvent] = []
    u_t = model.propagator(dt).T
    p_jump = model.jump_rate * model.n_particles * dt
    psi = psi0.copy()
    empty = np.zeros((b, 0))
    acc.add(0, psi, empty)
    if keep_snapshots:
        snaps[:, 0] = psi
    j, n = 1, 0
    while n < steps:
        m = min(chunk, steps - n)
        draws = uniforms.draw(m)
        for r in range(m):
            u = draws[r]
            rows = np.flatnonzero(u[:, 0] < p_jump)
            if len(rows):
                parts, centers = _jump_rows(model, psi, rows, u[rows, 1], u[rows, 2])
                t = n * dt
                flashes.extend(FlashEvent(t, int(p), int(c), first_index + int(i))
                               for i, p, c in zip(rows, parts, centers))
            psi = psi @ u_t
            psi /= np.linalg.norm(psi, axis=1)[:, None]
            n += 1
            if j < len(samples) and samples[j] == n:
                acc.add(j, psi, empty)
                if keep_snapshots:
                    snaps[:, j] = psi
                j += 1
    return acc, snaps, psi, flashes
