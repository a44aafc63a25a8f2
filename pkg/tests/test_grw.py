from __future__ import annotations

import numpy as np
import pytest

from qmonitor import (DensityMatrix, JumpModel, LatticeConfig, ModelDefinitionError,
                      MonitoringModel, PreconditionError, QuantumState, grw_me_derivative, grw_step,
                      run_ensemble, run_me, trace_distance)
from qmonitor.csl import basis_index, lattice_hopping
from qmonitor.ensemble import flash_counts
from qmonitor.rng import stream


def _model(n=12, rate=1.0, width=1.0, hopping=0.0, masses=(1.0,)):
    cfg = LatticeConfig(n, masses, 1.0)
    return JumpModel(lattice_hopping(cfg, hopping), rate, width, cfg)


def _sites(model, sites):
    psi = np.zeros(model.dim)
    for s in sites:
        psi[basis_index(model.lattice, [s])] = 1.0
    return QuantumState.from_amplitudes(psi)


def test_kernel_normalization():
    m = _model(width=1.7)
    ops = m.localization_ops()
    assert np.allclose((ops[0] ** 2).sum(axis=0), 1.0, atol=1e-14)


def test_parameter_validation():
    with pytest.raises(ModelDefinitionError):
        _model(rate=-1.0)
    with pytest.raises(ModelDefinitionError):
        _model(width=0.0)
    with pytest.raises(PreconditionError):
        grw_step(_sites(_model(), [0]), _model(rate=200.0), 1e-3, stream(0, 0))


def test_zero_rate_is_unitary():
    m = _model(rate=0.0, hopping=0.5)
    psi0 = _sites(m, [3])
    rep = run_ensemble(m, psi0, 1e-3, 1000, 32, seed=0, stride=1000, keep_final=True)
    assert rep.flashes == []
    vals, vecs = np.linalg.eigh(m.hamiltonian.entries)
    exact = vecs @ (np.exp(-1j * vals) * (vecs.conj().T @ psi0.amplitudes))
    assert np.allclose(rep.final_states[0], exact, atol=1e-12)


def test_localized_state_flashes_at_its_site():
    m = _model(rate=50.0, width=0.1)
    rep = run_ensemble(m, _sites(m, [5]), 1e-3, 500, 64, seed=1, stride=500)
    assert len(rep.flashes) > 100
    assert {f.center for f in rep.flashes} == {5}


def test_single_step_jump_and_flash_time():
    m = _model(rate=99.0, width=0.1)
    rng = stream(3, 0)
    flashes = []
    state = _sites(m, [2])
    for n in range(200):
        state, flash = grw_step(state, m, 1e-3, rng, time=n * 1e-3)
        if flash:
            flashes.append(flash)
    assert flashes and all(f.center == 2 and 0 <= f.time < 0.2 for f in flashes)


def test_me_rate_zero_is_von_neumann():
    m = _model(rate=0.0, hopping=0.3, n=5)
    rho = DensityMatrix.from_state(_sites(m, [0, 2])).entries
    h = m.hamiltonian.entries
    assert np.allclose(grw_me_derivative(rho, m), -1j * (h @ rho - rho @ h), atol=1e-15)


def test_me_diagonal_states_fixed_for_narrow_width():
    m = _model(width=0.05, n=6)
    rho = np.diag([0.2, 0.3, 0.1, 0.1, 0.2, 0.1]).astype(complex)
    assert np.max(np.abs(grw_me_derivative(rho, m))) < 1e-12


def test_far_offdiagonal_decays_at_jump_rate():
    m = _model(rate=0.7, width=0.5, n=12)
    rho = DensityMatrix.from_state(_sites(m, [1, 7])).entries
    d = grw_me_derivative(rho, m)
    assert d[1, 7] / rho[1, 7] == pytest.approx(-0.7, rel=1e-6)


def test_flash_counts_poisson_small():
    m = _model(rate=1.0, hopping=0.5)
    rep = run_ensemble(m, _sites(m, [0, 6]), 1e-3, 2000, 2000, seed=2, stride=500)
    fc = flash_counts(rep.flashes, 2000, m, 2.0)
    assert abs(fc.mean_z) < 3 and abs(fc.variance_z) < 3
    assert all(0 <= f.time < 2.0 and 0 <= f.center < 12 for f in rep.flashes)


def test_first_flash_splits_between_distant_sites():
    m = _model(rate=5.0, width=0.5)
    M = 4000
    rep = run_ensemble(m, _sites(m, [2, 8]), 1e-3, 1500, M, seed=4, stride=1500)
    first = {}
    for f in rep.flashes:
        first.setdefault(f.trajectory, f.center)
    centers = np.array(list(first.values()))
    near_first = np.abs(centers - 2) < np.abs(centers - 8)
    frac = near_first.mean()
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / len(centers))


def test_two_particle_lattice_runs():
    m = _model(n=4, masses=(1.0, 2.0), hopping=0.2)
    psi = np.zeros(16)
    psi[[basis_index(m.lattice, [0, 1]), basis_index(m.lattice, [2, 3])]] = 1
    rep = run_ensemble(m, QuantumState.from_amplitudes(psi), 1e-3, 500, 500, seed=3, stride=100)
    assert rep.max_distance < 0.05
    assert {f.particle for f in rep.flashes} == {0, 1}


def test_diffusive_limit_is_approached():
    """rate -> kappa rate, width -> sqrt(kappa) width approaches the position-diffusion ME."""
    n, rate0, width0 = 16, 0.5, 0.5
    cfg = LatticeConfig(n, (1.0,), 1.0)
    h = lattice_hopping(cfg, 0.2)
    diffusive = MonitoringModel.build(h, [np.diag(np.arange(n, dtype=float))],
                                      [rate0 / (4 * width0 ** 2)])
    psi = np.zeros(n)
    psi[[6, 9]] = 1
    rho0 = DensityMatrix.from_state(QuantumState.from_amplitudes(psi))
    target = DensityMatrix(run_me(diffusive, rho0, dt=1e-3, steps=1000, stride=1000).array[-1], tol=1e-6)
    distances = []
    for kappa in (1, 4, 16):
        jm = JumpModel(h, rate0 * kappa, width0 * np.sqrt(kappa), cfg)
        rho = run_me(jm, rho0, dt=1e-3, steps=1000, stride=1000).array[-1]
        distances.append(trace_distance(DensityMatrix(rho, tol=1e-6), target))
    assert distances[0] > distances[1] > distances[2]
