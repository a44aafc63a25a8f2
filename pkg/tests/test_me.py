from __future__ import annotations

import numpy as np
import pytest

from qmonitor import (DensityMatrix, FeedbackSpec, IntegrationError, LatticeConfig,
                      ModelDefinitionError, MonitoringModel, PreconditionError, QuantumState,
                      csl_decoherence_rate, csl_model, me_derivative, run_me)
from qmonitor.csl import basis_index
from qmonitor.ensemble import fit_decay_rate
from qmonitor.me import integrate_rk4, reference_solution

from conftest import SZ, random_hermitian


def test_maximally_mixed_is_fixed_point():
    model = MonitoringModel.build(np.zeros((3, 3)), [np.diag([1.0, 2.0, 5.0])], [0.7])
    assert np.all(me_derivative(DensityMatrix.maximally_mixed(3), model) == 0)


def test_dephasing_derivative_element(dephasing_model):
    rho = DensityMatrix(np.full((2, 2), 0.5))
    assert me_derivative(rho, dephasing_model)[0, 1] == pytest.approx(-1.0)


def test_unmonitored_derivative_is_von_neumann():
    rng = np.random.default_rng(3)
    h = random_hermitian(rng, 4)
    model = MonitoringModel.build(h, [np.eye(4)], [0.0])
    v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    rho = np.outer(v, v.conj()) / np.vdot(v, v).real
    d = me_derivative(rho, model)
    assert np.allclose(d, -1j * (h @ rho - rho @ h), atol=1e-14)
    assert abs(np.trace(d)) < 1e-13
    assert np.allclose(d, d.conj().T, atol=1e-14)


def test_trivial_model_is_constant():
    model = MonitoringModel.build(np.zeros((2, 2)), [SZ], [0.0])
    rho0 = DensityMatrix(np.array([[0.6, 0.2 + 0.1j], [0.2 - 0.1j, 0.4]]))
    sol = run_me(model, rho0, steps=100, stride=10)
    assert np.all(sol.array == rho0.entries)


def test_dephasing_closed_form(dephasing_model):
    rho0 = DensityMatrix(np.full((2, 2), 0.5))
    sol = run_me(dephasing_model, rho0, dt=1e-4, steps=10000, stride=10000)
    assert sol.times[-1] == pytest.approx(1.0)
    assert sol.element(0, 1)[-1].real == pytest.approx(0.0676676, abs=5e-8)


def test_csl_offdiagonal_rate_matches_analytic():
    cfg = LatticeConfig(12, (1.0,), 0.5, 1.0)
    model = csl_model(cfg)
    i, j = basis_index(cfg, [2]), basis_index(cfg, [8])
    psi = np.zeros(12)
    psi[[i, j]] = 1 / np.sqrt(2)
    sol = run_me(model, DensityMatrix.from_state(QuantumState(psi)), dt=1e-3, steps=1000, stride=50)
    fitted = fit_decay_rate(sol.times, sol.element(i, j))
    assert fitted == pytest.approx(csl_decoherence_rate(cfg, i, j), rel=1e-3)


def test_linearity():
    rng = np.random.default_rng(4)
    model = MonitoringModel.build(random_hermitian(rng, 3), [random_hermitian(rng, 3)], [0.8])
    a = DensityMatrix(np.diag([1.0, 0.0, 0.0]))
    b = DensityMatrix.maximally_mixed(3)
    alpha = 0.3
    c = DensityMatrix(alpha * a.entries + (1 - alpha) * b.entries)
    sa, sb, sc = (run_me(model, r, dt=1e-3, steps=1000, stride=100).array for r in (a, b, c))
    assert np.max(np.abs(sc - (alpha * sa + (1 - alpha) * sb))) < 1e-8


def test_trace_and_hermiticity_preserved():
    rng = np.random.default_rng(5)
    model = MonitoringModel.build(random_hermitian(rng, 4), [random_hermitian(rng, 4)], [1.0])
    sol = run_me(model, DensityMatrix.maximally_mixed(4), dt=1e-3, steps=2000, stride=100)
    for rho in sol.array:
        assert abs(np.trace(rho) - 1) < 1e-9
        assert np.max(np.abs(rho - rho.conj().T)) < 1e-9
        assert np.min(np.linalg.eigvalsh(rho)) > -1e-6


def test_run_me_rejects_feedback(qubit_model, rho_up):
    with pytest.raises(PreconditionError):
        run_me(qubit_model.with_feedback(FeedbackSpec("signal", 1.0)), rho_up, steps=10)


def test_run_me_preconditions(qubit_model, rho_up):
    with pytest.raises(PreconditionError):
        run_me(qubit_model, rho_up, dt=-1.0, steps=10)
    with pytest.raises(ModelDefinitionError):
        run_me(qubit_model, DensityMatrix.maximally_mixed(3), steps=10)


def test_rk4_blowup_is_reported():
    with pytest.raises(IntegrationError):
        integrate_rk4(lambda r: 1e3 * r, np.diag([1.0, 0.0]).astype(complex), 0.1, 10)


def test_reference_solution_aligns_with_sse_grid(qubit_model, rho_up):
    sol = reference_solution(qubit_model, rho_up, dt_sse=1e-3, steps_sse=200, stride_sse=50)
    assert np.allclose(sol.times, [0, 0.05, 0.1, 0.15, 0.2])
    direct = run_me(qubit_model, rho_up, dt=1e-4, steps=2000, stride=500)
    assert np.max(np.abs(sol.array - direct.array)) < 1e-14


def test_qubit_oscillation_is_damped(qubit_model, rho_up):
    sol = run_me(qubit_model, rho_up, dt=1e-3, steps=20000, stride=1000)
    assert sol.array[-1][0, 0].real == pytest.approx(0.5, abs=1e-3)
