from __future__ import annotations

import numpy as np
import pytest

from qmonitor import (HermitianOperator, ModelDefinitionError, MonitoringModel, PreconditionError,
                      QuantumState, run_ensemble, run_trajectory, sse_step, variance)
from qmonitor.sse import sample_steps

from conftest import PLUS, SX, SZ, random_hermitian, random_state


def test_eigenstate_is_fixed_point(dephasing_model, up):
    new, signal = sse_step(up, dephasing_model, 1e-3, [0.37])
    assert np.array_equal(new.amplitudes, up.amplitudes)
    assert signal[0] == pytest.approx(1e-3 + 0.37 / 2)


def test_unmonitored_step_is_unitary_euler():
    rng = np.random.default_rng(0)
    h = random_hermitian(rng, 3)
    model = MonitoringModel.build(h, [np.diag([1.0, 0.0, -1.0])], [0.0])
    psi = random_state(rng, 3)
    new, _ = sse_step(QuantumState(psi), model, 1e-3, [0.5])
    euler = psi - 1j * 1e-3 * (h @ psi)
    assert np.allclose(new.amplitudes, euler / np.linalg.norm(euler), atol=1e-15)


def test_symmetric_superposition_unchanged_without_noise(dephasing_model):
    new, _ = sse_step(QuantumState(PLUS), dephasing_model, 1e-3, [0.0])
    assert np.allclose(new.amplitudes, PLUS, atol=1e-15)


def test_drift_matches_direct_matrix_arithmetic():
    rng = np.random.default_rng(1)
    h, l1, l2 = (random_hermitian(rng, 3) for _ in range(3))
    lam = np.array([0.4, 1.3])
    model = MonitoringModel.build(h, [l1, l2], lam)
    psi = random_state(rng, 3)
    dt, dw = 1e-3, np.array([0.02, -0.01])
    new, signal = sse_step(QuantumState(psi), model, dt, dw)
    out = psi - 1j * dt * h @ psi
    for k, l in enumerate((l1, l2)):
        a = np.real(np.vdot(psi, l @ psi))
        c = l - a * np.eye(3)
        out = out - dt * lam[k] / 2 * c @ c @ psi + np.sqrt(lam[k]) * dw[k] * c @ psi
        assert signal[k] == pytest.approx(a * dt + dw[k] / (2 * np.sqrt(lam[k])), abs=1e-15)
    assert np.allclose(new.amplitudes, out / np.linalg.norm(out), atol=1e-14)


def test_norm_preserved_each_step(qubit_model, up):
    res = run_trajectory(qubit_model, up, 1e-3, 500, seed=2, stride=1)
    norms = np.linalg.norm(res.snapshots, axis=1)
    assert np.max(np.abs(norms - 1)) < 1e-12


def test_preconditions(qubit_model, up):
    with pytest.raises(PreconditionError):
        run_trajectory(qubit_model, up, 1e-3, 0, seed=0)
    with pytest.raises(PreconditionError):
        run_trajectory(qubit_model, up, 0.0, 10, seed=0)
    with pytest.raises(ModelDefinitionError):
        run_trajectory(qubit_model, QuantumState.basis(3, 0), 1e-3, 10, seed=0)
    with pytest.raises(ModelDefinitionError):
        sse_step(up, qubit_model, 1e-3, [0.1, 0.2])


def test_localization_long_time(dephasing_model):
    res = run_trajectory(dephasing_model, QuantumState(PLUS), 1e-3, 10000, seed=3, stride=10000)
    assert variance(res.final_state, HermitianOperator(SZ)) < 1e-4


def test_determinism(qubit_model, up):
    a = run_trajectory(qubit_model, up, 1e-3, 300, seed=9, trajectory_index=4)
    b = run_trajectory(qubit_model, up, 1e-3, 300, seed=9, trajectory_index=4)
    c = run_trajectory(qubit_model, up, 1e-3, 300, seed=9, trajectory_index=5)
    assert np.array_equal(a.signal.values, b.signal.values)
    assert np.array_equal(a.snapshots, b.snapshots)
    assert not np.array_equal(a.signal.values, c.signal.values)


def test_trajectory_matches_ensemble_row(qubit_model, up):
    """A single trajectory and the same index inside a vectorized block agree."""
    single = run_trajectory(qubit_model, up, 1e-3, 200, seed=5, trajectory_index=3, stride=50)
    rep = run_ensemble(qubit_model, up, 1e-3, 200, 8, seed=5, stride=50, reference=None,
                       keep_snapshots=True)
    assert np.allclose(rep.snapshots[3], single.snapshots, atol=1e-13)


def test_sample_steps():
    assert list(sample_steps(10, 4)) == [0, 4, 8, 10]
    assert list(sample_steps(8, 4)) == [0, 4, 8]


def test_mean_variance_of_l_decreases(dephasing_model):
    psi0 = QuantumState.from_amplitudes([np.sqrt(0.3), np.sqrt(0.7)])
    rep = run_ensemble(dephasing_model, psi0, 1e-3, 3000, 2000, seed=4, stride=300, reference=None,
                       keep_snapshots=True)
    p0 = np.abs(rep.snapshots[:, :, 0]) ** 2
    mean_var = np.mean(1 - (2 * p0 - 1) ** 2, axis=0)
    se = np.std(1 - (2 * p0 - 1) ** 2, axis=0, ddof=1) / np.sqrt(2000)
    assert np.all(np.diff(mean_var) <= 3 * se[1:])
    assert mean_var[-1] < 0.05 * mean_var[0]


def test_signal_mean_and_noise_power(qubit_model, up):
    dt, steps, n = 1e-3, 200, 400
    recs = [run_trajectory(qubit_model, up, dt, steps, seed=6, trajectory_index=i,
                           keep_snapshots=False).signal for i in range(n)]
    values = np.stack([r.values[0] for r in recs])
    fields = np.stack([r.mean_field[0] for r in recs])
    # Time-averaging over the second half shrinks the noise enough to resolve the mean.
    s_mean = values[:, 100:].mean(axis=1)
    m_mean = fields[:, 100:].mean(axis=1)
    diff = s_mean - m_mean
    assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / np.sqrt(n)
    noise_var = np.var(values - fields, ddof=1)
    assert noise_var == pytest.approx(1 / (4 * 1.0 * dt), rel=0.02)


def test_zero_coupling_signal_is_nan():
    model = MonitoringModel.build(0.5 * SX, [SZ, SX], [1.0, 0.0])
    res = run_trajectory(model, QuantumState.basis(2, 0), 1e-3, 20, seed=0)
    assert np.all(np.isnan(res.signal.values[1]))
    assert np.all(np.isfinite(res.signal.values[0]))
