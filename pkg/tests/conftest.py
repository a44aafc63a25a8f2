from __future__ import annotations

import numpy as np
import pytest

from qmonitor import DensityMatrix, MonitoringModel, QuantumState

SZ = np.diag([1.0, -1.0])
SX = np.array([[0.0, 1.0], [1.0, 0.0]])
PLUS = np.array([1.0, 1.0]) / np.sqrt(2)
MINUS = np.array([1.0, -1.0]) / np.sqrt(2)


def random_state(rng, dim):
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_hermitian(rng, dim):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (a + a.conj().T) / 2


@pytest.fixture
def qubit_model():
    """Monitored qubit: L = sigma_z, lambda = 1, H = sigma_x / 2."""
    return MonitoringModel.build(0.5 * SX, [SZ], [1.0])


@pytest.fixture
def dephasing_model():
    return MonitoringModel.build(np.zeros((2, 2)), [SZ], [1.0])


@pytest.fixture
def up():
    return QuantumState.basis(2, 0)


@pytest.fixture
def rho_up(up):
    return DensityMatrix.from_state(up)


# --- acceptance summary -------------------------------------------------------

_OUTCOMES: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def check(number: int, title: str, ok: bool, detail: str):
        _OUTCOMES[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}): {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        title, ok, detail = _OUTCOMES[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:2d}. {title}: {detail}")
