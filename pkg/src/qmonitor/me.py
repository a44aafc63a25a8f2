"""Fixed-step RK4 integration of the decoherence master equation.

    d rho/dt = -i [H, rho] - sum_k lambda_k/2 [L_k, [L_k, rho]]

The feedback-modified equation is the same equation on the model returned
by :func:`qmonitor.feedback.modified_me_params`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import IntegrationError, ModelDefinitionError, PreconditionError
from .hilbert import DensityMatrix
from .model import MonitoringModel

DEFAULT_ME_DT = 1e-4


def monitoring_rhs(model: MonitoringModel) -> Callable[[np.ndarray], np.ndarray]:
    """Right-hand side of the master equation as a function of a raw matrix."""
    h = model.hamiltonian.entries
    lam = model.couplings
    ops = model.operator_stack()
    if model.all_diagonal:
        diag = np.real(np.stack([np.diagonal(o) for o in ops])) if len(ops) else np.zeros((0, model.dim))
        gaps = diag[:, :, None] - diag[:, None, :]
        decay = np.einsum("k,kij->ij", 0.5 * lam, gaps ** 2)

        def rhs(rho):
            return -1j * (h @ rho - rho @ h) - decay * rho
    else:
        active = [k for k in range(len(lam)) if lam[k] != 0.0]
        ops = ops[active]
        lam = lam[active]
        half_sq = np.einsum("k,kij,kjl->il", 0.5 * lam, ops, ops) if active else np.zeros_like(h)
        h_eff = h - 1j * half_sq  # -i H_eff rho + i rho H_eff^dag

        def rhs(rho):
            out = -1j * (h_eff @ rho - rho @ h_eff.conj().T)
            for k in range(len(lam)):
                out += lam[k] * (ops[k] @ rho @ ops[k])
            return out
    return rhs


def _rhs_for(model) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(model, MonitoringModel):
        return monitoring_rhs(model)
    me_rhs = getattr(model, "me_rhs", None)
    if me_rhs is None:
        raise ModelDefinitionError(f"no master equation known for {type(model).__name__}")
    return me_rhs()


def me_derivative(rho, model) -> np.ndarray:
    """d rho/dt for a density matrix (or raw array) under ``model``."""
    m = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=np.complex128)
    if m.shape != (model.dim, model.dim):
        raise ModelDefinitionError(f"density matrix shape {m.shape} does not match model dim {model.dim}")
    out = _rhs_for(model)(m)
    return 0.5 * (out + out.conj().T)


@dataclass
class MESolution:
    times: np.ndarray
    states: list[DensityMatrix]

    @property
    def array(self) -> np.ndarray:
        return np.stack([s.entries for s in self.states])

    def element(self, i: int, j: int) -> np.ndarray:
        return np.array([s.entries[i, j] for s in self.states])


def integrate_rk4(rhs, rho0: np.ndarray, dt: float, steps: int, stride: int = 1):
    """Classical RK4 with per-step trace renormalization.

    Returns (sample step indices, sampled matrices).
    """
    from .sse import sample_steps

    samples = sample_steps(steps, stride)
    out = np.empty((len(samples),) + rho0.shape, dtype=np.complex128)
    rho = rho0.astype(np.complex128, copy=True)
    out[0] = rho
    j = 1
    half = 0.5 * dt
    for n in range(steps):
        k1 = rhs(rho)
        k2 = rhs(rho + half * k1)
        k3 = rhs(rho + half * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        tr = np.trace(rho).real
        if not np.isfinite(tr) or abs(tr - 1.0) > 1e-9:
            raise IntegrationError(f"trace drift {tr - 1.0:.3e} at step {n} exceeds 1e-9")
        rho = rho / tr
        if j < len(samples) and samples[j] == n + 1:
            out[j] = rho
            j += 1
    return samples, out


def run_me(model, rho0, dt: float = DEFAULT_ME_DT, steps: int = 1, stride: int = 1) -> MESolution:
    """Integrate the master equation of ``model`` from ``rho0``.

    Works for monitoring models (with or without feedback-absorbed
    parameters) and for jump models, which supply their own dissipator.
    """
    if steps < 1:
        raise PreconditionError("steps must be >= 1")
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    if isinstance(model, MonitoringModel) and model.feedback is not None and model.feedback.gain != 0.0:
        raise PreconditionError("models with feedback have no master equation; use modified_me_params")
    r0 = rho0.entries if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=np.complex128)
    if r0.shape != (model.dim, model.dim):
        raise ModelDefinitionError(f"initial density matrix shape {r0.shape} does not match dim {model.dim}")
    samples, mats = integrate_rk4(_rhs_for(model), r0, dt, steps, stride)
    states = []
    for n, m in zip(samples, mats):
        lo = np.linalg.eigvalsh(m)[0]
        if lo < -1e-6:
            raise IntegrationError(f"positivity violated (eigenvalue {lo:.3e}) at step {n}; reduce dt")
        states.append(DensityMatrix(m, tol=1e-6 if lo < -1e-7 else 1e-7))
    return MESolution(samples * dt, states)


def reference_solution(model, rho0, dt_sse: float, steps_sse: int, stride_sse: int,
                       me_dt: float = DEFAULT_ME_DT) -> MESolution:
    """ME solution sampled at exactly the times of an SSE run.

    The ME step divides the SSE step so the sample grids coincide.
    """
    sub = max(1, int(np.ceil(dt_sse / me_dt - 1e-9)))
    return run_me(model, rho0, dt_sse / sub, steps_sse * sub, stride_sse * sub)
