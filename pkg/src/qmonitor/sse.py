"""Euler-Maruyama integration of the diffusive stochastic Schroedinger equation.

One step with channels (L_k, lambda_k), a_k = <L_k>:

    psi' = psi + [-i H psi - sum_k lambda_k/2 (L_k - a_k)^2 psi] dt
               + sum_k sqrt(lambda_k) (L_k - a_k) psi dW_k

followed by renormalization. The signal increment recorded for channel k is
``a_k dt + dW_k / (2 sqrt(lambda_k))``. The same kernel advances a single
state or a whole block of trajectories stored as rows of a (B, d) array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrationBlowupError, ModelDefinitionError, PreconditionError
from .feedback import FeedbackOperator
from .hilbert import QuantumState
from .model import MonitoringModel
from .rng import BlockNoise, NoiseRealization, check_seed


class SSEKernel:
    """Precomputed operator stacks for stepping a (B, d) batch of states."""

    def __init__(self, model: MonitoringModel):
        self.model = model
        self.dim = model.dim
        self.n_channels = len(model.channels)
        lam = model.couplings
        self.lam = lam
        self.sqrt_lam = np.sqrt(lam)
        self.h_t = np.ascontiguousarray(model.hamiltonian.entries.T)
        ops = model.operator_stack()
        self.diagonal = model.all_diagonal
        if self.diagonal:
            self.ldiag = np.real(np.stack([np.diagonal(o) for o in ops])) if len(ops) else \
                np.zeros((0, self.dim))
            self.ldiag2 = self.ldiag ** 2
            self.half_lam_l2 = (0.5 * lam) @ self.ldiag2
        else:
            d, k = self.dim, self.n_channels
            # psi @ stack gives (L_k psi)^T for all k at once.
            self.l_stack = np.ascontiguousarray(np.concatenate([o.T for o in ops], axis=1))
            self.l2_stack = np.ascontiguousarray(np.concatenate([(o @ o).T for o in ops], axis=1))
            self._shape = (d, k)
        with np.errstate(divide="ignore"):
            self.signal_scale = np.where(lam > 0, 1.0 / (2.0 * np.sqrt(lam)), np.nan)

        fb = model.feedback
        self.feedback = fb
        self.fb_op = None
        if fb is not None and fb.gain != 0.0:
            chans = model.feedback_channels
            if fb.mode == "signal" and np.any(lam[list(chans)] == 0):
                raise DomainError("signal feedback from an unmonitored channel (coupling 0) is undefined")
            self.fb_channels = list(chans)
            self.fb_op = FeedbackOperator(model, fb.gain, chans)

    def apply_ops(self, psi: np.ndarray):
        """Return (L_k psi, L_k^2 psi) as (B, K, d) arrays."""
        if self.diagonal:
            return psi[:, None, :] * self.ldiag[None], psi[:, None, :] * self.ldiag2[None]
        b = psi.shape[0]
        d, k = self._shape
        lp = (psi @ self.l_stack).reshape(b, k, d)
        l2p = (psi @ self.l2_stack).reshape(b, k, d)
        return lp, l2p

    def expectations(self, psi: np.ndarray) -> np.ndarray:
        if self.diagonal:
            return (np.abs(psi) ** 2) @ self.ldiag.T
        lp, _ = self.apply_ops(psi)
        return np.real(np.einsum("bi,bki->bk", psi.conj(), lp))

    def step(self, psi: np.ndarray, dW: np.ndarray, dt: float, step_index: int = 0,
             first_trajectory: int = 0):
        """Advance the batch one step.

        Returns ``(psi_new, signal_increments, pre_expectations)``; the latter
        two have shape (B, K).
        """
        fb = self.fb_op
        mode = self.feedback.mode if fb is not None else None
        diagonal = self.diagonal
        if self.n_channels:
            if diagonal:
                a = (np.abs(psi) ** 2) @ self.ldiag.T
            else:
                lp, l2p = self.apply_ops(psi)
                a = np.real(np.einsum("bi,bki->bk", psi.conj(), lp))
            signal = a * dt + dW * self.signal_scale
        else:
            a = np.zeros((psi.shape[0], 0))
            signal = a
        if mode == "signal" and self.feedback.order == "before":
            psi = fb.apply(psi, signal[:, self.fb_channels])
            if self.n_channels and not diagonal:
                lp, l2p = self.apply_ops(psi)

        new = psi - 1j * dt * (psi @ self.h_t)
        if self.n_channels and diagonal:
            # Every operator is a vector of eigenvalues l_k(i), so the update
            # is a per-component factor built from (B, K) @ (K, d) products.
            la = a * self.lam
            drift = self.half_lam_l2[None, :] - la @ self.ldiag + 0.5 * np.sum(la * a, axis=1)[:, None]
            kicks = dW * self.sqrt_lam
            noise = kicks @ self.ldiag - np.sum(kicks * a, axis=1)[:, None]
            new += (noise - dt * drift) * psi
        elif self.n_channels:
            a3 = a[:, :, None]
            centered = lp - a3 * psi[:, None, :]
            # (L - a)^2 psi = L^2 psi - 2 a L psi + a^2 psi
            sq = l2p - 2.0 * a3 * lp + (a3 * a3) * psi[:, None, :]
            new -= dt * np.einsum("k,bki->bi", 0.5 * self.lam, sq)
            new += np.einsum("bk,bki->bi", self.sqrt_lam * dW, centered)
        new = self._normalize(new, step_index, first_trajectory)

        if mode == "signal" and self.feedback.order == "after":
            new = self._normalize(fb.apply(new, signal[:, self.fb_channels]), step_index, first_trajectory)
        elif mode == "mean_field":
            post = self.expectations(new)[:, self.fb_channels]
            new = self._normalize(fb.apply(new, post * dt), step_index, first_trajectory)
        return new, signal, a

    @staticmethod
    def _normalize(psi, step_index, first_trajectory):
        norms = np.sqrt(np.sum(psi.real ** 2 + psi.imag ** 2, axis=1))
        bad = ~np.isfinite(norms) | (norms == 0)
        if bad.any():
            raise IntegrationBlowupError(step_index, trajectory=first_trajectory + int(np.argmax(bad)))
        return psi / norms[:, None]


def sse_step(state: QuantumState, model: MonitoringModel, dt: float, dW):
    """One Euler-Maruyama step of a single state.

    Returns ``(new_state, signal_increments)``; feedback attached to
    ``model`` is applied with the same ``dW``.
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    if state.dim != model.dim:
        raise ModelDefinitionError(f"state dim {state.dim} does not match model dim {model.dim}")
    dW = np.asarray(dW, dtype=float).reshape(1, -1)
    if dW.shape[1] != len(model.channels):
        raise ModelDefinitionError(f"expected {len(model.channels)} Wiener increments, got {dW.shape[1]}")
    if not np.all(np.isfinite(dW)):
        raise PreconditionError("Wiener increments must be finite")
    kernel = SSEKernel(model)
    new, signal, _ = kernel.step(state.amplitudes[None, :], dW, dt)
    return QuantumState(new[0]), signal[0]


def sample_steps(steps: int, stride: int) -> np.ndarray:
    """Step indices at which snapshots are taken: 0, stride, ..., and ``steps``."""
    if stride < 1:
        raise PreconditionError("stride must be >= 1")
    idx = list(range(0, steps + 1, stride))
    if idx[-1] != steps:
        idx.append(steps)
    return np.array(idx, dtype=int)


@dataclass
class SignalRecord:
    """Per-step measurement record.

    ``values[k, n]`` is the signal increment of channel k over step n divided
    by dt; ``mean_field[k, n]`` is the expectation <L_k> the step started from,
    so ``values - mean_field`` is the pure noise part.
    """

    times: np.ndarray
    values: np.ndarray
    mean_field: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.mean_field.shape or self.values.shape[-1] != len(self.times):
            raise ModelDefinitionError("signal record arrays are inconsistent")


@dataclass
class TrajectoryResult:
    times: np.ndarray
    expectations: np.ndarray
    snapshots: np.ndarray | None
    signal: SignalRecord | None
    final_state: QuantumState
    flashes: list = field(default_factory=list)


def run_trajectory(model: MonitoringModel, initial: QuantumState, dt: float, steps: int,
                   seed: int, trajectory_index: int = 0, stride: int = 10,
                   keep_snapshots: bool = True) -> TrajectoryResult:
    """Integrate one trajectory and record its signal.

    Deterministic in all arguments: the Wiener increments come from the
    counter-based streams of (seed, trajectory_index, channel).
    """
    if steps < 1:
        raise PreconditionError("steps must be >= 1")
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    if initial.dim != model.dim:
        raise ModelDefinitionError(f"initial state dim {initial.dim} does not match model dim {model.dim}")
    check_seed(seed)
    kernel = SSEKernel(model)
    k = kernel.n_channels
    noise = NoiseRealization(seed, trajectory_index, k, dt).increments(steps)
    samples = sample_steps(steps, stride)
    psi = initial.amplitudes[None, :].copy()
    signal = np.empty((k, steps))
    mean_field = np.empty((k, steps))
    exps = np.empty((len(samples), k))
    snaps = np.empty((len(samples), model.dim), dtype=np.complex128) if keep_snapshots else None
    exps[0] = kernel.expectations(psi)[0]
    if keep_snapshots:
        snaps[0] = psi[0]
    j = 1
    for n in range(steps):
        psi, s, a = kernel.step(psi, noise[n:n + 1], dt, n, trajectory_index)
        signal[:, n] = s[0] / dt
        mean_field[:, n] = a[0]
        if j < len(samples) and samples[j] == n + 1:
            exps[j] = kernel.expectations(psi)[0]
            if keep_snapshots:
                snaps[j] = psi[0]
            j += 1
    record = SignalRecord(np.arange(steps) * dt, signal, mean_field)
    return TrajectoryResult(samples * dt, exps, snaps, record, QuantumState(psi[0]))


def run_block(kernel: SSEKernel, psi0: np.ndarray, dt: float, steps: int, seed: int,
              first_index: int, samples: np.ndarray, chunk: int = 256, keep_snapshots: bool = False):
    """Integrate trajectories ``first_index .. first_index + B - 1`` together.

    Returns per-sample partial sums (see ``ensemble``), and snapshots of shape
    (B, n_samples, d) when requested.
    """
    b = psi0.shape[0]
    noise = BlockNoise(seed, range(first_index, first_index + b), kernel.n_channels, dt)
    acc = SampleSums(len(samples), kernel.dim, kernel.n_channels)
    snaps = np.empty((b, len(samples), kernel.dim), dtype=np.complex128) if keep_snapshots else None
    psi = psi0
    acc.add(0, psi, kernel.expectations(psi))
    if keep_snapshots:
        snaps[:, 0] = psi
    j = 1
    n = 0
    while n < steps:
        m = min(chunk, steps - n)
        dws = noise.draw(m)
        for r in range(m):
            psi, _, _ = kernel.step(psi, dws[r], dt, n, first_index)
            n += 1
            if j < len(samples) and samples[j] == n:
                acc.add(j, psi, kernel.expectations(psi))
                if keep_snapshots:
                    snaps[:, j] = psi
                j += 1
    return acc, snaps, psi


class SampleSums:
    """Partial sums over trajectories at each sampled time.

    Sums use numpy's pairwise reduction over a fixed axis, so identical
    blocks always yield identical bits.
    """

    def __init__(self, n_samples: int, dim: int, n_channels: int):
        self.count = 0
        self.rho = np.zeros((n_samples, dim, dim), dtype=np.complex128)
        self.rho_re2 = np.zeros((n_samples, dim, dim))
        self.rho_im2 = np.zeros((n_samples, dim, dim))
        self.exp = np.zeros((n_samples, n_channels))
        self.exp2 = np.zeros((n_samples, n_channels))

    def add(self, j: int, psi: np.ndarray, exps: np.ndarray):
        outer = psi[:, :, None] * psi.conj()[:, None, :]
        self.rho[j] += outer.sum(axis=0)
        self.rho_re2[j] += (outer.real ** 2).sum(axis=0)
        self.rho_im2[j] += (outer.imag ** 2).sum(axis=0)
        self.exp[j] += exps.sum(axis=0)
        self.exp2[j] += (exps ** 2).sum(axis=0)
        if j == 0:
            self.count += psi.shape[0]

    def merge(self, other: SampleSums) -> SampleSums:
        out = SampleSums.__new__(SampleSums)
        out.count = self.count + other.count
        for name in ("rho", "rho_re2", "rho_im2", "exp", "exp2"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        return out
