"""Hamiltonian feedback driven by the measurement signal or by the mean field.

Both schemes act as a unitary post-map ``exp(-i g sum_k L_k x_k)`` after the
diffusive update of a step. For signal feedback ``x_k`` is the signal
increment of the step (expectation * dt plus the step's own scaled Wiener
increment); for mean-field feedback it is the noiseless expectation of the
updated state times dt.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import DomainError, ModelDefinitionError
from .hilbert import HermitianOperator, QuantumState
from .model import Channel, MonitoringModel


class FeedbackOperator:
    """Applies exp(-i g sum_k c_k L_k) to a batch of row-vector states.

    Diagonal operators and single non-diagonal operators use precomputed
    eigenbases; the general case diagonalizes the batch of generators.
    """

    def __init__(self, model: MonitoringModel, gain: float, channels):
        self.gain = float(gain)
        self.channels = tuple(channels)
        ops = model.operator_stack()[list(self.channels)] if self.channels else \
            np.zeros((0, model.dim, model.dim), dtype=np.complex128)
        self.ops = ops
        if all(model.channels[k].operator.is_diagonal for k in self.channels):
            self.kind = "diagonal"
            self.diag = np.real(np.stack([np.diagonal(o) for o in ops])) if len(ops) else \
                np.zeros((0, model.dim))
        elif len(self.channels) == 1:
            self.kind = "single"
            self.eigvals, self.eigvecs = np.linalg.eigh(ops[0])
            self.eigvecs_conj = self.eigvecs.conj()
            self.eigvecs_t = self.eigvecs.T
        else:
            self.kind = "general"

    def apply(self, psi: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """``psi`` has shape (B, d); ``coeffs`` has shape (B, len(channels))."""
        if self.gain == 0.0 or not self.channels:
            return psi
        if self.kind == "diagonal":
            phase = coeffs @ self.diag
            return psi * np.exp(-1j * self.gain * phase)
        if self.kind == "single":
            rotated = psi @ self.eigvecs_conj
            rotated *= np.exp(-1j * self.gain * coeffs[:, :1] * self.eigvals[None, :])
            return rotated @ self.eigvecs_t
        gens = np.einsum("bk,kij->bij", coeffs, self.ops)
        vals, vecs = np.linalg.eigh(gens)
        rotated = np.einsum("bji,bj->bi", vecs.conj(), psi)
        rotated *= np.exp(-1j * self.gain * vals)
        return np.einsum("bij,bj->bi", vecs, rotated)


def _single(state: QuantumState, model: MonitoringModel):
    if state.dim != model.dim:
        raise ModelDefinitionError(f"state dim {state.dim} does not match model dim {model.dim}")
    return state.amplitudes[None, :]


def _renormalized(psi: np.ndarray) -> QuantumState:
    return QuantumState(psi / np.linalg.norm(psi))


def _gain_and_channels(model: MonitoringModel):
    if model.feedback is None:
        return 0.0, ()
    return model.feedback.gain, model.feedback_channels


def apply_signal_feedback(state: QuantumState, model: MonitoringModel, dt: float,
                          dW, pre_expectations) -> QuantumState:
    """Feed the step's signal increments back through the Hamiltonian.

    ``dW`` and ``pre_expectations`` are per-channel arrays from the step that
    produced ``state``; the signal increment of channel k is
    ``pre_expectations[k] * dt + dW[k] / (2 sqrt(coupling_k))``.
    """
    gain, chans = _gain_and_channels(model)
    if gain == 0.0:
        return state
    lam = model.couplings[list(chans)]
    if np.any(lam == 0):
        raise DomainError("signal feedback from an unmonitored channel (coupling 0) is undefined")
    dW = np.asarray(dW, dtype=float)[list(chans)]
    pre = np.asarray(pre_expectations, dtype=float)[list(chans)]
    signal = pre * dt + dW / (2.0 * np.sqrt(lam))
    op = FeedbackOperator(model, gain, chans)
    return _renormalized(op.apply(_single(state, model), signal[None, :])[0])


def apply_meanfield_feedback(state: QuantumState, model: MonitoringModel, dt: float) -> QuantumState:
    """Feed the trajectory's own expectations <L_k> back; no noise enters."""
    gain, chans = _gain_and_channels(model)
    if gain == 0.0:
        return state
    psi = _single(state, model)
    ops = model.operator_stack()[list(chans)]
    means = np.real(np.einsum("i,kij,j->k", psi[0].conj(), ops, psi[0]))
    op = FeedbackOperator(model, gain, chans)
    return _renormalized(op.apply(psi, (means * dt)[None, :])[0])


def modified_me_params(model: MonitoringModel, gain: float | None = None) -> MonitoringModel:
    """Absorb signal feedback into an equivalent feedback-free model.

    H -> H + (g/2) sum_k L_k^2 and coupling_k -> coupling_k + g^2 / (4 coupling_k)
    for every fed-back channel. The returned model carries no feedback.
    """
    fb = model.feedback
    if fb is not None and fb.mode != "signal":
        raise DomainError("only signal feedback admits a closed linear master equation")
    if gain is None:
        gain = fb.gain if fb is not None else 0.0
    chans = model.feedback_channels if fb is not None else tuple(range(len(model.channels)))
    if gain == 0.0:
        return replace(model, feedback=None)
    h = model.hamiltonian.entries.copy()
    channels = list(model.channels)
    for k in chans:
        ch = channels[k]
        if ch.coupling == 0.0:
            raise DomainError(f"channel {k} has coupling 0; feedback of its signal is undefined")
        op = ch.operator.entries
        h = h + 0.5 * gain * (op @ op)
        channels[k] = Channel(ch.operator, ch.coupling + gain ** 2 / (4.0 * ch.coupling))
    h = 0.5 * (h + h.conj().T)
    return MonitoringModel(HermitianOperator(h), tuple(channels), None)
