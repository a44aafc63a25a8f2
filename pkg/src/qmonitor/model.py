"""Simulation definitions: Hamiltonian, monitored channels and feedback."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ModelDefinitionError
from .hilbert import HermitianOperator

FEEDBACK_MODES = ("signal", "mean_field")
FEEDBACK_ORDERS = ("after", "before")


@dataclass(frozen=True)
class Channel:
    """A monitored Hermitian operator with its measurement strength."""

    operator: HermitianOperator
    coupling: float

    def __post_init__(self):
        if not np.isfinite(self.coupling) or self.coupling < 0:
            raise ModelDefinitionError(f"channel coupling must be finite and >= 0, got {self.coupling!r}")


@dataclass(frozen=True)
class FeedbackSpec:
    """Hamiltonian feedback ``g * sum_k L_k * X_k`` applied every step.

    ``mode='signal'`` feeds back the measured signal of channel k,
    ``mode='mean_field'`` its noiseless quantum expectation. ``order`` says
    whether the signal-feedback unitary acts after (the correct causal order)
    or before the measurement update of the same step.
    """

    mode: str
    gain: float
    channels: tuple[int, ...] | None = None
    order: str = "after"

    def __post_init__(self):
        if self.mode not in FEEDBACK_MODES:
            raise ModelDefinitionError(f"feedback mode must be one of {FEEDBACK_MODES}, got {self.mode!r}")
        if not np.isfinite(self.gain):
            raise ModelDefinitionError("feedback gain must be finite")
        if self.order not in FEEDBACK_ORDERS:
            raise ModelDefinitionError(f"feedback order must be one of {FEEDBACK_ORDERS}")
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(int(k) for k in self.channels))


@dataclass(frozen=True)
class MonitoringModel:
    hamiltonian: HermitianOperator
    channels: tuple[Channel, ...] = ()
    feedback: FeedbackSpec | None = None
    # Cached stacks for the vectorized kernels; built once, never mutated.
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        dim = self.hamiltonian.dim
        for k, ch in enumerate(self.channels):
            if not isinstance(ch, Channel):
                raise ModelDefinitionError(f"channels[{k}] is not a Channel")
            if ch.operator.dim != dim:
                raise ModelDefinitionError(
                    f"channels[{k}] has dim {ch.operator.dim}, Hamiltonian has dim {dim}")
        if self.feedback is not None:
            for k in self.feedback_channels:
                if not 0 <= k < len(self.channels):
                    raise ModelDefinitionError(f"feedback references missing channel {k}")

    @classmethod
    def build(cls, hamiltonian, operators: Sequence = (), couplings: Sequence[float] = (),
              feedback: FeedbackSpec | None = None) -> MonitoringModel:
        """Convenience constructor from raw arrays."""
        if len(operators) != len(couplings):
            raise ModelDefinitionError("need one coupling per monitored operator")
        h = hamiltonian if isinstance(hamiltonian, HermitianOperator) else HermitianOperator(hamiltonian)
        chans = tuple(
            Channel(op if isinstance(op, HermitianOperator) else HermitianOperator(op), float(c))
            for op, c in zip(operators, couplings))
        return cls(h, chans, feedback)

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    @property
    def couplings(self) -> np.ndarray:
        return np.array([ch.coupling for ch in self.channels], dtype=float)

    @property
    def feedback_channels(self) -> tuple[int, ...]:
        if self.feedback is None:
            return ()
        if self.feedback.channels is None:
            return tuple(range(len(self.channels)))
        return self.feedback.channels

    def with_feedback(self, feedback: FeedbackSpec | None) -> MonitoringModel:
        return replace(self, feedback=feedback)

    @property
    def all_diagonal(self) -> bool:
        return all(ch.operator.is_diagonal for ch in self.channels)

    def operator_stack(self) -> np.ndarray:
        """Channel operators as a (K, d, d) array."""
        if "ops" not in self._cache:
            if self.channels:
                ops = np.stack([ch.operator.entries for ch in self.channels])
            else:
                ops = np.zeros((0, self.dim, self.dim), dtype=np.complex128)
            ops.setflags(write=False)
            self._cache["ops"] = ops
        return self._cache["ops"]
