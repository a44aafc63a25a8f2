"""Quantum trajectory laboratory for continuous monitoring and spontaneous collapse."""

from .errors import (ConfigError, DomainError, IntegrationBlowupError, IntegrationError,
                     ModelDefinitionError, PreconditionError, QMonitorError)
from .hilbert import (DensityMatrix, HermitianOperator, QuantumState, dephasing_rates, expectation,
                      mix, trace_distance, variance)
from .model import Channel, FeedbackSpec, MonitoringModel
from .sse import SignalRecord, TrajectoryResult, run_trajectory, sse_step
from .me import MESolution, me_derivative, run_me
from .feedback import apply_meanfield_feedback, apply_signal_feedback, modified_me_params
from .csl import (LatticeConfig, MassDensityFamily, build_mass_density_ops, csl_decoherence_rate,
                  csl_model)
from .grw import FlashEvent, JumpModel, grw_me_derivative, grw_step
from .ensemble import (BornReport, ConvergenceReport, Decomposition, EnsembleReport, FWTReport,
                       born_statistics, convergence_study, fwt_experiment, run_ensemble)

__version__ = "0.1.0"
