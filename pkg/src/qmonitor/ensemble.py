"""Monte-Carlo ensembles of trajectories and the experiments built on them.

Trajectories are grouped into fixed-size blocks whose size depends only on
the model, never on the worker count. Each block is integrated as a (B, d)
batch and returns partial sums; partial sums are merged in a fixed pairwise
tree order, so results are bit-identical for any number of workers.
"""

from __future__ import annotations

import concurrent.futures as cf
import multiprocessing
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ModelDefinitionError, PreconditionError
from .feedback import modified_me_params
from .grw import FlashEvent, JumpModel, run_grw_block
from .hilbert import DensityMatrix, QuantumState, mix, trace_distance_matrix
from .me import MESolution, reference_solution
from .model import MonitoringModel
from .rng import check_seed, ensemble_generator
from .sse import SampleSums, SSEKernel, run_block, sample_steps

FWT_TANGIBLE = "tangible"
FWT_NOT_TANGIBLE = "not_tangible"
FWT_INCONCLUSIVE = "inconclusive"

_STRATIFY = 1
_BOOTSTRAP = 2


@dataclass(frozen=True)
class Decomposition:
    """Weighted pure-state decomposition of an initial density matrix."""

    weights: tuple[float, ...]
    states: tuple[QuantumState, ...]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "states", tuple(self.states))
        mix(self.states, self.weights)  # validates weights and dims

    @classmethod
    def pure(cls, state: QuantumState) -> Decomposition:
        return cls((1.0,), (state,))

    @property
    def dim(self) -> int:
        return self.states[0].dim

    def density_matrix(self) -> DensityMatrix:
        return mix(self.states, self.weights)

    def assign(self, M: int, seed: int) -> np.ndarray:
        """Component index of each trajectory by systematic sampling.

        Component j receives floor or ceil of w_j * M trajectories; the random
        offset comes from the ensemble seed.
        """
        if len(self.states) == 1:
            return np.zeros(M, dtype=int)
        u = ensemble_generator(seed, _STRATIFY).random()
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        positions = (np.arange(M) + u) / M
        return np.minimum(np.searchsorted(cdf, positions, side="right"), len(self.states) - 1)

    def initial_block(self, assignment: np.ndarray) -> np.ndarray:
        amps = np.stack([s.amplitudes for s in self.states])
        return amps[assignment].copy()


def as_decomposition(initial) -> Decomposition:
    if isinstance(initial, Decomposition):
        return initial
    if isinstance(initial, QuantumState):
        return Decomposition.pure(initial)
    raise ModelDefinitionError("initial condition must be a QuantumState or a Decomposition")


def block_size(dim: int, n_channels: int) -> int:
    """Trajectories per block; a function of the model shape only."""
    per_traj = 16 * (4 * max(n_channels, 1) * dim + 3 * dim * dim) + 8 * 256 * max(n_channels, 1)
    size = int(2 ** np.floor(np.log2(max(16, min(1024, 32_000_000 // per_traj)))))
    return size


def tree_reduce(items: list, merge):
    """Pairwise merge in a fixed order independent of how items were produced."""
    items = list(items)
    while len(items) > 1:
        nxt = [merge(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def _block_task(args):
    model, psi0, dt, steps, seed, first, samples, keep = args
    if isinstance(model, JumpModel):
        acc, snaps, final, flashes = run_grw_block(model, psi0, dt, steps, seed, first, samples,
                                                   keep_snapshots=keep)
        return acc, snaps, final, flashes
    acc, snaps, final = run_block(SSEKernel(model), psi0, dt, steps, seed, first, samples,
                                  keep_snapshots=keep)
    return acc, snaps, final, []


def _pool(workers: int):
    ctx = multiprocessing.get_context("fork") if "fork" in multiprocessing.get_all_start_methods() else None
    return cf.ProcessPoolExecutor(max_workers=workers, mp_context=ctx)


@dataclass
class EnsembleReport:
    """Ensemble averages at the sampled times.

    ``rho_se_re``/``rho_se_im`` are the standard errors of the real and
    imaginary parts of each mean density-matrix element; ``exp_mean`` and
    ``exp_se`` cover the monitored expectations <L_k>.
    """

    M: int
    times: np.ndarray
    mean_rho: np.ndarray
    rho_se_re: np.ndarray
    rho_se_im: np.ndarray
    exp_mean: np.ndarray
    exp_se: np.ndarray
    reference: MESolution | None = None
    distance: np.ndarray | None = None
    snapshots: np.ndarray | None = None
    final_states: np.ndarray | None = None
    flashes: list[FlashEvent] = field(default_factory=list)
    assignment: np.ndarray | None = None

    @property
    def max_distance(self) -> float:
        if self.distance is None:
            raise PreconditionError("report has no reference solution")
        return float(np.max(self.distance))

    def density_matrices(self) -> list[DensityMatrix]:
        return [DensityMatrix(r, tol=1e-6) for r in self.mean_rho]

    def element(self, i: int, j: int) -> np.ndarray:
        return self.mean_rho[:, i, j]

    def element_se(self, i: int, j: int) -> np.ndarray:
        return np.hypot(self.rho_se_re[:, i, j], self.rho_se_im[:, i, j])


def _se(total, total_sq, M):
    mean = total / M
    second = total_sq / M
    var = second - mean ** 2
    # Below the cancellation floor of the one-pass formula the spread is zero.
    var = np.where(var <= 1e-13 * np.maximum(second, 1e-300), 0.0, var) * (M / (M - 1))
    return np.sqrt(var / M)


def _auto_reference(model, decomposition: Decomposition, dt, steps, stride):
    if isinstance(model, JumpModel):
        target = model
    elif model.feedback is None or model.feedback.gain == 0.0:
        target = model.with_feedback(None)
    elif model.feedback.mode == "signal":
        target = modified_me_params(model)
    else:
        return None
    return reference_solution(target, decomposition.density_matrix(), dt, steps, stride)


def run_ensemble(model, initial, dt: float, steps: int, M: int, seed: int, stride: int = 10,
                 reference="auto", keep_snapshots: bool = False, keep_final: bool = False,
                 workers: int = 1) -> EnsembleReport:
    """Run trajectories 0..M-1 and aggregate them.

    ``initial`` is a pure state or a :class:`Decomposition`; trajectory i
    starts from the component chosen by stratified assignment. ``reference``
    is an :class:`MESolution` sampled at the same times, ``None``, or
    ``"auto"`` (the model's own ME; for signal feedback the modified ME; none
    for mean-field feedback).
    """
    if M < 2:
        raise PreconditionError("ensemble size M must be >= 2")
    if steps < 1:
        raise PreconditionError("steps must be >= 1")
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    seed = check_seed(seed)
    decomp = as_decomposition(initial)
    if decomp.dim != model.dim:
        raise ModelDefinitionError(f"initial state dim {decomp.dim} does not match model dim {model.dim}")
    n_channels = 0 if isinstance(model, JumpModel) else len(model.channels)
    samples = sample_steps(steps, stride)
    assignment = decomp.assign(M, seed)
    size = block_size(model.dim, n_channels)
    keep = keep_snapshots
    tasks = [(model, decomp.initial_block(assignment[s:s + size]), dt, steps, seed, s, samples, keep)
             for s in range(0, M, size)]
    if workers > 1 and len(tasks) > 1:
        with _pool(workers) as pool:
            results = list(pool.map(_block_task, tasks))
    else:
        results = [_block_task(t) for t in tasks]

    acc = tree_reduce([r[0] for r in results], SampleSums.merge)
    mean_rho = acc.rho / M
    mean_rho = 0.5 * (mean_rho + np.conj(np.swapaxes(mean_rho, 1, 2)))
    report = EnsembleReport(
        M=M,
        times=samples * dt,
        mean_rho=mean_rho,
        rho_se_re=_se(acc.rho.real, acc.rho_re2, M),
        rho_se_im=_se(acc.rho.imag, acc.rho_im2, M),
        exp_mean=acc.exp / M,
        exp_se=_se(acc.exp, acc.exp2, M),
        snapshots=np.concatenate([r[1] for r in results]) if keep_snapshots else None,
        final_states=np.concatenate([r[2] for r in results]) if keep_final else None,
        flashes=[f for r in results for f in r[3]],
        assignment=assignment,
    )
    if isinstance(reference, str):
        if reference != "auto":
            raise PreconditionError(f"unknown reference option {reference!r}")
        reference = _auto_reference(model, decomp, dt, steps, stride)
    if reference is not None:
        attach_reference(report, reference)
    return report


def attach_reference(report: EnsembleReport, reference: MESolution) -> EnsembleReport:
    if len(reference.times) != len(report.times) or not np.allclose(reference.times, report.times,
                                                                     rtol=0, atol=1e-9):
        raise PreconditionError("reference solution is not sampled at the ensemble times")
    ref = reference.array
    report.reference = reference
    report.distance = np.array([trace_distance_matrix(a, b) for a, b in zip(report.mean_rho, ref)])
    return report


# ---------------------------------------------------------------------------
# Free Will Test


@dataclass
class FWTReport:
    labels: tuple[str, str]
    times: np.ndarray
    distance: np.ndarray
    se: np.ndarray
    verdict: str
    report_a: EnsembleReport
    report_b: EnsembleReport
    n_boot: int = 1000

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.se > 0, self.distance / self.se, np.where(self.distance > 1e-12, np.inf, 0.0))
        return z

    @property
    def max_z(self) -> float:
        return float(np.max(self.z))

    @property
    def max_distance(self) -> float:
        return float(np.max(self.distance))

    @property
    def pooled_se(self) -> float:
        """Standard error at the time of maximal separation."""
        return float(self.se[int(np.argmax(self.z))])


def fwt_verdict(max_z: float, reject: float = 5.0, accept: float = 2.0) -> str:
    if max_z >= reject:
        return FWT_NOT_TANGIBLE
    if max_z <= accept:
        return FWT_TANGIBLE
    return FWT_INCONCLUSIVE


def bootstrap_distance_se(snaps_a: np.ndarray, snaps_b: np.ndarray, n_boot: int, seed: int,
                          batch: int = 50) -> np.ndarray:
    """Bootstrap standard error of the per-time trace distance between means.

    Trajectory pairs (same index in A and B) are resampled jointly. The
    spread is the RMS trace norm of the resampled difference of means about
    the observed difference; it scales as 1/sqrt(M).
    """
    M, n, d = snaps_a.shape
    diff = (snaps_a[:, :, :, None] * snaps_a.conj()[:, :, None, :]
            - snaps_b[:, :, :, None] * snaps_b.conj()[:, :, None, :])
    flat = np.concatenate([diff.real.reshape(M, -1), diff.imag.reshape(M, -1)], axis=1)
    observed = flat.sum(axis=0) / M
    rng = ensemble_generator(seed, _BOOTSTRAP)
    sq = np.zeros(n)
    done = 0
    while done < n_boot:
        b = min(batch, n_boot - done)
        idx = rng.integers(0, M, size=(b, M))
        counts = np.stack([np.bincount(row, minlength=M) for row in idx]).astype(float)
        resampled = counts @ flat / M - observed[None, :]
        half = resampled.shape[1] // 2
        dev = (resampled[:, :half] + 1j * resampled[:, half:]).reshape(b, n, d, d)
        dev = 0.5 * (dev + np.conj(np.swapaxes(dev, 2, 3)))
        tn = 0.5 * np.abs(np.linalg.eigvalsh(dev)).sum(axis=-1)
        sq += (tn ** 2).sum(axis=0)
        done += b
    return np.sqrt(sq / n_boot)


def fwt_experiment(model: MonitoringModel, decomp_a: Decomposition, decomp_b: Decomposition,
                   dt: float, steps: int, M: int, seed: int, stride: int = 100,
                   n_boot: int = 1000, workers: int = 1, reject: float = 5.0,
                   accept: float = 2.0) -> FWTReport:
    """Compare two decompositions of the same initial density matrix.

    A feedback variable is tangible when the ensemble means do not depend on
    the decomposition (max z <= ``accept``), and not tangible when they
    separate (max z >= ``reject``). Both ensembles use the same trajectory
    indices and seed, so trajectory i sees the same noise in A and B.
    """
    ra, rb = decomp_a.density_matrix(), decomp_b.density_matrix()
    if np.max(np.abs(ra.entries - rb.entries)) > 1e-10:
        raise PreconditionError("decompositions do not describe the same density matrix")
    rep_a = run_ensemble(model, decomp_a, dt, steps, M, seed, stride, keep_snapshots=True,
                         workers=workers)
    rep_b = run_ensemble(model, decomp_b, dt, steps, M, seed, stride, keep_snapshots=True,
                         workers=workers)
    distance = np.array([trace_distance_matrix(a, b) for a, b in zip(rep_a.mean_rho, rep_b.mean_rho)])
    se = bootstrap_distance_se(rep_a.snapshots, rep_b.snapshots, n_boot, seed)
    report = FWTReport((decomp_a.label or "A", decomp_b.label or "B"), rep_a.times, distance, se,
                       FWT_INCONCLUSIVE, rep_a, rep_b, n_boot)
    report.verdict = fwt_verdict(report.max_z, reject, accept)
    return report


@dataclass
class PilotResult:
    reports: tuple[FWTReport, FWTReport]
    dts: tuple[float, float]

    @property
    def verdicts(self) -> tuple[str, str]:
        return self.reports[0].verdict, self.reports[1].verdict

    @property
    def agree(self) -> bool:
        return self.verdicts[0] == self.verdicts[1]


def fwt_pilot(model, decomp_a, decomp_b, dt: float, T: float, M: int, seed: int,
              sample_interval: float = 0.1, **kwargs) -> PilotResult:
    """Run the FWT at dt and dt/2 over the same horizon; verdicts must agree."""
    reports = []
    for h in (dt, dt / 2):
        steps = int(round(T / h))
        stride = max(1, int(round(sample_interval / h)))
        reports.append(fwt_experiment(model, decomp_a, decomp_b, h, steps, M, seed, stride, **kwargs))
    return PilotResult(tuple(reports), (dt, dt / 2))


# ---------------------------------------------------------------------------
# Born statistics


def joint_eigenspaces(model: MonitoringModel, tol: float = 1e-8):
    """Projectors onto the joint eigenspaces of the (commuting) channels.

    Returns (labels, projectors) where labels[i] is the tuple of channel
    eigenvalues on projector i.
    """
    ops = model.operator_stack()
    for a in range(len(ops)):
        for b in range(a + 1, len(ops)):
            if np.max(np.abs(ops[a] @ ops[b] - ops[b] @ ops[a])) > 1e-10:
                raise PreconditionError("channels do not commute; joint outcomes are undefined")
    coeffs = ensemble_generator(0, 99).standard_normal(len(ops))
    generic = np.einsum("k,kij->ij", coeffs, ops)
    _, vecs = np.linalg.eigh(generic)
    labels = np.real(np.einsum("iv,kij,jv->vk", vecs.conj(), ops, vecs))
    keys = [tuple(np.round(row / tol) * tol) for row in labels]
    groups: dict[tuple, list[int]] = {}
    for v, key in enumerate(keys):
        groups.setdefault(key, []).append(v)
    out_labels, projectors = [], []
    for key in sorted(groups):
        cols = vecs[:, groups[key]]
        projectors.append(cols @ cols.conj().T)
        out_labels.append(tuple(float(x) for x in labels[groups[key][0]]))
    return out_labels, projectors


@dataclass
class BornReport:
    labels: list[tuple[float, ...]]
    frequencies: np.ndarray
    expected: np.ndarray
    tolerance: np.ndarray
    unresolved_fraction: float
    M: int

    @property
    def within_tolerance(self) -> np.ndarray:
        return np.abs(self.frequencies - self.expected) <= self.tolerance


def born_statistics(model: MonitoringModel, initial: QuantumState, dt: float, steps: int, M: int,
                    seed: int, threshold: float = 0.99, workers: int = 1) -> BornReport:
    """Classify collapsed trajectories by dominant joint eigenspace.

    ``tolerance`` is 3 binomial standard deviations around the Born weights
    of ``initial``.
    """
    h = model.hamiltonian.entries
    for k, ch in enumerate(model.channels):
        op = ch.operator.entries
        if np.max(np.abs(h @ op - op @ h)) > 1e-10:
            raise PreconditionError(f"Hamiltonian does not commute with channel {k}")
    labels, projectors = joint_eigenspaces(model)
    rep = run_ensemble(model, initial, dt, steps, M, seed, stride=steps, reference=None,
                       keep_final=True, workers=workers)
    finals = rep.final_states
    weights = np.stack([np.real(np.einsum("bi,ij,bj->b", finals.conj(), p, finals)) for p in projectors],
                       axis=1)
    dominant = np.argmax(weights, axis=1)
    resolved = weights[np.arange(M), dominant] > threshold
    freq = np.bincount(dominant[resolved], minlength=len(projectors)) / M
    psi = initial.amplitudes
    expected = np.array([np.real(psi.conj() @ p @ psi) for p in projectors])
    tol = 3.0 * np.sqrt(expected * (1 - expected) / M)
    return BornReport(labels, freq, expected, tol, float(1 - resolved.mean()), M)


# ---------------------------------------------------------------------------
# Weak-order convergence


@dataclass
class ConvergenceReport:
    dts: np.ndarray
    bias: np.ndarray
    reports: list[EnsembleReport]

    @property
    def ratios(self) -> np.ndarray:
        return self.bias[:-1] / self.bias[1:]


def convergence_study(model, initial, dt_list: Sequence[float], T: float, M: int, seed: int,
                      sample_interval: float | None = None, workers: int = 1) -> ConvergenceReport:
    """Bias of the ensemble mean against a fine ME solution for several dt.

    bias(dt) is the max-over-time trace distance; every run covers [0, T]
    and is sampled on a common time grid.
    """
    dts = np.asarray(dt_list, dtype=float)
    if len(dts) < 2 or np.any(np.diff(dts) >= 0):
        raise PreconditionError("dt_list must be strictly descending with at least 2 entries")
    decomp = as_decomposition(initial)
    interval = sample_interval if sample_interval is not None else T / 20
    reports, bias = [], []
    reference = None
    for dt in dts:
        steps = int(round(T / dt))
        stride = int(round(interval / dt))
        if stride < 1 or abs(stride * dt - interval) > 1e-9 * interval or abs(steps * dt - T) > 1e-9 * T:
            raise PreconditionError(f"dt={dt} does not divide the horizon and sample interval")
        rep = run_ensemble(model, decomp, dt, steps, M, seed, stride, reference=None, workers=workers)
        if reference is None:
            reference = _auto_reference(model, decomp, dt, steps, stride)
            if reference is None:
                raise PreconditionError("model has no closed master equation to converge to")
        attach_reference(rep, reference)
        reports.append(rep)
        bias.append(rep.max_distance)
    return ConvergenceReport(dts, np.array(bias), reports)


# ---------------------------------------------------------------------------
# Estimators


def fit_decay_rate(times: np.ndarray, values: np.ndarray, floor: float = 0.0,
                   se: np.ndarray | None = None) -> float:
    """Least-squares exponential rate of |values| (points at or below ``floor`` dropped).

    With standard errors ``se`` the log-linear fit weights each point by
    |value| / se, the inverse of its log-scale uncertainty; points whose
    value is within 3 se of zero are dropped.
    """
    v = np.abs(np.asarray(values))
    t = np.asarray(times)
    keep = v > floor
    w = None
    if se is not None:
        se = np.asarray(se, dtype=float)
        exact = se <= 0
        keep &= exact | (v > 3 * se)
        # Exactly known points (zero spread) get the weight of the best noisy point.
        ratio = np.where(exact, np.inf, v / np.where(exact, 1.0, se))
        finite = ratio[keep & ~exact]
        cap = finite.max() if finite.size else 1.0
        w = np.minimum(ratio, cap)[keep]
    if keep.sum() < 2:
        raise PreconditionError("need at least two points above the floor to fit a decay")
    slope, _ = np.polyfit(t[keep], np.log(v[keep]), 1, w=w)
    return float(-slope)


@dataclass
class SignalNoiseReport:
    """Statistics of the noise part S - M of the recorded signal."""

    coupling: float
    dt: float
    autocorrelation: np.ndarray
    autocorrelation_se: float
    windows: np.ndarray
    window_variance: np.ndarray
    predicted_variance: np.ndarray

    @property
    def variance_ratio(self) -> np.ndarray:
        return self.window_variance / self.predicted_variance


def signal_noise_study(records: Sequence, channel: int, coupling: float, dt: float,
                       windows: Sequence[int], max_lag: int = 5) -> SignalNoiseReport:
    """Whiteness and time-average scaling of signal minus mean field.

    ``records`` are :class:`SignalRecord` objects. For windows of w steps
    the variance of the window mean is compared with 1/(4 lambda w dt).
    """
    resid = np.stack([r.values[channel] - r.mean_field[channel] for r in records])
    centered = resid - resid.mean()
    n_total = centered.size
    denom = np.sum(centered ** 2)
    acf = np.array([np.sum(centered[:, lag:] * centered[:, :-lag]) / denom for lag in range(1, max_lag + 1)])
    variances, predicted = [], []
    for w in windows:
        usable = (resid.shape[1] // w) * w
        means = resid[:, :usable].reshape(resid.shape[0], -1, w).mean(axis=2)
        variances.append(np.var(means, ddof=1))
        predicted.append(1.0 / (4.0 * coupling * w * dt))
    return SignalNoiseReport(coupling, dt, acf, 1.0 / np.sqrt(n_total), np.asarray(windows),
                             np.array(variances), np.array(predicted))


@dataclass
class FlashCountReport:
    counts: np.ndarray
    expected_mean: float

    @property
    def mean(self) -> float:
        return float(self.counts.mean())

    @property
    def variance(self) -> float:
        return float(self.counts.var(ddof=1))

    @property
    def mean_z(self) -> float:
        return (self.mean - self.expected_mean) / np.sqrt(self.expected_mean / len(self.counts))

    @property
    def variance_z(self) -> float:
        # Var of the sample variance of a Poisson(mu) sample: (mu + 2 mu^2) / n.
        mu, n = self.expected_mean, len(self.counts)
        return (self.variance - mu) / np.sqrt((mu + 2 * mu * mu) / n)


def flash_counts(flashes: Sequence[FlashEvent], M: int, model: JumpModel, T: float) -> FlashCountReport:
    counts = np.bincount([f.trajectory for f in flashes], minlength=M)
    return FlashCountReport(counts, model.jump_rate * model.n_particles * T)
