"""Run a parsed configuration and collect serializable results."""

from __future__ import annotations

from . import __version__
from .ensemble import (EnsembleReport, convergence_study, flash_counts, fwt_experiment,
                       run_ensemble)
from .feedback import modified_me_params
from .io import RunConfig
from .me import reference_solution


def _rho_rows(times, rho, se_re=None, se_im=None):
    rows = []
    d = rho.shape[1]
    nan = float("nan")
    for n, t in enumerate(times):
        for i in range(d):
            for j in range(d):
                rows.append((t, f"rho[{i}][{j}].re", rho[n, i, j].real,
                             se_re[n, i, j] if se_re is not None else nan))
                rows.append((t, f"rho[{i}][{j}].im", rho[n, i, j].imag,
                             se_im[n, i, j] if se_im is not None else nan))
    return rows


def _ensemble_rows(rep: EnsembleReport):
    rows = _rho_rows(rep.times, rep.mean_rho, rep.rho_se_re, rep.rho_se_im)
    for n, t in enumerate(rep.times):
        for k in range(rep.exp_mean.shape[1]):
            rows.append((t, f"L{k}", rep.exp_mean[n, k], rep.exp_se[n, k]))
        if rep.distance is not None:
            rows.append((t, "trace_distance_to_me", rep.distance[n], float("nan")))
    rows.sort(key=lambda r: r[0])
    return rows


def _ensemble_summary(rep: EnsembleReport) -> dict:
    out = {
        "M": rep.M,
        "final_time": rep.times[-1],
        "final_mean_rho": [[[z.real, z.imag] for z in row] for row in rep.mean_rho[-1]],
        "final_expectations": rep.exp_mean[-1],
        "final_expectation_se": rep.exp_se[-1],
    }
    if rep.distance is not None:
        out["max_trace_distance_to_me"] = rep.max_distance
    return out


def _me_target(model):
    fb = getattr(model, "feedback", None)
    if fb is not None and fb.gain != 0.0:
        return modified_me_params(model)
    return model


def run_experiment(cfg: RunConfig, workers: int = 1) -> dict:
    """Execute ``cfg``; returns {"timeseries", "summary", "flashes"?}."""
    header = {
        "experiment": cfg.experiment,
        "software_version": __version__,
        "seed": cfg.seed,
        "config": cfg.echo,
    }
    kind = cfg.experiment
    if kind == "me":
        sol = reference_solution(_me_target(cfg.model), cfg.initial.density_matrix(), cfg.dt, cfg.steps,
                                 cfg.stride, cfg.me_dt)
        rho = sol.array
        summary = {"final_time": sol.times[-1],
                   "final_rho": [[[z.real, z.imag] for z in row] for row in rho[-1]]}
        return {"timeseries": _rho_rows(sol.times, rho), "summary": {**header, "summary": summary}}

    if kind in ("ensemble", "csl", "grw"):
        rep = run_ensemble(cfg.model, cfg.initial, cfg.dt, cfg.steps, cfg.M, cfg.seed, cfg.stride,
                           workers=workers)
        summary = _ensemble_summary(rep)
        result = {"timeseries": _ensemble_rows(rep)}
        if kind == "grw":
            fc = flash_counts(rep.flashes, cfg.M, cfg.model, cfg.dt * cfg.steps)
            summary.update({"n_flashes": int(fc.counts.sum()), "flash_count_mean": fc.mean,
                            "flash_count_variance": fc.variance,
                            "expected_flash_count": fc.expected_mean})
            result["flashes"] = rep.flashes
        result["summary"] = {**header, "summary": summary}
        return result

    if kind == "fwt":
        a, b = cfg.decompositions
        rep = fwt_experiment(cfg.model, a, b, cfg.dt, cfg.steps, cfg.M, cfg.seed, cfg.stride,
                             n_boot=cfg.n_boot, workers=workers)
        rows = []
        for n, t in enumerate(rep.times):
            rows.append((t, "trace_distance_AB", rep.distance[n], rep.se[n]))
        rows += [(t, f"A.{name}", m, s) for t, name, m, s in _ensemble_rows(rep.report_a)]
        rows += [(t, f"B.{name}", m, s) for t, name, m, s in _ensemble_rows(rep.report_b)]
        rows.sort(key=lambda r: r[0])
        summary = {"verdict": rep.verdict, "max_z": rep.max_z, "max_distance": rep.max_distance,
                   "pooled_se": rep.pooled_se, "n_boot": rep.n_boot, "M": cfg.M}
        for label, r in (("A", rep.report_a), ("B", rep.report_b)):
            if r.distance is not None:
                summary[f"max_trace_distance_to_me_{label}"] = r.max_distance
        return {"timeseries": rows, "summary": {**header, "summary": summary}}

    if kind == "convergence":
        study = convergence_study(cfg.model, cfg.initial, cfg.dt_list, cfg.T, cfg.M, cfg.seed,
                                  workers=workers)
        rows = []
        for dt, rep in zip(study.dts, study.reports):
            rows += [(t, f"dt={dt!r}:trace_distance_to_me", d, float("nan"))
                     for t, d in zip(rep.times, rep.distance)]
        rows.sort(key=lambda r: r[0])
        summary = {"dt_list": study.dts, "bias": study.bias, "ratios": study.ratios, "M": cfg.M}
        return {"timeseries": rows, "summary": {**header, "summary": summary}}

    raise ValueError(f"unknown experiment {kind!r}")  # parse_config guards this

